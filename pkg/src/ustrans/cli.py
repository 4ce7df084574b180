"""Command-line entry point tying the pipeline together.

Subcommands: synth, train, translate, eval-resolution, eval-nakagami,
eval-image-quality, track, ablate, report. Every command takes a single
config file (see config.py), writes its artifacts plus a resolved config
snapshot into its output directory, and never touches state outside it.

Exit codes: 0 ok, 2 config error, 3 data error, 4 training divergence,
5 metric precondition failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, phantom, tracking
from .config import RunConfig, parse_config
from .errors import EXIT_CODES, ConfigError, DataError, UstransError
from .frames import (
    Domain,
    EnvelopeImage,
    load_frame,
    normalize,
    read_container,
    read_manifest,
    save_frame,
    write_container,
    write_manifest,
)
from .losses import LossWeights, read_loss_log

RESOLUTION_COLUMNS = ("frame", "target", "depth_mm", "lateral_mm",
                      "axial_fwhm_mm", "lateral_fwhm_mm")
NAKAGAMI_COLUMNS = ("frame", "roi", "m", "n_samples")
NAKAGAMI_SUMMARY_COLUMNS = ("roi", "mean_m", "std_m", "n_frames", "t_stat", "p_value")
IMAGE_QUALITY_COLUMNS = ("index", "ssim", "psnr")
TRACKING_COLUMNS = ("pair", "mean_axial_mm", "mean_lateral_mm", "mean_correlation",
                    "rmsd_uncorrected", "rmsd_corrected", "ssim_axial", "ssim_lateral")
ABLATION_COLUMNS = ("config", "lambda2", "lambda3", "mean_lateral_fwhm_mm",
                    "mean_axial_fwhm_mm", "mean_m")

ABLATION_MATRIX = (
    ("baseline", 0.0, 0.0),
    ("idt", 5.0, 0.0),
    ("cc", 0.0, 5.0),
    ("idt_cc", 5.0, 5.0),
)


def _workers(cfg: RunConfig) -> int:
    w = cfg.get("run", "workers")
    if w and w > 0:
        return w
    return max(1, int(os.environ.get("USTRANS_WORKERS", "1")))


def _seed_for(base: int, *key: int) -> int:
    return int(np.random.SeedSequence(base, spawn_key=tuple(key)).generate_state(1)[0])


def _load_manifest_frames(manifest_path) -> list[EnvelopeImage]:
    base = Path(manifest_path).parent
    return [load_frame(base / rel) for rel, _, _ in read_manifest(manifest_path)]


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SPLIT_TRAIN, _SPLIT_VAL, _SPLIT_TEST, _SPLIT_SEQ = range(4)
_DOMS = {Domain.PHASED: 0, Domain.LINEAR: 1}


def _render_normalized(spec: phantom.PhantomSpec) -> EnvelopeImage:
    return normalize(phantom.render_phantom(spec))


def _ladder_depths(extent_ax: float) -> list[float]:
    return [0.2 * extent_ax, 0.5 * extent_ax, 0.8 * extent_ax]


def _spec_with_ladder(domain, seed, shape, lateral_frac: float):
    base = phantom.desk_spec(domain, seed, shape=shape)
    depths = _ladder_depths(base.extent_mm()[0])
    lateral = lateral_frac * base.extent_mm()[1]
    targets = tuple(
        phantom.PointTarget(
            d, lateral, phantom.point_amplitude_for_db(base, phantom.DESK_TARGET_DB, d)
        )
        for d in depths
    )
    return replace(base, point_targets=targets)


def cmd_synth(cfg: RunConfig, force: bool = False) -> int:
    sec = cfg.section("synth")
    out = Path(sec["out"])
    if out.exists() and any(out.iterdir()) and not force:
        raise DataError(f"output directory {out} exists; pass --force to overwrite")
    for sub in ("train", "val", "test", "seq_uniform", "seq_shear", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    if sec["preset"] != "desk":
        raise ConfigError(f"unknown synth preset {sec['preset']!r}")
    if min(sec["train_frames"], sec["val_frames"]) < 1 or sec["test_target_frames"] < 1:
        raise DataError("synth frame counts must be positive")

    seed = sec["seed"]
    shape = (sec["size"], sec["size"])
    workers = _workers(cfg)

    def build_split(split_id, count, with_ladder_every):
        specs = {}
        for domain in (Domain.PHASED, Domain.LINEAR):
            for i in range(count):
                frame_seed = _seed_for(seed, split_id, _DOMS[domain], i)
                if with_ladder_every and i % with_ladder_every == 0:
                    frac = 0.3 + 0.4 * ((frame_seed >> 8) % 1000) / 999.0
                    spec = _spec_with_ladder(domain, frame_seed, shape, frac)
                else:
                    spec = phantom.desk_spec(domain, frame_seed, shape=shape)
                specs[(domain, i)] = spec
        return specs

    def render_all(specs: dict, subdir: str, name_fn):
        keys = list(specs)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                frames = list(pool.map(_render_normalized, [specs[k] for k in keys]))
        else:
            frames = [_render_normalized(specs[k]) for k in keys]
        records = []
        for (domain, i), frame in zip(keys, frames):
            rel = f"{subdir}/{name_fn(domain, i)}"
            save_frame(replace(frame, frame_index=i), out / rel)
            records.append((rel, domain, i))
        return records

    name_plain = lambda domain, i: f"{domain.value}_{i:04d}.usec"

    train_specs = build_split(_SPLIT_TRAIN, sec["train_frames"], with_ladder_every=2)
    write_manifest(render_all(train_specs, "train", name_plain), out / "manifest_train.txt")

    val_specs = build_split(_SPLIT_VAL, sec["val_frames"], with_ladder_every=2)
    write_manifest(render_all(val_specs, "val", name_plain), out / "manifest_val.txt")

    # Test frames are phased-domain only: a target ladder set and a
    # speckle-only set, with per-frame target truth recorded by index.
    target_records, speckle_records = [], []
    targets_by_index = {}
    for i in range(sec["test_target_frames"]):
        frame_seed = _seed_for(seed, _SPLIT_TEST, 0, i)
        spec = _spec_with_ladder(Domain.PHASED, frame_seed, shape, lateral_frac=0.5)
        frame = _render_normalized(spec)
        rel = f"test/target_{i:04d}.usec"
        save_frame(replace(frame, frame_index=i), out / rel)
        target_records.append((rel, Domain.PHASED, i))
        targets_by_index[str(i)] = [
            {"axial_mm": t.axial_mm, "lateral_mm": t.lateral_mm, "amplitude": t.amplitude}
            for t in spec.point_targets
        ]
    for i in range(sec["test_speckle_frames"]):
        frame_seed = _seed_for(seed, _SPLIT_TEST, 1, i)
        spec = phantom.desk_spec(Domain.PHASED, frame_seed, shape=shape)
        frame = _render_normalized(spec)
        rel = f"test/speckle_{i:04d}.usec"
        save_frame(replace(frame, frame_index=i), out / rel)
        speckle_records.append((rel, Domain.PHASED, i))
    write_manifest(target_records, out / "manifest_test_targets.txt")
    write_manifest(speckle_records, out / "manifest_test_speckle.txt")
    write_manifest(target_records + speckle_records, out / "manifest_test.txt")

    # Motion sequences with known truth for the tracking pipeline.
    sequences = {}
    n_seq = sec["sequence_frames"]
    base_spec = phantom.desk_spec(Domain.PHASED, _seed_for(seed, _SPLIT_SEQ, 0, 0), shape=shape)
    spacing = (base_spec.axial_spacing, base_spec.lateral_spacing)
    uniform = phantom.MotionField.uniform(shape, *spacing, d_axial_mm=0.3, d_lateral_mm=0.1)
    shear = phantom.MotionField.lateral_shear(shape, *spacing, slope_mm_per_mm=0.04)
    for seq_idx, (name, motion, params) in enumerate((
        ("uniform", uniform, {"d_axial_mm": 0.3, "d_lateral_mm": 0.1}),
        ("shear", shear, {"slope_mm_per_mm": 0.04}),
    )):
        spec = phantom.desk_spec(Domain.PHASED, _seed_for(seed, _SPLIT_SEQ, 1, seq_idx), shape=shape)
        guard = n_seq * 0.5 + 1.0
        frames = phantom.render_sequence(spec, motion, n_seq, guard_mm=guard)
        peak = max(float(f.samples.max()) for f in frames)
        records = []
        for i, frame in enumerate(frames):
            rel = f"seq_{name}/frame_{i:03d}.usec"
            save_frame(frame.with_samples(frame.samples / np.float32(peak)), out / rel)
            records.append((rel, Domain.PHASED, i))
        write_manifest(records, out / f"manifest_seq_{name}.txt")
        sequences[name] = {"manifest": f"manifest_seq_{name}.txt", **params}

    # Interior mask for masked RMSD / field statistics.
    border = max(8, sec["size"] // 8)
    mask = np.zeros(shape, dtype=np.float32)
    mask[border:-border, border:-border] = 1.0
    write_container(out / "masks" / "interior.usec", {"mask": mask},
                    axial_spacing=spacing[0], lateral_spacing=spacing[1])

    # Central speckle ROI (mm) for Nakagami evaluation.
    ext_ax, ext_lat = base_spec.extent_mm()
    roi_line = (f"speckle_core {0.25 * ext_ax:.3f} {0.9 * ext_ax:.3f} "
                f"{0.15 * ext_lat:.3f} {0.85 * ext_lat:.3f}\n")
    (out / "rois.txt").write_text("# name axial_start axial_stop lateral_start lateral_stop (mm)\n" + roi_line)

    truth = {"targets_by_index": targets_by_index, "sequences": sequences}
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
    cfg.snapshot(["synth"], out / "config_snapshot.txt")
    return 0


# ---------------------------------------------------------------------------
# train / translate
# ---------------------------------------------------------------------------


def _train_pieces(sec: dict, weights: LossWeights):
    # torch-dependent modules are imported lazily to keep data-only
    # commands snappy
    from .networks import DiscriminatorSpec, GeneratorSpec
    from .training import TrainConfig

    d = sec["disc_base_channels"]
    gen_spec = GeneratorSpec(base_channels=sec["base_channels"], n_modules=sec["n_modules"])
    disc_spec = DiscriminatorSpec(channels=(d, 2 * d, 4 * d, 8 * d, 1))
    config = TrainConfig(
        epochs=sec["epochs"],
        lr_initial=sec["lr_initial"],
        lr_decay_start_epoch=sec["lr_decay_start_epoch"],
        batch_size=sec["batch_size"],
        weights=weights,
        validation_fraction=sec["validation_fraction"],
        seed=sec["seed"],
        checkpoint_every=sec["checkpoint_every"],
    )
    return config, gen_spec, disc_spec


def cmd_train(cfg: RunConfig) -> int:
    from .frames import load_dataset
    from .training import train

    sec = cfg.section("train")
    weights = LossWeights(sec["lambda1"], sec["lambda2"], sec["lambda3"])
    config, gen_spec, disc_spec = _train_pieces(sec, weights)
    data = Path(sec["data"])
    manifest = data / "manifest_train.txt" if data.is_dir() else data
    dataset = load_dataset(manifest)
    run_dir = Path(sec["out"])
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(["train"], run_dir / "config_snapshot.txt")
    train(dataset, config, run_dir, gen_spec, disc_spec)
    return 0


def cmd_translate(cfg: RunConfig) -> int:
    from .training import translate

    sec = cfg.section("translate")
    frames = _load_manifest_frames(sec["input"])
    if not frames:
        raise DataError(f"no frames listed in {sec['input']}")
    out = Path(sec["out"])
    out.mkdir(parents=True, exist_ok=True)
    translated = translate(sec["weights"], frames)
    records = []
    for i, frame in enumerate(translated):
        rel = f"translated_{i:04d}.usec"
        save_frame(frame, out / rel)
        records.append((rel, Domain.GENERATED, i))
    write_manifest(records, out / "manifest.txt")
    cfg.snapshot(["translate"], out / "config_snapshot.txt")
    return 0


# ---------------------------------------------------------------------------
# eval-*
# ---------------------------------------------------------------------------


def _load_truth(path) -> dict:
    if not path:
        raise ConfigError("this command needs [eval] truth = <truth.json>")
    return json.loads(Path(path).read_text())


def cmd_eval_resolution(cfg: RunConfig) -> int:
    sec = cfg.section("eval")
    truth = _load_truth(sec["truth"])
    targets_by_index = truth.get("targets_by_index", {})
    frames = _load_manifest_frames(sec["frames"])
    out = Path(sec["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, frame in enumerate(frames):
        for t_idx, t in enumerate(targets_by_index.get(str(i), [])):
            center = (t["axial_mm"], t["lateral_mm"])
            try:
                meas = metrics.measure_point_target(
                    frame, f"t{t_idx}", center, roi_size_mm=sec["roi_size_mm"]
                )
                ax, lat = f"{meas.axial_fwhm:.6f}", f"{meas.lateral_fwhm:.6f}"
            except UstransError:
                ax = lat = ""  # incomplete target, row kept for the census
            rows.append([i, f"t{t_idx}", f"{t['axial_mm']:.3f}", f"{t['lateral_mm']:.3f}", ax, lat])
    if not rows:
        raise DataError("truth file lists no point targets for these frames")
    metrics.write_csv(out / "resolution.csv", RESOLUTION_COLUMNS, rows)
    cfg.snapshot(["eval"], out / "config_snapshot.txt")
    return 0


def cmd_eval_nakagami(cfg: RunConfig) -> int:
    sec = cfg.section("eval")
    if not sec["rois"]:
        raise ConfigError("this command needs [eval] rois = <roi file>")
    rois = metrics.read_roi_file(sec["rois"])
    frames = _load_manifest_frames(sec["frames"])
    reference = _load_manifest_frames(sec["reference"]) if sec["reference"] else None
    if reference is not None and len(reference) != len(frames):
        raise DataError("reference manifest length does not match frames")
    out = Path(sec["out"])
    out.mkdir(parents=True, exist_ok=True)

    rows, per_roi, per_roi_ref = [], {}, {}
    for i, frame in enumerate(frames):
        for roi in rois:
            est = metrics.nakagami_m(roi.slice_frame(frame), roi=roi.name)
            rows.append([i, roi.name, f"{est.m:.6f}", est.n_samples])
            per_roi.setdefault(roi.name, []).append(est.m)
            if reference is not None:
                ref_est = metrics.nakagami_m(roi.slice_frame(reference[i]), roi=roi.name)
                per_roi_ref.setdefault(roi.name, []).append(ref_est.m)
    metrics.write_csv(out / "nakagami.csv", NAKAGAMI_COLUMNS, rows)

    summary = []
    for roi_name, values in per_roi.items():
        t_stat = p_value = ""
        if reference is not None and len(values) >= 2:
            t, p = metrics.paired_ttest(values, per_roi_ref[roi_name])
            t_stat, p_value = f"{t:.6f}", f"{p:.6g}"
        summary.append([
            roi_name,
            f"{np.mean(values):.6f}",
            f"{np.std(values):.6f}",
            len(values),
            t_stat,
            p_value,
        ])
    metrics.write_csv(out / "nakagami_summary.csv", NAKAGAMI_SUMMARY_COLUMNS, summary)
    cfg.snapshot(["eval"], out / "config_snapshot.txt")
    return 0


def cmd_eval_image_quality(cfg: RunConfig) -> int:
    sec = cfg.section("eval")
    if not sec["reference"]:
        raise ConfigError("this command needs [eval] reference = <manifest>")
    frames = _load_manifest_frames(sec["frames"])
    reference = _load_manifest_frames(sec["reference"])
    if len(frames) != len(reference):
        raise DataError("reference manifest length does not match frames")
    out = Path(sec["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (x, y) in enumerate(zip(reference, frames)):
        rows.append([i, f"{metrics.ssim(x, y):.6f}", f"{metrics.psnr(x, y):.6f}"])
    metrics.write_csv(out / "image_quality.csv", IMAGE_QUALITY_COLUMNS, rows)
    finite_psnr = [float(r[2]) for r in rows if np.isfinite(float(r[2]))]
    metrics.write_csv(
        out / "image_quality_summary.csv",
        ("mean_ssim", "mean_psnr", "n_frames"),
        [[
            f"{np.mean([float(r[1]) for r in rows]):.6f}",
            f"{np.mean(finite_psnr):.6f}" if finite_psnr else "",
            len(rows),
        ]],
    )
    cfg.snapshot(["eval"], out / "config_snapshot.txt")
    return 0


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------


def _tracking_config(sec: dict) -> tracking.TrackingConfig:
    spacing = None
    if sec["spacing_axial"] > 0 and sec["spacing_lateral"] > 0:
        spacing = (sec["spacing_axial"], sec["spacing_lateral"])
    return tracking.TrackingConfig(
        kernel=(sec["kernel_axial"], sec["kernel_lateral"]),
        search=(sec["search_axial"], sec["search_lateral"]),
        node_spacing=spacing,
        subsample_fit=sec["subsample_fit"],
    )


def _node_mask(field: tracking.DisplacementField, frame_mask: np.ndarray) -> np.ndarray:
    return frame_mask[np.ix_(field.node_axial, field.node_lateral)]


def cmd_track(cfg: RunConfig) -> int:
    sec = cfg.section("track")
    tcfg = _tracking_config(sec)
    frames = _load_manifest_frames(sec["frames"])
    if len(frames) < 2:
        raise DataError("tracking needs at least two frames")
    reference = _load_manifest_frames(sec["reference"]) if sec["reference"] else None
    if reference is not None and len(reference) != len(frames):
        raise DataError("reference manifest length does not match frames")
    frame_mask = None
    if sec["mask"]:
        planes, _ = read_container(sec["mask"])
        if "mask" not in planes:
            raise DataError(f"{sec['mask']}: no 'mask' plane")
        frame_mask = planes["mask"] > 0.5

    out = Path(sec["out"])
    (out / "fields").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(len(frames) - 1):
        field = tracking.track(frames[i], frames[i + 1], tcfg)
        tracking.save_field(field, out / "fields" / f"field_{i:04d}.usec")
        nm = field.valid.copy()
        if frame_mask is not None:
            nm &= _node_mask(field, frame_mask)
        sel = nm if nm.any() else field.valid
        corrected, warp_valid = tracking.motion_correct(frames[i + 1], field)
        pixel_mask = frame_mask if frame_mask is not None else None
        raw = tracking.rmsd(frames[i], frames[i + 1], mask=pixel_mask, valid=warp_valid)
        corr = tracking.rmsd(frames[i], corrected, mask=pixel_mask, valid=warp_valid)
        ssim_ax = ssim_lat = ""
        if reference is not None:
            ref_field = tracking.track(reference[i], reference[i + 1], tcfg)
            s_ax, s_lat = tracking.field_ssim(
                ref_field, field, mask=nm if frame_mask is not None else None
            )
            ssim_ax, ssim_lat = f"{s_ax:.6f}", f"{s_lat:.6f}"
        rows.append([
            i,
            f"{np.nanmean(np.where(sel, field.axial_mm, np.nan)):.6f}",
            f"{np.nanmean(np.where(sel, field.lateral_mm, np.nan)):.6f}",
            f"{np.nanmean(np.where(sel, field.peak_correlation, np.nan)):.6f}",
            f"{raw:.6f}",
            f"{corr:.6f}",
            ssim_ax,
            ssim_lat,
        ])
    metrics.write_csv(out / "tracking.csv", TRACKING_COLUMNS, rows)
    cfg.snapshot(["track"], out / "config_snapshot.txt")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def cmd_ablate(cfg: RunConfig) -> int:
    from .frames import load_dataset
    from .training import train, translate

    sec = cfg.section("ablate")
    data = Path(sec["data"])
    out = Path(sec["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(data / "manifest_train.txt")
    truth = json.loads((data / "truth.json").read_text())
    rois = metrics.read_roi_file(data / "rois.txt")
    target_frames = _load_manifest_frames(data / "manifest_test_targets.txt")
    speckle_frames = _load_manifest_frames(data / "manifest_test_speckle.txt")

    summary = []
    for name, lambda2, lambda3 in ABLATION_MATRIX:
        weights = LossWeights(10.0, lambda2, lambda3)
        config, gen_spec, disc_spec = _train_pieces(sec, weights)
        run_dir = out / name
        train(dataset, config, run_dir, gen_spec, disc_spec)
        g_a = run_dir / "exported_generators" / "g_a.wts"
        translated_targets = translate(g_a, target_frames)
        translated_speckle = translate(g_a, speckle_frames)

        laterals, axials = [], []
        for i, frame in enumerate(translated_targets):
            for t_idx, t in enumerate(truth["targets_by_index"].get(str(i), [])):
                try:
                    meas = metrics.measure_point_target(
                        frame, f"t{t_idx}", (t["axial_mm"], t["lateral_mm"]),
                        roi_size_mm=sec["roi_size_mm"],
                    )
                except UstransError:
                    continue
                laterals.append(meas.lateral_fwhm)
                axials.append(meas.axial_fwhm)
        m_values = [
            metrics.nakagami_m(roi.slice_frame(frame), roi=roi.name).m
            for frame in translated_speckle
            for roi in rois
        ]
        summary.append([
            name,
            lambda2,
            lambda3,
            f"{np.mean(laterals):.6f}" if laterals else "",
            f"{np.mean(axials):.6f}" if axials else "",
            f"{np.mean(m_values):.6f}" if m_values else "",
        ])
    metrics.write_csv(out / "ablation_summary.csv", ABLATION_COLUMNS, summary)
    cfg.snapshot(["ablate"], out / "config_snapshot.txt")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(cfg: RunConfig) -> int:
    sec = cfg.section("report")
    run_dir = Path(sec["run"])
    if not run_dir.exists():
        raise DataError(f"run directory {run_dir} not found")
    loss_path = run_dir / "loss_log.csv"
    print(f"report for {run_dir}")
    if loss_path.exists():
        rows = read_loss_log(loss_path)
        if rows:
            epochs = sorted({r["epoch"] for r in rows})
            first = [r["total"] for r in rows if r["epoch"] == epochs[0]]
            last = [r["total"] for r in rows if r["epoch"] == epochs[-1]]
            print(f"  steps: {len(rows)}, epochs: {epochs[0]}..{epochs[-1]}")
            print(f"  mean total objective: epoch {epochs[0]} = {np.mean(first):.4f}, "
                  f"epoch {epochs[-1]} = {np.mean(last):.4f}")
    for name in ("resolution.csv", "nakagami_summary.csv", "image_quality_summary.csv",
                 "tracking.csv", "ablation_summary.csv"):
        path = run_dir / name
        if path.exists():
            print(f"  {name}: {max(0, len(path.read_text().splitlines()) - 1)} rows")
    if sec["plots"]:
        _emit_plots(run_dir)
    return 0


def _emit_plots(run_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots = run_dir / "plots"
    plots.mkdir(exist_ok=True)
    loss_path = run_dir / "loss_log.csv"
    if loss_path.exists():
        rows = read_loss_log(loss_path)
        steps = [r["step"] for r in rows]
        fig, ax = plt.subplots(figsize=(7, 4))
        for key in ("total", "adv_g", "adv_d", "cyc", "idt", "cc"):
            ax.plot(steps, [r[key] for r in rows], label=key, linewidth=1)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(plots / "loss_curves.png", dpi=120)
        plt.close(fig)
    res_path = run_dir / "resolution.csv"
    if res_path.exists():
        import csv as _csv

        with open(res_path, newline="") as fh:
            rows = [r for r in _csv.DictReader(fh) if r["lateral_fwhm_mm"]]
        by_target: dict[str, list[float]] = {}
        for r in rows:
            by_target.setdefault(r["target"], []).append(float(r["lateral_fwhm_mm"]))
        if by_target:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            names = sorted(by_target)
            means = [np.mean(by_target[n]) for n in names]
            stds = [np.std(by_target[n]) for n in names]
            ax.bar(names, means, yerr=stds, capsize=3)
            ax.set_ylabel("lateral FWHM (mm)")
            fig.tight_layout()
            fig.savefig(plots / "lateral_resolution.png", dpi=120)
            plt.close(fig)
    track_path = run_dir / "tracking.csv"
    if track_path.exists():
        import csv as _csv

        with open(track_path, newline="") as fh:
            rows = list(_csv.DictReader(fh))
        if rows and rows[0].get("ssim_axial"):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            pairs = [int(r["pair"]) for r in rows]
            for key in ("ssim_axial", "ssim_lateral"):
                vals = [float(r[key]) for r in rows if r[key]]
                if vals:
                    ax.plot(pairs[: len(vals)], vals, marker="o", label=key)
            ax.set_xlabel("frame pair")
            ax.set_ylabel("displacement-map SSIM")
            ax.legend()
            fig.tight_layout()
            fig.savefig(plots / "tracking_ssim.png", dpi=120)
            plt.close(fig)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "translate": cmd_translate,
    "eval-resolution": cmd_eval_resolution,
    "eval-nakagami": cmd_eval_nakagami,
    "eval-image-quality": cmd_eval_image_quality,
    "track": cmd_track,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ustrans",
        description="Unpaired ultrasound image translation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run config file")
        if name == "synth":
            p.add_argument("--force", action="store_true",
                           help="overwrite an existing output directory")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.command == "synth":
            return cmd_synth(cfg, force=args.force)
        return _COMMANDS[args.command](cfg)
    except UstransError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CODES.get(type(err), 1)


if __name__ == "__main__":
    sys.exit(main())
