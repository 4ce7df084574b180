"""Block-matching speckle tracking between consecutive envelope frames.

At every node of a regular grid, the zero-normalized cross-correlation
between a kernel window in the pre frame and displaced windows in the
post frame is evaluated over an integer search range; an optional 1-D
parabolic fit per axis refines the peak to sub-sample precision. The
sign convention is pre -> post: a feature at pre position p is found at
p + displacement in the post frame, so sampling the post frame at
p + displacement undoes the motion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DataError, MetricPreconditionError
from .frames import Domain, EnvelopeImage, read_container, write_container
from .metrics import ssim as _ssim

_VAR_EPS = 1e-12


@dataclass(frozen=True)
class TrackingConfig:
    kernel: tuple[int, int] = (32, 8)  # (axial, lateral) samples
    search: tuple[int, int] = (8, 4)  # +/- samples per axis
    node_spacing: tuple[int, int] | None = None  # defaults to 25% of kernel
    subsample_fit: bool = True

    def __post_init__(self):
        if min(self.kernel) < 2 or min(self.search) < 1:
            raise DataError("kernel must be >= 2 samples and search >= 1")
        if self.node_spacing is not None and min(self.node_spacing) < 1:
            raise DataError("node spacing must be >= 1")

    def spacing(self) -> tuple[int, int]:
        if self.node_spacing is not None:
            return self.node_spacing
        return (max(1, self.kernel[0] // 4), max(1, self.kernel[1] // 4))


@dataclass
class DisplacementField:
    node_axial: np.ndarray  # node centers, sample indices (n_ax,)
    node_lateral: np.ndarray  # (n_lat,)
    axial_samples: np.ndarray  # (n_ax, n_lat) displacement in samples
    lateral_samples: np.ndarray
    peak_correlation: np.ndarray
    valid: np.ndarray  # bool mask of usable nodes
    axial_spacing: float  # mm per sample of the tracked frames
    lateral_spacing: float
    config: TrackingConfig

    @property
    def axial_mm(self) -> np.ndarray:
        return self.axial_samples * self.axial_spacing

    @property
    def lateral_mm(self) -> np.ndarray:
        return self.lateral_samples * self.lateral_spacing

    def grid_shape(self) -> tuple[int, int]:
        return self.axial_samples.shape


@dataclass(frozen=True)
class RoiMask:
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if not mask.any():
            raise DataError("ROI mask is empty")
        object.__setattr__(self, "mask", mask)


def _box_sums(img: np.ndarray, ka: int, kl: int) -> np.ndarray:
    """S[y, x] = sum of img[y:y+ka, x:x+kl], for all valid top-left corners."""
    c = np.cumsum(np.cumsum(img, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[ka:, kl:] - c[:-ka, kl:] - c[ka:, :-kl] + c[:-ka, :-kl]


def track(pre: EnvelopeImage, post: EnvelopeImage, cfg: TrackingConfig) -> DisplacementField:
    """Estimate the pre -> post displacement on a regular node grid."""
    if pre.shape != post.shape:
        raise DataError(f"frame shape mismatch: {pre.shape} vs {post.shape}")
    h, w = pre.shape
    ka, kl = cfg.kernel
    sa, sl = cfg.search
    ha, hl = ka // 2, kl // 2
    # windows span [y - ha, y - ha + ka); search adds +/- s on each side
    margin_ax = (ha + sa, ka - ha + sa)
    margin_lat = (hl + sl, kl - hl + sl)
    if h - sum(margin_ax) <= 0 or w - sum(margin_lat) <= 0:
        raise DataError("kernel plus search range does not fit inside the frame")
    step_ax, step_lat = cfg.spacing()
    node_ax = np.arange(margin_ax[0], h - margin_ax[1] + 1, step_ax)
    node_lat = np.arange(margin_lat[0], w - margin_lat[1] + 1, step_lat)
    if node_ax.size == 0 or node_lat.size == 0:
        raise DataError("no tracking nodes fit inside the frame")

    a = np.asarray(pre.samples, dtype=np.float64)
    b = np.asarray(post.samples, dtype=np.float64)
    n = float(ka * kl)

    # Window statistics of the pre frame at each node (top-left corners).
    top = node_ax - ha
    left = node_lat - hl
    s1 = _box_sums(a, ka, kl)[np.ix_(top, left)]
    s2 = _box_sums(a * a, ka, kl)[np.ix_(top, left)]
    var_a = s2 - s1 * s1 / n

    n_lag_ax = 2 * sa + 1
    n_lag_lat = 2 * sl + 1
    corr = np.full((node_ax.size, node_lat.size, n_lag_ax, n_lag_lat), -np.inf)

    post_s1 = _box_sums(b, ka, kl)
    post_s2 = _box_sums(b * b, ka, kl)
    for iu, du in enumerate(range(-sa, sa + 1)):
        for iv, dv in enumerate(range(-sl, sl + 1)):
            # post window displaced by (du, dv); nodes stay interior by margin
            t1 = post_s1[np.ix_(top + du, left + dv)]
            t2 = post_s2[np.ix_(top + du, left + dv)]
            prod = a * _shift(b, du, dv)
            p = _box_sums(prod, ka, kl)[np.ix_(top, left)]
            num = p - s1 * t1 / n
            var_b = t2 - t1 * t1 / n
            denom = np.sqrt(np.clip(var_a * var_b, 0.0, None))
            with np.errstate(invalid="ignore", divide="ignore"):
                corr[:, :, iu, iv] = np.where(denom > _VAR_EPS, num / denom, -np.inf)

    valid = var_a > _VAR_EPS
    flat = corr.reshape(node_ax.size, node_lat.size, -1)
    best = np.argmax(flat, axis=2)
    best_iu, best_iv = np.unravel_index(best, (n_lag_ax, n_lag_lat))
    peak = np.take_along_axis(flat, best[..., None], axis=2)[..., 0]
    disp_ax = (best_iu - sa).astype(np.float64)
    disp_lat = (best_iv - sl).astype(np.float64)

    if cfg.subsample_fit:
        for (iy, ix) in np.argwhere(valid):
            iu, iv = best_iu[iy, ix], best_iv[iy, ix]
            line = corr[iy, ix, :, iv]
            disp_ax[iy, ix] += _parabolic_offset(line, iu)
            line = corr[iy, ix, iu, :]
            disp_lat[iy, ix] += _parabolic_offset(line, iv)

    peak = np.where(valid, peak, np.nan)
    if np.nanmax(peak, initial=-np.inf) > 1.0 + 1e-9:
        raise MetricPreconditionError("correlation exceeded 1 beyond numerical guard")
    peak = np.clip(peak, -1.0, 1.0)
    disp_ax[~valid] = np.nan
    disp_lat[~valid] = np.nan

    return DisplacementField(
        node_axial=node_ax,
        node_lateral=node_lat,
        axial_samples=disp_ax,
        lateral_samples=disp_lat,
        peak_correlation=peak,
        valid=valid,
        axial_spacing=pre.axial_spacing,
        lateral_spacing=pre.lateral_spacing,
        config=cfg,
    )


def _shift(img: np.ndarray, du: int, dv: int) -> np.ndarray:
    """shifted[y, x] = img[y + du, x + dv], zero-filled at the border."""
    out = np.zeros_like(img)
    h, w = img.shape
    ys = slice(max(0, -du), min(h, h - du))
    xs = slice(max(0, -dv), min(w, w - dv))
    out[ys, xs] = img[
        ys.start + du : ys.stop + du,
        xs.start + dv : xs.stop + dv,
    ]
    return out


def _parabolic_offset(line: np.ndarray, idx: int) -> float:
    """Vertex offset of a parabola through three correlation samples."""
    if idx == 0 or idx == len(line) - 1:
        return 0.0
    c0, c1, c2 = line[idx - 1], line[idx], line[idx + 1]
    if not (np.isfinite(c0) and np.isfinite(c2)):
        return 0.0
    denom = c0 - 2.0 * c1 + c2
    if denom >= 0:  # not a local maximum shape
        return 0.0
    offset = 0.5 * (c0 - c2) / denom
    return float(np.clip(offset, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Motion correction and comparison metrics.
# ---------------------------------------------------------------------------


def densify(field: DisplacementField, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear interpolation of node displacements (in samples) to pixels.

    Coordinates outside the node hull take the edge value; invalid nodes
    contribute 0 displacement.
    """
    ys = np.clip(np.arange(shape[0], dtype=np.float64), field.node_axial[0], field.node_axial[-1])
    xs = np.clip(np.arange(shape[1], dtype=np.float64), field.node_lateral[0], field.node_lateral[-1])
    out = []
    for plane in (field.axial_samples, field.lateral_samples):
        filled = np.where(field.valid, plane, 0.0)
        out.append(_bilinear_grid(field.node_axial, field.node_lateral, filled, ys, xs))
    return out[0], out[1]


def _bilinear_grid(gy, gx, values, ys, xs):
    iy = np.clip(np.searchsorted(gy, ys, side="right") - 1, 0, len(gy) - 2) if len(gy) > 1 else np.zeros(len(ys), dtype=np.intp)
    ix = np.clip(np.searchsorted(gx, xs, side="right") - 1, 0, len(gx) - 2) if len(gx) > 1 else np.zeros(len(xs), dtype=np.intp)
    if len(gy) > 1:
        wy = (ys - gy[iy]) / (gy[iy + 1] - gy[iy])
        y1 = iy + 1
    else:
        wy = np.zeros(len(ys))
        y1 = iy
    if len(gx) > 1:
        wx = (xs - gx[ix]) / (gx[ix + 1] - gx[ix])
        x1 = ix + 1
    else:
        wx = np.zeros(len(xs))
        x1 = ix
    wy = wy[:, None]
    wx = wx[None, :]
    return (
        values[np.ix_(iy, ix)] * (1 - wy) * (1 - wx)
        + values[np.ix_(y1, ix)] * wy * (1 - wx)
        + values[np.ix_(iy, x1)] * (1 - wy) * wx
        + values[np.ix_(y1, x1)] * wy * wx
    )


def motion_correct(post: EnvelopeImage, field: DisplacementField):
    """Warp the post frame back by the estimated field.

    Returns (corrected EnvelopeImage, valid mask); samples mapping outside
    the post frame are invalid and set to 0 in the image.
    """
    dy, dx = densify(field, post.shape)
    ys, xs = np.meshgrid(
        np.arange(post.shape[0], dtype=np.float64),
        np.arange(post.shape[1], dtype=np.float64),
        indexing="ij",
    )
    coords = np.stack([ys + dy, xs + dx])
    warped = map_coordinates(
        np.asarray(post.samples, dtype=np.float64), coords, order=1,
        mode="constant", cval=np.nan,
    )
    valid = np.isfinite(warped)
    warped = np.where(valid, warped, 0.0)
    img = EnvelopeImage(
        np.clip(warped, 0.0, None).astype(np.float32),
        axial_spacing=post.axial_spacing,
        lateral_spacing=post.lateral_spacing,
        domain_tag=post.domain_tag,
        frame_index=post.frame_index,
    )
    return img, valid


def rmsd(pre: EnvelopeImage, corrected: EnvelopeImage, mask=None, valid=None) -> float:
    """Root mean squared difference over masked, validly warped samples."""
    if pre.shape != corrected.shape:
        raise DataError(f"frame shape mismatch: {pre.shape} vs {corrected.shape}")
    sel = np.ones(pre.shape, dtype=bool)
    if mask is not None:
        sel &= mask.mask if isinstance(mask, RoiMask) else np.asarray(mask, dtype=bool)
    if valid is not None:
        sel &= np.asarray(valid, dtype=bool)
    if not sel.any():
        raise MetricPreconditionError("empty effective mask")
    diff = pre.samples.astype(np.float64)[sel] - corrected.samples.astype(np.float64)[sel]
    return float(np.sqrt(np.mean(diff * diff)))


def field_ssim(reference: DisplacementField, candidate: DisplacementField, mask=None):
    """SSIM between displacement maps, per component (axial, lateral).

    The mask, if given, is defined on the node grid; the SSIM map is
    averaged over masked nodes that are valid in both fields.
    """
    if reference.grid_shape() != candidate.grid_shape():
        raise DataError("displacement fields live on different node grids")
    sel = reference.valid & candidate.valid
    if mask is not None:
        m = mask.mask if isinstance(mask, RoiMask) else np.asarray(mask, dtype=bool)
        if m.shape != sel.shape:
            raise DataError("mask shape does not match the node grid")
        sel &= m
    if not sel.any():
        raise MetricPreconditionError("empty effective mask")

    win = min(11, min(reference.grid_shape()))
    if win % 2 == 0:
        win -= 1
    if win < 3:
        raise MetricPreconditionError("node grid too small for SSIM")

    out = []
    for ref_plane, cand_plane in (
        (reference.axial_samples, candidate.axial_samples),
        (reference.lateral_samples, candidate.lateral_samples),
    ):
        ref_f = np.where(reference.valid, ref_plane, 0.0)
        cand_f = np.where(candidate.valid, cand_plane, 0.0)
        rng = float(ref_f.max() - ref_f.min())
        data_range = rng if rng > 0 else 1.0
        _, ssim_map = _ssim(ref_f, cand_f, data_range=data_range, win_size=win,
                            return_map=True)
        out.append(float(ssim_map[sel].mean()))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# Field container IO (same binary family as frames).
# ---------------------------------------------------------------------------

_FIELD_PLANES = ("axial_samples", "lateral_samples", "peak_correlation", "valid")


def save_field(field: DisplacementField, path) -> None:
    planes = {
        "node_axial": np.broadcast_to(
            field.node_axial[:, None].astype(np.float32), field.grid_shape()
        ),
        "node_lateral": np.broadcast_to(
            field.node_lateral[None, :].astype(np.float32), field.grid_shape()
        ),
        "axial_samples": np.nan_to_num(field.axial_samples).astype(np.float32),
        "lateral_samples": np.nan_to_num(field.lateral_samples).astype(np.float32),
        "peak_correlation": np.nan_to_num(field.peak_correlation).astype(np.float32),
        "valid": field.valid.astype(np.float32),
    }
    write_container(
        path,
        planes,
        axial_spacing=field.axial_spacing,
        lateral_spacing=field.lateral_spacing,
        domain_tag=Domain.GENERATED,
    )


def load_field(path, cfg: TrackingConfig | None = None) -> DisplacementField:
    planes, meta = read_container(path)
    missing = [p for p in _FIELD_PLANES if p not in planes]
    if missing:
        raise DataError(f"{path}: missing displacement planes {missing}")
    valid = planes["valid"] > 0.5
    disp_ax = planes["axial_samples"].astype(np.float64)
    disp_lat = planes["lateral_samples"].astype(np.float64)
    corr = planes["peak_correlation"].astype(np.float64)
    disp_ax[~valid] = np.nan
    disp_lat[~valid] = np.nan
    corr[~valid] = np.nan
    return DisplacementField(
        node_axial=planes["node_axial"][:, 0].astype(np.intp),
        node_lateral=planes["node_lateral"][0, :].astype(np.intp),
        axial_samples=disp_ax,
        lateral_samples=disp_lat,
        peak_correlation=corr,
        valid=valid,
        axial_spacing=meta["axial_spacing"],
        lateral_spacing=meta["lateral_spacing"],
        config=cfg if cfg is not None else TrackingConfig(),
    )
