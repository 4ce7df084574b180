"""Training loop: alternating updates, LR schedule, checkpoints, inference.

Each step updates the two discriminators first (generators frozen) and
then the two generators (discriminators frozen). There is no image
history buffer: discriminators only ever score the current step's
generated frames. Per-epoch data order is derived deterministically from
(seed, epoch), so a run resumed from a checkpoint reproduces the
uninterrupted loss trajectory exactly.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .errors import DataError, DivergenceError
from .frames import Domain, EnvelopeImage, UnpairedDataset
from .losses import (
    LossReport,
    LossWeights,
    LossLogWriter,
    adversarial_losses,
    correlation_loss,
    cycle_loss,
    generator_adversarial_term,
    identical_loss,
    total_generator_objective,
)
from .networks import (
    DiscriminatorSpec,
    GeneratorSpec,
    PatchDiscriminator,
    TranslationGenerator,
    load_discriminator,
    load_generator,
    save_weights,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr_initial: float = 2e-4
    lr_decay_start_epoch: int = 100
    batch_size: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    validation_fraction: float = 0.10
    seed: int = 0
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise DataError("invalid epoch/batch/checkpoint settings")
        if not 0 <= self.lr_decay_start_epoch <= max(self.epochs, 1):
            raise DataError("lr_decay_start_epoch must lie within [0, epochs]")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise DataError("validation_fraction must be in [0, 1)")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Constant learning rate, then linear decay to exactly 0 at `epochs`."""
    if not 0 <= epoch <= config.epochs:
        raise DataError(f"epoch {epoch} outside [0, {config.epochs}]")
    if epoch < config.lr_decay_start_epoch:
        return config.lr_initial
    span = config.epochs - config.lr_decay_start_epoch
    if span == 0:
        return 0.0 if epoch == config.epochs else config.lr_initial
    return config.lr_initial * (config.epochs - epoch) / span


@dataclass
class TrainState:
    g_a: TranslationGenerator
    g_b: TranslationGenerator
    d_a: PatchDiscriminator
    d_b: PatchDiscriminator
    opt_g_a: torch.optim.Adam
    opt_g_b: torch.optim.Adam
    opt_d_a: torch.optim.Adam
    opt_d_b: torch.optim.Adam
    config: TrainConfig
    epoch: int = 0  # completed epochs
    step: int = 0  # completed steps

    def networks(self):
        return {"g_a": self.g_a, "g_b": self.g_b, "d_a": self.d_a, "d_b": self.d_b}

    def optimizers(self):
        return [self.opt_g_a, self.opt_g_b, self.opt_d_a, self.opt_d_b]

    def set_lr(self, lr: float):
        for opt in self.optimizers():
            for group in opt.param_groups:
                group["lr"] = lr


def _net_seeds(seed: int):
    children = np.random.SeedSequence(seed).spawn(4)
    return [int(c.generate_state(1)[0]) for c in children]


def init_state(
    config: TrainConfig,
    gen_spec: GeneratorSpec = GeneratorSpec(),
    disc_spec: DiscriminatorSpec = DiscriminatorSpec(),
) -> TrainState:
    sa, sb, sda, sdb = _net_seeds(config.seed)
    g_a = TranslationGenerator(gen_spec, seed=sa)
    g_b = TranslationGenerator(gen_spec, seed=sb)
    d_a = PatchDiscriminator(disc_spec, seed=sda)
    d_b = PatchDiscriminator(disc_spec, seed=sdb)
    betas = (config.adam_beta1, config.adam_beta2)
    make = lambda net: torch.optim.Adam(net.parameters(), lr=config.lr_initial, betas=betas)
    return TrainState(
        g_a, g_b, d_a, d_b, make(g_a), make(g_b), make(d_a), make(d_b), config
    )


# ---------------------------------------------------------------------------
# Objectives and one optimization step.
# ---------------------------------------------------------------------------


def generator_objective(g_a, g_b, d_a, d_b, batch_a, batch_b, weights: LossWeights):
    """Full generator-side objective; returns (scalar tensor, LossReport)."""
    fake_b = g_a(batch_a)
    fake_a = g_b(batch_b)
    rec_a = g_b(fake_b)
    rec_b = g_a(fake_a)
    idt_b = g_a(batch_b)
    idt_a = g_b(batch_a)

    adv_b = generator_adversarial_term(d_b(fake_b))
    adv_a = generator_adversarial_term(d_a(fake_a))
    parts = LossReport()
    parts.adv_g = adv_a + adv_b
    parts.cyc = cycle_loss(batch_a, rec_a, batch_b, rec_b)
    parts.idt = identical_loss(batch_b, idt_b, batch_a, idt_a)
    parts.cc = correlation_loss(batch_a, fake_b, batch_b, fake_a)
    total = total_generator_objective(parts, weights)
    report = LossReport(
        adv_g=float(parts.adv_g.detach()),
        cyc=float(parts.cyc.detach()),
        idt=float(parts.idt.detach()),
        cc=float(parts.cc.detach()),
        total=float(total.detach()),
    )
    return total, report


def discriminator_objective(d_a, d_b, batch_a, batch_b, fake_a, fake_b):
    """Least-squares discriminator objective over both domains."""
    _, term_b = adversarial_losses(d_b(batch_b), d_b(fake_b))
    _, term_a = adversarial_losses(d_a(batch_a), d_a(fake_a))
    return term_a + term_b


def train_step(batch_a, batch_b, state: TrainState, batch_indices=None) -> LossReport:
    """One discriminator update followed by one generator update."""
    if batch_a.shape[0] != batch_b.shape[0]:
        raise DataError("domain batches must have equal size")

    # Discriminators, generators frozen: fakes come from the current step only.
    with torch.no_grad():
        fake_b = state.g_a(batch_a)
        fake_a = state.g_b(batch_b)
    d_total = discriminator_objective(state.d_a, state.d_b, batch_a, batch_b, fake_a, fake_b)
    state.opt_d_a.zero_grad(set_to_none=True)
    state.opt_d_b.zero_grad(set_to_none=True)
    d_total.backward()
    state.opt_d_a.step()
    state.opt_d_b.step()

    # Generators, discriminators frozen.
    g_total, report = generator_objective(
        state.g_a, state.g_b, state.d_a, state.d_b, batch_a, batch_b, state.config.weights
    )
    state.opt_g_a.zero_grad(set_to_none=True)
    state.opt_g_b.zero_grad(set_to_none=True)
    g_total.backward()
    state.opt_g_a.step()
    state.opt_g_b.step()

    report.adv_d = float(d_total.detach())
    if not all(np.isfinite(report.as_row())):
        raise DivergenceError(
            f"non-finite loss at epoch {state.epoch}, step {state.step}",
            epoch=state.epoch,
            step=state.step,
            batch_indices=batch_indices,
        )
    state.step += 1
    return report


# ---------------------------------------------------------------------------
# Dataset plumbing.
# ---------------------------------------------------------------------------


def frames_to_tensor(frames) -> torch.Tensor:
    if not frames:
        raise DataError("empty frame collection")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise DataError("all frames in a batch must share one shape")
    stack = np.stack([f.samples for f in frames]).astype(np.float32)
    return torch.from_numpy(stack).unsqueeze(1)


def tensor_to_frames(tensor, like) -> list[EnvelopeImage]:
    arr = tensor.detach().cpu().numpy()
    if arr.ndim == 4:
        arr = arr[:, 0]
    return [
        EnvelopeImage(
            arr[i],
            axial_spacing=ref.axial_spacing,
            lateral_spacing=ref.lateral_spacing,
            domain_tag=Domain.GENERATED,
            frame_index=ref.frame_index,
        )
        for i, ref in enumerate(like)
    ]


def split_validation(dataset: UnpairedDataset, fraction: float, seed: int):
    """Hold out floor(fraction * n) frames per domain, selected at random."""
    train_ds, val_ds = UnpairedDataset(), UnpairedDataset()
    for domain_idx, (src, train_out, val_out) in enumerate(
        [
            (dataset.domain_a, train_ds.domain_a, val_ds.domain_a),
            (dataset.domain_b, train_ds.domain_b, val_ds.domain_b),
        ]
    ):
        n_val = int(np.floor(fraction * len(src)))
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(7001, domain_idx))
        )
        order = rng.permutation(len(src))
        val_idx = set(order[:n_val].tolist())
        for i, img in enumerate(src):
            (val_out if i in val_idx else train_out).append(img)
    return train_ds, val_ds


def _epoch_order(seed: int, epoch: int, domain_idx: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(1 + epoch, domain_idx))
    )
    return rng.permutation(n)


# ---------------------------------------------------------------------------
# Checkpoints.
# ---------------------------------------------------------------------------

GENERATOR_FILES = ("g_a.wts", "g_b.wts")
DISCRIMINATOR_FILES = ("d_a.wts", "d_b.wts")


def save_checkpoint(state: TrainState, directory, log_offset: int) -> Path:
    """Write a resume checkpoint atomically (temp dir + rename)."""
    directory = Path(directory)
    tmp = directory.parent / f".tmp_{directory.name}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    for name, net in zip(GENERATOR_FILES + DISCRIMINATOR_FILES,
                         (state.g_a, state.g_b, state.d_a, state.d_b)):
        save_weights(net, tmp / name)
    torch.save(
        {
            "opt_g_a": state.opt_g_a.state_dict(),
            "opt_g_b": state.opt_g_b.state_dict(),
            "opt_d_a": state.opt_d_a.state_dict(),
            "opt_d_b": state.opt_d_b.state_dict(),
        },
        tmp / "optim.pt",
    )
    meta = {
        "epoch": state.epoch,
        "step": state.step,
        "log_offset": log_offset,
        "config": _config_echo(state.config),
    }
    (tmp / "meta.json").write_text(json.dumps(meta, indent=2))
    if directory.exists():
        shutil.rmtree(directory)
    os.replace(tmp, directory)
    return directory


def load_checkpoint(directory, config: TrainConfig) -> TrainState:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    g_a = load_generator(directory / "g_a.wts")
    g_b = load_generator(directory / "g_b.wts")
    d_a = load_discriminator(directory / "d_a.wts")
    d_b = load_discriminator(directory / "d_b.wts")
    betas = (config.adam_beta1, config.adam_beta2)
    make = lambda net: torch.optim.Adam(net.parameters(), lr=config.lr_initial, betas=betas)
    state = TrainState(
        g_a, g_b, d_a, d_b, make(g_a), make(g_b), make(d_a), make(d_b), config,
        epoch=meta["epoch"], step=meta["step"],
    )
    opt_states = torch.load(directory / "optim.pt", weights_only=False)
    state.opt_g_a.load_state_dict(opt_states["opt_g_a"])
    state.opt_g_b.load_state_dict(opt_states["opt_g_b"])
    state.opt_d_a.load_state_dict(opt_states["opt_d_a"])
    state.opt_d_b.load_state_dict(opt_states["opt_d_b"])
    return state


def export_generators(state: TrainState, out_dir) -> list[Path]:
    """Deployment export: generator weight files only."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, net in zip(GENERATOR_FILES, (state.g_a, state.g_b)):
        save_weights(net, out_dir / name)
        paths.append(out_dir / name)
    return paths


def _config_echo(config: TrainConfig) -> dict:
    echo = asdict(config)
    echo["weights"] = asdict(config.weights)
    return echo


def write_config_snapshot(path, config: TrainConfig, gen_spec, disc_spec) -> None:
    lines = []
    mode = "baseline: vanilla CycleGAN" if config.weights.is_vanilla_cyclegan else "constrained"
    lines.append(f"mode = {mode}")
    for key, value in _config_echo(config).items():
        lines.append(f"{key} = {value}")
    lines.append(f"generator_spec = {asdict(gen_spec)}")
    lines.append(f"discriminator_spec = {asdict(disc_spec)}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# The full loop.
# ---------------------------------------------------------------------------


def train(
    dataset: UnpairedDataset,
    config: TrainConfig,
    run_dir,
    gen_spec: GeneratorSpec = GeneratorSpec(),
    disc_spec: DiscriminatorSpec = DiscriminatorSpec(),
    resume_from=None,
) -> list[Path]:
    """Train on an unpaired dataset; returns the checkpoint directories written.

    The run directory receives a config snapshot, the per-step CSV loss
    log, per-checkpoint validation objectives, resume checkpoints, and a
    deployment export holding the generators only.
    """
    if not dataset.domain_a or not dataset.domain_b:
        raise DataError("both domains must be non-empty")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)

    train_ds, val_ds = split_validation(dataset, config.validation_fraction, config.seed)
    tensor_a = frames_to_tensor(train_ds.domain_a)
    tensor_b = frames_to_tensor(train_ds.domain_b)

    if resume_from is None:
        state = init_state(config, gen_spec, disc_spec)
    else:
        state = load_checkpoint(resume_from, config)
        gen_spec = state.g_a.spec
        disc_spec = state.d_a.spec

    write_config_snapshot(run_dir / "config.txt", config, gen_spec, disc_spec)
    comments = []
    if config.weights.is_vanilla_cyclegan:
        comments.append("baseline: vanilla CycleGAN")

    steps_per_epoch = min(tensor_a.shape[0], tensor_b.shape[0]) // config.batch_size
    if config.epochs > state.epoch and steps_per_epoch == 0:
        raise DataError("batch size exceeds the smaller training domain")

    checkpoints: list[Path] = []

    def checkpoint(tag_epoch: int) -> Path:
        path = save_checkpoint(
            state, run_dir / "checkpoints" / f"epoch_{tag_epoch:04d}", state.step
        )
        _log_validation(run_dir, state, val_ds, tag_epoch)
        return path

    if state.epoch == 0:
        # Initial checkpoint: epoch 0 is always reconstructible.
        checkpoints.append(checkpoint(0))
    if config.epochs == 0:
        export_generators(state, run_dir / "exported_generators")
        return checkpoints

    with LossLogWriter(run_dir / "loss_log.csv", comments=comments) as log:
        try:
            for epoch in range(state.epoch, config.epochs):
                state.set_lr(lr_at(config, epoch))
                order_a = _epoch_order(config.seed, epoch, 0, tensor_a.shape[0])
                order_b = _epoch_order(config.seed, epoch, 1, tensor_b.shape[0])
                state.epoch = epoch
                for s in range(steps_per_epoch):
                    sel_a = order_a[s * config.batch_size : (s + 1) * config.batch_size]
                    sel_b = order_b[s * config.batch_size : (s + 1) * config.batch_size]
                    report = train_step(
                        tensor_a[sel_a],
                        tensor_b[sel_b],
                        state,
                        batch_indices={"a": sel_a.tolist(), "b": sel_b.tolist()},
                    )
                    log.append(state.step, epoch + 1, report)
                state.epoch = epoch + 1
                if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
                    checkpoints.append(checkpoint(epoch + 1))
        except DivergenceError as err:
            (run_dir / "divergence.txt").write_text(
                f"{err}\nbatch indices: {err.batch_indices}\n"
            )
            raise

    export_generators(state, run_dir / "exported_generators")
    return checkpoints


def _log_validation(run_dir: Path, state: TrainState, val_ds: UnpairedDataset, epoch: int):
    if not val_ds.domain_a or not val_ds.domain_b:
        return
    n = min(len(val_ds.domain_a), len(val_ds.domain_b))
    batch_a = frames_to_tensor(val_ds.domain_a[:n])
    batch_b = frames_to_tensor(val_ds.domain_b[:n])
    nets = state.networks().values()
    modes = [net.training for net in nets]
    for net in nets:
        net.eval()
    with torch.no_grad():
        _, report = generator_objective(
            state.g_a, state.g_b, state.d_a, state.d_b, batch_a, batch_b,
            state.config.weights,
        )
    for net, mode in zip(nets, modes):
        net.train(mode)
    path = run_dir / "val_log.csv"
    header = not path.exists()
    with open(path, "a") as fh:
        if header:
            fh.write("epoch,val_objective\n")
        fh.write(f"{epoch},{report.total}\n")


def translate(generator, frames) -> list[EnvelopeImage]:
    """Inference: forward frames through a generator, clamped to [0, 1].

    `generator` may be a TranslationGenerator or a path to an exported
    generator weight file. Input frames must be normalized to [0, 1].
    """
    if not isinstance(generator, TranslationGenerator):
        generator = load_generator(generator)
    frames = list(frames)
    if not frames:
        return []
    for f in frames:
        if float(f.samples.max(initial=0.0)) > 1.0 + 1e-6:
            raise DataError("translate expects frames normalized to [0, 1]")
    was_training = generator.training
    generator.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(frames), 32):
            chunk = frames[start : start + 32]
            out = generator(frames_to_tensor(chunk)).clamp_(0.0, 1.0)
            outputs.extend(tensor_to_frames(out, chunk))
    generator.train(was_training)
    return outputs
