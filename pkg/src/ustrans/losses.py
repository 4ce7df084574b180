"""Training loss terms and the combined generator objective.

All terms operate on batched tensors of shape (N, 1, H, W) or (N, H, W)
and reduce to scalars. Per-frame statistics (means, correlations) are
computed frame by frame and averaged over the batch, so loss weights are
independent of image resolution and batch size. Every term works in
either float32 or float64.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import torch

from .errors import DataError, DivergenceError, MetricPreconditionError


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0  # cycle
    lambda2: float = 5.0  # identical
    lambda3: float = 5.0  # correlation

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise DataError("loss weights must be >= 0")

    @property
    def is_vanilla_cyclegan(self) -> bool:
        return self.lambda2 == 0.0 and self.lambda3 == 0.0


@dataclass
class LossReport:
    adv_g: float = 0.0
    adv_d: float = 0.0
    cyc: float = 0.0
    idt: float = 0.0
    cc: float = 0.0
    total: float = 0.0

    FIELDS = ("adv_g", "adv_d", "cyc", "idt", "cc", "total")

    def as_row(self):
        return [float(getattr(self, f)) for f in self.FIELDS]


def _check_shapes(*pairs):
    for x, y in pairs:
        if x.shape != y.shape:
            raise DataError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")


def generator_adversarial_term(d_fake_map):
    """Least-squares generator term: drive fake patch scores to 1."""
    if not torch.isfinite(d_fake_map).all():
        raise DivergenceError("non-finite discriminator scores")
    return ((d_fake_map - 1.0) ** 2).mean()


def adversarial_losses(d_real_map, d_fake_map):
    """Least-squares GAN terms from discriminator patch-score maps.

    Returns (generator_term, discriminator_term), both means over all
    patch scores: the discriminator drives real scores to 1 and fake
    scores to 0, the generator drives fake scores to 1.
    """
    if not torch.isfinite(d_real_map).all():
        raise DivergenceError("non-finite discriminator scores")
    generator_term = generator_adversarial_term(d_fake_map)
    discriminator_term = ((d_real_map - 1.0) ** 2).mean() + (d_fake_map**2).mean()
    return generator_term, discriminator_term


def cycle_loss(a, reconstructed_a, b, reconstructed_b):
    """Mean absolute reconstruction error, summed over both directions."""
    _check_shapes((a, reconstructed_a), (b, reconstructed_b))
    return (reconstructed_a - a).abs().mean() + (reconstructed_b - b).abs().mean()


def identical_loss(b, g_a_of_b, a, g_b_of_a):
    """Penalty for a generator altering frames already in its target domain."""
    _check_shapes((b, g_a_of_b), (a, g_b_of_a))
    return (g_a_of_b - b).abs().mean() + (g_b_of_a - a).abs().mean()


def pearson_cc(x, y):
    """Per-frame Pearson correlation, averaged over the batch.

    Frames are flattened over all non-batch dimensions. A constant frame
    has no defined correlation and is rejected.
    """
    _check_shapes((x, y))
    xf = x.reshape(x.shape[0], -1)
    yf = y.reshape(y.shape[0], -1)
    xc = xf - xf.mean(dim=1, keepdim=True)
    yc = yf - yf.mean(dim=1, keepdim=True)
    xn = (xc**2).sum(dim=1)
    yn = (yc**2).sum(dim=1)
    if (xn == 0).any() or (yn == 0).any():
        raise MetricPreconditionError("constant frame has undefined correlation")
    cc = (xc * yc).sum(dim=1) / torch.sqrt(xn * yn)
    return cc.mean()


def correlation_loss(a, g_of_a, b, g_of_b):
    """Speckle-pattern preservation term: (1 - cc) per direction.

    Minimizing it maximizes the Pearson correlation between each input
    and its translation; the value lies in [0, 4] and is 0 only when
    both correlations are exactly 1.
    """
    return (1.0 - pearson_cc(g_of_a, a)) + (1.0 - pearson_cc(g_of_b, b))


def total_generator_objective(parts: LossReport, w: LossWeights):
    """Weighted sum adv_g + l1*cyc + l2*idt + l3*cc. Works on floats or tensors."""
    return parts.adv_g + w.lambda1 * parts.cyc + w.lambda2 * parts.idt + w.lambda3 * parts.cc


# ---------------------------------------------------------------------------
# CSV training log, one row per step.
# ---------------------------------------------------------------------------

LOG_COLUMNS = ("step", "epoch", *LossReport.FIELDS)


class LossLogWriter:
    """Appends per-step loss rows; optional comment lines precede the header."""

    def __init__(self, path, comments=()):
        self.path = path
        new = not path.exists() if hasattr(path, "exists") else True
        self._fh = open(path, "a", newline="")
        self._writer = csv.writer(self._fh)
        if new or self._fh.tell() == 0:
            for comment in comments:
                self._fh.write(f"# {comment}\n")
            self._writer.writerow(LOG_COLUMNS)
            self._fh.flush()

    def append(self, step: int, epoch: int, report: LossReport) -> None:
        self._writer.writerow([step, epoch] + report.as_row())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_loss_log(path):
    """Loss log rows as dicts; comment lines are skipped."""
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != list(LOG_COLUMNS):
        raise DataError(f"{path}: unexpected loss-log columns {reader.fieldnames}")
    for raw in reader:
        row = {k: float(v) for k, v in raw.items()}
        row["step"] = int(row["step"])
        row["epoch"] = int(row["epoch"])
        rows.append(row)
    return rows
