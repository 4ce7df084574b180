"""Image-quality metrics: FWHM resolution, Nakagami shape, SSIM, PSNR.

FWHM is measured on a profile through the dominant peak of a point-target
region, with the two half-maximum crossings located by linear
interpolation on a 10x upsampled profile; the result is in mm and is
invariant under positive rescaling of the intensities.

The Nakagami shape parameter uses the classic intensity-moment estimator
m = E[R^2]^2 / Var[R^2]; Rayleigh-distributed envelopes give m = 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import ttest_rel

from .errors import DataError, MetricPreconditionError
from .frames import EnvelopeImage

AXIAL = "axial"
LATERAL = "lateral"

_UPSAMPLE = 10


@dataclass(frozen=True)
class ResolutionMeasurement:
    target_id: str
    axial_fwhm: float  # mm
    lateral_fwhm: float  # mm
    peak_location: tuple[float, float]  # (axial mm, lateral mm) within the ROI

    def __post_init__(self):
        if not (self.axial_fwhm > 0 and self.lateral_fwhm > 0):
            raise MetricPreconditionError("FWHM must be positive")


@dataclass(frozen=True)
class NakagamiEstimate:
    m: float
    roi: str
    n_samples: int


def _as_array(img) -> np.ndarray:
    return img.samples if isinstance(img, EnvelopeImage) else np.asarray(img)


def fwhm(roi: EnvelopeImage, direction: str) -> float:
    """Full width at half maximum through the ROI peak, in mm.

    The ROI must contain a unique dominant peak and the profile must drop
    below half maximum on both sides inside the ROI.
    """
    samples = np.asarray(roi.samples, dtype=np.float64)
    peak_value = samples.max()
    peaks = np.argwhere(samples == peak_value)
    if len(peaks) != 1:
        raise MetricPreconditionError(f"ambiguous peak: {len(peaks)} equal maxima")
    py, px = peaks[0]
    if direction == AXIAL:
        profile = samples[:, px]
        spacing = roi.axial_spacing
        peak_idx = py
    elif direction == LATERAL:
        profile = samples[py, :]
        spacing = roi.lateral_spacing
        peak_idx = px
    else:
        raise DataError(f"direction must be '{AXIAL}' or '{LATERAL}'")
    return profile_fwhm(profile, peak_idx) * spacing


def profile_fwhm(profile: np.ndarray, peak_idx: int) -> float:
    """Half-maximum crossing separation of a 1-D profile, in samples."""
    profile = np.asarray(profile, dtype=np.float64)
    n = len(profile)
    if n < 3:
        raise MetricPreconditionError("profile too short for a width measurement")
    fine_n = (n - 1) * _UPSAMPLE + 1
    fine_pos = np.linspace(0.0, n - 1, fine_n)
    fine = np.interp(fine_pos, np.arange(n), profile)
    half = 0.5 * profile[peak_idx]
    peak_fine = peak_idx * _UPSAMPLE

    left = _crossing(fine, fine_pos, peak_fine, half, step=-1)
    right = _crossing(fine, fine_pos, peak_fine, half, step=+1)
    return right - left


def _crossing(fine, fine_pos, start, half, step):
    i = start
    while 0 <= i + step < len(fine):
        j = i + step
        if fine[j] <= half:
            # linear interpolation between the fine samples i and j
            span = fine[i] - fine[j]
            frac = 0.0 if span == 0 else (fine[i] - half) / span
            return fine_pos[i] + frac * (fine_pos[j] - fine_pos[i])
        i = j
    raise MetricPreconditionError("target clipped by ROI: no half-maximum crossing")


def extract_roi(img: EnvelopeImage, center_mm: tuple[float, float], size_mm: float) -> EnvelopeImage:
    """Square ROI of the given physical size centered at (axial, lateral) mm."""
    cy = center_mm[0] / img.axial_spacing
    cx = center_mm[1] / img.lateral_spacing
    hy = max(1, int(round(0.5 * size_mm / img.axial_spacing)))
    hx = max(1, int(round(0.5 * size_mm / img.lateral_spacing)))
    y0 = max(0, int(round(cy)) - hy)
    y1 = min(img.shape[0], int(round(cy)) + hy + 1)
    x0 = max(0, int(round(cx)) - hx)
    x1 = min(img.shape[1], int(round(cx)) + hx + 1)
    if y1 - y0 < 3 or x1 - x0 < 3:
        raise MetricPreconditionError("ROI does not fit inside the frame")
    return img.with_samples(img.samples[y0:y1, x0:x1])


def measure_point_target(
    img: EnvelopeImage,
    target_id: str,
    center_mm: tuple[float, float],
    roi_size_mm: float = 4.0,
) -> ResolutionMeasurement:
    roi = extract_roi(img, center_mm, roi_size_mm)
    samples = np.asarray(roi.samples, dtype=np.float64)
    py, px = np.unravel_index(np.argmax(samples), samples.shape)
    return ResolutionMeasurement(
        target_id=target_id,
        axial_fwhm=fwhm(roi, AXIAL),
        lateral_fwhm=fwhm(roi, LATERAL),
        peak_location=(py * roi.axial_spacing, px * roi.lateral_spacing),
    )


def nakagami_m(samples, roi: str = "") -> NakagamiEstimate:
    """Moment estimator of the Nakagami shape parameter over envelope samples."""
    r = np.asarray(samples, dtype=np.float64).ravel()
    if r.size < 100:
        raise MetricPreconditionError(f"need >= 100 samples, got {r.size}")
    intensity = r * r
    var = intensity.var()
    if var == 0:
        raise MetricPreconditionError("constant ROI has no defined shape parameter")
    m = intensity.mean() ** 2 / var
    return NakagamiEstimate(m=float(m), roi=roi, n_samples=int(r.size))


# ---------------------------------------------------------------------------
# SSIM / PSNR
# ---------------------------------------------------------------------------


def ssim(x, y, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5,
         return_map: bool = False):
    """Mean structural similarity with a Gaussian window.

    Local means/variances use an 11x11 Gaussian window (sigma 1.5) and the
    usual stabilizing constants C1 = (0.01 L)^2, C2 = (0.03 L)^2; the edge
    band of half a window is cropped before averaging.
    """
    x = np.asarray(_as_array(x), dtype=np.float64)
    y = np.asarray(_as_array(y), dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"shape mismatch: {x.shape} vs {y.shape}")
    if win_size % 2 == 0 or win_size < 3:
        raise DataError("win_size must be odd and >= 3")
    if min(x.shape) < win_size:
        raise MetricPreconditionError(
            f"frame smaller than the {win_size}x{win_size} SSIM window"
        )
    truncate = (win_size - 1) / 2 / sigma
    blur = lambda a: gaussian_filter(a, sigma, truncate=truncate)

    mu_x = blur(x)
    mu_y = blur(y)
    mu_xx = blur(x * x)
    mu_yy = blur(y * y)
    mu_xy = blur(x * y)
    var_x = mu_xx - mu_x * mu_x
    var_y = mu_yy - mu_y * mu_y
    cov = mu_xy - mu_x * mu_y

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    pad = (win_size - 1) // 2
    cropped = ssim_map[pad:-pad, pad:-pad]
    if return_map:
        return float(cropped.mean()), ssim_map
    return float(cropped.mean())


def psnr(x, y, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    x = np.asarray(_as_array(x), dtype=np.float64)
    y = np.asarray(_as_array(y), dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range**2 / mse))


def paired_ttest(a, b) -> tuple[float, float]:
    """Paired two-sided t-test; returns (statistic, p-value)."""
    res = ttest_rel(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# Named ROI files: one rectangle per line, coordinates in mm.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoiRect:
    name: str
    axial_start: float
    axial_stop: float
    lateral_start: float
    lateral_stop: float

    def slice_frame(self, img: EnvelopeImage) -> np.ndarray:
        y0 = int(round(self.axial_start / img.axial_spacing))
        y1 = int(round(self.axial_stop / img.axial_spacing)) + 1
        x0 = int(round(self.lateral_start / img.lateral_spacing))
        x1 = int(round(self.lateral_stop / img.lateral_spacing)) + 1
        if not (0 <= y0 < y1 <= img.shape[0] and 0 <= x0 < x1 <= img.shape[1]):
            raise MetricPreconditionError(f"ROI {self.name} outside the frame")
        return img.samples[y0:y1, x0:x1]


def read_roi_file(path) -> list[RoiRect]:
    """Parse 'name ax_start ax_stop lat_start lat_stop' lines (mm)."""
    rois = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 whitespace-separated fields")
        rois.append(RoiRect(parts[0], *map(float, parts[1:])))
    if not rois:
        raise DataError(f"{path}: no ROI definitions found")
    return rois


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
