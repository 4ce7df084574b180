"""Synthetic speckle phantoms with known point targets and known motion.

Frames are rendered by splatting a random complex scatterer field with a
depth-varying point spread function (Gaussian envelope times an axial
carrier) and taking the magnitude. Scatterer amplitudes are i.i.d.
circular complex Gaussian, so fully developed speckle has a Rayleigh
amplitude distribution (Nakagami shape parameter m = 1), which the
estimator tests rely on.

Two domain presets ship with the module: a "phased-like" field whose
lateral blur grows with depth, and a "linear-like" field with constant,
finer lateral blur. They are small enough that the translation task is
learnable on a CPU in minutes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .frames import Domain, EnvelopeImage

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))

_PSF_SUPPORT_SIGMAS = 4.0


@dataclass(frozen=True)
class PsfModel:
    """Gaussian-envelope PSF whose lateral width may grow with depth."""

    axial_sigma: float  # mm, constant over depth
    lateral_sigma_at_surface: float  # mm
    lateral_growth: float = 0.0  # mm of sigma per mm of depth
    carrier_wavelength: float = 0.5  # mm

    def __post_init__(self):
        if self.axial_sigma <= 0 or self.lateral_sigma_at_surface <= 0:
            raise DataError("PSF sigmas must be positive")
        if self.lateral_growth < 0:
            raise DataError("lateral growth must be >= 0")
        if self.carrier_wavelength <= 0:
            raise DataError("carrier wavelength must be positive")

    def lateral_sigma_at(self, depth_mm: float) -> float:
        return self.lateral_sigma_at_surface + self.lateral_growth * depth_mm


@dataclass(frozen=True)
class PointTarget:
    axial_mm: float
    lateral_mm: float
    amplitude: float  # scatterer amplitude in units of the diffuse amplitude std


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int]  # (axial, lateral) samples
    axial_spacing: float  # mm
    lateral_spacing: float  # mm
    scatterer_density: float  # scatterers per resolution cell
    psf: PsfModel
    rng_seed: int
    point_targets: tuple[PointTarget, ...] = ()
    domain_tag: Domain = Domain.GENERATED

    def __post_init__(self):
        if self.scatterer_density <= 0:
            raise DataError("scatterer density must be positive")
        if self.axial_spacing <= 0 or self.lateral_spacing <= 0:
            raise DataError("pixel spacings must be positive")
        ext_ax, ext_lat = self.extent_mm()
        for t in self.point_targets:
            if not (0.0 <= t.axial_mm <= ext_ax and 0.0 <= t.lateral_mm <= ext_lat):
                raise DataError(f"point target {t} lies outside the grid")

    def extent_mm(self) -> tuple[float, float]:
        return (
            (self.shape[0] - 1) * self.axial_spacing,
            (self.shape[1] - 1) * self.lateral_spacing,
        )

    def resolution_cell_area_mm2(self) -> float:
        """FWHM-by-FWHM cell area, with the lateral width taken at mid depth."""
        mid_depth = 0.5 * self.extent_mm()[0]
        return (FWHM_PER_SIGMA * self.psf.axial_sigma) * (
            FWHM_PER_SIGMA * self.psf.lateral_sigma_at(mid_depth)
        )

    def scatterer_pitch_mm(self) -> float:
        """Spacing of the diffuse scatterer lattice realizing the density."""
        return float(np.sqrt(self.resolution_cell_area_mm2() / self.scatterer_density))

    def diffuse_rms(self, depth_mm: float) -> float:
        """Expected RMS of the diffuse envelope at a given depth.

        For unit-variance scatterer amplitudes the speckle field variance is
        (scatterers per area) times the PSF energy pi * sigma_ax * sigma_lat.
        """
        per_area = 1.0 / self.scatterer_pitch_mm() ** 2
        energy = np.pi * self.psf.axial_sigma * self.psf.lateral_sigma_at(depth_mm)
        return float(np.sqrt(per_area * energy))


def point_amplitude_for_db(spec: PhantomSpec, db_above_background: float, depth_mm: float) -> float:
    """Scatterer amplitude that puts a point target the given dB above speckle."""
    return 10.0 ** (db_above_background / 20.0) * spec.diffuse_rms(depth_mm)


@dataclass(frozen=True)
class MotionField:
    """Per-frame displacement (mm) sampled on the pixel grid."""

    axial_mm: np.ndarray
    lateral_mm: np.ndarray
    axial_spacing: float
    lateral_spacing: float

    def __post_init__(self):
        ax = np.asarray(self.axial_mm, dtype=np.float64)
        lat = np.asarray(self.lateral_mm, dtype=np.float64)
        if ax.shape != lat.shape or ax.ndim != 2:
            raise DataError("motion planes must share one 2-D shape")
        object.__setattr__(self, "axial_mm", ax)
        object.__setattr__(self, "lateral_mm", lat)

    @classmethod
    def uniform(cls, shape, axial_spacing, lateral_spacing, d_axial_mm, d_lateral_mm):
        return cls(
            np.full(shape, d_axial_mm),
            np.full(shape, d_lateral_mm),
            axial_spacing,
            lateral_spacing,
        )

    @classmethod
    def lateral_shear(cls, shape, axial_spacing, lateral_spacing, slope_mm_per_mm):
        """Lateral displacement growing linearly with depth; no axial motion."""
        depth = np.arange(shape[0]) * axial_spacing
        lat = np.broadcast_to(slope_mm_per_mm * depth[:, None], shape).copy()
        return cls(np.zeros(shape), lat, axial_spacing, lateral_spacing)

    def displacement_at(self, axial_mm, lateral_mm):
        """Bilinear sample of the field at continuous positions (mm)."""
        y = np.clip(np.asarray(axial_mm) / self.axial_spacing, 0, self.axial_mm.shape[0] - 1)
        x = np.clip(np.asarray(lateral_mm) / self.lateral_spacing, 0, self.axial_mm.shape[1] - 1)
        y0 = np.minimum(np.floor(y).astype(np.intp), self.axial_mm.shape[0] - 2)
        x0 = np.minimum(np.floor(x).astype(np.intp), self.axial_mm.shape[1] - 2)
        wy = y - y0
        wx = x - x0
        out = []
        for plane in (self.axial_mm, self.lateral_mm):
            v = (
                plane[y0, x0] * (1 - wy) * (1 - wx)
                + plane[y0 + 1, x0] * wy * (1 - wx)
                + plane[y0, x0 + 1] * (1 - wy) * wx
                + plane[y0 + 1, x0 + 1] * wy * wx
            )
            out.append(v)
        return out[0], out[1]


def _draw_scatterers(spec: PhantomSpec):
    """Diffuse lattice scatterers plus point targets, deterministic in the seed.

    Diffuse scatterers sit on a regular lattice whose pitch realizes the
    requested per-cell density, with i.i.d. circular complex Gaussian
    amplitudes. A lattice keeps the summed PSF energy uniform across the
    frame, so fully developed speckle is exactly Rayleigh; random
    placement would mix the local variance and bias the shape parameter
    below 1 at moderate densities.
    """
    if spec.scatterer_density < 1.0:
        warnings.warn(
            "fewer than 1 scatterer per resolution cell: speckle will be pre-Rayleigh",
            stacklevel=3,
        )
    rng = np.random.default_rng(spec.rng_seed)
    ext_ax, ext_lat = spec.extent_mm()
    pitch = spec.scatterer_pitch_mm()
    # extend past the frame by the PSF support so border speckle is stationary
    margin_ax = _PSF_SUPPORT_SIGMAS * spec.psf.axial_sigma
    margin_lat = _PSF_SUPPORT_SIGMAS * spec.psf.lateral_sigma_at(ext_ax)
    ax = np.arange(-margin_ax, ext_ax + margin_ax + pitch, pitch)
    lat = np.arange(-margin_lat, ext_lat + margin_lat + pitch, pitch)
    pos_ax, pos_lat = (g.ravel() for g in np.meshgrid(ax, lat, indexing="ij"))
    n = pos_ax.size
    amp = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    for t in spec.point_targets:
        pos_ax = np.append(pos_ax, t.axial_mm)
        pos_lat = np.append(pos_lat, t.lateral_mm)
        amp = np.append(amp, t.amplitude + 0.0j)
    return pos_ax, pos_lat, amp


def _render_field(spec: PhantomSpec, pos_ax, pos_lat, amp) -> np.ndarray:
    n_ax, n_lat = spec.shape
    z = np.arange(n_ax) * spec.axial_spacing
    x = np.arange(n_lat) * spec.lateral_spacing
    sig_ax = spec.psf.axial_sigma
    field = np.zeros((n_ax, n_lat), dtype=np.complex128)
    k = 2.0 * np.pi / spec.psf.carrier_wavelength
    for pa, pl, a in zip(pos_ax, pos_lat, amp):
        sig_lat = spec.psf.lateral_sigma_at(pa)
        i0 = max(0, int(np.ceil((pa - _PSF_SUPPORT_SIGMAS * sig_ax) / spec.axial_spacing)))
        i1 = min(n_ax, int(np.floor((pa + _PSF_SUPPORT_SIGMAS * sig_ax) / spec.axial_spacing)) + 1)
        j0 = max(0, int(np.ceil((pl - _PSF_SUPPORT_SIGMAS * sig_lat) / spec.lateral_spacing)))
        j1 = min(n_lat, int(np.floor((pl + _PSF_SUPPORT_SIGMAS * sig_lat) / spec.lateral_spacing)) + 1)
        if i0 >= i1 or j0 >= j1:
            continue
        dz = z[i0:i1] - pa
        dx = x[j0:j1] - pl
        axial = np.exp(-0.5 * (dz / sig_ax) ** 2) * np.exp(1j * k * dz)
        lateral = np.exp(-0.5 * (dx / sig_lat) ** 2)
        field[i0:i1, j0:j1] += a * axial[:, None] * lateral[None, :]
    return field


def render_phantom(spec: PhantomSpec) -> EnvelopeImage:
    """Render one envelope frame from a fresh scatterer draw."""
    pos_ax, pos_lat, amp = _draw_scatterers(spec)
    env = np.abs(_render_field(spec, pos_ax, pos_lat, amp))
    return EnvelopeImage(
        env.astype(np.float32),
        axial_spacing=spec.axial_spacing,
        lateral_spacing=spec.lateral_spacing,
        domain_tag=spec.domain_tag,
        frame_index=0,
    )


def render_sequence(
    spec: PhantomSpec,
    motion: MotionField,
    n_frames: int,
    *,
    guard_mm: float = 0.0,
) -> list[EnvelopeImage]:
    """Render frames of moving scatterers; truth displacement is `motion` per step.

    Scatterer positions (not rendered pixels) advance by the motion field
    evaluated at their current location, so the ground-truth inter-frame
    displacement is exactly the supplied field. Scatterers leaving the
    grid extent plus `guard_mm` on any side are a hard error.
    """
    if n_frames < 2:
        raise DataError("a sequence needs n_frames >= 2")
    pos_ax, pos_lat, amp = _draw_scatterers(spec)
    # guard band: allowed drift around the initial scatterer support box
    box = (pos_ax.min(), pos_ax.max(), pos_lat.min(), pos_lat.max())
    frames = []
    for idx in range(n_frames):
        if idx > 0:
            d_ax, d_lat = motion.displacement_at(pos_ax, pos_lat)
            pos_ax = pos_ax + d_ax
            pos_lat = pos_lat + d_lat
            if (
                pos_ax.min() < box[0] - guard_mm
                or pos_ax.max() > box[1] + guard_mm
                or pos_lat.min() < box[2] - guard_mm
                or pos_lat.max() > box[3] + guard_mm
            ):
                raise DataError(
                    f"motion moved scatterers outside the guard band at frame {idx}"
                )
        env = np.abs(_render_field(spec, pos_ax, pos_lat, amp))
        frames.append(
            EnvelopeImage(
                env.astype(np.float32),
                axial_spacing=spec.axial_spacing,
                lateral_spacing=spec.lateral_spacing,
                domain_tag=spec.domain_tag,
                frame_index=idx,
            )
        )
    return frames


# ---------------------------------------------------------------------------
# Desk-scale domain presets.
# ---------------------------------------------------------------------------

DESK_SHAPE = (64, 64)
DESK_SPACING = 0.2  # mm per sample in both directions
DESK_DENSITY = 12.0
DESK_TARGET_DB = 40.0

_PHASED_PSF = PsfModel(
    axial_sigma=0.30,
    lateral_sigma_at_surface=0.35,
    lateral_growth=0.06,
    carrier_wavelength=0.60,
)
_LINEAR_PSF = PsfModel(
    axial_sigma=0.25,
    lateral_sigma_at_surface=0.28,
    lateral_growth=0.0,
    carrier_wavelength=0.50,
)


def desk_spec(
    domain: Domain,
    seed: int,
    *,
    shape: tuple[int, int] = DESK_SHAPE,
    point_targets: tuple[PointTarget, ...] = (),
) -> PhantomSpec:
    """Phased-like or linear-like desk preset for the given RNG seed."""
    if domain == Domain.PHASED:
        psf = _PHASED_PSF
    elif domain == Domain.LINEAR:
        psf = _LINEAR_PSF
    else:
        raise DataError("desk presets exist for the phased and linear domains only")
    return PhantomSpec(
        shape=shape,
        axial_spacing=DESK_SPACING,
        lateral_spacing=DESK_SPACING,
        scatterer_density=DESK_DENSITY,
        psf=psf,
        rng_seed=seed,
        point_targets=point_targets,
        domain_tag=domain,
    )


def desk_point_targets(spec_like: PhantomSpec, depths_mm, lateral_mm=None) -> tuple[PointTarget, ...]:
    """A vertical ladder of bright targets at the requested depths."""
    if lateral_mm is None:
        lateral_mm = 0.5 * spec_like.extent_mm()[1]
    return tuple(
        PointTarget(d, lateral_mm, point_amplitude_for_db(spec_like, DESK_TARGET_DB, d))
        for d in depths_mm
    )
