"""Envelope frames: the shared image type, ingest operations, and file formats.

An :class:`EnvelopeImage` is a 2-D grid of non-negative envelope samples
(axial rows, lateral columns) with physical pixel spacings in mm and a
domain tag. Pre-scan-conversion phased-array frames live on their
rectangular beam-line grid; the lateral spacing then stores the beam-line
pitch.

Frames round-trip losslessly through a small self-describing binary
container (`.usec`), and datasets are described by plain-text manifests
with one record per frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.signal import hilbert

from .errors import DataError

MODEL_SHAPE = (256, 256)

_MAGIC = b"USEC"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBIIIIddI")  # magic, ver, dtype, tag, index, planes, h, w, dz, dx, names_len


class Domain(str, Enum):
    PHASED = "phased"
    LINEAR = "linear"
    GENERATED = "generated"


@dataclass(frozen=True)
class EnvelopeImage:
    """One envelope frame on a rectangular sample grid.

    samples are float32, shape (axial, lateral), every value >= 0.
    Spacings are mm per sample along each axis.
    """

    samples: np.ndarray
    axial_spacing: float
    lateral_spacing: float
    domain_tag: Domain = Domain.GENERATED
    frame_index: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 2:
            raise DataError(f"envelope frame must be 2-D, got shape {samples.shape}")
        if np.any(samples < 0):
            raise DataError("envelope samples must be non-negative")
        if not (self.axial_spacing > 0 and self.lateral_spacing > 0):
            raise DataError("pixel spacings must be positive")
        if self.frame_index < 0:
            raise DataError("frame_index must be >= 0")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "domain_tag", Domain(self.domain_tag))

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    def axial_extent_mm(self) -> float:
        return (self.shape[0] - 1) * self.axial_spacing

    def lateral_extent_mm(self) -> float:
        return (self.shape[1] - 1) * self.lateral_spacing

    def with_samples(self, samples: np.ndarray) -> "EnvelopeImage":
        return replace(self, samples=samples)


@dataclass
class UnpairedDataset:
    """Two uncorresponded frame collections, one per probe domain."""

    domain_a: list[EnvelopeImage] = field(default_factory=list)  # phased
    domain_b: list[EnvelopeImage] = field(default_factory=list)  # linear

    def __len__(self) -> int:
        return len(self.domain_a) + len(self.domain_b)


def envelope_detect(
    rf: np.ndarray,
    *,
    axial_spacing: float = 1.0,
    lateral_spacing: float = 1.0,
    domain_tag: Domain = Domain.PHASED,
    frame_index: int = 0,
) -> EnvelopeImage:
    """Detect the envelope of beamformed RF data.

    Computes the magnitude of the spectral-domain analytic signal along
    the axial dimension (axis 0) of each line: negative frequencies are
    zeroed and positive ones doubled, so the result is exact up to FFT
    round-off rather than depending on an FIR filter design.
    """
    rf = np.asarray(rf, dtype=np.float64)
    if rf.ndim != 2:
        raise DataError("rf grid must be 2-D (axial x lateral)")
    if rf.shape[0] < 8:
        raise DataError(f"need >= 8 axial samples per line, got {rf.shape[0]}")
    env = np.abs(hilbert(rf, axis=0))
    return EnvelopeImage(
        env.astype(np.float32),
        axial_spacing=axial_spacing,
        lateral_spacing=lateral_spacing,
        domain_tag=domain_tag,
        frame_index=frame_index,
    )


def normalize(img: EnvelopeImage) -> EnvelopeImage:
    """Scale a frame so its maximum is exactly 1. Idempotent."""
    peak = float(img.samples.max(initial=0.0))
    if peak == 0.0:
        raise DataError("degenerate frame: all samples are zero")
    if peak == 1.0:
        return img
    return img.with_samples(img.samples / np.float32(peak))


def resample_to_model_grid(
    img: EnvelopeImage, target: tuple[int, int] = MODEL_SHAPE
) -> EnvelopeImage:
    """Bilinearly resample a frame onto the model grid.

    Sample positions are endpoint-aligned so the physical extent
    (n - 1) * spacing is preserved; spacings are rescaled accordingly.
    A frame already on the target grid is returned unchanged.
    """
    if not (img.axial_spacing > 0 and img.lateral_spacing > 0):
        raise DataError("pixel spacings must be positive")
    n_ax, n_lat = img.shape
    if n_ax < 16 or n_lat < 16:
        raise DataError(f"frame too small to resample: {img.shape}, need >= 16x16")
    t_ax, t_lat = target
    if t_ax < 2 or t_lat < 2:
        raise DataError(f"invalid target grid {target}")
    if (n_ax, n_lat) == (t_ax, t_lat):
        return img

    out = _linear_resample_axis(img.samples.astype(np.float64), t_ax, axis=0)
    out = _linear_resample_axis(out, t_lat, axis=1)
    return replace(
        img,
        samples=out.astype(np.float32),
        axial_spacing=img.axial_spacing * (n_ax - 1) / (t_ax - 1),
        lateral_spacing=img.lateral_spacing * (n_lat - 1) / (t_lat - 1),
    )


def _linear_resample_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_out == n_in:
        return a
    pos = np.linspace(0.0, n_in - 1, n_out)
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, n_in - 2)
    w = pos - lo
    a = np.moveaxis(a, axis, 0)
    out = a[lo] * (1.0 - w)[:, None] + a[lo + 1] * w[:, None]
    return np.moveaxis(out, 0, axis)


# ---------------------------------------------------------------------------
# Binary container (.usec): fixed header + named row-major float32 planes.
# ---------------------------------------------------------------------------

_DOMAIN_CODES = {Domain.PHASED: 0, Domain.LINEAR: 1, Domain.GENERATED: 2}
_CODE_DOMAINS = {v: k for k, v in _DOMAIN_CODES.items()}


def write_container(
    path,
    planes: dict[str, np.ndarray],
    *,
    axial_spacing: float,
    lateral_spacing: float,
    domain_tag: Domain = Domain.GENERATED,
    frame_index: int = 0,
) -> None:
    """Write named float32 planes of a common shape with one fixed header."""
    names = list(planes)
    if not names:
        raise DataError("container needs at least one plane")
    arrays = [np.ascontiguousarray(planes[n], dtype="<f4") for n in names]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays) or len(shape) != 2:
        raise DataError("all container planes must share one 2-D shape")
    name_block = "\n".join(names).encode("utf-8")
    header = _HEADER.pack(
        _MAGIC,
        _FORMAT_VERSION,
        1,  # dtype code: float32
        _DOMAIN_CODES[Domain(domain_tag)],
        frame_index,
        len(arrays),
        shape[0],
        shape[1],
        axial_spacing,
        lateral_spacing,
        len(name_block),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(name_block)
        for a in arrays:
            fh.write(a.tobytes())


def read_container(path):
    """Read a container; returns (planes dict, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise DataError(f"{path}: truncated container header")
        (magic, version, dtype_code, tag_code, frame_index, n_planes,
         h, w, dz, dx, names_len) = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise DataError(f"{path}: not an envelope container (bad magic)")
        if version != _FORMAT_VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        if dtype_code != 1:
            raise DataError(f"{path}: unsupported dtype code {dtype_code}")
        names = fh.read(names_len).decode("utf-8").split("\n")
        if len(names) != n_planes:
            raise DataError(f"{path}: plane name count mismatch")
        planes = {}
        for name in names:
            buf = fh.read(h * w * 4)
            if len(buf) != h * w * 4:
                raise DataError(f"{path}: truncated plane data")
            planes[name] = np.frombuffer(buf, dtype="<f4").reshape(h, w).copy()
    meta = {
        "axial_spacing": dz,
        "lateral_spacing": dx,
        "domain_tag": _CODE_DOMAINS[tag_code],
        "frame_index": frame_index,
    }
    return planes, meta


def save_frame(img: EnvelopeImage, path) -> None:
    write_container(
        path,
        {"envelope": img.samples},
        axial_spacing=img.axial_spacing,
        lateral_spacing=img.lateral_spacing,
        domain_tag=img.domain_tag,
        frame_index=img.frame_index,
    )


def load_frame(path) -> EnvelopeImage:
    planes, meta = read_container(path)
    if "envelope" not in planes:
        raise DataError(f"{path}: container holds no 'envelope' plane")
    return EnvelopeImage(planes["envelope"], **meta)


# ---------------------------------------------------------------------------
# Dataset manifest: one tab-separated record per frame.
# ---------------------------------------------------------------------------


def write_manifest(records, path) -> None:
    """records: iterable of (relative frame path, Domain, frame_index)."""
    lines = [f"{p}\t{Domain(tag).value}\t{int(idx)}" for p, tag, idx in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[str, Domain, int]]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 'path<TAB>domain<TAB>index'")
        try:
            domain = Domain(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: unknown domain tag {parts[1]!r}") from None
        records.append((parts[0], domain, int(parts[2])))
    return records


def load_dataset(manifest_path) -> UnpairedDataset:
    """Load an unpaired dataset; paths in the manifest are relative to it."""
    base = Path(manifest_path).parent
    ds = UnpairedDataset()
    for rel, domain, _ in read_manifest(manifest_path):
        img = load_frame(base / rel)
        if domain == Domain.PHASED:
            ds.domain_a.append(img)
        elif domain == Domain.LINEAR:
            ds.domain_b.append(img)
        else:
            raise DataError(f"manifest domain must be phased or linear, got {domain}")
    return ds
