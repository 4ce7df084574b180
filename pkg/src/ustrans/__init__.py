"""Unpaired phased-to-linear ultrasound envelope image translation.

Subpackages cover the full desk-scale pipeline: synthetic speckle
phantoms with known targets and motion, the constrained cycle-consistent
translation networks and their losses, the training loop, and the
evaluation stack (FWHM resolution, Nakagami speckle statistics, SSIM,
PSNR, and cross-correlation speckle tracking).
"""

from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    MetricPreconditionError,
    UstransError,
)
from .frames import (
    Domain,
    EnvelopeImage,
    UnpairedDataset,
    envelope_detect,
    load_dataset,
    load_frame,
    normalize,
    resample_to_model_grid,
    save_frame,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "Domain",
    "EnvelopeImage",
    "MetricPreconditionError",
    "UnpairedDataset",
    "UstransError",
    "envelope_detect",
    "load_dataset",
    "load_frame",
    "normalize",
    "resample_to_model_grid",
    "save_frame",
    "__version__",
]
