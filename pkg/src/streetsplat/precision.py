"""Float width selection shared by the network and the rasterizer.

``ADG_PRECISION`` picks 32- or 64-bit floats for everything that is not a
stored raster (rasters on disk are always float32).
"""

import os

import numpy as np
import torch

ENV_VAR = "ADG_PRECISION"


def precision_bits() -> int:
    raw = os.environ.get(ENV_VAR, "32").strip()
    if raw not in ("32", "64"):
        raise ValueError(f"{ENV_VAR} must be 32 or 64, got {raw!r}")
    return int(raw)


def torch_dtype() -> torch.dtype:
    return torch.float64 if precision_bits() == 64 else torch.float32


def numpy_dtype():
    return np.float64 if precision_bits() == 64 else np.float32
