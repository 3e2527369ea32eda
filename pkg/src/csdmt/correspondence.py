"""Pixel-wise semantic correspondence and low-frequency deformation.

The correlation matrix holds cosine similarities between every pair of
source/reference feature pixels; deformation aggregates reference LF pixels
with temperature-scaled softmax weights along each row.
"""

from dataclasses import dataclass

import torch

from .errors import ConfigError, DimensionError
from .pyramid import as_tensor

COSINE_EPS = 1e-8
DEFAULT_TAU = 100.0


@dataclass
class CorrMatrix:
    m: torch.Tensor  # (P, P), entries in [-1, 1]
    tau: float = DEFAULT_TAU


def correlation_matrix(fx, fy, tau=DEFAULT_TAU):
    """Cosine similarity between every source and reference feature pixel.

    fx, fy: (h, w, C) feature maps of identical shape.
    """
    fx = as_tensor(fx)
    fy = as_tensor(fy)
    if fx.shape != fy.shape:
        raise DimensionError(f"feature shapes differ: {tuple(fx.shape)} vs {tuple(fy.shape)}")
    a = fx.reshape(-1, fx.shape[-1])
    b = fy.reshape(-1, fy.shape[-1])
    denom = a.norm(dim=1, keepdim=True) * b.norm(dim=1, keepdim=True).T + COSINE_EPS
    m = (a @ b.T) / denom
    return CorrMatrix(m=m.clamp(-1.0, 1.0), tau=float(tau))


def _weights(m, tau):
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return torch.softmax(m / tau, dim=1)


def deform(corr, yl):
    """Warp reference LF pixels to the source geometry.

    Output pixel i is the softmax(corr.m[i, :] / tau)-weighted combination of
    reference pixels, so every output value stays inside the reference range.
    """
    yl = as_tensor(yl)
    flat = yl.reshape(-1, yl.shape[-1])
    if flat.shape[0] != corr.m.shape[1]:
        raise DimensionError(
            f"LF array has {flat.shape[0]} pixels but correlation matrix is "
            f"{tuple(corr.m.shape)}"
        )
    dtype = torch.promote_types(corr.m.dtype, flat.dtype)
    out = _weights(corr.m.to(dtype), corr.tau) @ flat.to(dtype)
    return out.reshape(yl.shape)


def deform_transpose(corr, xl):
    """Same aggregation over the transposed matrix: re-align to the reference geometry."""
    return deform(CorrMatrix(m=corr.m.T, tau=corr.tau), xl)
