"""Frequency decomposition of face images.

Splits an image into a background part, a low-frequency (style-bearing)
component at reduced resolution and a high-frequency residual. The residual
definition makes reconstruction exact up to float round-off.
"""

from dataclasses import dataclass
import math

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, DimensionError

BACKGROUND_LABEL = 0
HAIR_LABEL = 9
NUM_PARSING_LABELS = 10

VALID_FACTORS = (2, 4, 8)


def as_tensor(arr, dtype=None):
    """Convert numpy arrays (or tensors) to a float torch tensor."""
    t = torch.as_tensor(arr)
    if dtype is not None:
        t = t.to(dtype)
    elif not t.is_floating_point():
        t = t.float()
    return t


def gaussian_kernel5(dtype=torch.float32, device=None):
    """Normalized 5x5 Gaussian kernel with sigma=1."""
    g = torch.exp(-0.5 * torch.arange(-2, 3, dtype=dtype, device=device) ** 2)
    g = g / g.sum()
    k = torch.outer(g, g)
    return k / k.sum()


def gaussian_blur5(img):
    """Blur an (H, W, C) tensor per channel with the fixed 5x5 kernel, reflect padding."""
    img = as_tensor(img)
    c = img.shape[-1]
    x = img.permute(2, 0, 1).unsqueeze(0)
    x = F.pad(x, (2, 2, 2, 2), mode="reflect")
    weight = gaussian_kernel5(img.dtype, img.device).expand(c, 1, 5, 5)
    y = F.conv2d(x, weight, groups=c)
    return y.squeeze(0).permute(1, 2, 0)


def _check_factor(d):
    if d not in VALID_FACTORS:
        raise ConfigError(f"downsampling factor must be one of {VALID_FACTORS}, got {d}")


def gaussian_downsample(img, d):
    """Repeated blur + stride-2 sampling, log2(d) times.

    img: (H, W, C) array with H, W divisible by d.
    """
    img = as_tensor(img)
    _check_factor(d)
    h, w = img.shape[:2]
    if h % d or w % d:
        raise DimensionError(f"image size {h}x{w} not divisible by d={d}")
    out = img
    for _ in range(int(math.log2(d))):
        out = gaussian_blur5(out)[::2, ::2]
    return out


def bilinear_upsample(arr, d):
    """Upsample an (h, w, C) array by factor d with bilinear interpolation.

    Sample centers follow the (i + 0.5) / n convention (align_corners off).
    """
    arr = as_tensor(arr)
    _check_factor(d)
    x = arr.permute(2, 0, 1).unsqueeze(0)
    y = F.interpolate(x, scale_factor=d, mode="bilinear", align_corners=False)
    return y.squeeze(0).permute(1, 2, 0)


def foreground_mask(parsing):
    """Foreground = every parsing label except background and hair. Returns (H, W, 1) float."""
    parsing = torch.as_tensor(np.asarray(parsing))
    if parsing.max() >= NUM_PARSING_LABELS or parsing.min() < 0:
        raise DataError(
            f"parsing labels must lie in [0, {NUM_PARSING_LABELS - 1}], "
            f"got range [{int(parsing.min())}, {int(parsing.max())}]"
        )
    fg = (parsing != BACKGROUND_LABEL) & (parsing != HAIR_LABEL)
    return fg.unsqueeze(-1)


@dataclass
class Decomposition:
    """bg + up(lf) + hf reproduces the original image exactly."""

    bg: torch.Tensor      # (H, W, C), zero on foreground
    lf: torch.Tensor      # (H/d, W/d, C)
    hf: torch.Tensor      # (H, W, C), signed residual
    d: int
    fg_mask: torch.Tensor  # (H, W, 1) bool


def decompose(img, parsing, d):
    img = as_tensor(img)
    parsing = torch.as_tensor(np.asarray(parsing))
    if img.shape[:2] != parsing.shape[:2]:
        raise DimensionError(
            f"image {tuple(img.shape[:2])} and parsing {tuple(parsing.shape[:2])} disagree"
        )
    fg = foreground_mask(parsing).to(img.dtype)
    fg_img = img * fg
    bg = img * (1.0 - fg)
    lf = gaussian_downsample(fg_img, d)
    hf = fg_img - bilinear_upsample(lf, d)
    return Decomposition(bg=bg, lf=lf, hf=hf, d=d, fg_mask=fg.bool())


def reconstruct(dec):
    h, w = dec.bg.shape[:2]
    lh, lw = dec.lf.shape[:2]
    if (lh * dec.d, lw * dec.d) != (h, w) or dec.hf.shape != dec.bg.shape:
        raise DimensionError(
            f"inconsistent decomposition shapes: bg {tuple(dec.bg.shape)}, "
            f"lf {tuple(dec.lf.shape)}, hf {tuple(dec.hf.shape)}, d={dec.d}"
        )
    return dec.bg + bilinear_upsample(dec.lf, dec.d) + dec.hf
