"""Training objectives and the transforms they need.

Covers the transfer loss (makeup L1 + gradient-space content term), cycle
consistency, least-squares adversarial terms, the self-augmented
reconstructive loss, the Gram-matrix color contrastive loss, and the weighted
total. Spatial transforms run on numpy data; everything entering the
autograd graph is torch.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError, DimensionError, TrainingError
from .pyramid import as_tensor

EXTRACTOR_VERSION = "csdmt-feat-v1"
CTS_EPS = 1e-6


@dataclass
class LossWeights:
    lambda_trans: float = 1.0
    lambda_cycle: float = 10.0
    lambda_adv: float = 1.0
    lambda_aug: float = 10.0
    lambda_cts: float = 1.0
    alpha: float = 0.1


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_makeup(xbar_l, y_l):
    """Mean absolute difference between the re-aligned and reference LF components."""
    xbar_l, y_l = as_tensor(xbar_l), as_tensor(y_l)
    _check_same_shape(xbar_l, y_l)
    return (xbar_l - y_l).abs().mean()


def _forward_gradients(a):
    # forward differences, zero-padded on the last row/column
    gx = F.pad(a[:, 1:] - a[:, :-1], (0, 0, 0, 1))
    gy = F.pad((a[1:] - a[:-1]).permute(1, 0, 2), (0, 0, 0, 1)).permute(1, 0, 2)
    return gx, gy


def loss_content(xhat_h, x_h):
    """Gradient-profile distance between HF components, computed in gradient space."""
    a, b = as_tensor(xhat_h), as_tensor(x_h)
    _check_same_shape(a, b)
    gxa, gya = _forward_gradients(a)
    gxb, gyb = _forward_gradients(b)
    return ((gxa - gxb).abs() + (gya - gyb).abs()).mean()


def loss_cycle(ybar, y):
    """Full-resolution L1 between the cycle render and the original reference."""
    ybar, y = as_tensor(ybar), as_tensor(y)
    _check_same_shape(ybar, y)
    return (ybar - y).abs().mean()


def loss_adv_d(real_scores, fake_scores):
    """LSGAN discriminator loss, averaged over scales; fakes should be detached."""
    if not real_scores or not fake_scores:
        raise DataError("empty score lists")
    terms = [((r - 1) ** 2).mean() + (f ** 2).mean()
             for r, f in zip(real_scores, fake_scores)]
    return sum(terms) / len(terms)


def loss_adv_g(fake_scores):
    """LSGAN generator loss: push fake scores toward 1."""
    if not fake_scores:
        raise DataError("empty score lists")
    terms = [((f - 1) ** 2).mean() for f in fake_scores]
    return sum(terms) / len(terms)


@dataclass
class SpatialTransform:
    flip: bool = False
    rotate_deg: float = 0.0
    scale: float = 1.0
    translate: tuple = (0.0, 0.0)  # (dy, dx) as fractions of the image size

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")

    def inverse(self):
        # exact only for pure flips/rotations/integer translations
        return SpatialTransform(flip=self.flip, rotate_deg=-self.rotate_deg,
                                scale=1.0 / self.scale,
                                translate=(-self.translate[0], -self.translate[1]))


@dataclass
class AppearanceTransform:
    gains: tuple = (1.0, 1.0, 1.0)    # per-channel, in [0.5, 1.5]
    offsets: tuple = (0.0, 0.0, 0.0)  # per-channel, in [-0.2, 0.2]


def sample_spatial(rng):
    """Draw a training spatial transform: flip p=0.5, rotation +/-30 deg,
    scale 0.8-1.2, translation +/-10% of the size."""
    return SpatialTransform(
        flip=bool(rng.random() < 0.5),
        rotate_deg=float(rng.uniform(-30.0, 30.0)),
        scale=float(rng.uniform(0.8, 1.2)),
        translate=(float(rng.uniform(-0.1, 0.1)), float(rng.uniform(-0.1, 0.1))),
    )


def sample_appearance(rng):
    return AppearanceTransform(
        gains=tuple(rng.uniform(0.5, 1.5, 3).tolist()),
        offsets=tuple(rng.uniform(-0.2, 0.2, 3).tolist()),
    )


def apply_spatial(img, parsing, t: SpatialTransform):
    """Affine warp (flip, then rotate, then scale, then translate).

    Bilinear sampling for the image, nearest-neighbor for the parsing map;
    out-of-frame pixels become background (zeros / label 0).
    """
    img = np.asarray(img, dtype=np.float64)
    parsing = np.asarray(parsing)
    h, w = parsing.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # invert: undo translation, scale, rotation, flip (in that order)
    sy = yy - t.translate[0] * h - cy
    sx = xx - t.translate[1] * w - cx
    sy, sx = sy / t.scale, sx / t.scale
    th = math.radians(t.rotate_deg)
    c, s = math.cos(th), math.sin(th)
    ry = -s * sx + c * sy
    rx = c * sx + s * sy
    sy, sx = ry + cy, rx + cx
    if t.flip:
        sx = (w - 1) - sx

    inside = (sy >= -0.5) & (sy <= h - 0.5) & (sx >= -0.5) & (sx <= w - 0.5)

    # nearest-neighbor for labels
    ny = np.clip(np.rint(sy).astype(int), 0, h - 1)
    nx = np.clip(np.rint(sx).astype(int), 0, w - 1)
    out_parsing = np.where(inside, parsing[ny, nx], 0).astype(parsing.dtype)

    # bilinear for the image
    y0 = np.clip(np.floor(sy).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(sy - y0, 0.0, 1.0)[..., None]
    wx = np.clip(sx - x0, 0.0, 1.0)[..., None]
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    out_img = top * (1 - wy) + bot * wy
    out_img = np.where(inside[..., None], out_img, 0.0)
    return out_img, out_parsing


def apply_appearance(img, t: AppearanceTransform):
    """Per-channel affine color jitter with clamp to [0, 1]; differentiable on tensors."""
    img = as_tensor(img)
    gains = torch.tensor(t.gains, dtype=img.dtype, device=img.device)
    offsets = torch.tensor(t.offsets, dtype=img.dtype, device=img.device)
    return (img * gains + offsets).clamp(0.0, 1.0)


class ConvStackExtractor(nn.Module):
    """Frozen conv stack standing in for pretrained perceptual features.

    Default: two seeded random conv layers (widths 16 and 32, stride 2 each).
    Real pretrained weights can be loaded from a csdmt-feat-v1 file instead.
    """

    def __init__(self, widths=(16, 32), strides=(2, 2), in_channels=3, seed=0):
        super().__init__()
        self.widths = tuple(widths)
        self.strides = tuple(strides)
        torch.manual_seed(seed)
        convs = []
        ch = in_channels
        for w, s in zip(self.widths, self.strides):
            convs.append(nn.Conv2d(ch, w, 3, s, 1))
            ch = w
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, img):
        """img: (H, W, 3) tensor -> list of (1, C, h, w) feature maps."""
        x = as_tensor(img).permute(2, 0, 1).unsqueeze(0)
        feats = []
        for conv in self.convs:
            weight = conv.weight.to(x.dtype)
            bias = conv.bias.to(x.dtype)
            x = F.relu(F.conv2d(x, weight, bias, stride=conv.stride, padding=conv.padding))
            feats.append(x)
        return feats


def save_extractor(path, extractor: ConvStackExtractor):
    torch.save({
        "version": EXTRACTOR_VERSION,
        "config": {"widths": list(extractor.widths), "strides": list(extractor.strides)},
        "params": extractor.state_dict(),
    }, path)
    return path


def load_extractor(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != EXTRACTOR_VERSION:
        raise ConfigError(f"unsupported extractor version {payload.get('version')!r}")
    ext = ConvStackExtractor(widths=payload["config"]["widths"],
                             strides=payload["config"]["strides"])
    ext.load_state_dict(payload["params"])
    for p in ext.parameters():
        p.requires_grad_(False)
    return ext


def gram(feat):
    """Channel covariance of a (1, C, h, w) feature map, normalized by C*h*w."""
    _, c, h, w = feat.shape
    flat = feat.reshape(c, h * w)
    return (flat @ flat.T) / (c * h * w)


def gram_distance(a, b, extractor):
    """Summed L1 between Gram matrices of the extractor's layers; symmetric."""
    fa = extractor(as_tensor(a))
    fb = extractor(as_tensor(b))
    if len(fa) < 1:
        raise DataError("extractor produced no feature layers")
    return sum((gram(x) - gram(y)).abs().sum() for x, y in zip(fa, fb))


def loss_cts(xhat_fg, y_fg, rng, extractor, n_neg=4):
    """Color contrastive loss: pull the transferred foreground toward the
    reference foreground, push it away from color-jittered negatives."""
    if n_neg < 1:
        raise ConfigError(f"need at least one negative sample, got {n_neg}")
    xhat_fg, y_fg = as_tensor(xhat_fg), as_tensor(y_fg)
    pos = gram_distance(xhat_fg, y_fg, extractor)
    neg = sum(
        gram_distance(xhat_fg, apply_appearance(y_fg, sample_appearance(rng)), extractor)
        for _ in range(n_neg)
    )
    r = pos / (neg + CTS_EPS)
    r = r.clamp(0.0, 1.0 - CTS_EPS)
    return -torch.log(1.0 - r)


def aug_reconstruction(model, x_img, x_parsing, ref_img, ref_parsing):
    """Differentiable core of the self-augmented loss: run the full generator
    with (x, ref) and compare the output to x."""
    x_img = as_tensor(x_img)
    xhat = model.transfer(x_img, x_parsing, ref_img, ref_parsing)
    return (xhat - x_img).abs().mean()


def loss_aug(model, x_img, parsing, rng):
    """Self-augmented reconstructive loss on a makeup-domain sample.

    The pseudo reference is a random spatial transform of x and is treated as
    constant data.
    """
    t = sample_spatial(rng)
    img_np = as_tensor(x_img).detach().cpu().numpy()
    ref_img, ref_parsing = apply_spatial(img_np, np.asarray(parsing), t)
    ref = torch.as_tensor(ref_img, dtype=as_tensor(x_img).dtype)
    return aug_reconstruction(model, x_img, parsing, ref, ref_parsing)


GENERATOR_TERMS = ("makeup", "content", "cycle", "adv_g", "aug", "cts")


def _is_nan(v):
    if isinstance(v, torch.Tensor):
        return bool(torch.isnan(v).any())
    return math.isnan(v)


def total_generator_loss(parts, w: LossWeights):
    """Weighted total over the six generator terms.

    parts: mapping with keys makeup, content, cycle, adv_g, aug, cts
    (scalars or 0-d tensors).
    """
    for name in GENERATOR_TERMS:
        if name not in parts:
            raise DataError(f"missing loss term {name!r}")
        if _is_nan(parts[name]):
            raise TrainingError(f"loss term {name!r} is NaN")
    return (w.lambda_trans * (parts["makeup"] + w.alpha * parts["content"])
            + w.lambda_cycle * parts["cycle"]
            + w.lambda_adv * parts["adv_g"]
            + w.lambda_aug * parts["aug"]
            + w.lambda_cts * parts["cts"])
