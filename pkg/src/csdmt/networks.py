"""Learnable networks: semantic-correspondence encoder, rendering U-Net with
spatially adaptive conditioning, and a multi-scale patch discriminator.

All forward APIs take single channel-last images ((H, W, C) tensors) and hide
the NCHW plumbing. Widths are desk-scale; everything is configurable through
``ArchConfig``.
"""

from dataclasses import dataclass, asdict, field
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError
from .pyramid import NUM_PARSING_LABELS, as_tensor

CHECKPOINT_VERSION = "csdmt-ckpt-v1"


@dataclass
class ArchConfig:
    size: int = 64
    d: int = 2
    feat_channels: int = 64
    esc_widths: tuple = (32, 64)
    gmr_base: int = 32
    gmr_levels: int = 3
    gmr_res: int = 2
    disc_width: int = 32
    disc_layers: int = 4
    disc_scales: int = 3
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["esc_widths"] = list(self.esc_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["esc_widths"] = tuple(d.get("esc_widths", (32, 64)))
        return cls(**d)


def _nchw(img):
    return as_tensor(img).permute(2, 0, 1).unsqueeze(0)


def _hwc(x):
    return x.squeeze(0).permute(1, 2, 0)


class ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1, norm=True):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride, 1)
        self.norm = nn.InstanceNorm2d(out_ch) if norm else None
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        return self.act(x)


class DownBlock(ConvBlock):
    def __init__(self, in_ch, out_ch):
        super().__init__(in_ch, out_ch, stride=2)


class UpBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.block = ConvBlock(in_ch, out_ch)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.block(x)


class ResBlock(nn.Module):
    """Pre-activation residual block."""

    def __init__(self, ch):
        super().__init__()
        self.norm1 = nn.InstanceNorm2d(ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, 1, 1)
        self.norm2 = nn.InstanceNorm2d(ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, 1, 1)

    def forward(self, x):
        h = self.conv1(F.leaky_relu(self.norm1(x), 0.2))
        h = self.conv2(F.leaky_relu(self.norm2(h), 0.2))
        return x + h


class SpadeNorm(nn.Module):
    """Instance norm whose per-pixel scale/shift come from a conditioning map."""

    def __init__(self, ch, cond_ch=3, hidden=32):
        super().__init__()
        self.norm = nn.InstanceNorm2d(ch)
        self.shared = nn.Conv2d(cond_ch, hidden, 3, 1, 1)
        self.gamma = nn.Conv2d(hidden, ch, 3, 1, 1)
        self.beta = nn.Conv2d(hidden, ch, 3, 1, 1)

    def forward(self, x, cond):
        if cond.shape[2:] != x.shape[2:]:
            cond = F.interpolate(cond, size=x.shape[2:], mode="bilinear", align_corners=False)
        h = F.relu(self.shared(cond))
        return self.norm(x) * (1 + self.gamma(h)) + self.beta(h)


class ScEncoder(nn.Module):
    """Semantic feature encoder over the image + one-hot parsing stack."""

    def __init__(self, in_channels=3 + NUM_PARSING_LABELS, widths=(32, 64),
                 out_channels=64, n_down=1):
        super().__init__()
        widths = tuple(widths)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.n_down = n_down
        layers = []
        ch = in_channels
        if widths:
            layers.append(ConvBlock(ch, widths[0]))
            ch = widths[0]
        for i in range(n_down):
            nxt = widths[min(i + 1, len(widths) - 1)] if widths else out_channels
            layers.append(DownBlock(ch, nxt))
            ch = nxt
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(ch, out_channels, 1)

    def forward(self, img, parsing):
        img = as_tensor(img)
        parsing = torch.as_tensor(np.asarray(parsing))
        if img.shape[:2] != parsing.shape[:2]:
            raise DimensionError("image and parsing sizes differ")
        onehot = F.one_hot(parsing.long(), NUM_PARSING_LABELS).to(img.dtype)
        x = _nchw(torch.cat([img, onehot], dim=-1))
        if x.shape[1] != self.in_channels:
            raise ConfigError(
                f"encoder expects {self.in_channels} input channels, got {x.shape[1]}"
            )
        return _hwc(self.head(self.body(x)))


class Renderer(nn.Module):
    """U-Net over [bg, hf] with SPADE conditioning on the deformed LF component."""

    def __init__(self, in_channels=6, cond_channels=3, base_width=32,
                 n_levels=3, n_res=2, out_channels=3):
        super().__init__()
        widths = [base_width * 2 ** i for i in range(n_levels)]
        self.stem = ConvBlock(in_channels, widths[0])
        self.downs = nn.ModuleList(
            DownBlock(widths[i], widths[i + 1]) for i in range(n_levels - 1)
        )
        self.res = nn.Sequential(*[ResBlock(widths[-1]) for _ in range(n_res)])
        self.spades = nn.ModuleList(
            SpadeNorm(widths[i], cond_channels) for i in reversed(range(n_levels))
        )
        self.ups = nn.ModuleList(
            UpBlock(widths[i + 1], widths[i]) for i in reversed(range(n_levels - 1))
        )
        self.merges = nn.ModuleList(
            ConvBlock(2 * widths[i], widths[i]) for i in reversed(range(n_levels - 1))
        )
        self.head = nn.Conv2d(widths[0], out_channels, 3, 1, 1)

    def forward(self, bg, hf, cond_lf):
        x = _nchw(torch.cat([as_tensor(bg), as_tensor(hf)], dim=-1))
        cond = _nchw(cond_lf)
        skips = []
        x = self.stem(x)
        for down in self.downs:
            skips.append(x)
            x = down(x)
        x = self.res(x)
        for i, (up, merge) in enumerate(zip(self.ups, self.merges)):
            x = up(self.spades[i](x, cond))
            x = merge(torch.cat([x, skips.pop()], dim=1))
        x = self.head(self.spades[-1](x, cond))
        return _hwc((torch.tanh(x) + 1) / 2)


class ScaleDiscriminator(nn.Module):
    """Patch discriminator; first layer unnormalized, output scores unbounded."""

    def __init__(self, in_channels=3, width=32, n_layers=4):
        super().__init__()
        layers = []
        ch = in_channels
        for i in range(n_layers - 1):
            out = width * 2 ** min(i, 2)
            stride = 2 if i < 2 else 1
            layers.append(ConvBlock(ch, out, stride=stride, norm=(i > 0)))
            ch = out
        layers.append(nn.Conv2d(ch, 1, 3, 1, 1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, in_channels=3, width=32, n_layers=4, n_scales=3):
        super().__init__()
        self.scales = nn.ModuleList(
            ScaleDiscriminator(in_channels, width, n_layers) for _ in range(n_scales)
        )

    def forward(self, img):
        x = _nchw(img)
        maps = []
        for disc in self.scales:
            maps.append(disc(x).squeeze(0).squeeze(0))
            x = F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)
        return maps


def init_params(module, seed):
    """Standard GAN init: conv weights N(0, 0.02), zero biases, fixed seed."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
    return module


def build_models(config: ArchConfig):
    """Construct the three networks with deterministic initialization."""
    n_down = int(math.log2(config.d))
    esc = ScEncoder(widths=config.esc_widths, out_channels=config.feat_channels,
                    n_down=n_down)
    gmr = Renderer(base_width=config.gmr_base, n_levels=config.gmr_levels,
                   n_res=config.gmr_res)
    disc = MultiScaleDiscriminator(width=config.disc_width,
                                   n_layers=config.disc_layers,
                                   n_scales=config.disc_scales)
    init_params(esc, config.seed)
    init_params(gmr, config.seed + 1)
    init_params(disc, config.seed + 2)
    return {"esc": esc, "gmr": gmr, "disc": disc}


def save_checkpoint(path, models, config: ArchConfig, optimizers=None, extra=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "params": {name: m.state_dict() for name, m in models.items()},
        "optim": {name: o.state_dict() for name, o in (optimizers or {}).items()},
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r}")
    return payload


def models_from_checkpoint(path):
    payload = load_checkpoint(path)
    config = ArchConfig.from_dict(payload["config"])
    models = build_models(config)
    for name, model in models.items():
        if name in payload["params"]:
            model.load_state_dict(payload["params"][name])
    return models, config, payload
