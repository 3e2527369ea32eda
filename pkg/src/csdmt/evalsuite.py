"""PSNR/SSIM metrics, the self-augmented evaluation protocol, and the
frequency-component MSE report."""

from dataclasses import dataclass, field
import json
import math

import numpy as np
import torch
import torch.nn.functional as F
from scipy.signal import convolve2d

from . import control, pyramid
from .errors import DataError, DimensionError
from .facedata import FaceSample
from .losses import SpatialTransform, apply_spatial

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

CROP_RANGE = (0.6, 0.8)   # window side as a fraction of the image (calibration constant)
ROTATE_MAX_DEG = 45.0

REMOVER_NOTE = "pseudo-source de-makeup uses this model's own removal operation"


def _as_float(a):
    return np.asarray(a, dtype=np.float64)


def psnr(a, b, mask=None):
    """Peak signal-to-noise ratio in dB for unit-range images; +inf when equal."""
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    diff = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        diff = diff[m]
    mse = diff.mean()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=11, sigma=1.5):
    g = np.exp(-0.5 * ((np.arange(size) - (size - 1) / 2) / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, mask=None):
    """Windowed SSIM (11x11 Gaussian, sigma 1.5, unit-range constants),
    averaged over channels and valid windows (optionally masked by window
    centers)."""
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    win = _gaussian_window()
    pad = win.shape[0] // 2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mu_x = convolve2d(x, win, mode="valid")
        mu_y = convolve2d(y, win, mode="valid")
        xx = convolve2d(x * x, win, mode="valid") - mu_x ** 2
        yy = convolve2d(y * y, win, mode="valid") - mu_y ** 2
        xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
        smap = ((2 * mu_x * mu_y + SSIM_C1) * (2 * xy + SSIM_C2)) / (
            (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2))
        if mask is not None:
            m = np.asarray(mask, dtype=bool)[pad:-pad, pad:-pad]
            if not m.any():
                raise DataError("mask leaves no valid SSIM windows")
            vals.append(smap[m].mean())
        else:
            vals.append(smap.mean())
    return float(np.mean(vals))


def _resize_image(img, size):
    x = torch.as_tensor(np.asarray(img, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)
    y = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
    return y.squeeze(0).permute(1, 2, 0).numpy()


def _resize_parsing(parsing, size):
    x = torch.as_tensor(np.asarray(parsing, dtype=np.float32))[None, None]
    y = F.interpolate(x, size=size, mode="nearest")
    return y[0, 0].numpy().astype(parsing.dtype)


def pseudo_reference(sample: FaceSample, rng, scenario):
    """Corrupt a makeup image's content: random crop resized back, or rotation."""
    img, parsing = sample.image, sample.parsing
    h, w = parsing.shape
    if scenario == "crop":
        frac = rng.uniform(*CROP_RANGE)
        ch, cw = max(1, int(round(frac * h))), max(1, int(round(frac * w)))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        img_c = img[top:top + ch, left:left + cw]
        par_c = parsing[top:top + ch, left:left + cw]
        return (_resize_image(img_c, (h, w)).astype(np.float32),
                _resize_parsing(par_c, (h, w)))
    if scenario == "rotate":
        t = SpatialTransform(rotate_deg=float(rng.uniform(-ROTATE_MAX_DEG, ROTATE_MAX_DEG)))
        img_r, par_r = apply_spatial(img, parsing, t)
        return img_r.astype(np.float32), par_r
    raise DataError(f"unknown scenario {scenario!r}")


@dataclass
class EvalReport:
    scenario: str
    rows: list
    mean_psnr: float
    mean_ssim: float
    config: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({
            "scenario": self.scenario,
            "sample_count": len(self.rows),
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "notes": self.notes,
            "config": self.config,
            "rows": self.rows,
        }, indent=2)

    def to_markdown(self):
        lines = [f"# Self-augmented evaluation ({self.scenario})", ""]
        lines += [f"> {n}" for n in self.notes]
        lines += ["", "| id | PSNR (dB) | SSIM |", "|---|---|---|"]
        for row in self.rows:
            lines.append(f"| {row['id']} | {row['psnr']:.3f} | {row['ssim']:.4f} |")
        lines.append(f"| **mean** | **{self.mean_psnr:.3f}** | **{self.mean_ssim:.4f}** |")
        return "\n".join(lines)


def self_aug_protocol(pipeline, makeup_set, source_set, rng, scenario, config=None):
    """Score reconstruction of each makeup image from a content-corrupted
    pseudo reference and a de-makeup pseudo source."""
    if not makeup_set or not source_set:
        raise DataError("empty evaluation sets")
    rows = []
    for sample in makeup_set:
        ref_img, ref_parsing = pseudo_reference(sample, rng, scenario)
        donor = source_set[int(rng.integers(len(source_set)))]
        pseudo_src = control.removal(sample, donor, pipeline).image
        pseudo_src_sample = FaceSample(
            image=pseudo_src.detach().numpy().astype(np.float32),
            parsing=sample.parsing, domain=sample.domain, id=sample.id)
        ref_sample = FaceSample(image=ref_img, parsing=ref_parsing,
                                domain=sample.domain, id=sample.id + "_ref")
        out = control.transfer(pseudo_src_sample, ref_sample, pipeline).image.detach().numpy()
        fg = pyramid.foreground_mask(sample.parsing).squeeze(-1).numpy()
        p = psnr(out, sample.image, mask=fg[..., None].repeat(3, axis=2))
        s = ssim(out, sample.image, mask=fg)
        rows.append({"id": sample.id, "psnr": p, "ssim": s})
    finite = [r["psnr"] for r in rows if math.isfinite(r["psnr"])]
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    return EvalReport(scenario=scenario, rows=rows, mean_psnr=mean_psnr,
                      mean_ssim=float(np.mean([r["ssim"] for r in rows])),
                      config=config or {}, notes=[REMOVER_NOTE])


def frequency_mse_report(pairs, d):
    """Per-pair and mean MSE of LF (upsampled to full size) and HF components
    between source images and transferred results. Reports; asserts nothing."""
    rows = []
    for source, transferred, parsing in pairs:
        dec_s = pyramid.decompose(np.asarray(source, dtype=np.float32), parsing, d)
        dec_t = pyramid.decompose(np.asarray(transferred, dtype=np.float32), parsing, d)
        lf_s = pyramid.bilinear_upsample(dec_s.lf, d).numpy()
        lf_t = pyramid.bilinear_upsample(dec_t.lf, d).numpy()
        rows.append({
            "lf_mse": float(((lf_s - lf_t) ** 2).mean()),
            "hf_mse": float(((dec_s.hf.numpy() - dec_t.hf.numpy()) ** 2).mean()),
        })
    return {
        "rows": rows,
        "mean_lf_mse": float(np.mean([r["lf_mse"] for r in rows])) if rows else 0.0,
        "mean_hf_mse": float(np.mean([r["hf_mse"] for r in rows])) if rows else 0.0,
        "d": d,
    }
