"""Inference-time makeup control: transfer, removal, global/local
interpolation, skin-tone preservation, partial transfer and reference
editing. Every operation composes deformed LF conditioning arrays and runs
the renderer once."""

from dataclasses import dataclass, field
import logging

import numpy as np
import torch

from .errors import DataError, DimensionError
from .facedata import FaceSample, region_masks
from .pyramid import as_tensor

log = logging.getLogger(__name__)

REGIONS = ("lip", "eye", "face")


@dataclass
class ControlResult:
    image: torch.Tensor          # rendered output, (H, W, 3) in [0, 1]
    conditioning: torch.Tensor   # LF-grid conditioning fed to the renderer
    deformed_lf: torch.Tensor    # primary deformed reference LF (display aid)
    warnings: list = field(default_factory=list)


def _clamp_beta(beta, warnings):
    if beta < 0.0 or beta > 1.0:
        clamped = min(max(beta, 0.0), 1.0)
        msg = f"beta {beta} outside [0, 1], clamped to {clamped}"
        log.warning(msg)
        warnings.append(msg)
        return clamped
    return beta


def lf_mask(mask, d):
    """Max-pool a full-resolution binary mask onto the LF grid."""
    mask = np.asarray(mask)
    h, w = mask.shape
    pooled = mask.reshape(h // d, d, w // d, d).max(axis=(1, 3))
    return torch.as_tensor(pooled.astype(np.float32)).unsqueeze(-1)


def lf_region_masks(parsing, d):
    """LF-grid lip/eye/face masks with precedence lip > eye > face re-applied
    after pooling so the regions partition the pooled foreground."""
    rm = region_masks(parsing)
    lip = lf_mask(rm.lip, d)
    eye = lf_mask(rm.eye, d) * (1 - lip)
    fg = lf_mask(rm.fg, d)
    face = fg * (1 - lip) * (1 - eye)
    return {"lip": lip, "eye": eye, "face": face, "fg": fg}


def _deform_for(pipeline, x: FaceSample, y: FaceSample):
    dec_x, _, _, _, _, yhat_l = pipeline.deformed_lf(
        x.image, x.parsing, y.image, y.parsing)
    return dec_x, yhat_l


@torch.no_grad()
def transfer(x: FaceSample, y: FaceSample, pipeline):
    """Plain makeup transfer: render the source content under the deformed
    reference LF."""
    dec_x, yhat_l = _deform_for(pipeline, x, y)
    image = pipeline.render(dec_x, yhat_l)
    return ControlResult(image=image, conditioning=yhat_l, deformed_lf=yhat_l)


def removal(x_makeup: FaceSample, y_nonmakeup: FaceSample, pipeline):
    """Makeup removal is transfer with the roles swapped by the caller."""
    return transfer(x_makeup, y_nonmakeup, pipeline)


def _filler_lf(x, dec_x, pipeline, outside_filler):
    """LF used outside the active mask: the source's own LF by default, or the
    LF of a prior self-transfer when the caller wants the transferred variant."""
    if outside_filler == "source":
        return dec_x.lf
    if outside_filler == "transferred":
        from . import pyramid
        prior = transfer(x, x, pipeline).image
        return pyramid.decompose(prior, x.parsing, dec_x.d).lf
    raise DataError(f"unknown outside filler {outside_filler!r}")


@torch.no_grad()
def interpolate_global(x, y1, y2, beta, pipeline):
    """Linear fusion of two deformed reference LFs."""
    warnings = []
    beta = _clamp_beta(beta, warnings)
    dec_x, d1 = _deform_for(pipeline, x, y1)
    _, d2 = _deform_for(pipeline, x, y2)
    cond = (1 - beta) * d1 + beta * d2
    return ControlResult(image=pipeline.render(dec_x, cond), conditioning=cond,
                         deformed_lf=d1 if beta <= 0.5 else d2, warnings=warnings)


@torch.no_grad()
def interpolate_local(x, y1, y2, beta, area, pipeline, outside_filler="source"):
    """Interpolate only inside one facial area; fill the rest with the
    source LF (or a prior transferred LF)."""
    if area not in ("lip", "eye"):
        raise DataError(f"area must be lip or eye, got {area!r}")
    warnings = []
    beta = _clamp_beta(beta, warnings)
    masks = lf_region_masks(x.parsing, pipeline.d)
    mask = masks[area]
    if not mask.any():
        raise DataError(f"region {area!r} is empty on the source")
    dec_x, d1 = _deform_for(pipeline, x, y1)
    _, d2 = _deform_for(pipeline, x, y2)
    filler = _filler_lf(x, dec_x, pipeline, outside_filler)
    cond = ((1 - beta) * d1 + beta * d2) * mask + filler * (1 - mask)
    return ControlResult(image=pipeline.render(dec_x, cond), conditioning=cond,
                         deformed_lf=d1 if beta <= 0.5 else d2, warnings=warnings)


@torch.no_grad()
def preserve_skin(x, y2, beta, pipeline, outside_filler="source"):
    """Blend the source's own LF with the reference LF inside the face region."""
    warnings = []
    beta = _clamp_beta(beta, warnings)
    masks = lf_region_masks(x.parsing, pipeline.d)
    face = masks["face"]
    if not face.any():
        raise DataError("face region is empty on the source")
    dec_x, d2 = _deform_for(pipeline, x, y2)
    xl = _filler_lf(x, dec_x, pipeline, outside_filler)
    cond = ((1 - beta) * xl + beta * d2) * face + d2 * (1 - face)
    return ControlResult(image=pipeline.render(dec_x, cond), conditioning=cond,
                         deformed_lf=d2, warnings=warnings)


@torch.no_grad()
def partial_transfer(x, y1, y2, y3, pipeline):
    """Lip style from y1, eye style from y2, face style from y3; LF pixels
    not covered by any region keep the source LF."""
    masks = lf_region_masks(x.parsing, pipeline.d)
    dec_x, d1 = _deform_for(pipeline, x, y1)
    _, d2 = _deform_for(pipeline, x, y2)
    _, d3 = _deform_for(pipeline, x, y3)
    covered = masks["lip"] + masks["eye"] + masks["face"]
    cond = (d1 * masks["lip"] + d2 * masks["eye"] + d3 * masks["face"]
            + dec_x.lf * (1 - covered))
    return ControlResult(image=pipeline.render(dec_x, cond), conditioning=cond,
                         deformed_lf=d3, warnings=[])


@torch.no_grad()
def edit_and_transfer(x, y_edited: FaceSample, pipeline):
    """Transfer from a caller-edited reference; the deformed LF is returned
    for display."""
    if y_edited.image.shape[:2] != y_edited.parsing.shape[:2]:
        raise DimensionError("edited reference image and parsing sizes differ")
    return transfer(x, y_edited, pipeline)
