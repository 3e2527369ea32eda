"""Procedural synthetic faces with exact parsing maps, region masks, and
dataset IO compatible with the images/ + parsing/ directory layout."""

from dataclasses import dataclass
import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import DataError

log = logging.getLogger(__name__)

# parsing labels
L_BG, L_SKIN, L_BROW_L, L_BROW_R, L_EYE_L, L_EYE_R, L_NOSE, L_LIP_UP, L_LIP_LO, L_HAIR = range(10)

SOURCE_DOMAIN = "source"
REFERENCE_DOMAIN = "reference"

EYE_DILATION_RADIUS = 3


@dataclass
class FaceSample:
    image: np.ndarray    # (H, W, 3) float32 in [0, 1]
    parsing: np.ndarray  # (H, W) uint8, labels 0..9
    domain: str          # "source" (non-makeup) or "reference" (makeup)
    id: str


@dataclass
class RegionMasks:
    fg: np.ndarray
    bg: np.ndarray
    lip: np.ndarray
    eye: np.ndarray
    face: np.ndarray


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def synth_face(rng, size, makeup):
    """Draw one synthetic face; all geometry draws happen before makeup draws,
    so the same seed yields identical parsing maps with and without makeup."""
    if size < 32:
        raise DataError(f"size must be >= 32, got {size}")
    s = float(size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    # --- geometry + base appearance (shared draws) ---
    bg_color = rng.uniform(0.15, 0.85, 3)
    cx = (0.5 + rng.uniform(-0.03, 0.03)) * s
    cy = (0.55 + rng.uniform(-0.03, 0.03)) * s
    rx = (0.26 + rng.uniform(-0.02, 0.03)) * s
    ry = (0.33 + rng.uniform(-0.02, 0.03)) * s
    tone = rng.uniform(0.55, 0.8)
    skin = np.clip([tone + 0.1, tone, tone - 0.08], 0, 1)
    hair_color = rng.uniform(0.05, 0.35, 3)
    brow_color = hair_color * rng.uniform(0.6, 1.0)
    eye_color = rng.uniform(0.05, 0.4, 3)
    lip_base = np.clip(skin * [1.1, 0.75, 0.75], 0, 1)

    face = _ellipse(yy, xx, cy, cx, ry, rx)
    hair = _ellipse(yy, xx, cy - 0.08 * ry, cx, ry * 1.2, rx * 1.3) & ~face

    eye_dx, eye_dy = 0.45 * rx, 0.22 * ry
    eye_rx, eye_ry = max(2.0, 0.22 * rx), max(1.5, 0.13 * ry)
    eyes = []
    for sign in (-1, 1):
        eyes.append(_ellipse(yy, xx, cy - eye_dy, cx + sign * eye_dx, eye_ry, eye_rx) & face)
    brow_ry = max(1.5, 0.07 * ry)
    brows = []
    for sign in (-1, 1):
        brows.append(
            _ellipse(yy, xx, cy - 0.42 * ry, cx + sign * eye_dx, brow_ry, eye_rx * 1.1) & face
        )
    nose_hw = max(1.0, 0.05 * rx)
    nose = (np.abs(xx - cx) <= nose_hw) & (yy >= cy - 0.02 * ry) & (yy <= cy + 0.28 * ry) & face
    lip_cy, lip_rx, lip_ry = cy + 0.6 * ry, max(3.0, 0.35 * rx), max(2.0, 0.14 * ry)
    lips = _ellipse(yy, xx, lip_cy, cx, lip_ry, lip_rx) & face
    lip_up = lips & (yy <= lip_cy)
    lip_lo = lips & (yy > lip_cy)

    parsing = np.zeros((size, size), dtype=np.uint8)
    parsing[face] = L_SKIN
    parsing[hair] = L_HAIR
    parsing[brows[0]] = L_BROW_L
    parsing[brows[1]] = L_BROW_R
    parsing[eyes[0]] = L_EYE_L
    parsing[eyes[1]] = L_EYE_R
    parsing[nose] = L_NOSE
    parsing[lip_up] = L_LIP_UP
    parsing[lip_lo] = L_LIP_LO

    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = bg_color
    img[parsing == L_SKIN] = skin
    img[parsing == L_HAIR] = hair_color
    img[(parsing == L_BROW_L) | (parsing == L_BROW_R)] = brow_color
    img[(parsing == L_EYE_L) | (parsing == L_EYE_R)] = eye_color
    img[parsing == L_NOSE] = np.clip(skin * 0.9, 0, 1)
    img[parsing == L_LIP_UP] = lip_base
    img[parsing == L_LIP_LO] = np.clip(lip_base * 1.05, 0, 1)

    fg = (parsing != L_BG) & (parsing != L_HAIR)

    # --- makeup draws (after all geometry draws) ---
    if makeup:
        lip_color = np.array([rng.uniform(0.55, 0.95), rng.uniform(0.05, 0.3),
                              rng.uniform(0.1, 0.5)])
        shadow_color = rng.uniform(0.1, 0.9, 3)
        shadow_strength = rng.uniform(0.35, 0.7)
        blush_color = np.array([rng.uniform(0.7, 1.0), rng.uniform(0.2, 0.5),
                                rng.uniform(0.3, 0.6)])
        blush_strength = rng.uniform(0.2, 0.5)
        tint_color = rng.uniform(0.2, 0.9, 3)
        tint_alpha = rng.uniform(0.05, 0.18)

        img[fg] = (1 - tint_alpha) * img[fg] + tint_alpha * tint_color
        img[parsing == L_LIP_UP] = lip_color
        img[parsing == L_LIP_LO] = np.clip(lip_color * 0.85, 0, 1)
        for sign in (-1, 1):
            ex, ey = cx + sign * eye_dx, cy - eye_dy
            dist = ((yy - ey) / (2.6 * eye_ry)) ** 2 + ((xx - ex) / (2.0 * eye_rx)) ** 2
            alpha = shadow_strength * np.clip(1.0 - dist, 0, 1)
            on = fg & (parsing == L_SKIN)
            img[on] = (1 - alpha[on, None]) * img[on] + alpha[on, None] * shadow_color
            bx, by = cx + sign * 0.55 * rx, cy + 0.22 * ry
            bdist = (((yy - by) ** 2 + (xx - bx) ** 2) ** 0.5) / max(2.0, 0.28 * rx)
            balpha = blush_strength * np.clip(1.0 - bdist, 0, 1)
            img[on] = (1 - balpha[on, None]) * img[on] + balpha[on, None] * blush_color

    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    domain = REFERENCE_DOMAIN if makeup else SOURCE_DOMAIN
    return FaceSample(image=img, parsing=parsing, domain=domain, id="")


def _disk(radius):
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy ** 2 + xx ** 2 <= radius ** 2


def region_masks(parsing):
    """Binary region masks with precedence lip > eye > face."""
    parsing = np.asarray(parsing)
    if parsing.max() > 9 or parsing.min() < 0:
        raise DataError("invalid parsing labels")
    fg = (parsing != L_BG) & (parsing != L_HAIR)
    lip = (parsing == L_LIP_UP) | (parsing == L_LIP_LO)
    eyes = (parsing == L_EYE_L) | (parsing == L_EYE_R)
    eye = ndimage.binary_dilation(eyes, structure=_disk(EYE_DILATION_RADIUS))
    eye &= (parsing == L_SKIN) | eyes  # keep it on skin and the eyes themselves
    eye &= ~lip
    face = fg & ~lip & ~eye
    return RegionMasks(fg=fg, bg=~fg, lip=lip, eye=eye, face=face)


def sample_rng(seed, index, makeup):
    """The synthetic id-space: every sample is addressed by (seed, domain, index)."""
    return np.random.default_rng([seed, int(makeup), index])


def make_sample(seed, index, makeup, size):
    sample = synth_face(sample_rng(seed, index, makeup), size, makeup)
    domain = "makeup" if makeup else "non-makeup"
    sample.id = f"{domain}_{seed}_{index:05d}"
    return sample


def synthetic_dataset(seed, n_source, n_reference, size):
    """In-memory synthetic dataset, reproducible bit-for-bit."""
    sources = [make_sample(seed, i, False, size) for i in range(n_source)]
    references = [make_sample(seed, i, True, size) for i in range(n_reference)]
    return sources, references


PARSING_PALETTE = [
    0, 0, 0, 230, 200, 180, 120, 80, 40, 120, 80, 50, 255, 255, 255,
    250, 250, 250, 200, 170, 150, 200, 60, 60, 170, 40, 40, 60, 40, 20,
]


def save_sample(sample, root):
    root = Path(root)
    domain = "makeup" if sample.domain == REFERENCE_DOMAIN else "non-makeup"
    img_dir = root / "images" / domain
    par_dir = root / "parsing" / domain
    img_dir.mkdir(parents=True, exist_ok=True)
    par_dir.mkdir(parents=True, exist_ok=True)
    img_path = img_dir / f"{sample.id}.png"
    par_path = par_dir / f"{sample.id}.png"
    PILImage.fromarray(
        np.clip(np.rint(sample.image * 255), 0, 255).astype(np.uint8)
    ).save(img_path)
    par = PILImage.fromarray(sample.parsing, mode="P")
    par.putpalette(PARSING_PALETTE + [0] * (768 - len(PARSING_PALETTE)))
    par.save(par_path)
    return img_path, par_path


def generate_dataset(root, n_source, n_reference, size, seed):
    """Write a synthetic dataset in the MT-style layout plus a manifest."""
    root = Path(root)
    sources, references = synthetic_dataset(seed, n_source, n_reference, size)
    for sample in sources + references:
        save_sample(sample, root)
    manifest = {"size": size, "seed": seed,
                "counts": {"non-makeup": n_source, "makeup": n_reference}}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root


class DatasetLoader:
    """Lazy iterator over an MT-format dataset directory.

    Unreadable files are skipped with a logged warning and counted in
    ``skipped``; images missing their parsing map are skipped too.
    """

    def __init__(self, root, size=None):
        self.root = Path(root)
        self.size = size
        self.skipped = 0
        self._index = []
        for domain in ("non-makeup", "makeup"):
            img_dir = self.root / "images" / domain
            if not img_dir.is_dir():
                continue
            for img_path in sorted(img_dir.glob("*.png")):
                par_path = self.root / "parsing" / domain / img_path.name
                self._index.append((domain, img_path, par_path))
        if not self._index:
            raise DataError(f"no samples found under {self.root}")

    def __iter__(self):
        for domain, img_path, par_path in self._index:
            if not par_path.is_file():
                log.warning("missing parsing map for %s, skipping", img_path)
                self.skipped += 1
                continue
            try:
                img = PILImage.open(img_path).convert("RGB")
                par = PILImage.open(par_path)
            except Exception as exc:
                log.warning("unreadable sample %s (%s), skipping", img_path, exc)
                self.skipped += 1
                continue
            if self.size is not None and img.size != (self.size, self.size):
                img = img.resize((self.size, self.size), PILImage.BILINEAR)
                par = par.resize((self.size, self.size), PILImage.NEAREST)
            image = np.asarray(img, dtype=np.float32) / 255.0
            parsing = np.asarray(par).astype(np.uint8)
            domain_tag = REFERENCE_DOMAIN if domain == "makeup" else SOURCE_DOMAIN
            yield FaceSample(image=image, parsing=parsing, domain=domain_tag,
                             id=img_path.stem)


def load_dataset(root, size=None):
    return DatasetLoader(root, size=size)
