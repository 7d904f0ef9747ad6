"""Deterministic synthetic tasks: low-contrast small-structure segmentation
and glyph classification against a dominant background class.

Every sample is a pure function of (seed, parameters, index), so datasets
regenerate bit-identically and split slices are disjoint by construction.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .imageio import to_uint8, write_pgm

BG_BASE = 0.45
BG_SIGMA = 0.08  # white-noise std; the contrast dial is expressed in these units
SHADING_AMP = 0.008

CLS_BASE = 0.35
CLS_NOISE = 0.11
GLYPH_GAIN = 0.28

GLYPH_NAMES = ("disk", "frame", "plus", "cross", "diamond")


@dataclass
class SynthSample:
    """One generated item: image plus dense mask (segmentation) or class
    label and tight ground-truth box (classification)."""

    image: np.ndarray  # (1,1,H,W) floats in [0,1]
    mask: np.ndarray | None = None  # (H,W) integer labels
    label: int | None = None
    box: tuple[int, int, int, int] | None = None  # inclusive x0,y0,x1,y1


def _sample_rng(seed: int, index: int, round_: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, index, round_]))


def _coords(h: int, w: int, cy: float, cx: float, theta: float):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    return u, v


def _shading(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    fy, fx = rng.integers(1, 3, size=2)
    py, px = rng.uniform(0, 1, size=2)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return SHADING_AMP * np.sin(2 * np.pi * (fy * yy / h + py)) * np.sin(2 * np.pi * (fx * xx / w + px))


# ---------------------------------------------------------------------------
# segmentation task

LOOKALIKE_GAIN = 0.32  # in BG_SIGMA units; slightly brighter than the dimmest target


def _blob_geometry(h: int, w: int, rng: np.random.Generator, frac_lo: float, frac_hi: float) -> dict | None:
    """Shape parameters of a rippled ellipse: base axes plus two sinusoidal
    boundary harmonics."""
    frac = rng.uniform(frac_lo, frac_hi)
    area = frac * h * w / np.pi
    aspect = rng.uniform(0.7, 1.0)
    geom = {
        "ra": np.sqrt(area * aspect),
        "rb": np.sqrt(area / aspect),
        "a1": rng.uniform(0.08, 0.18),
        "a2": rng.uniform(0.04, 0.10),
        "p1": rng.uniform(0, 2 * np.pi),
        "p2": rng.uniform(0, 2 * np.pi),
        "theta": rng.uniform(0, np.pi),
    }
    geom["margin"] = max(geom["ra"], geom["rb"]) * (1.0 + geom["a1"] + geom["a2"]) + 1.0
    if 2 * geom["margin"] >= min(h, w):
        return None
    return geom


def _render_blob(h: int, w: int, geom: dict, cy: float, cx: float) -> np.ndarray:
    u, v = _coords(h, w, cy, cx, geom["theta"])
    rho = np.sqrt((u / geom["ra"]) ** 2 + (v / geom["rb"]) ** 2)
    phi = np.arctan2(v / geom["rb"], u / geom["ra"])
    boundary = 1.0 + geom["a1"] * np.sin(3 * phi + geom["p1"]) + geom["a2"] * np.sin(5 * phi + geom["p2"])
    return rho <= boundary


def _ellipse_mask(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Large easy structure (dark organ stand-in)."""
    ra = rng.uniform(0.16, 0.24) * min(h, w)
    rb = rng.uniform(0.10, 0.16) * min(h, w)
    theta = rng.uniform(0, np.pi)
    margin = max(ra, rb) + 1.0
    cy = rng.uniform(margin, h - 1 - margin)
    cx = rng.uniform(margin, w - 1 - margin)
    u, v = _coords(h, w, cy, cx, theta)
    return (u / ra) ** 2 + (v / rb) ** 2 <= 1.0


def _distractors(h: int, w: int, rng: np.random.Generator, exclude: np.ndarray) -> np.ndarray:
    """Structured background texture: dark soft patches and bright speckles,
    kept off the labeled structures. These are the irrelevant responses a
    gate can learn to suppress; both stay on the safe side of a plain
    intensity threshold for the bright target."""
    field = np.zeros((h, w))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(rng.integers(3, 7)):
        for _attempt in range(20):
            r = rng.uniform(0.06, 0.12) * min(h, w)
            cy = rng.uniform(r, h - 1 - r)
            cx = rng.uniform(r, w - 1 - r)
            rho2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (r * r)
            if ((rho2 <= 1.2) & exclude).any():
                continue
            field -= rng.uniform(0.4, 1.5) * BG_SIGMA * np.exp(-2.0 * rho2)
            break
    for _ in range(rng.integers(6, 14)):
        for _attempt in range(20):
            cy = int(rng.integers(1, h - 1))
            cx = int(rng.integers(1, w - 1))
            if exclude[max(cy - 1, 0) : cy + 2, max(cx - 1, 0) : cx + 2].any():
                continue
            amp = rng.uniform(0.7, 1.3) * BG_SIGMA
            field[cy, cx] += amp
            if rng.random() < 0.5:
                dy, dx = rng.integers(-1, 2, size=2)
                field[cy + dy, cx + dx] += amp * 0.8
            break
    return field


def gen_seg(seed: int, count: int, h: int, w: int, contrast: float = 1.0, classes: int = 3) -> list[SynthSample]:
    """Segmentation dataset: structured noise background, one large dark
    ellipse (class 2, unless classes=2), and one small bright blob (class 1)
    whose intensity offset is ``contrast`` background-noise sigmas.

    With classes=3 the target blob sits next to the ellipse while the
    background carries blob-shaped lookalikes of fixed low brightness far
    from it, so at low contrast only that spatial context separates target
    from clutter (the low-contrast small-organ regime).
    """
    if h < 32 or w < 32:
        raise ValueError(f"gen_seg: extents ({h},{w}) below the 32-px minimum")
    if not 0.0 < contrast <= 1.0:
        raise ValueError(f"gen_seg: contrast {contrast} outside (0, 1]")
    if classes not in (2, 3):
        raise ValueError(f"gen_seg: classes must be 2 or 3, got {classes}")
    samples = []
    for i in range(count):
        samples.append(_gen_seg_sample(seed, i, h, w, contrast, classes))
    return samples


def _gen_seg_sample(seed: int, index: int, h: int, w: int, contrast: float, classes: int) -> SynthSample:
    for round_ in range(64):
        rng = _sample_rng(seed, index, round_)
        placed = _try_place_seg(h, w, classes, rng)
        if placed is not None:
            blob, ellipse, lookalikes = placed
            break
    else:
        raise RuntimeError(f"gen_seg: placement failed for sample {index}")
    exclude = blob if ellipse is None else blob | ellipse
    for la in lookalikes:
        exclude = exclude | la
    image = (
        BG_BASE
        + _shading(h, w, rng)
        + rng.normal(0.0, BG_SIGMA, size=(h, w))
        + _distractors(h, w, rng, exclude)
    )
    image = image + contrast * BG_SIGMA * blob
    for la in lookalikes:
        image = image + LOOKALIKE_GAIN * BG_SIGMA * la
    mask = np.zeros((h, w), dtype=np.int64)
    mask[blob] = 1
    if ellipse is not None:
        image = image - 0.28 * ellipse
        mask[ellipse] = 2
    image = np.clip(image, 0.0, 1.0)
    return SynthSample(image=image[None, None], mask=mask)


def _try_place_seg(h: int, w: int, classes: int, rng: np.random.Generator):
    """One placement round: up to 100 joint draws of the structures.

    classes=3 layout: target blob center within a near band of the ellipse,
    lookalike blobs outside a far ring, everything pairwise disjoint.
    """
    scale = min(h, w)
    near_lo, near_hi = 0.02 * scale, 0.12 * scale
    far_min = 0.28 * scale
    for _ in range(100):
        geom = _blob_geometry(h, w, rng, 0.045, 0.072)
        if geom is None:
            continue
        m = geom["margin"]
        if classes == 2:
            cy = rng.uniform(m, h - 1 - m)
            cx = rng.uniform(m, w - 1 - m)
            blob = _render_blob(h, w, geom, cy, cx)
            if 0.03 <= blob.mean() <= 0.08:
                return blob, None, []
            continue
        ellipse = _ellipse_mask(h, w, rng)
        ey, ex = np.nonzero(ellipse)
        cy = rng.uniform(m, h - 1 - m)
        cx = rng.uniform(m, w - 1 - m)
        d = np.sqrt((ey - cy) ** 2 + (ex - cx) ** 2).min()
        if not m + near_lo <= d <= m + near_hi:
            continue
        blob = _render_blob(h, w, geom, cy, cx)
        if not 0.03 <= blob.mean() <= 0.08 or (blob & ellipse).any():
            continue
        lookalikes = []
        occupied = blob | ellipse
        for k in range(int(rng.integers(4, 8))):
            # the first lookalike is target-sized; the rest are smaller
            lo, hi = (0.035, 0.065) if k == 0 else (0.015, 0.045)
            for _attempt in range(25):
                lgeom = _blob_geometry(h, w, rng, lo, hi)
                if lgeom is None:
                    continue
                lm = lgeom["margin"]
                ly = rng.uniform(lm, h - 1 - lm)
                lx = rng.uniform(lm, w - 1 - lm)
                if np.sqrt((ey - ly) ** 2 + (ex - lx) ** 2).min() < far_min:
                    continue
                la = _render_blob(h, w, lgeom, ly, lx)
                if (la & occupied).any():
                    continue
                lookalikes.append(la)
                occupied = occupied | la
                break
        return blob, ellipse, lookalikes
    return None


# ---------------------------------------------------------------------------
# classification task


def _glyph_mask(h: int, w: int, kind: str, rng: np.random.Generator) -> np.ndarray:
    r = rng.uniform(0.12, 0.17) * min(h, w)
    # rotation stays small so plus and cross remain distinct classes
    theta = rng.uniform(-0.35, 0.35)
    margin = r * 1.5 + 1.0
    cy = rng.uniform(margin, h - 1 - margin)
    cx = rng.uniform(margin, w - 1 - margin)
    u, v = _coords(h, w, cy, cx, theta)
    au, av = np.abs(u), np.abs(v)
    if kind == "disk":
        return u * u + v * v <= r * r
    if kind == "frame":
        outer = np.maximum(au, av) <= r
        return outer & (np.maximum(au, av) >= 0.62 * r)
    if kind == "plus":
        return ((au <= 0.3 * r) & (av <= 1.2 * r)) | ((av <= 0.3 * r) & (au <= 1.2 * r))
    if kind == "cross":
        c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
        u2, v2 = c * u + s * v, -s * u + c * v
        au2, av2 = np.abs(u2), np.abs(v2)
        return ((au2 <= 0.3 * r) & (av2 <= 1.2 * r)) | ((av2 <= 0.3 * r) & (au2 <= 1.2 * r))
    if kind == "diamond":
        d = au + av
        return (d <= 1.3 * r) & (d >= 0.75 * r)
    raise ValueError(f"unknown glyph kind {kind!r}")


def _clutter(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    img = CLS_BASE + rng.normal(0.0, CLS_NOISE, size=(h, w))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(rng.integers(5, 10)):
        amp = rng.uniform(-0.15, 0.25)
        sig = rng.uniform(1.5, 5.0)
        cy, cx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig * sig))
    return img


def gen_cls(
    seed: int, count: int, h: int, w: int, n_fg_classes: int = 4, background_ratio: float = 0.8
) -> list[SynthSample]:
    """Classification dataset: class 0 is clutter only; classes 1..K place one
    glyph with a tight ground-truth box. Label counts follow exact quotas."""
    if n_fg_classes < 2 or n_fg_classes > len(GLYPH_NAMES):
        raise ValueError(f"gen_cls: n_fg_classes {n_fg_classes} outside [2, {len(GLYPH_NAMES)}]")
    if not 0.5 <= background_ratio <= 0.95:
        raise ValueError(f"gen_cls: background_ratio {background_ratio} outside [0.5, 0.95]")
    if h < 32 or w < 32:
        raise ValueError(f"gen_cls: extents ({h},{w}) below the 32-px minimum")
    n_bg = round(count * background_ratio)
    n_fg = count - n_bg
    labels = [0] * n_bg
    for k in range(n_fg_classes):
        quota = n_fg // n_fg_classes + (1 if k < n_fg % n_fg_classes else 0)
        labels.extend([k + 1] * quota)
    order = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xC1A55])).permutation(count)
    labels = np.asarray(labels)[order]
    samples = []
    for i, label in enumerate(labels):
        rng = _sample_rng(seed, i)
        img = _clutter(h, w, rng)
        box = None
        if label > 0:
            glyph = _glyph_mask(h, w, GLYPH_NAMES[label - 1], rng)
            img = img + GLYPH_GAIN * glyph
            ys, xs = np.nonzero(glyph)
            box = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        img = np.clip(img, 0.0, 1.0)
        samples.append(SynthSample(image=img[None, None], label=int(label), box=box))
    return samples


# ---------------------------------------------------------------------------
# augmentation


def hflip_sample(s: SynthSample) -> SynthSample:
    w = s.image.shape[3]
    box = None
    if s.box is not None:
        x0, y0, x1, y1 = s.box
        box = (w - 1 - x1, y0, w - 1 - x0, y1)
    return SynthSample(
        image=s.image[:, :, :, ::-1].copy(),
        mask=None if s.mask is None else s.mask[:, ::-1].copy(),
        label=s.label,
        box=box,
    )


def vflip_sample(s: SynthSample) -> SynthSample:
    h = s.image.shape[2]
    box = None
    if s.box is not None:
        x0, y0, x1, y1 = s.box
        box = (x0, h - 1 - y1, x1, h - 1 - y0)
    return SynthSample(
        image=s.image[:, :, ::-1, :].copy(),
        mask=None if s.mask is None else s.mask[::-1, :].copy(),
        label=s.label,
        box=box,
    )


def _shift2d(arr: np.ndarray, dy: int, dx: int, fill=0.0) -> np.ndarray:
    out = np.full_like(arr, fill)
    h, w = arr.shape[-2:]
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    ys_dst = slice(max(0, dy), min(h, h + dy))
    xs_dst = slice(max(0, dx), min(w, w + dx))
    out[..., ys_dst, xs_dst] = arr[..., ys_src, xs_src]
    return out


def shift_sample(s: SynthSample, dx: int, dy: int) -> SynthSample:
    """Translate by (dx, dy) pixels with zero fill; masks and boxes move with
    the image. Classification boxes must stay in frame."""
    h, w = s.image.shape[2:]
    box = None
    if s.box is not None:
        x0, y0, x1, y1 = s.box
        box = (x0 + dx, y0 + dy, x1 + dx, y1 + dy)
        if box[0] < 0 or box[1] < 0 or box[2] >= w or box[3] >= h:
            raise ValueError(f"shift_sample: shift ({dx},{dy}) pushes box {s.box} out of frame")
    return SynthSample(
        image=_shift2d(s.image, dy, dx),
        mask=None if s.mask is None else _shift2d(s.mask, dy, dx, fill=0),
        label=s.label,
        box=box,
    )


def crop_sample(s: SynthSample, left: int, top: int, right: int, bottom: int) -> SynthSample:
    """Zero out border margins (extent-preserving crop); masks are cleared
    with the image, boxes must not intersect the cleared margins."""
    h, w = s.image.shape[2:]
    if min(left, top, right, bottom) < 0 or left + right >= w or top + bottom >= h:
        raise ValueError(f"crop_sample: bad margins {(left, top, right, bottom)}")
    if s.box is not None:
        x0, y0, x1, y1 = s.box
        if x0 < left or y0 < top or x1 >= w - right or y1 >= h - bottom:
            raise ValueError(f"crop_sample: margins cut the box {s.box}")
    img = s.image.copy()
    mask = None if s.mask is None else s.mask.copy()
    for arr, fill in ((img, 0.0), (mask, 0)):
        if arr is None:
            continue
        if top:
            arr[..., :top, :] = fill
        if bottom:
            arr[..., h - bottom :, :] = fill
        if left:
            arr[..., :, :left] = fill
        if right:
            arr[..., :, w - right :] = fill
    return SynthSample(image=img, mask=mask, label=s.label, box=s.box)


def augment(s: SynthSample, seed: int, ops: tuple[str, ...] = ("hflip", "shift")) -> SynthSample:
    """Apply the listed ops in order; flips are unconditional, shift and crop
    draw their extents from the seed (clamped so boxes stay in frame)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xA06]))
    h, w = s.image.shape[2:]
    for op in ops:
        if op == "hflip":
            s = hflip_sample(s)
        elif op == "vflip":
            s = vflip_sample(s)
        elif op == "shift":
            lo_x, hi_x, lo_y, hi_y = -4, 4, -4, 4
            if s.box is not None:
                x0, y0, x1, y1 = s.box
                lo_x, hi_x = max(lo_x, -x0), min(hi_x, w - 1 - x1)
                lo_y, hi_y = max(lo_y, -y0), min(hi_y, h - 1 - y1)
            dx = int(rng.integers(lo_x, hi_x + 1))
            dy = int(rng.integers(lo_y, hi_y + 1))
            s = shift_sample(s, dx, dy)
        elif op == "crop":
            margins = rng.integers(0, 5, size=4)
            left, top, right, bottom = (int(m) for m in margins)
            if s.box is not None:
                x0, y0, x1, y1 = s.box
                left, top = min(left, x0), min(top, y0)
                right, bottom = min(right, w - 1 - x1), min(bottom, h - 1 - y1)
            s = crop_sample(s, left, top, right, bottom)
        else:
            raise ValueError(f"unknown augmentation op {op!r}")
    return s


def random_augment(s: SynthSample, seed: int, ops: tuple[str, ...] = ("hflip", "vflip", "shift")) -> SynthSample:
    """Training-time augmentation: each listed flip is applied with
    probability 1/2, shift and crop draw their extents; all from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xF11]))
    chosen = []
    for op in ops:
        if op in ("hflip", "vflip"):
            if rng.random() < 0.5:
                chosen.append(op)
        else:
            chosen.append(op)
    if not chosen:
        return s
    return augment(s, seed=seed, ops=tuple(chosen))


# ---------------------------------------------------------------------------
# on-disk dump


def dump_dataset(samples: list[SynthSample], outdir: str) -> str:
    """Write images (and masks) as PGM plus an index CSV; returns index path."""
    img_dir = os.path.join(outdir, "images")
    os.makedirs(img_dir, exist_ok=True)
    mask_dir = os.path.join(outdir, "masks")
    rows = ["path,mask_path,label,x0,y0,x1,y1"]
    for i, s in enumerate(samples):
        img_path = os.path.join("images", f"{i:05d}.pgm")
        write_pgm(os.path.join(outdir, img_path), to_uint8(s.image[0, 0], 0.0, 1.0))
        mask_path = ""
        if s.mask is not None:
            os.makedirs(mask_dir, exist_ok=True)
            mask_path = os.path.join("masks", f"{i:05d}.pgm")
            write_pgm(os.path.join(outdir, mask_path), s.mask.astype(np.uint8))
        label = "" if s.label is None else str(s.label)
        box = ",,," if s.box is None else ",".join(str(v) for v in s.box)
        rows.append(f"{img_path},{mask_path},{label},{box}")
    index_path = os.path.join(outdir, "index.csv")
    with open(index_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    return index_path
