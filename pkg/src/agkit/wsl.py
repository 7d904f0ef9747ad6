"""Weakly supervised localization from exported attention maps: blur,
threshold, connected components, cross-scale component selection, bounding
box. No backpropagation anywhere in this pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import upsample_bilinear


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel coordinates."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"degenerate box {(self.x0, self.y0, self.x1, self.y1)}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)

    def iou(self, other: "BoundingBox") -> float:
        iw = min(self.x1, other.x1) - max(self.x0, other.x0) + 1
        ih = min(self.y1, other.y1) - max(self.y0, other.y0) + 1
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (self.area + other.area - inter)

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass
class Component:
    label: int
    area: int
    box: BoundingBox


def gaussian_blur(img: np.ndarray, sigma: float, truncate: float = 3.0) -> np.ndarray:
    """Separable Gaussian blur truncated at ``truncate`` sigmas, with edge
    renormalization so constant maps stay constant."""
    if sigma <= 0:
        return img.astype(np.float64).copy()
    r = int(np.ceil(truncate * sigma))
    xs = np.arange(-r, r + 1)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    k /= k.sum()

    def conv_axis(a: np.ndarray, axis: int) -> np.ndarray:
        return np.apply_along_axis(lambda m: np.convolve(m, k, mode="same"), axis, a)

    num = conv_axis(conv_axis(img.astype(np.float64), 0), 1)
    den = conv_axis(conv_axis(np.ones(img.shape), 0), 1)
    return num / den


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, list[Component]]:
    """4-connected component labeling (two-pass union-find). Returns the
    labeled map (0 = background, labels from 1) and the component list."""
    mask = np.asarray(mask)
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("connected_components: input is not binary")
        mask = mask.astype(bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    parent: list[int] = [0]

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    next_label = 1
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            up = labels[i - 1, j] if i > 0 else 0
            left = labels[i, j - 1] if j > 0 else 0
            neighbors = [n for n in (up, left) if n]
            if not neighbors:
                labels[i, j] = next_label
                parent.append(next_label)
                next_label += 1
            else:
                lo = min(neighbors)
                labels[i, j] = lo
                for n in neighbors:
                    ra, rb = find(lo), find(n)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
    roots = {}
    comps: list[Component] = []
    boxes: dict[int, list[int]] = {}
    areas: dict[int, int] = {}
    for i in range(h):
        for j in range(w):
            if not labels[i, j]:
                continue
            root = find(labels[i, j])
            if root not in roots:
                roots[root] = len(roots) + 1
            lab = roots[root]
            labels[i, j] = lab
            areas[lab] = areas.get(lab, 0) + 1
            bb = boxes.setdefault(lab, [j, i, j, i])
            bb[0], bb[1] = min(bb[0], j), min(bb[1], i)
            bb[2], bb[3] = max(bb[2], j), max(bb[3], i)
    for lab in sorted(areas):
        x0, y0, x1, y1 = boxes[lab]
        comps.append(Component(lab, areas[lab], BoundingBox(x0, y0, x1, y1)))
    return labels, comps


@dataclass
class LocalizeResult:
    box: BoundingBox
    fallback: bool


def _upsample_map(m: np.ndarray, h: int, w: int) -> np.ndarray:
    if m.shape == (h, w):
        return m.astype(np.float64)
    with ad.no_grad():
        return upsample_bilinear(Tensor(m[None, None]), h, w).data[0, 0]


def localize(
    maps: list[np.ndarray],
    extents: tuple[int, int],
    tau: float = 0.6,
    sigma_blur: float = 1.5,
) -> LocalizeResult:
    """Box from per-scale attention maps.

    Each map is brought to the image extents, blurred, and cut at the tau
    fraction of its own value range (strictly above, so low activations drop
    out; per-map so differing attention scales do not matter). Components
    are selected as the cross-scale tuple with the largest common
    intersection; the box is the tight box of the tuple's finest-scale
    component. Fallbacks: largest finest component when nothing overlaps,
    and the single argmax pixel (flagged) when thresholding empties the map
    (e.g. a spatially constant map).
    """
    if not maps:
        raise ValueError("localize: need at least one attention map")
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"localize: tau {tau} outside [0, 1)")
    h, w = extents
    # finest original resolution first
    order = sorted(range(len(maps)), key=lambda i: -(maps[i].shape[0] * maps[i].shape[1]))
    blurred = [gaussian_blur(_upsample_map(maps[i], h, w), sigma_blur) for i in order]
    masks = [b > b.min() + tau * (b.max() - b.min()) for b in blurred]

    if not masks[0].any():
        peak = np.unravel_index(int(blurred[0].argmax()), blurred[0].shape)
        return LocalizeResult(BoundingBox(int(peak[1]), int(peak[0]), int(peak[1]), int(peak[0])), True)

    labeled = []
    comps = []
    for m in masks:
        lab, cc = connected_components(m)
        labeled.append(lab)
        comps.append(cc)
    fine_comps = comps[0]
    if any(not cc for cc in comps):
        best = max(fine_comps, key=lambda c: (c.area, -c.label))
        return LocalizeResult(best.box, False)

    best_comp = None
    best_overlap = 0
    for fc in fine_comps:
        fmask = labeled[0] == fc.label
        overlap = fmask
        for lab, cc in zip(labeled[1:], comps[1:]):
            counts = np.bincount(lab[overlap], minlength=len(cc) + 1)
            counts[0] = 0
            pick = int(counts.argmax())
            if counts[pick] == 0:
                overlap = np.zeros_like(fmask)
                break
            overlap = overlap & (lab == pick)
        size = int(overlap.sum())
        if size > best_overlap:
            best_overlap = size
            best_comp = fc
    if best_comp is None:
        best_comp = max(fine_comps, key=lambda c: (c.area, -c.label))
    return LocalizeResult(best_comp.box, False)


@dataclass
class WslScore:
    per_class: dict[int, dict[str, float]]
    mean_iou: float


def wsl_score(boxes: list[BoundingBox], gts: list[BoundingBox], labels: list[int]) -> WslScore:
    """Per-class mean IoU, Correctness (IoU > 0.5) and Relative Correctness
    (IoU > 0.5 * best IoU achieved within the class). Classes with no items
    are simply absent from the result."""
    if not len(boxes) == len(gts) == len(labels):
        raise ValueError("wsl_score: boxes, ground truths and labels must align")
    ious: dict[int, list[float]] = {}
    for box, gt, lab in zip(boxes, gts, labels):
        ious.setdefault(lab, []).append(box.iou(gt))
    per_class = {}
    all_ious = []
    for lab, vals in sorted(ious.items()):
        arr = np.asarray(vals)
        all_ious.extend(vals)
        rel_thr = 0.5 * arr.max()
        per_class[lab] = {
            "mean_iou": float(arr.mean()),
            "correctness": float((arr > 0.5).mean()),
            "relative_correctness": float((arr > rel_thr).mean()),
        }
    return WslScore(per_class, float(np.mean(all_ious)) if all_ious else float("nan"))
