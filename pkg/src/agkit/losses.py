"""Training objectives: multi-class Sorensen-Dice loss and cross-entropy,
built from engine ops so their gradients come from the verified tape rules."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DICE_EPS = 1e-6


def one_hot_masks(masks: np.ndarray, n_classes: int) -> np.ndarray:
    """(N,H,W) integer masks -> (N,C,H,W) one-hot floats."""
    if masks.min() < 0 or masks.max() >= n_classes:
        raise ValueError(f"mask labels outside [0, {n_classes})")
    out = np.zeros((masks.shape[0], n_classes) + masks.shape[1:])
    n_idx = np.arange(masks.shape[0])[:, None, None]
    h_idx = np.arange(masks.shape[1])[None, :, None]
    w_idx = np.arange(masks.shape[2])[None, None, :]
    out[n_idx, masks, h_idx, w_idx] = 1.0
    return out


def one_hot_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """(N,) integer labels -> (N,C) one-hot floats."""
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def dice_loss(probs: Tensor, target: Tensor) -> Tensor:
    """1 - mean_c (2*sum(p_c*t_c) + eps) / (sum(p_c) + sum(t_c) + eps).

    ``probs`` must sum to 1 over classes per pixel; ``target`` must be
    one-hot. Sums run over batch and space, so the loss is defined over all
    semantic classes at once.
    """
    if probs.shape != target.shape:
        raise ValueError(f"dice_loss: probs {probs.shape} vs target {target.shape}")
    td = target.data
    if not (((td == 0.0) | (td == 1.0)).all() and np.allclose(td.sum(axis=1), 1.0)):
        raise ValueError("dice_loss: target is not one-hot")
    if not np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("dice_loss: probs do not sum to 1 over classes")
    n_classes = probs.shape[1]
    inter = ad.batch_sum(ad.spatial_sum(ad.mul(probs, target)))
    psum = ad.batch_sum(ad.spatial_sum(probs))
    tsum = Tensor(td.sum(axis=(0, 2, 3)).reshape(1, n_classes, 1, 1))
    ratio = ad.div(ad.shift(ad.scale(inter, 2.0), DICE_EPS), ad.shift(ad.add(psum, tsum), DICE_EPS))
    return ad.shift(ad.scale(ad.sum_all(ratio), -1.0 / n_classes), 1.0)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under the logits."""
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects flat (N,C) logits, got {logits.shape}")
    n = logits.shape[0]
    target = Tensor(one_hot_labels(np.asarray(labels), logits.shape[1]))
    picked = ad.sum_all(ad.mul(ad.log_softmax(logits, "channel"), target))
    return ad.scale(picked, -1.0 / n)
