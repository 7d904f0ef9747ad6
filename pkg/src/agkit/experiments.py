"""Directional gated-vs-baseline experiments on the synthetic tasks.

Both comparisons share a trunk: the baseline trains straight through, and the
gated model branches from a snapshot of the partially trained baseline (its
non-gate layers share names and shapes, gates start at passthrough), then
trains on with the gates learning. Branching from a partially trained
backbone mirrors how the gated classifier is initialized in practice and
isolates the gates' marginal contribution from early-training noise.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, no_grad
from .classifier import AGClassifier, ClassifierConfig, evaluate_cls, train_cls
from .optim import Adam, SGDNesterov
from .synthdata import gen_cls, gen_seg
from .unet import AttentionUNet, UNetConfig, predict_masks, snapshot_arrays, train_seg

SEG_PROTOCOL = dict(
    total_epochs=26,
    branch_epoch=10,
    lr=2e-3,
    decay_epoch=19,
    decay_factor=0.25,
    batch_size=8,
    gate_lr_mult=15.0,
    gate_resample="up-to-x",
    augment=("hflip", "vflip", "shift"),
)

CLS_PROTOCOL = dict(
    total_epochs=5,
    branch_epoch=2,
    lr=0.1,
    batch_size=32,
    gate_lr_mult=1.0,
    augment=("hflip", "vflip", "shift"),
)


def _aggregate_seg_scores(net, test) -> tuple[float, float]:
    """Small-target DSC and recall from pixel counts pooled over the test set."""
    preds = predict_masks(net, test)
    tp = fp = fn = 0
    for i, s in enumerate(test):
        p = preds[i] == 1
        g = s.mask == 1
        tp += int((p & g).sum())
        fp += int((p & ~g).sum())
        fn += int((~p & g).sum())
    dsc = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return dsc, recall


def _restore_shared(net, snapshot: dict[str, np.ndarray]) -> None:
    """Copy trunk arrays into a gated network; gate parameters keep their
    passthrough init (they do not exist in the trunk)."""
    params = net.parameters()
    for name, arr in snapshot.items():
        if name in params:
            params[name].data[...] = arr
    state = net.state()
    for name, arr in snapshot.items():
        if name in state:
            state[name][...] = arr


def seg_direction_experiment(seed: int, contrast: float = 0.25, train_count: int = 200,
                             test_count: int = 50, protocol: dict | None = None) -> dict:
    """One seed of the segmentation A/B. 30 of the training images form the
    validation split used for best-epoch weight selection (both branches)."""
    p = dict(SEG_PROTOCOL, **(protocol or {}))
    val_count = 30
    data = gen_seg(seed, train_count + test_count, 32, 32, contrast=contrast)
    train = data[: train_count - val_count]
    val = data[train_count - val_count : train_count]
    test = data[train_count:]

    def select(rec):
        return rec.per_class[1].dsc

    base_cfg = UNetConfig(depth=3, base_filters=8, n_classes=3, height=32, width=32,
                          gate_modes=("identity", "identity"))
    baseline = AttentionUNet(base_cfg, seed=seed)
    train_seg(baseline, train, val, Adam(lr=p["lr"]), p["branch_epoch"], seed=seed,
              batch_size=p["batch_size"], augment_ops=p["augment"])
    trunk = snapshot_arrays(baseline)

    # both branches restart from the trunk with fresh optimizers and the same
    # batch/augmentation stream, so the gates are the only difference
    branch_epochs = p["total_epochs"] - p["branch_epoch"]
    branch_decay = p["decay_epoch"] - p["branch_epoch"]
    mult = p["gate_lr_mult"]

    gated = AttentionUNet(
        UNetConfig(depth=3, base_filters=8, n_classes=3, height=32, width=32,
                   gate_resample=p["gate_resample"]),
        seed=seed,
    )
    _restore_shared(gated, trunk)
    branches = {
        "baseline": (baseline, Adam(lr=p["lr"])),
        "gated": (gated, Adam(lr=p["lr"], param_lr_scale=(lambda n: mult if ".gate." in n else 1.0))),
    }
    for net, opt in branches.values():
        def hook(epoch, _net, opt=opt):
            if epoch + 1 == branch_decay:
                opt.lr = p["lr"] * p["decay_factor"]

        train_seg(net, train, val, opt, branch_epochs, seed=seed + 17,
                  batch_size=p["batch_size"], epoch_hook=hook, select_metric=select,
                  augment_ops=p["augment"])

    g_dsc, g_rec = _aggregate_seg_scores(gated, test)
    b_dsc, b_rec = _aggregate_seg_scores(baseline, test)
    return {
        "gated": {"dsc": g_dsc, "recall": g_rec},
        "baseline": {"dsc": b_dsc, "recall": b_rec},
        "gated_net": gated,
        "baseline_net": baseline,
        "test": test,
    }


def cls_direction_experiment(seed: int, train_count: int = 2000, test_count: int = 500,
                             protocol: dict | None = None) -> dict:
    """One seed of the classification A/B, same trunk-branch structure."""
    p = dict(CLS_PROTOCOL, **(protocol or {}))
    val_count = 200
    data = gen_cls(seed, train_count + val_count + test_count, 32, 32, 4, 0.8)
    train = data[:train_count]
    val = data[train_count : train_count + val_count]
    test = data[train_count + val_count :]

    def select(rec):
        return rec.macro("precision")

    baseline = AGClassifier(
        ClassifierConfig(n_classes=5, height=32, width=32, gated=False), seed=seed
    )
    opt = SGDNesterov(lr=p["lr"])
    trunk: dict = {}

    def base_hook(epoch, net):
        if epoch + 1 == p["branch_epoch"]:
            trunk["snapshot"] = snapshot_arrays(net)

    train_cls(baseline, train, val, opt, p["total_epochs"], seed=seed,
              batch_size=p["batch_size"], use_schedule=True, epoch_hook=base_hook,
              select_metric=select, augment_ops=p["augment"])

    gated = AGClassifier(ClassifierConfig(n_classes=5, height=32, width=32), seed=seed)
    _restore_shared(gated, trunk["snapshot"])
    mult = p["gate_lr_mult"]
    scale = (lambda n: mult if ".gate." in n else 1.0) if mult != 1.0 else None
    gopt = SGDNesterov(lr=p["lr"], param_lr_scale=scale)
    branch_epochs = p["total_epochs"] - p["branch_epoch"]
    train_cls(gated, train, val, gopt, branch_epochs, seed=seed + 17,
              batch_size=p["batch_size"], use_schedule=True, select_metric=select,
              augment_ops=p["augment"], schedule_total=p["total_epochs"],
              schedule_offset=p["branch_epoch"])

    g = evaluate_cls(gated, test)
    b = evaluate_cls(baseline, test)
    return {
        "gated": {"precision": g.macro("precision"), "accuracy": g.accuracy},
        "baseline": {"precision": b.macro("precision"), "accuracy": b.accuracy},
        "gated_net": gated,
        "baseline_net": baseline,
        "test": test,
    }
