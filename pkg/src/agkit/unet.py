"""Encoder-decoder segmentation network with attention-gated skip connections
and optional deep supervision, scaled for desk-size 2-D inputs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention_gate import AttentionGateParams, AttentionMap, apply_gate, gated_skip, init_passthrough
from .autodiff import Tensor
from .checkpoint import net_arrays, restore_net
from .losses import dice_loss, one_hot_masks
from .metrics import MetricsRecord, mean_records, seg_metrics
from .nn import Conv2d, ConvBlock, maxpool2d, upsample_bilinear
from .optim import NumericAbort
from .synthdata import SynthSample, random_augment


@dataclass
class UNetConfig:
    """Topology of the segmentation network.

    Filters double at every scale starting from ``base_filters``; input
    extents must be divisible by 2^(depth-1). ``gate_modes`` holds one entry
    per skip connection, finest first: "attention" or "identity" (plain
    ungated skip). None means attention everywhere.
    """

    depth: int = 4
    base_filters: int = 8
    n_classes: int = 3
    in_channels: int = 1
    height: int = 32
    width: int = 32
    deep_supervision: bool = True
    gate_modes: tuple[str, ...] | None = None
    gate_normalization: str = "sigmoid"
    sub_gates: int = 1
    gate_resample: str = "up-to-x"

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        step = 2 ** (self.depth - 1)
        if self.height % step or self.width % step:
            raise ValueError(
                f"input extents ({self.height},{self.width}) not divisible by 2^(depth-1)={step}"
            )
        if self.gate_modes is None:
            self.gate_modes = ("attention",) * (self.depth - 1)
        if len(self.gate_modes) != self.depth - 1:
            raise ValueError(f"need {self.depth - 1} gate modes, got {len(self.gate_modes)}")
        for m in self.gate_modes:
            if m not in ("attention", "identity"):
                raise ValueError(f"unknown gate mode {m!r}")

    def filters(self, scale: int) -> int:
        return self.base_filters * 2 ** (scale - 1)


@dataclass
class SegOutput:
    """Forward results: finest-scale logits, auxiliary logits per supervised
    coarser scale, the attention maps, and class probabilities."""

    logits: Tensor
    aux_logits: list[tuple[int, Tensor]] = field(default_factory=list)
    attention: list[AttentionMap] = field(default_factory=list)
    probs: Tensor | None = None


class AttentionUNet:
    """U-Net whose skip connections pass through additive attention gates.

    The gating signal for the skip at scale s is the decoder feature one
    scale coarser (the bottleneck for the coarsest skip). Gates start in the
    passthrough state. With ``gate_modes`` all "identity" this is the plain
    ungated baseline.
    """

    def __init__(self, cfg: UNetConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        d = cfg.depth
        self.enc = []
        c_in = cfg.in_channels
        for s in range(1, d + 1):
            f = cfg.filters(s)
            self.enc.append(
                (
                    ConvBlock(c_in, f, name=f"enc{s}a", seed=seed),
                    ConvBlock(f, f, name=f"enc{s}b", seed=seed),
                )
            )
            c_in = f
        self.gates: list[AttentionGateParams | None] = []
        self.dec = []
        self.aux_heads: dict[int, Conv2d] = {}
        for s in range(d - 1, 0, -1):
            f = cfg.filters(s)
            f_coarse = cfg.filters(s + 1)
            gate = None
            if cfg.gate_modes[s - 1] == "attention":
                gate = init_passthrough(
                    f_l=f,
                    f_g=f_coarse,
                    sub_gates=cfg.sub_gates,
                    normalization=cfg.gate_normalization,
                    resample=cfg.gate_resample,
                    name=f"dec{s}.gate",
                    seed=seed,
                )
            self.gates.append(gate)
            skip_c = f * (cfg.sub_gates if gate is not None else 1)
            self.dec.append(
                (
                    ConvBlock(f_coarse + skip_c, f, name=f"dec{s}a", seed=seed),
                    ConvBlock(f, f, name=f"dec{s}b", seed=seed),
                )
            )
            if cfg.deep_supervision and s > 1:
                self.aux_heads[s] = Conv2d(f, cfg.n_classes, 1, name=f"aux{s}", seed=seed)
        self.head = Conv2d(cfg.filters(1), cfg.n_classes, 1, name="head", seed=seed)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for a, b in self.enc:
            out.update(a.parameters())
            out.update(b.parameters())
        for gate in self.gates:
            if gate is not None:
                out.update(gate.parameters())
        for a, b in self.dec:
            out.update(a.parameters())
            out.update(b.parameters())
        for headc in self.aux_heads.values():
            out.update(headc.parameters())
        out.update(self.head.parameters())
        return out

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable buffers (batch-norm running statistics)."""
        out: dict[str, np.ndarray] = {}
        for a, b in self.enc + self.dec:
            out.update(a.state())
            out.update(b.state())
        return out

    def set_training(self, training: bool) -> None:
        for a, b in self.enc + self.dec:
            a.bn.training = training
            b.bn.training = training

    def forward(self, x: Tensor, alpha_override: float | None = None) -> SegOutput:
        """Run the network. ``alpha_override`` forces every gate coefficient
        to a constant (1.0 reproduces the ungated network bit-for-bit)."""
        cfg = self.cfg
        feats = []
        h = x
        for s, (a, b) in enumerate(self.enc, start=1):
            h = b(a(h))
            feats.append(h)
            if s < cfg.depth:
                h = maxpool2d(h, 2, 2)
        dec = feats[-1]
        out = SegOutput(logits=None)  # type: ignore[arg-type]
        for i, s in enumerate(range(cfg.depth - 1, 0, -1)):
            skip = feats[s - 1]
            g = dec
            up = upsample_bilinear(dec, skip.shape[2], skip.shape[3])
            gate = self.gates[i]
            if gate is not None:
                if alpha_override is None:
                    gated, amap = gated_skip(skip, g, gate, scale=s)
                else:
                    const = Tensor(
                        np.full((skip.shape[0], cfg.sub_gates, skip.shape[2], skip.shape[3]), alpha_override)
                    )
                    amap = AttentionMap(const, gate.normalization, scale=s)
                    gated = apply_gate(skip, amap)
                out.attention.append(amap)
            else:
                gated = skip
            a, b = self.dec[i]
            dec = b(a(ad.channel_concat([up, gated])))
            if s > 1 and s in self.aux_heads:
                out.aux_logits.append((s, self.aux_heads[s](dec)))
        out.logits = self.head(dec)
        out.probs = ad.softmax(out.logits, "channel")
        return out


def majority_downsample(mask: np.ndarray, factor: int, n_classes: int) -> np.ndarray:
    """Label-preserving downsampling: each factor x factor window takes its
    most frequent label (smallest label wins ties)."""
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"majority_downsample: extents ({h},{w}) not divisible by {factor}")
    oh, ow = h // factor, w // factor
    windows = mask.reshape(oh, factor, ow, factor).transpose(0, 2, 1, 3).reshape(oh, ow, -1)
    counts = np.stack([(windows == c).sum(axis=2) for c in range(n_classes)], axis=0)
    return counts.argmax(axis=0)


def standardize(images: np.ndarray) -> np.ndarray:
    """Map [0,1] images to roughly unit scale for the first conv layer."""
    return (images - 0.5) * 4.0


def batch_tensors(samples: list[SynthSample], n_classes: int):
    images = np.concatenate([s.image for s in samples], axis=0)
    masks = np.stack([s.mask for s in samples], axis=0)
    return Tensor(standardize(images)), masks, Tensor(one_hot_masks(masks, n_classes))


def seg_batch_loss(net: AttentionUNet, batch: list[SynthSample], aux_weight: float = 0.5) -> Tensor:
    """Dice loss at the finest scale plus ``aux_weight`` times the mean of the
    auxiliary-scale Dice losses on majority-downsampled targets."""
    cfg = net.cfg
    x, masks, onehot = batch_tensors(batch, cfg.n_classes)
    out = net.forward(x)
    loss = dice_loss(out.probs, onehot)
    if out.aux_logits:
        aux_terms = []
        for s, logits in out.aux_logits:
            factor = 2 ** (s - 1)
            small = np.stack(
                [majority_downsample(m, factor, cfg.n_classes) for m in masks], axis=0
            )
            probs = ad.softmax(logits, "channel")
            aux_terms.append(dice_loss(probs, Tensor(one_hot_masks(small, cfg.n_classes))))
        aux = aux_terms[0]
        for t in aux_terms[1:]:
            aux = ad.add(aux, t)
        loss = ad.add(loss, ad.scale(aux, aux_weight / len(aux_terms)))
    return loss


def predict_masks(net: AttentionUNet, samples: list[SynthSample], batch_size: int = 16) -> np.ndarray:
    net.set_training(False)
    preds = []
    with ad.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            x = Tensor(standardize(np.concatenate([s.image for s in chunk], axis=0)))
            out = net.forward(x)
            preds.append(out.logits.data.argmax(axis=1))
    net.set_training(True)
    return np.concatenate(preds, axis=0)


def evaluate_seg(net: AttentionUNet, samples: list[SynthSample], spacing: float = 1.0) -> MetricsRecord:
    preds = predict_masks(net, samples)
    records = [
        seg_metrics(preds[i], samples[i].mask, net.cfg.n_classes, spacing) for i in range(len(samples))
    ]
    return mean_records(records)


def snapshot_arrays(net) -> dict[str, np.ndarray]:
    """Copy of all parameters and buffers, for best-epoch selection."""
    return {name: arr.copy() for name, arr in net_arrays(net).items()}


def restore_arrays(net, snap: dict[str, np.ndarray]) -> None:
    restore_net(net, snap)


def train_seg(
    net: AttentionUNet,
    train: list[SynthSample],
    val: list[SynthSample] | None,
    optimizer,
    epochs: int,
    seed: int = 0,
    batch_size: int = 8,
    aux_weight: float = 0.5,
    epoch_hook=None,
    select_metric=None,
    augment_ops: tuple[str, ...] | None = None,
) -> list[dict]:
    """Mini-batch training loop; deterministic given the seed.

    Returns one history row per epoch with the train loss and, when a
    validation split is given, its averaged metrics. Trailing batches of one
    are folded into the previous batch (batch norm needs N >= 2). With
    ``select_metric`` (MetricsRecord -> float, larger better) the weights
    revert to the best validation epoch at the end. ``augment_ops`` applies a
    fresh seed-derived augmentation to every drawn sample.
    """
    if not train:
        raise ValueError("train_seg: empty training set")
    if epochs < 1:
        raise ValueError("train_seg: epochs must be >= 1")
    if select_metric is not None and not val:
        raise ValueError("train_seg: select_metric needs a validation split")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x5E6]))
    params = net.parameters()
    history = []
    best_score, best_snap = -np.inf, None
    net.set_training(True)
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
        if len(batches) > 1 and len(batches[-1]) == 1:
            batches[-2] = np.concatenate([batches[-2], batches[-1]])
            batches.pop()
        epoch_loss = 0.0
        for bi, idx in enumerate(batches):
            batch = [train[j] for j in idx]
            if augment_ops:
                batch = [
                    random_augment(s, seed=seed * 1000003 + epoch * 10007 + int(j), ops=augment_ops)
                    for s, j in zip(batch, idx)
                ]
            loss = seg_batch_loss(net, batch, aux_weight)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericAbort(f"non-finite loss at epoch {epoch}, batch {bi}")
            for p in params.values():
                p.zero_grad()
            loss.backward()
            optimizer.step(params)
            epoch_loss += value * len(idx)
        row = {"epoch": epoch, "train_loss": epoch_loss / len(train)}
        if val:
            rec = evaluate_seg(net, val)
            row["val_metrics"] = rec
            row["val_dsc_macro"] = rec.macro("dsc")
            if select_metric is not None:
                score = select_metric(rec)
                if score > best_score:
                    best_score, best_snap = score, snapshot_arrays(net)
        history.append(row)
        if epoch_hook is not None:
            epoch_hook(epoch, net)
    if best_snap is not None:
        restore_arrays(net, best_snap)
    return history
