"""VGG-style classifier with attention-gated attended pooling at two
intermediate stages plus coarsest-scale global pooling, and configurable
aggregation of the pooled descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention_gate import AttentionGateParams, AttentionMap, compatibility, init_passthrough, normalize, resample_to_grid
from .autodiff import Tensor
from .losses import cross_entropy
from .metrics import MetricsRecord, cls_metrics
from .nn import ConvBlock, Linear, maxpool2d, param_rng
from .optim import NumericAbort
from .synthdata import SynthSample, random_augment
from .unet import restore_arrays, snapshot_arrays, standardize

AGGREGATIONS = ("concat-fc", "per-scale-mean", "per-scale-max", "deepsup-finetune")


@dataclass
class ClassifierConfig:
    """Topology of the classification network.

    Stage widths double from ``base_width``; max-pooling sits between stages,
    so the final stage provides the coarse gridded gating signal. Gates sit
    at ``gated_stages`` (1-indexed, strictly before the final stage); with
    ``gated=False`` the same stages contribute plain global-average vectors
    (the ungated baseline)."""

    n_stages: int = 4
    base_width: int = 8
    n_classes: int = 5
    in_channels: int = 1
    height: int = 32
    width: int = 32
    gated_stages: tuple[int, ...] = (2, 3)
    aggregation: str = "concat-fc"
    gated: bool = True
    gate_normalization: str = "min-shift"
    sub_gates: int = 1

    def __post_init__(self):
        if self.n_stages < 2:
            raise ValueError("n_stages must be >= 2")
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        for s in self.gated_stages:
            if not 1 <= s < self.n_stages:
                raise ValueError(f"gated stage {s} must lie strictly before stage {self.n_stages}")
        step = 2 ** (self.n_stages - 1)
        if self.height % step or self.width % step:
            raise ValueError(
                f"input extents ({self.height},{self.width}) not divisible by 2^(n_stages-1)={step}"
            )

    def width_of(self, stage: int) -> int:
        return self.base_width * 2 ** (stage - 1)


@dataclass
class ClsOutput:
    logits: Tensor
    per_scale_logits: list[Tensor] = field(default_factory=list)
    attended: list[Tensor] = field(default_factory=list)
    attention: list[AttentionMap] = field(default_factory=list)


def attended_pool(x: Tensor, amap: AttentionMap) -> Tensor:
    """Attention-weighted spatial average: per channel sum_i alpha_i * x_i,
    flattened to (N, F_l) (sub-gates concatenate)."""
    alpha = amap.alpha
    if alpha.shape[2:] != x.shape[2:] or alpha.shape[0] != x.shape[0]:
        raise ValueError(f"attended_pool: map grid {alpha.shape} does not match x {x.shape}")
    parts = []
    for k in range(alpha.shape[1]):
        a_k = ad.channel_slice(alpha, k, k + 1) if alpha.shape[1] > 1 else alpha
        parts.append(ad.flatten(ad.spatial_sum(ad.mul(x, a_k))))
    return parts[0] if len(parts) == 1 else ad.channel_concat(parts)


def aggregate(vectors: list[Tensor], mode: str, heads: list[Linear], concat_head: Linear | None = None, phase: int = 1):
    """Combine the pooled descriptors into logits.

    concat-fc uses one FC on the concatenation; per-scale-mean/max fit one FC
    per vector and merge the logits; deepsup-finetune uses the per-scale
    heads in phase 1 and the concatenation head in phase 2.
    """
    if mode == "concat-fc":
        if concat_head is None:
            raise ValueError("concat-fc aggregation needs the concatenation head")
        return concat_head(ad.channel_concat(vectors)), []
    if mode in ("per-scale-mean", "per-scale-max"):
        if len(heads) != len(vectors):
            raise ValueError(f"{mode}: {len(vectors)} vectors but {len(heads)} heads")
        per_scale = [head(v) for head, v in zip(heads, vectors)]
        if mode == "per-scale-mean":
            acc = per_scale[0]
            for logit in per_scale[1:]:
                acc = ad.add(acc, logit)
            return ad.scale(acc, 1.0 / len(per_scale)), per_scale
        acc = per_scale[0]
        for logit in per_scale[1:]:
            acc = ad.maximum(acc, logit)
        return acc, per_scale
    if mode == "deepsup-finetune":
        per_scale = [head(v) for head, v in zip(heads, vectors)]
        if phase == 1:
            acc = per_scale[0]
            for logit in per_scale[1:]:
                acc = ad.add(acc, logit)
            return ad.scale(acc, 1.0 / len(per_scale)), per_scale
        if concat_head is None:
            raise ValueError("deepsup-finetune phase 2 needs the concatenation head")
        return concat_head(ad.channel_concat([v.detach() for v in vectors])), per_scale
    raise ValueError(f"unknown aggregation mode {mode!r}")


class AGClassifier:
    """Feature extractor of ``n_stages`` double-conv stages with attention
    gates feeding attended pooling; the final stage is the gridded gating
    signal and also contributes its global average."""

    def __init__(self, cfg: ClassifierConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.phase = 1
        self.stages = []
        c_in = cfg.in_channels
        for s in range(1, cfg.n_stages + 1):
            f = cfg.width_of(s)
            self.stages.append(
                (
                    ConvBlock(c_in, f, name=f"stage{s}a", seed=seed),
                    ConvBlock(f, f, name=f"stage{s}b", seed=seed),
                )
            )
            c_in = f
        f_g = cfg.width_of(cfg.n_stages)
        self.gates: dict[int, AttentionGateParams] = {}
        if cfg.gated:
            for s in cfg.gated_stages:
                gate = init_passthrough(
                    f_l=cfg.width_of(s),
                    f_g=f_g,
                    sub_gates=cfg.sub_gates,
                    normalization=cfg.gate_normalization,
                    name=f"stage{s}.gate",
                    seed=seed,
                )
                if cfg.gate_normalization == "min-shift":
                    # exact psi=0 is a stationary point of the min-shift gate
                    # (the uniform 0/0 fallback carries no gradient), so the
                    # classifier starts near-uniform with a trainable score map
                    rng = param_rng(seed, f"stage{s}.gate.psi_jitter")
                    gate.psi.data[:] = rng.normal(0.0, 0.1, size=gate.psi.shape)
                self.gates[s] = gate
        vec_widths = [cfg.width_of(s) * cfg.sub_gates for s in cfg.gated_stages] + [f_g]
        self.heads = [
            Linear(width, cfg.n_classes, name=f"head{idx}", seed=seed)
            for idx, width in enumerate(vec_widths)
        ]
        self.concat_head = Linear(sum(vec_widths), cfg.n_classes, name="concat_head", seed=seed)

    def parameters(self, trainable_only: bool = False) -> dict[str, Tensor]:
        """All named parameters; with ``trainable_only`` in deepsup-finetune
        phase 2, just the concatenation head (extractor frozen)."""
        if trainable_only and self.cfg.aggregation == "deepsup-finetune" and self.phase == 2:
            return self.concat_head.parameters()
        out: dict[str, Tensor] = {}
        for a, b in self.stages:
            out.update(a.parameters())
            out.update(b.parameters())
        for gate in self.gates.values():
            out.update(gate.parameters())
        for head in self.heads:
            out.update(head.parameters())
        out.update(self.concat_head.parameters())
        return out

    def state(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for a, b in self.stages:
            out.update(a.state())
            out.update(b.state())
        return out

    def set_training(self, training: bool) -> None:
        for a, b in self.stages:
            a.bn.training = training
            b.bn.training = training

    def forward(self, x: Tensor, alpha_override: str | float | None = None) -> ClsOutput:
        """``alpha_override``: None computes the gates; "uniform" freezes
        every map at 1/(H*W) (the average-pooling ablation); a float forces
        that constant coefficient."""
        cfg = self.cfg
        feats = {}
        h = x
        for s, (a, b) in enumerate(self.stages, start=1):
            h = b(a(h))
            feats[s] = h
            if s < cfg.n_stages:
                h = maxpool2d(h, 2, 2)
        g = feats[cfg.n_stages]
        out = ClsOutput(logits=None)  # type: ignore[arg-type]
        vectors = []
        for s in cfg.gated_stages:
            xs = feats[s]
            if cfg.gated:
                gate = self.gates[s]
                if alpha_override is None:
                    g_up = resample_to_grid(g, (xs.shape[2], xs.shape[3]))
                    amap = normalize(compatibility(xs, g_up, gate), gate.normalization, scale=s)
                else:
                    n, _, hh, ww = xs.shape
                    value = 1.0 / (hh * ww) if alpha_override == "uniform" else float(alpha_override)
                    amap = AttentionMap(
                        Tensor(np.full((n, cfg.sub_gates, hh, ww), value)), gate.normalization, scale=s
                    )
                out.attention.append(amap)
                vectors.append(attended_pool(xs, amap))
            else:
                vectors.append(ad.flatten(ad.global_avg_pool(xs)))
        vectors.append(ad.flatten(ad.global_avg_pool(g)))
        out.attended = vectors
        out.logits, out.per_scale_logits = aggregate(
            vectors, cfg.aggregation, self.heads, self.concat_head, self.phase
        )
        return out


class WeightedSampler:
    """Draws background with probability 1/2 and otherwise a uniformly chosen
    foreground class, uniform within each pool."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels)
        self.bg = np.flatnonzero(labels == 0)
        fg_classes = sorted(c for c in np.unique(labels) if c != 0)
        self.fg_pools = [np.flatnonzero(labels == c) for c in fg_classes]
        if not self.fg_pools:
            raise ValueError("weighted sampler needs at least one foreground class")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        take_bg = rng.random(n) < 0.5 if len(self.bg) else np.zeros(n, dtype=bool)
        cls_pick = rng.integers(0, len(self.fg_pools), size=n)
        uniform = rng.random(n)
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            pool = self.bg if take_bg[i] else self.fg_pools[cls_pick[i]]
            out[i] = pool[int(uniform[i] * len(pool))]
        return out


def lr_schedule(epoch: int, total_epochs: int, warm_lr: float = 0.01, peak_lr: float = 0.1) -> float:
    """Warm start for the first two epochs, then the peak rate, decayed by
    10x at 60% of the run."""
    warm = min(2, total_epochs)
    decay_at = max(warm, math.ceil(0.6 * total_epochs))
    if epoch < warm:
        return warm_lr
    if epoch < decay_at:
        return peak_lr
    return peak_lr * 0.1


def batch_logits(net: AGClassifier, samples: list[SynthSample], alpha_override=None) -> ClsOutput:
    x = Tensor(standardize(np.concatenate([s.image for s in samples], axis=0)))
    return net.forward(x, alpha_override=alpha_override)


def predict_labels(net: AGClassifier, samples: list[SynthSample], batch_size: int = 32) -> np.ndarray:
    net.set_training(False)
    preds = []
    with ad.no_grad():
        for i in range(0, len(samples), batch_size):
            out = batch_logits(net, samples[i : i + batch_size])
            preds.append(out.logits.data.argmax(axis=1))
    net.set_training(True)
    return np.concatenate(preds)


def evaluate_cls(net: AGClassifier, samples: list[SynthSample]) -> MetricsRecord:
    preds = predict_labels(net, samples)
    gts = np.asarray([s.label for s in samples])
    return cls_metrics(preds, gts, net.cfg.n_classes)


def train_cls(
    net: AGClassifier,
    train: list[SynthSample],
    val: list[SynthSample] | None,
    optimizer,
    epochs: int,
    seed: int = 0,
    batch_size: int = 16,
    use_schedule: bool = True,
    epoch_hook=None,
    select_metric=None,
    augment_ops: tuple[str, ...] | None = None,
    schedule_total: int | None = None,
    schedule_offset: int = 0,
) -> list[dict]:
    """Cross-entropy training with the class-balancing weighted sampler and
    the warm-start/decay schedule (applied when the optimizer exposes ``lr``).

    deepsup-finetune splits the run: phase 1 (70% of epochs) trains per-scale
    losses end to end; phase 2 freezes the extractor and per-scale heads and
    fits the concatenation head alone.
    """
    labels = np.asarray([s.label for s in train])
    if len(np.unique(labels)) < 2:
        raise ValueError("train_cls: need at least two classes in the training set")
    if epochs < 1:
        raise ValueError("train_cls: epochs must be >= 1")
    if select_metric is not None and not val:
        raise ValueError("train_cls: select_metric needs a validation split")
    sampler = WeightedSampler(labels)
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xC75]))
    deepsup = net.cfg.aggregation == "deepsup-finetune"
    phase1_epochs = max(1, math.ceil(0.7 * epochs)) if deepsup else epochs
    history = []
    best_score, best_snap = -np.inf, None
    net.set_training(True)
    for epoch in range(epochs):
        net.phase = 1 if (not deepsup or epoch < phase1_epochs) else 2
        params = net.parameters(trainable_only=True)
        if use_schedule and hasattr(optimizer, "lr"):
            optimizer.lr = lr_schedule(epoch + schedule_offset, schedule_total or epochs)
        order = sampler.draw(len(train), rng)
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
            out = batch_logits(net, batch)
            y = np.asarray([s.label for s in batch])
            if net.phase == 1 and deepsup:
                terms = [cross_entropy(logit, y) for logit in out.per_scale_logits]
                loss = terms[0]
                for t in terms[1:]:
                    loss = ad.add(loss, t)
                loss = ad.scale(loss, 1.0 / len(terms))
            else:
                loss = cross_entropy(out.logits, y)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericAbort(f"non-finite loss at epoch {epoch}, batch {bi}")
            for p in params.values():
                p.zero_grad()
            loss.backward()
            optimizer.step(params)
            epoch_loss += value * len(idx)
        row = {"epoch": epoch, "train_loss": epoch_loss / len(train), "phase": net.phase}
        if val:
            rec = evaluate_cls(net, val)
            row["val_metrics"] = rec
            row["val_accuracy"] = rec.accuracy
            row["val_precision_macro"] = rec.macro("precision")
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
