"""scikit-learn style estimators wrapping the two networks, so they compose
with pipelines, grid search and the rest of the ecosystem."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .autodiff import Tensor
from .classifier import AGClassifier, ClassifierConfig, train_cls
from .metrics import mean_records, seg_metrics
from .optim import make_optimizer
from .synthdata import SynthSample
from .unet import AttentionUNet, UNetConfig, standardize, train_seg
from .validation import check_images, check_labels, check_masks


def _to_samples_seg(X: np.ndarray, y: np.ndarray | None) -> list[SynthSample]:
    return [
        SynthSample(image=X[i : i + 1], mask=None if y is None else y[i])
        for i in range(X.shape[0])
    ]


def _to_samples_cls(X: np.ndarray, y: np.ndarray | None) -> list[SynthSample]:
    return [
        SynthSample(image=X[i : i + 1], label=None if y is None else int(y[i]))
        for i in range(X.shape[0])
    ]


class AttentionUNetSegmenter(BaseEstimator):
    """Dense multi-class segmentation with attention-gated skip connections.

    ``fit(X, y)`` takes images in [0,1] shaped (n,H,W) or (n,1,H,W) and
    integer label masks (n,H,W); ``predict`` returns label masks. Setting
    ``gated=False`` trains the plain ungated network with otherwise shared
    weights (same ``random_state`` gives identical non-gate layers).
    """

    def __init__(
        self,
        depth=3,
        base_filters=8,
        n_classes=3,
        gated=True,
        deep_supervision=True,
        sub_gates=1,
        gate_normalization="sigmoid",
        gate_resample="up-to-x",
        epochs=12,
        batch_size=8,
        learning_rate=2e-3,
        optimizer="adam",
        aux_weight=0.5,
        random_state=0,
    ):
        self.depth = depth
        self.base_filters = base_filters
        self.n_classes = n_classes
        self.gated = gated
        self.deep_supervision = deep_supervision
        self.sub_gates = sub_gates
        self.gate_normalization = gate_normalization
        self.gate_resample = gate_resample
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.aux_weight = aux_weight
        self.random_state = random_state

    def _build(self, h: int, w: int) -> AttentionUNet:
        modes = ("attention" if self.gated else "identity",) * (self.depth - 1)
        cfg = UNetConfig(
            depth=self.depth,
            base_filters=self.base_filters,
            n_classes=self.n_classes,
            height=h,
            width=w,
            deep_supervision=self.deep_supervision,
            gate_modes=modes,
            gate_normalization=self.gate_normalization,
            sub_gates=self.sub_gates,
            gate_resample=self.gate_resample,
        )
        return AttentionUNet(cfg, seed=self.random_state)

    def fit(self, X, y):
        X = check_images(X)
        y = check_masks(y, X.shape[0], X.shape[2:], self.n_classes)
        self.net_ = self._build(X.shape[2], X.shape[3])
        opt = make_optimizer(self.optimizer, self.learning_rate)
        self.history_ = train_seg(
            self.net_,
            _to_samples_seg(X, y),
            None,
            opt,
            self.epochs,
            seed=self.random_state,
            batch_size=self.batch_size,
            aux_weight=self.aux_weight,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("call fit before predict")

    def _forward(self, X):
        self._check_fitted()
        X = check_images(X)
        self.net_.set_training(False)
        outs = []
        with ad.no_grad():
            for i in range(0, X.shape[0], 16):
                outs.append(self.net_.forward(Tensor(standardize(X[i : i + 16]))))
        self.net_.set_training(True)
        return outs

    def predict(self, X) -> np.ndarray:
        return np.concatenate([o.logits.data.argmax(axis=1) for o in self._forward(X)], axis=0)

    def predict_proba(self, X) -> np.ndarray:
        return np.concatenate([o.probs.data for o in self._forward(X)], axis=0)

    def attention_maps(self, X) -> list[np.ndarray]:
        """Per-gate coefficient maps, finest scale first, stacked over samples."""
        outs = self._forward(X)
        if not outs or not outs[0].attention:
            return []
        n_gates = len(outs[0].attention)
        per_gate = [
            np.concatenate([o.attention[g].alpha.data for o in outs], axis=0) for g in range(n_gates)
        ]
        order = sorted(range(n_gates), key=lambda g: outs[0].attention[g].scale or 0)
        return [per_gate[g] for g in order]

    def score(self, X, y) -> float:
        """Mean foreground DSC (macro over classes 1..n_classes-1)."""
        X = check_images(X)
        y = check_masks(y, X.shape[0], X.shape[2:], self.n_classes)
        preds = self.predict(X)
        recs = [seg_metrics(preds[i], y[i], self.n_classes) for i in range(len(y))]
        rec = mean_records(recs)
        fg = [rec.per_class[c].dsc for c in range(1, self.n_classes)]
        return float(np.mean(fg))


class AttentionGatedClassifier(BaseEstimator):
    """Image classification with attended pooling at two intermediate scales.

    ``gated=False`` is the matched average-pooling baseline. Labels are
    integers with 0 conventionally the background class (the weighted sampler
    balances background against the foreground pool during training).
    """

    def __init__(
        self,
        n_stages=4,
        base_width=8,
        gated=True,
        gated_stages=(2, 3),
        aggregation="concat-fc",
        sub_gates=1,
        gate_normalization="min-shift",
        epochs=4,
        batch_size=16,
        learning_rate=0.1,
        momentum=0.9,
        optimizer="sgd-nesterov",
        use_schedule=True,
        random_state=0,
    ):
        self.n_stages = n_stages
        self.base_width = base_width
        self.gated = gated
        self.gated_stages = gated_stages
        self.aggregation = aggregation
        self.sub_gates = sub_gates
        self.gate_normalization = gate_normalization
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.optimizer = optimizer
        self.use_schedule = use_schedule
        self.random_state = random_state

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, X.shape[0])
        self.classes_ = np.unique(y)
        n_classes = int(y.max()) + 1
        cfg = ClassifierConfig(
            n_stages=self.n_stages,
            base_width=self.base_width,
            n_classes=n_classes,
            height=X.shape[2],
            width=X.shape[3],
            gated_stages=tuple(self.gated_stages),
            aggregation=self.aggregation,
            gated=self.gated,
            gate_normalization=self.gate_normalization,
            sub_gates=self.sub_gates,
        )
        self.net_ = AGClassifier(cfg, seed=self.random_state)
        opt = make_optimizer(self.optimizer, self.learning_rate, self.momentum)
        self.history_ = train_cls(
            self.net_,
            _to_samples_cls(X, y),
            None,
            opt,
            self.epochs,
            seed=self.random_state,
            batch_size=self.batch_size,
            use_schedule=self.use_schedule,
        )
        return self

    def _forward(self, X):
        if not hasattr(self, "net_"):
            raise NotFittedError("call fit before predict")
        X = check_images(X)
        self.net_.set_training(False)
        outs = []
        with ad.no_grad():
            for i in range(0, X.shape[0], 32):
                outs.append(self.net_.forward(Tensor(standardize(X[i : i + 32]))))
        self.net_.set_training(True)
        return outs

    def predict(self, X) -> np.ndarray:
        return np.concatenate([o.logits.data.argmax(axis=1) for o in self._forward(X)])

    def predict_proba(self, X) -> np.ndarray:
        outs = self._forward(X)
        probs = [ad.softmax(Tensor(o.logits.data), "channel").data for o in outs]
        return np.concatenate(probs, axis=0)

    def attention_maps(self, X) -> list[np.ndarray]:
        outs = self._forward(X)
        if not outs or not outs[0].attention:
            return []
        n_gates = len(outs[0].attention)
        return [
            np.concatenate([o.attention[g].alpha.data for o in outs], axis=0) for g in range(n_gates)
        ]

    def score(self, X, y) -> float:
        y = check_labels(y, np.asarray(X).shape[0])
        return float((self.predict(X) == y).mean())
