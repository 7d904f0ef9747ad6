"""Finite-difference verification suites behind ``agkit gradcheck``: every
primitive op, the full attention gate, and complete 16x16-input networks."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .attention_gate import gated_skip, init_passthrough
from .autodiff import GradCheckResult, Tensor
from .classifier import AGClassifier, ClassifierConfig
from .losses import cross_entropy, dice_loss, one_hot_masks
from .unet import AttentionUNet, UNetConfig

OPS_TOL = 1e-6
NET_TOL = 1e-5

Check = tuple[str, GradCheckResult, float]


def _rand(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


def _probe(name: str, f, params: dict[str, Tensor], results: list[Check], tol: float = OPS_TOL,
           num_samples: int = 80, seed: int = 0) -> None:
    results.append((name, ad.check_gradients(f, params, eps=1e-5, num_samples=num_samples, seed=seed, tol=tol), tol))


def gradcheck_ops(seed: int = 0) -> list[Check]:
    """One finite-difference probe per primitive op, each wrapped in a random
    linear functional so every output coordinate matters."""
    rng = np.random.default_rng(seed)
    results: list[Check] = []

    a = Tensor(_rand(rng, (2, 3, 4, 5)), requires_grad=True, name="a")
    b = Tensor(_rand(rng, (2, 3, 4, 5)), requires_grad=True, name="b")
    b1 = Tensor(_rand(rng, (2, 1, 4, 5)), requires_grad=True, name="b1")
    w = Tensor(_rand(rng, (2, 3, 4, 5)))

    _probe("add", lambda: ad.sum_all(ad.mul(ad.add(a, b), w)), {"a": a, "b": b}, results)
    _probe("add_broadcast", lambda: ad.sum_all(ad.mul(ad.add(a, b1), w)), {"a": a, "b1": b1}, results)
    _probe("mul", lambda: ad.sum_all(ad.mul(ad.mul(a, b), w)), {"a": a, "b": b}, results)
    _probe("mul_broadcast", lambda: ad.sum_all(ad.mul(ad.mul(a, b1), w)), {"a": a, "b1": b1}, results)
    bden = Tensor(_rand(rng, (2, 3, 4, 5)) + 3.0, requires_grad=True, name="bden")
    _probe("div", lambda: ad.sum_all(ad.mul(ad.div(a, bden), w)), {"a": a, "bden": bden}, results)
    _probe("relu", lambda: ad.sum_all(ad.mul(ad.relu(a), w)), {"a": a}, results)
    _probe("sigmoid", lambda: ad.sum_all(ad.mul(ad.sigmoid(a), w)), {"a": a}, results)
    _probe("maximum", lambda: ad.sum_all(ad.mul(ad.maximum(a, b), w)), {"a": a, "b": b}, results)
    _probe("scale_shift", lambda: ad.sum_all(ad.mul(ad.shift(ad.scale(a, 1.7), -0.3), w)), {"a": a}, results)

    _probe("softmax_channel", lambda: ad.sum_all(ad.mul(ad.softmax(a, "channel"), w)), {"a": a}, results)
    _probe("softmax_spatial", lambda: ad.sum_all(ad.mul(ad.softmax(a, "spatial"), w)), {"a": a}, results)
    _probe("log_softmax", lambda: ad.sum_all(ad.mul(ad.log_softmax(a, "channel"), w)), {"a": a}, results)
    _probe("minshift_spatial", lambda: ad.sum_all(ad.mul(ad.minshift_spatial(a), w)), {"a": a}, results)

    wr = Tensor(_rand(rng, (2, 3, 1, 1)))
    _probe("global_avg_pool", lambda: ad.sum_all(ad.mul(ad.global_avg_pool(a), wr)), {"a": a}, results)
    _probe("spatial_sum", lambda: ad.sum_all(ad.mul(ad.spatial_sum(a), wr)), {"a": a}, results)
    wb = Tensor(_rand(rng, (1, 3, 4, 5)))
    _probe("batch_sum", lambda: ad.sum_all(ad.mul(ad.batch_sum(a), wb)), {"a": a}, results)
    _probe("sum_all", lambda: ad.scale(ad.sum_all(a), 0.7), {"a": a}, results)

    wcat = Tensor(_rand(rng, (2, 6, 4, 5)))
    _probe(
        "channel_concat",
        lambda: ad.sum_all(ad.mul(ad.channel_concat([a, b]), wcat)),
        {"a": a, "b": b},
        results,
    )
    wsl_ = Tensor(_rand(rng, (2, 2, 4, 5)))
    _probe("channel_slice", lambda: ad.sum_all(ad.mul(ad.channel_slice(a, 1, 3), wsl_)), {"a": a}, results)

    lw = Tensor(_rand(rng, (60, 7)) * 0.4, requires_grad=True, name="lw")
    lb = Tensor(_rand(rng, (7,)), requires_grad=True, name="lb")
    wlin = Tensor(_rand(rng, (2, 7)))
    _probe(
        "flatten_linear",
        lambda: ad.sum_all(ad.mul(ad.linear(ad.flatten(a), lw, lb), wlin)),
        {"a": a, "lw": lw, "lb": lb},
        results,
    )

    x = Tensor(_rand(rng, (2, 3, 7, 7)), requires_grad=True, name="x")
    kern = Tensor(_rand(rng, (4, 3, 3, 3)) * 0.5, requires_grad=True, name="kern")
    kb = Tensor(_rand(rng, (4,)), requires_grad=True, name="kb")
    wc = Tensor(_rand(rng, (2, 4, 4, 4)))
    _probe(
        "conv2d",
        lambda: ad.sum_all(ad.mul(nn.conv2d(x, kern, kb, stride=2, padding=1), wc)),
        {"x": x, "kern": kern, "kb": kb},
        results,
        num_samples=120,
    )
    wp = Tensor(_rand(rng, (2, 3, 3, 3)))
    _probe("maxpool2d", lambda: ad.sum_all(ad.mul(nn.maxpool2d(x, 2, 2), wp)), {"x": x}, results)
    xa = Tensor(_rand(rng, (2, 3, 6, 6)), requires_grad=True, name="xa")
    wa = Tensor(_rand(rng, (2, 3, 3, 3)))
    _probe("avgpool2d", lambda: ad.sum_all(ad.mul(nn.avgpool2d(xa, 2), wa)), {"xa": xa}, results)
    wu = Tensor(_rand(rng, (2, 3, 9, 11)))
    _probe(
        "upsample_bilinear",
        lambda: ad.sum_all(ad.mul(nn.upsample_bilinear(x, 9, 11), wu)),
        {"x": x},
        results,
    )

    gamma = Tensor(_rand(rng, (3,), 0.5, 1.5), requires_grad=True, name="gamma")
    beta = Tensor(_rand(rng, (3,), -0.5, 0.5), requires_grad=True, name="beta")
    rm, rv = np.zeros(3), np.ones(3)
    wn = Tensor(_rand(rng, (2, 3, 4, 5)))
    _probe(
        "batch_norm_train",
        lambda: ad.sum_all(ad.mul(nn.batch_norm(a, gamma, beta, rm, rv, True), wn)),
        {"a": a, "gamma": gamma, "beta": beta},
        results,
    )
    rm2, rv2 = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
    _probe(
        "batch_norm_eval",
        lambda: ad.sum_all(ad.mul(nn.batch_norm(a, gamma, beta, rm2, rv2, False), wn)),
        {"a": a, "gamma": gamma, "beta": beta},
        results,
    )
    return results


def _quadratic_reg(params: dict[str, Tensor], coeff: float) -> "ad.Tensor":
    """coeff * sum of squares over the probed parameters. Added to harness
    losses so no sampled coordinate has a structurally zero gradient (a
    zero-vs-zero comparison under the 1e-8-floored relative error is pure
    finite-difference noise); a wrong backward rule still shows at full size."""
    acc = None
    for p in params.values():
        term = ad.sum_all(ad.mul(p, p))
        acc = term if acc is None else ad.add(acc, term)
    return ad.scale(acc, coeff)


def gradcheck_gate(seed: int = 0) -> list[Check]:
    """Full gate blocks: every normalization mode, multi-dim sub-gates, both
    transform-sharing layouts; gradients for all gate parameters and inputs."""
    rng = np.random.default_rng(seed)
    results: list[Check] = []
    cases = [
        ("gate_sigmoid", "sigmoid", 1, True),
        ("gate_softmax", "softmax", 1, True),
        ("gate_minshift", "min-shift", 1, True),
        ("gate_multidim", "sigmoid", 2, True),
        ("gate_separate", "min-shift", 2, False),
    ]
    for name, norm, m, shared in cases:
        params = init_passthrough(
            f_l=3, f_g=5, sub_gates=m, normalization=norm, shared_transforms=shared,
            name=name, seed=seed,
        )
        params.psi.data[:] = rng.normal(size=params.psi.shape) * 0.7
        params.b_psi.data[:] = rng.normal(size=params.b_psi.shape) * 0.5
        x = Tensor(_rand(rng, (2, 3, 8, 8)), requires_grad=True, name="x")
        g = Tensor(_rand(rng, (2, 5, 4, 4)), requires_grad=True, name="g")
        w = Tensor(_rand(rng, (2, 3 * m, 8, 8), -0.5, 0.5))

        probe_params = dict(params.parameters())
        probe_params["x"] = x
        probe_params["g"] = g

        def f(x=x, g=g, params=params, w=w, probe=probe_params):
            gated, _ = gated_skip(x, g, params)
            return ad.add(ad.sum_all(ad.mul(gated, w)), _quadratic_reg(probe, 0.15))

        _probe(name, f, probe_params, results, num_samples=120)
    return results


def gradcheck_unet(seed: int = 0) -> list[Check]:
    """Complete Attention U-Net on a 16x16 batch-of-2 input, Dice loss."""
    rng = np.random.default_rng(seed)
    cfg = UNetConfig(depth=3, base_filters=4, n_classes=2, height=16, width=16)
    net = AttentionUNet(cfg, seed=seed)
    for gate in net.gates:
        gate.psi.data[:] = rng.normal(size=gate.psi.shape) * 0.5
    x = Tensor(rng.uniform(-2, 2, size=(2, 1, 16, 16)), requires_grad=True, name="input")
    masks = rng.integers(0, 2, size=(2, 16, 16))
    target = Tensor(one_hot_masks(masks, 2))

    params = dict(net.parameters())
    params["input"] = x

    def f():
        out = net.forward(x)
        return ad.add(dice_loss(out.probs, target), _quadratic_reg(params, 0.01))

    results: list[Check] = []
    _probe("unet_16x16", f, params, results, tol=NET_TOL, num_samples=120, seed=seed)
    return results


def gradcheck_classifier(seed: int = 0) -> list[Check]:
    """Complete gated classifier on a 16x16 batch-of-2 input, cross-entropy."""
    rng = np.random.default_rng(seed)
    cfg = ClassifierConfig(n_stages=3, base_width=4, n_classes=3, height=16, width=16, gated_stages=(2,))
    net = AGClassifier(cfg, seed=seed)
    for gate in net.gates.values():
        gate.psi.data[:] = rng.normal(size=gate.psi.shape) * 0.5
    x = Tensor(rng.uniform(-2, 2, size=(2, 1, 16, 16)), requires_grad=True, name="input")
    y = rng.integers(0, 3, size=2)

    params = dict(net.parameters())
    params["input"] = x

    def f():
        return ad.add(cross_entropy(net.forward(x).logits, y), _quadratic_reg(params, 0.01))

    results: list[Check] = []
    _probe("classifier_16x16", f, params, results, tol=NET_TOL, num_samples=120, seed=seed)
    return results


SCOPES = {
    "ops": gradcheck_ops,
    "gate": gradcheck_gate,
    "unet": gradcheck_unet,
    "classifier": gradcheck_classifier,
}


def run_scope(scope: str, seed: int = 0) -> list[Check]:
    if scope == "all":
        out: list[Check] = []
        for fn in SCOPES.values():
            out.extend(fn(seed))
        return out
    if scope not in SCOPES:
        raise ValueError(f"unknown gradcheck scope {scope!r}")
    return SCOPES[scope](seed)
