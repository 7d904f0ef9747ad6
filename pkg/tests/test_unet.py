"""Attention U-Net: construction, forward contracts, gate equivalences,
gradient fidelity, training loop behavior."""

import numpy as np
import pytest

from agkit import autodiff as ad
from agkit.autodiff import Tensor
from agkit.losses import dice_loss, one_hot_masks
from agkit.optim import Adam, NumericAbort
from agkit.synthdata import SynthSample, gen_seg
from agkit.unet import (
    AttentionUNet,
    UNetConfig,
    batch_tensors,
    evaluate_seg,
    majority_downsample,
    seg_batch_loss,
    standardize,
    train_seg,
)


def small_cfg(**kw):
    base = dict(depth=3, base_filters=4, n_classes=3, height=16, width=16)
    base.update(kw)
    return UNetConfig(**base)


def expected_param_count(cfg: UNetConfig) -> int:
    """Closed-form parameter count, derived independently of the builder."""
    total = 0
    c_in = cfg.in_channels
    for s in range(1, cfg.depth + 1):
        f = cfg.filters(s)
        total += f * c_in * 9 + f + 2 * f  # conv a + bn
        total += f * f * 9 + f + 2 * f  # conv b + bn
        c_in = f
    for s in range(cfg.depth - 1, 0, -1):
        f = cfg.filters(s)
        f_coarse = cfg.filters(s + 1)
        if cfg.gate_modes[s - 1] == "attention":
            f_int = max(f // 2, 1)
            total += f_int * f  # w_x
            total += f_int * f_coarse  # w_g
            total += f_int  # b_xg
            total += cfg.sub_gates * f_int  # psi
            total += cfg.sub_gates  # b_psi
            skip_c = f * cfg.sub_gates
        else:
            skip_c = f
        cin_dec = f_coarse + skip_c
        total += f * cin_dec * 9 + f + 2 * f
        total += f * f * 9 + f + 2 * f
        if cfg.deep_supervision and s > 1:
            total += cfg.n_classes * f + cfg.n_classes
    total += cfg.n_classes * cfg.filters(1) + cfg.n_classes  # head
    return total


class TestBuild:
    def test_parameter_count_matches_closed_form(self):
        for kw in (
            {},
            {"depth": 4, "base_filters": 8, "height": 32, "width": 32},
            {"gate_modes": ("identity", "identity")},
            {"sub_gates": 2},
            {"deep_supervision": False},
        ):
            cfg = small_cfg(**kw)
            net = AttentionUNet(cfg, seed=0)
            got = sum(p.size for p in net.parameters().values())
            assert got == expected_param_count(cfg), kw

    def test_indivisible_extents_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            UNetConfig(depth=4, height=20, width=32)

    def test_forward_zeros_is_finite(self):
        net = AttentionUNet(small_cfg(), seed=1)
        out = net.forward(Tensor(np.zeros((2, 1, 16, 16))))
        assert np.isfinite(out.logits.data).all()

    def test_output_shapes(self):
        cfg = small_cfg(depth=4, height=32, width=32, base_filters=8)
        net = AttentionUNet(cfg, seed=2)
        out = net.forward(Tensor(np.random.default_rng(0).normal(size=(3, 1, 32, 32))))
        assert out.logits.shape == (3, 3, 32, 32)
        assert out.probs.shape == (3, 3, 32, 32)
        assert len(out.attention) == 3
        assert len(out.aux_logits) == 2  # scales 3 and 2

    def test_probability_maps_sum_to_one(self):
        net = AttentionUNet(small_cfg(), seed=3)
        out = net.forward(Tensor(np.random.default_rng(1).normal(size=(2, 1, 16, 16))))
        sums = out.probs.data.sum(axis=1)
        assert np.abs(sums - 1.0).max() < 1e-9

    def test_bad_gate_mode_rejected(self):
        with pytest.raises(ValueError, match="gate mode"):
            small_cfg(gate_modes=("attention", "partial"))


class TestGateEquivalences:
    def test_identity_override_bit_identical_to_baseline(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(2, 1, 16, 16)))
        gated = AttentionUNet(small_cfg(), seed=7)
        baseline = AttentionUNet(small_cfg(gate_modes=("identity", "identity")), seed=7)
        out_g = gated.forward(x, alpha_override=1.0)
        out_b = baseline.forward(x)
        assert (out_g.logits.data == out_b.logits.data).all()

    def test_zero_override_suppresses_skips(self):
        rng = np.random.default_rng(5)
        # with all skips suppressed, logits must not depend on fine-scale
        # content that only reaches the decoder through skips
        x1 = rng.normal(size=(2, 1, 16, 16))
        net = AttentionUNet(small_cfg(deep_supervision=False), seed=8)
        out1 = net.forward(Tensor(x1), alpha_override=0.0)
        net2 = AttentionUNet(small_cfg(deep_supervision=False), seed=8)
        out2 = net2.forward(Tensor(x1), alpha_override=0.0)
        assert (out1.logits.data == out2.logits.data).all()
        assert np.isfinite(out1.logits.data).all()
        for amap in out1.attention:
            assert (amap.alpha.data == 0.0).all()

    def test_shared_weights_across_variants(self):
        gated = AttentionUNet(small_cfg(), seed=9)
        baseline = AttentionUNet(small_cfg(gate_modes=("identity", "identity")), seed=9)
        gp, bp = gated.parameters(), baseline.parameters()
        shared = set(gp) & set(bp)
        assert shared == set(bp)  # baseline params are a subset
        for name in shared:
            assert (gp[name].data == bp[name].data).all()
        only_gated = set(gp) - set(bp)
        assert only_gated and all(".gate." in n for n in only_gated)


class TestForwardBackward:
    def test_full_network_finite_differences(self):
        from agkit.verify import gradcheck_unet

        [(name, res, tol)] = gradcheck_unet(seed=0)
        assert res.max_rel_err < tol, res

    def test_deep_supervision_heads_receive_gradient(self):
        cfg = small_cfg(deep_supervision=True)
        net = AttentionUNet(cfg, seed=10)
        batch = gen_seg(0, 2, 16, 16)
        for s in batch:
            s.mask = s.mask % cfg.n_classes
        loss = seg_batch_loss(net, batch)
        loss.backward()
        aux_params = {n: p for n, p in net.parameters().items() if n.startswith("aux")}
        assert aux_params
        for name, p in aux_params.items():
            assert p.grad is not None and np.abs(p.grad).max() > 0, name


class TestMajorityDownsample:
    def test_uniform_window(self):
        mask = np.zeros((4, 4), dtype=int)
        mask[:2, :2] = 1
        out = majority_downsample(mask, 2, 2)
        assert out[0, 0] == 1 and out[1, 1] == 0

    def test_tie_takes_smallest_label(self):
        mask = np.array([[0, 1], [1, 0]])
        assert majority_downsample(mask, 2, 2)[0, 0] == 0

    def test_majority_wins(self):
        mask = np.array([[2, 2], [2, 1]])
        assert majority_downsample(mask, 2, 3)[0, 0] == 2


class TestTraining:
    def test_loss_on_perfect_prediction_is_zero(self):
        masks = np.random.default_rng(6).integers(0, 3, size=(2, 8, 8))
        onehot = one_hot_masks(masks, 3)
        assert dice_loss(Tensor(onehot), Tensor(onehot)).item() <= 1e-6

    def test_single_sample_overfit(self):
        # duplicated sample (batch norm needs two); high-capacity dice fit
        sample = gen_seg(42, 1, 32, 32, contrast=1.0)[0]
        cfg = UNetConfig(depth=3, base_filters=8, n_classes=3, height=32, width=32)
        net = AttentionUNet(cfg, seed=11)
        train = [sample, sample]
        train_seg(net, train, None, Adam(lr=3e-3), epochs=100, seed=0, batch_size=2)
        rec = evaluate_seg(net, [sample])
        dscs = [rec.per_class[c].dsc for c in range(3)]
        assert np.mean(dscs) > 0.99, dscs

    def test_fixed_seed_reproducible_history(self):
        data = gen_seg(3, 6, 16, 16)
        for s in data:
            s.mask = s.mask % 3

        def run():
            net = AttentionUNet(small_cfg(), seed=12)
            hist = train_seg(net, data[:4], data[4:], Adam(lr=1e-3), 2, seed=5, batch_size=2)
            return [(h["epoch"], h["train_loss"], h["val_dsc_macro"]) for h in hist]

        assert run() == run()

    def test_empty_training_set_rejected(self):
        net = AttentionUNet(small_cfg(), seed=0)
        with pytest.raises(ValueError, match="empty"):
            train_seg(net, [], None, Adam(), 1)

    def test_nan_abort_reports_location(self):
        data = gen_seg(4, 4, 16, 16)
        net = AttentionUNet(small_cfg(), seed=13)
        with pytest.raises(NumericAbort, match="epoch"):
            train_seg(net, data, None, Adam(lr=1e28), epochs=3, seed=0, batch_size=2)

    def test_standardize_centers_unit_range(self):
        x = np.array([0.0, 0.5, 1.0])
        assert (standardize(x) == np.array([-2.0, 0.0, 2.0])).all()

    def test_batch_tensors_shapes(self):
        data = gen_seg(5, 3, 16, 16)
        x, masks, onehot = batch_tensors(data, 3)
        assert x.shape == (3, 1, 16, 16)
        assert masks.shape == (3, 16, 16)
        assert onehot.shape == (3, 3, 16, 16)
