"""Attention-gated classifier: attended pooling, aggregation modes, sampler,
schedule, training behavior."""

import numpy as np
import pytest

from agkit import autodiff as ad
from agkit.autodiff import Tensor
from agkit.attention_gate import AttentionMap
from agkit.classifier import (
    AGClassifier,
    ClassifierConfig,
    WeightedSampler,
    aggregate,
    attended_pool,
    batch_logits,
    evaluate_cls,
    lr_schedule,
    train_cls,
)
from agkit.nn import Linear
from agkit.optim import SGDNesterov
from agkit.synthdata import gen_cls

import oracles


def small_cfg(**kw):
    base = dict(n_stages=3, base_width=4, n_classes=3, height=16, width=16, gated_stages=(2,))
    base.update(kw)
    return ClassifierConfig(**base)


class TestAttendedPool:
    def test_uniform_alpha_constant_input(self):
        x = Tensor(np.full((2, 3, 4, 4), 3.0))
        amap = AttentionMap(Tensor(np.full((2, 1, 4, 4), 1 / 16)), "min-shift")
        out = attended_pool(x, amap)
        assert np.allclose(out.data, 3.0, atol=1e-12)

    def test_one_hot_alpha_selects_pixel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 4, 3, 3))
        alpha = np.zeros((1, 1, 3, 3))
        alpha[0, 0, 2, 1] = 1.0
        out = attended_pool(Tensor(x), AttentionMap(Tensor(alpha), "min-shift"))
        assert np.allclose(out.data[0], x[0, :, 2, 1], atol=0)

    def test_matches_accumulation_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.normal(size=(2, 3, 4, 5))
            alpha = rng.uniform(0, 1, size=(2, 1, 4, 5))
            alpha /= alpha.sum(axis=(2, 3), keepdims=True)
            got = attended_pool(Tensor(x), AttentionMap(Tensor(alpha), "min-shift")).data
            want = oracles.spatial_sum_loops(x * alpha)[:, :, 0, 0]
            assert np.abs(got - want).max() < 1e-12

    def test_uniform_equals_global_average_bitwise(self):
        # power-of-two grids: scaling by 1/(H*W) is exact
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 8, 8))
        amap = AttentionMap(Tensor(np.full((2, 1, 8, 8), 1 / 64)), "min-shift")
        got = attended_pool(Tensor(x), amap).data
        want = ad.flatten(ad.global_avg_pool(Tensor(x))).data
        assert (got == want).all()

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            attended_pool(
                Tensor(np.zeros((1, 2, 4, 4))),
                AttentionMap(Tensor(np.ones((1, 1, 2, 2))), "min-shift"),
            )

    def test_subgates_concatenate(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(1, 3, 2, 2)))
        alpha = Tensor(rng.uniform(0, 1, size=(1, 2, 2, 2)))
        out = attended_pool(x, AttentionMap(alpha, "min-shift"))
        assert out.shape == (1, 6)


class TestAggregate:
    def make_vectors(self, rng, n=2, widths=(3, 5)):
        return [Tensor(rng.normal(size=(n, w))) for w in widths]

    def test_concat_fc_zero_weights_gives_bias(self):
        rng = np.random.default_rng(4)
        vectors = self.make_vectors(rng)
        head = Linear(8, 4, name="h", seed=0)
        head.weight.data[:] = 0.0
        head.bias.data[:] = np.array([1.0, -1.0, 0.5, 2.0])
        logits, _ = aggregate(vectors, "concat-fc", [], head)
        assert np.allclose(logits.data, head.bias.data, atol=0)

    def test_single_scale_all_modes_agree(self):
        rng = np.random.default_rng(5)
        v = [Tensor(rng.normal(size=(2, 4)))]
        head = Linear(4, 3, name="h", seed=1)
        got = {}
        for mode in ("per-scale-mean", "per-scale-max"):
            logits, _ = aggregate(v, mode, [head])
            got[mode] = logits.data
        assert np.allclose(got["per-scale-mean"], got["per-scale-max"], atol=0)

    def test_per_scale_max_elementwise(self):
        v = [Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1)))]
        h1 = Linear(1, 2, name="h1", seed=2)
        h2 = Linear(1, 2, name="h2", seed=3)
        h1.weight.data[:] = 0.0
        h2.weight.data[:] = 0.0
        h1.bias.data[:] = np.array([1.0, -1.0])
        h2.bias.data[:] = np.array([-1.0, 1.0])
        logits, _ = aggregate(v, "per-scale-max", [h1, h2])
        assert (logits.data == np.array([[1.0, 1.0]])).all()

    def test_deepsup_phase2_only_touches_concat_head(self):
        cfg = small_cfg(aggregation="deepsup-finetune")
        net = AGClassifier(cfg, seed=6)
        net.phase = 2
        trainable = net.parameters(trainable_only=True)
        assert set(trainable) == {"concat_head.weight", "concat_head.bias"}
        data = gen_cls(7, 8, 16, 16, 2, 0.5)
        out = batch_logits(net, data[:4])
        from agkit.losses import cross_entropy

        loss = cross_entropy(out.logits, np.asarray([s.label for s in data[:4]]))
        for p in net.parameters().values():
            p.zero_grad()
        loss.backward()
        for name, p in net.parameters().items():
            if name in trainable:
                assert p.grad is not None
            else:
                assert p.grad is None or np.abs(p.grad).max() == 0.0, name

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            aggregate([Tensor(np.zeros((1, 2)))], "vote", [])


class TestForward:
    def test_uniform_ablation_bit_identical_to_baseline(self):
        data = gen_cls(8, 6, 16, 16, 2, 0.5)
        gated = AGClassifier(small_cfg(), seed=9)
        baseline = AGClassifier(small_cfg(gated=False), seed=9)
        out_g = batch_logits(gated, data, alpha_override="uniform")
        out_b = batch_logits(baseline, data)
        assert (out_g.logits.data == out_b.logits.data).all()

    def test_attention_maps_shapes(self):
        cfg = ClassifierConfig(n_classes=5, height=32, width=32)
        net = AGClassifier(cfg, seed=10)
        data = gen_cls(9, 4, 32, 32)
        out = batch_logits(net, data)
        shapes = [a.alpha.shape for a in out.attention]
        assert shapes == [(4, 1, 16, 16), (4, 1, 8, 8)]
        for a in out.attention:
            s = a.alpha.data.sum(axis=(2, 3))
            assert np.abs(s - 1.0).max() < 1e-9

    def test_full_network_finite_differences(self):
        from agkit.verify import gradcheck_classifier

        [(name, res, tol)] = gradcheck_classifier(seed=0)
        assert res.max_rel_err < tol, res

    def test_gated_stage_after_final_rejected(self):
        with pytest.raises(ValueError, match="strictly before"):
            small_cfg(gated_stages=(3,))


class TestSampler:
    def test_expected_draw_counts(self):
        labels = np.array([0] * 900 + [1] * 50 + [2] * 50)
        sampler = WeightedSampler(labels)
        rng = np.random.default_rng(0)
        drawn = labels[sampler.draw(9000, rng)]
        counts = np.bincount(drawn, minlength=3)
        # expectations 4500 / 2250 / 2250 with binomial 3-sigma margins
        assert abs(counts[0] - 4500) <= 3 * np.sqrt(9000 * 0.5 * 0.5)
        for c in (1, 2):
            assert abs(counts[c] - 2250) <= 3 * np.sqrt(9000 * 0.25 * 0.75)

    def test_needs_foreground(self):
        with pytest.raises(ValueError):
            WeightedSampler(np.zeros(10, dtype=int))

    def test_deterministic_given_rng(self):
        labels = np.array([0, 0, 1, 2, 2])
        s = WeightedSampler(labels)
        a = s.draw(20, np.random.default_rng(3))
        b = s.draw(20, np.random.default_rng(3))
        assert (a == b).all()


class TestSchedule:
    def test_warm_then_peak_then_decay(self):
        total = 10
        lrs = [lr_schedule(e, total) for e in range(total)]
        assert lrs[0] == lrs[1] == 0.01
        assert lrs[2] == 0.1
        assert lrs[5] == 0.1
        assert lrs[6] == pytest.approx(0.01)  # 60% of 10 epochs
        assert lrs[9] == pytest.approx(0.01)

    def test_short_runs(self):
        assert lr_schedule(0, 1) == 0.01
        assert lr_schedule(1, 2) == 0.01


class TestTraining:
    def test_single_batch_overfit(self):
        data = [s for s in gen_cls(11, 64, 16, 16, 2, 0.5)][:10]
        labels = [s.label for s in data]
        assert len(set(labels)) >= 2
        cfg = small_cfg(n_classes=3, base_width=8)
        net = AGClassifier(cfg, seed=12)
        opt = SGDNesterov(lr=0.05)
        from agkit.losses import cross_entropy

        params = net.parameters()
        y = np.asarray(labels)
        acc = 0.0
        for step in range(300):
            out = batch_logits(net, data)
            loss = cross_entropy(out.logits, y)
            for p in params.values():
                p.zero_grad()
            loss.backward()
            opt.step(params)
            acc = float((out.logits.data.argmax(axis=1) == y).mean())
            if acc == 1.0:
                break
        assert acc == 1.0

    def test_fixed_seed_identical_histories(self):
        data = gen_cls(13, 24, 16, 16, 2, 0.5)

        def run():
            net = AGClassifier(small_cfg(), seed=14)
            hist = train_cls(net, data[:16], data[16:], SGDNesterov(lr=0.02), 2,
                             seed=3, batch_size=8, use_schedule=False)
            return [(h["epoch"], h["train_loss"], h["val_accuracy"]) for h in hist]

        assert run() == run()

    def test_needs_two_classes(self):
        data = [s for s in gen_cls(15, 20, 16, 16, 2, 0.5) if s.label == 0]
        net = AGClassifier(small_cfg(), seed=0)
        with pytest.raises(ValueError, match="two classes"):
            train_cls(net, data, None, SGDNesterov(), 1)

    def test_deepsup_finetune_phases(self):
        data = gen_cls(16, 30, 16, 16, 2, 0.5)
        cfg = small_cfg(aggregation="deepsup-finetune")
        net = AGClassifier(cfg, seed=17)
        hist = train_cls(net, data[:20], data[20:], SGDNesterov(lr=0.02), 3,
                         seed=4, batch_size=10, use_schedule=False)
        phases = [h["phase"] for h in hist]
        assert phases == [1, 1, 2]
