import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tanmil.mil import (
    Bag,
    MilConfig,
    MilModel,
    batch_loss,
    attention_hinge_loss,
    build_bag,
    fuse_features,
    load_bags,
    load_mil,
    max_hinge_loss,
    read_bag,
    save_mil,
    segment_groups,
    total_loss,
    total_loss_grad,
    train_mil,
    uniform_weights,
    write_bag,
    write_bag_manifest,
)
from tanmil.nncore import TrainSchedule, save_checkpoint
from tanmil.nncore.checkpoint import FormatError
from tanmil.nncore.gradcheck import numeric_gradient, relative_error, sample_indices

SMALL = MilConfig(regressor_widths=(16, 8, 1), attention_widths=(12, 6, 1), bags_per_side=4)


def unit_rows(rng, shape):
    x = np.abs(rng.standard_normal(shape)) + 0.1
    return (x / np.linalg.norm(x, axis=-1, keepdims=True)).astype(np.float32)


def naive_bag(feats, m):
    # reference: segment s averages clips [s*n//m, (s+1)*n//m), at least one clip
    n = len(feats)
    rows = []
    for s in range(m):
        members = [feats[i] for i in range(n) if s * n // m <= i < max((s + 1) * n // m, s * n // m + 1)]
        mean = sum(np.asarray(v, np.float64) for v in members) / len(members)
        rows.append(mean / np.linalg.norm(mean))
    return np.array(rows)


class TestBuildBag:
    def test_two_clips_per_segment(self):
        feats = np.random.default_rng(0).standard_normal((64, 8)).astype(np.float32)
        assert segment_groups(64, 32) == [(2 * s, 2 * s + 2) for s in range(32)]
        bag = build_bag(feats, 32)
        expect = (feats[0::2].astype(np.float64) + feats[1::2]) / 2
        expect /= np.linalg.norm(expect, axis=1, keepdims=True)
        np.testing.assert_allclose(bag.features, expect, atol=1e-6)

    def test_full_size_bag(self):
        bag = build_bag(np.ones((100, 1024), np.float32), 32, "v", True)
        assert bag.features.shape == (32, 1024) and bag.m == 32 and bag.positive

    @pytest.mark.parametrize("n", [1, 5, 31, 33, 70])
    def test_matches_naive_partition(self, n):
        feats = np.random.default_rng(n).standard_normal((n, 6)).astype(np.float32)
        np.testing.assert_allclose(build_bag(feats, 32).features, naive_bag(feats, 32), atol=1e-6)

    def test_short_video_repeats_clips_in_order(self):
        feats = np.eye(5, dtype=np.float32)
        rows = build_bag(feats, 32).features
        assert [int(np.argmax(r)) for r in rows] == [s * 5 // 32 for s in range(32)]

    def test_groups_cover_every_clip(self):
        for n in range(1, 100):
            groups = segment_groups(n, 32)
            if n >= 32:
                assert [i for lo, hi in groups for i in range(lo, hi)] == list(range(n))
            else:
                assert sorted({lo for lo, _ in groups}) == list(range(n))

    def test_rows_unit_norm(self):
        bag = build_bag(np.random.default_rng(1).standard_normal((40, 16)), 32)
        np.testing.assert_allclose(np.linalg.norm(bag.features, axis=1), 1.0, atol=1e-5)

    def test_order_within_group_irrelevant(self):
        feats = np.random.default_rng(2).standard_normal((64, 10)).astype(np.float32)
        swapped = feats.copy()
        swapped[0::2], swapped[1::2] = feats[1::2], feats[0::2]
        np.testing.assert_allclose(build_bag(feats).features, build_bag(swapped).features, atol=1e-6)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_bag(np.zeros((0, 4)), 32)


class TestScores:
    def test_zero_parameters_give_half(self):
        model = MilModel(8, SMALL)
        for layer in model.layers("max"):
            layer.params.weights[...] = 0
            layer.params.biases[...] = 0
        np.testing.assert_array_equal(model.scores(np.ones((32, 8), np.float32)), 0.5)

    def test_large_logits_stay_in_range(self):
        model = MilModel(8, SMALL, seed=1)
        fc3 = model.regressor["fc3"].params
        fc3.weights *= 1e4
        s = model.scores(unit_rows(np.random.default_rng(0), (32, 8)).astype(np.float64))
        assert np.all((s >= 0) & (s <= 1)) and np.all(np.isfinite(s))

    def test_inference_deterministic(self):
        model = MilModel(8, SMALL, seed=3)
        x = unit_rows(np.random.default_rng(1), (32, 8))
        assert model.scores(x).tobytes() == model.scores(x).tobytes()

    def test_feature_dim_checked(self):
        with pytest.raises(ValueError):
            MilModel(8, SMALL).scores(np.zeros((32, 9), np.float32))


class TestAttention:
    def test_identical_rows_uniform(self):
        model = MilModel(8, SMALL, seed=0)
        w = model.weights(np.tile(unit_rows(np.random.default_rng(0), (1, 8)), (32, 1)))
        np.testing.assert_allclose(w, 1 / 32, rtol=1e-6)

    def test_sum_to_one_and_positive(self):
        model = MilModel(8, SMALL, seed=0)
        w = model.weights(unit_rows(np.random.default_rng(4), (3, 32, 8)))
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(w > 0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_permutation_equivariant(self, seed):
        rng = np.random.default_rng(seed)
        model = MilModel(8, SMALL, seed=seed % 7).astype(np.float64)
        x = unit_rows(rng, (32, 8)).astype(np.float64)
        perm = rng.permutation(32)
        np.testing.assert_allclose(model.weights(x[perm]), model.weights(x)[perm], rtol=1e-12)

    def test_sigmoid_variant_switch(self):
        from dataclasses import replace

        model = MilModel(8, replace(SMALL, attention_norm="sigmoid"), seed=0)
        w = model.weights(unit_rows(np.random.default_rng(0), (32, 8)))
        assert np.all((w > 0) & (w < 1))


def naive_max_hinge(pos, neg):
    best_p, best_n = pos[0], neg[0]
    for v in pos:
        best_p = v if v > best_p else best_p
    for v in neg:
        best_n = v if v > best_n else best_n
    return max(0.0, 1.0 - best_p + best_n)


def naive_attention_hinge(ps, pw, ns, nw):
    a = 0.0
    for s, w in zip(ps, pw):
        a += s * w
    b = 0.0
    for s, w in zip(ns, nw):
        b += s * w
    return max(0.0, 1.0 - a + b)


grid = st.integers(0, 64).map(lambda k: k / 64)


class TestLosses:
    def test_max_examples(self):
        assert max_hinge_loss([1.0, 0.2], [0.0, 0.0]) == 0.0
        assert max_hinge_loss([0.5], [0.5]) == 1.0
        assert max_hinge_loss([0.2, 0.1], [0.9, 0.3]) == pytest.approx(1.7)

    def test_attention_examples(self):
        assert attention_hinge_loss([1.0, 1.0], [0.5, 0.5], [0.0, 0.0], [0.5, 0.5]) == 0.0
        pos = np.array([0.6, 1.0, 0.8])
        neg = np.array([0.1, 0.5, 0.3])
        u = uniform_weights(pos)
        assert attention_hinge_loss(pos, u, neg, u) == pytest.approx(0.5)

    def test_against_naive_loops(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            m = int(rng.integers(1, 40))
            ps, ns = rng.random(m), rng.random(m)
            pw, nw = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m))
            assert abs(max_hinge_loss(ps, ns) - naive_max_hinge(ps, ns)) < 1e-6
            assert abs(attention_hinge_loss(ps, pw, ns, nw) - naive_attention_hinge(ps, pw, ns, nw)) < 1e-6

    def test_uniform_weights_give_mean_hinge(self):
        rng = np.random.default_rng(1)
        ps, ns = rng.random((50, 32)), rng.random((50, 32))
        u = uniform_weights(ps)
        expect = np.maximum(0, 1 - ps.mean(axis=1) + ns.mean(axis=1))
        np.testing.assert_allclose(attention_hinge_loss(ps, u, ns, u), expect, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(p=grid, n=grid, extra=grid)
    def test_zero_iff_margin(self, p, n, extra):
        # dyadic grid keeps both sides of the comparison exact
        pos = np.array([p, p * extra])
        neg = np.array([n * extra, n])
        loss = max_hinge_loss(pos, neg)
        assert (loss == 0.0) == (pos.max() - neg.max() >= 1.0)
        assert loss >= 0

    def test_lambda_zero_is_ranking_loss(self):
        rng = np.random.default_rng(2)
        ps, ns, pw, nw = rng.random(32), rng.random(32), rng.dirichlet(np.ones(32)), rng.dirichlet(np.ones(32))
        assert total_loss(ps, pw, ns, nw, 0.0, "attention") == attention_hinge_loss(ps, pw, ns, nw)
        assert total_loss(ps, pw, ns, nw, 0.0, "max") == max_hinge_loss(ps, ns)

    def test_sparsity_term(self):
        rng = np.random.default_rng(3)
        ps, ns, pw, nw = rng.random(32), rng.random(32), rng.dirichlet(np.ones(32)), rng.dirichlet(np.ones(32))
        s = float(np.dot(pw, ps))
        gap = total_loss(ps, pw, ns, nw, 8e-5, "attention") - total_loss(ps, pw, ns, nw, 0.0, "attention")
        assert gap == pytest.approx(8e-5 * s, rel=1e-9)
        gap_max = total_loss(ps, pw, ns, nw, 8e-5, "max") - total_loss(ps, pw, ns, nw, 0.0, "max")
        assert gap_max == pytest.approx(8e-5 * ps.mean(), rel=1e-9)

    def test_non_negative(self):
        rng = np.random.default_rng(4)
        ps, ns = rng.random((100, 8)), rng.random((100, 8))
        pw, nw = rng.dirichlet(np.ones(8), 100), rng.dirichlet(np.ones(8), 100)
        for mode in ("max", "attention"):
            assert np.all(total_loss(ps, pw, ns, nw, 8e-5, mode) >= 0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            total_loss([0.5], [1.0], [0.5], [1.0], 0.0, "mean")


class TestLossGradients:
    @pytest.mark.parametrize("mode", ["max", "attention"])
    def test_against_finite_differences(self, mode):
        rng = np.random.default_rng(5)
        for _ in range(20):
            ps, ns = rng.random(16), rng.random(16)
            pw, nw = rng.dirichlet(np.ones(16)), rng.dirichlet(np.ones(16))
            lam = 0.05
            grads = total_loss_grad(ps, pw, ns, nw, lam, mode)
            args = [ps, pw, ns, nw]
            for i, g in enumerate(grads):
                def f():
                    return float(total_loss(*args, lam, mode))
                assert relative_error(g, numeric_gradient(f, args[i], h=1e-6)) < 1e-3

    def test_inactive_hinge_leaves_only_sparsity(self):
        dps, dpw, dns, dnw = total_loss_grad([1.0, 1.0], [0.5, 0.5], [0.0, 0.0], [0.5, 0.5], 0.1, "attention")
        np.testing.assert_allclose(dps, [0.05, 0.05])
        np.testing.assert_allclose(dns, 0.0)


def check_model_gradients(mode, attention_norm="softmax", seed=0):
    from dataclasses import replace

    cfg = replace(SMALL, mode=mode, lambda1=0.05, attention_norm=attention_norm)
    rng = np.random.default_rng(seed)
    model = MilModel(8, cfg, seed=seed).astype(np.float64)
    pos = unit_rows(rng, (3, 32, 8)).astype(np.float64)
    neg = unit_rows(rng, (3, 32, 8)).astype(np.float64)

    def loss():
        return batch_loss(model, pos, neg, cfg, training=True, rng=np.random.default_rng(11))

    batch_loss(model, pos, neg, cfg, training=True, rng=np.random.default_rng(11), backward=True)
    analytic, numeric = [], []
    for layer in model.layers():
        for which in ("weights", "biases"):
            arr = getattr(layer.params, which)
            idx = sample_indices(rng, arr.shape, 4)
            analytic.extend(layer.grads[which][i] for i in idx)
            numeric.extend(numeric_gradient(loss, arr, h=1e-6, indices=idx))
    return relative_error(analytic, numeric)


class TestModelGradients:
    @pytest.mark.parametrize("mode", ["max", "attention"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_parameters_with_dropout(self, mode, seed):
        assert check_model_gradients(mode, seed=seed) < 1e-3

    def test_sigmoid_attention(self):
        assert check_model_gradients("attention", "sigmoid") < 1e-3


class TestFuse:
    def test_dimensions(self):
        rng = np.random.default_rng(0)
        out = fuse_features(rng.standard_normal(4096), rng.standard_normal(1024))
        assert out.shape == (5120,)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-5)

    def test_empty_second(self):
        x = np.array([3.0, 4.0])
        np.testing.assert_allclose(fuse_features(x, np.zeros(0)), [0.6, 0.8], rtol=1e-6)

    def test_row_aligned_matrices(self):
        rng = np.random.default_rng(1)
        out = fuse_features(rng.standard_normal((5, 3)), rng.standard_normal((5, 2)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)


def separable_bags(rng, n_pos=20, n_neg=20, dim=32):
    spike = np.zeros(dim)
    spike[:4] = 1.0
    bags = []
    for i in range(n_pos + n_neg):
        x = np.abs(1 + 0.3 * rng.standard_normal((32, dim)))
        if i < n_pos:
            a = int(rng.integers(0, 28))
            x[a:a + int(rng.integers(1, 5))] += 3 * spike
        bags.append(Bag(f"v{i}", i < n_pos, (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)))
    return bags


class TestTraining:
    def test_same_seed_same_history(self):
        bags = separable_bags(np.random.default_rng(0), 5, 5, 8)
        cfg = MilConfig(regressor_widths=(16, 8, 1), attention_widths=(12, 6, 1), schedule=TrainSchedule(0.001, 20))
        a = train_mil(bags, cfg, seed=4, log_every=0)
        b = train_mil(bags, cfg, seed=4, log_every=0)
        assert a.losses == b.losses and len(a.losses) == 20

    def test_needs_both_sides(self):
        bags = separable_bags(np.random.default_rng(0), 3, 0, 8)
        with pytest.raises(ValueError, match="positive and negative"):
            train_mil(bags, SMALL)

    def test_small_sides_sampled_with_replacement(self):
        bags = separable_bags(np.random.default_rng(0), 2, 1, 8)
        cfg = MilConfig(regressor_widths=(16, 8, 1), attention_widths=(12, 6, 1), schedule=TrainSchedule(0.001, 3))
        assert len(train_mil(bags, cfg, log_every=0).losses) == 3

    @pytest.mark.parametrize("mode", ["max", "attention"])
    def test_separable_bags_are_ranked(self, mode):
        rng = np.random.default_rng(1)
        cfg = MilConfig(mode=mode, regressor_widths=(128, 32, 1), attention_widths=(32, 16, 1),
                        schedule=TrainSchedule(0.001, 2000, (800, 1600)))
        model = train_mil(separable_bags(rng), cfg, seed=0, log_every=0).model
        test = separable_bags(rng, 10, 10)
        pos = np.mean([model.scores(b.features).max() for b in test if b.positive])
        neg = np.mean([model.scores(b.features).max() for b in test if not b.positive])
        assert pos - neg >= 0.3


class TestFiles:
    def test_bag_round_trip(self, tmp_path):
        bag = build_bag(np.random.default_rng(0).standard_normal((40, 12)), 32, "vid-1", True)
        write_bag(tmp_path / "b.bag", bag)
        back = read_bag(tmp_path / "b.bag", "vid-1", True)
        assert back.features.tobytes() == bag.features.tobytes()

    def test_manifest_and_load(self, tmp_path):
        rng = np.random.default_rng(1)
        entries = []
        for i, label in enumerate(("anomalous", "normal")):
            bag = build_bag(rng.standard_normal((10, 4)), 8, f"v{i}")
            (tmp_path / "train").mkdir(exist_ok=True)
            write_bag(tmp_path / "train" / f"v{i}.bag", bag)
            entries.append((f"v{i}", label, f"train/v{i}.bag"))
        write_bag_manifest(tmp_path / "train.txt", entries)
        bags = load_bags(tmp_path / "train.txt")
        assert [(b.video_id, b.positive, b.m) for b in bags] == [("v0", True, 8), ("v1", False, 8)]

    def test_model_checkpoint_round_trip(self, tmp_path):
        model = MilModel(8, SMALL, seed=5)
        save_mil(tmp_path / "m.ckpt", model)
        back = load_mil(tmp_path / "m.ckpt", SMALL)
        x = unit_rows(np.random.default_rng(0), (32, 8))
        assert back.scores(x).tobytes() == model.scores(x).tobytes()
        assert back.weights(x).tobytes() == model.weights(x).tobytes()

    def test_checkpoint_without_regressor(self, tmp_path):
        model = MilModel(8, SMALL)
        save_checkpoint(tmp_path / "a.ckpt", {"attention.fc1": model.attention["fc1"].params})
        with pytest.raises(FormatError, match="regressor"):
            load_mil(tmp_path / "a.ckpt", SMALL)


class TestConfig:
    def test_defaults(self):
        cfg = MilConfig()
        assert (cfg.segments, cfg.lambda1, cfg.regressor_widths, cfg.attention_widths) == (
            32, 8e-5, (512, 32, 1), (256, 64, 1))

    @pytest.mark.parametrize("kw", [{"lambda1": -1.0}, {"segments": 0}, {"mode": "mean"},
                                    {"regressor_widths": (8, 2)}, {"dropout": 1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            MilConfig(**kw)
