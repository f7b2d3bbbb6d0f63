import io

import numpy as np
import pytest
from conftest import assert_grad_close, central_difference

from mvgraph.diversity import (
    MetricModel,
    MetricTrainConfig,
    PairBatch,
    PairExample,
    contrastive_loss_grad,
    metric_similar,
    metric_training_pairs,
    novelty_at_k,
    pair_distance,
    read_metric_model,
    recent_categories,
    train_metric,
    write_metric_model,
)
from mvgraph.errors import ConfigError
from mvgraph.ingest import Event
from mvgraph.training import OptimizerConfig


def random_model(rng, d=4, dc=3, margin=1.0):
    return MetricModel(rng.normal(size=(d, d)), rng.normal(size=(dc, dc)), margin)


class TestDistance:
    def test_identical_inputs(self, rng):
        m = random_model(rng)
        x, y = rng.normal(size=4), rng.normal(size=3)
        assert pair_distance(m, x, x, y, y)[2] == 0.0

    def test_identity_metric_is_squared_euclidean(self, rng):
        m = MetricModel.identity(4, 3)
        a, b, c, e = rng.normal(size=4), rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
        _, _, d = pair_distance(m, a, b, c, e)
        assert d == pytest.approx(np.sum((a - b) ** 2) + np.sum((c - e) ** 2), rel=1e-12)

    def test_matches_quadratic_form(self, rng):
        m = random_model(rng)
        a, b, c, e = rng.normal(size=4), rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
        di, dc = a - b, c - e
        expected = di @ (m.L_i.T @ m.L_i) @ di + dc @ (m.L_ic.T @ m.L_ic) @ dc
        assert pair_distance(m, a, b, c, e)[2] == pytest.approx(expected, rel=1e-12)

    def test_symmetric_and_nonnegative(self, rng):
        m = random_model(rng)
        A, B = rng.normal(size=(20, 4)), rng.normal(size=(20, 4))
        C, D = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
        np.testing.assert_allclose(pair_distance(m, A, B, C, D)[2], pair_distance(m, B, A, D, C)[2], rtol=1e-12)
        assert np.all(pair_distance(m, A, B, C, D)[2] >= 0)

    def test_psd_by_construction(self, rng):
        for _ in range(20):
            m = random_model(rng, 5, 5)
            assert np.linalg.eigvalsh(m.M_i).min() >= -1e-10
            assert np.linalg.eigvalsh(m.M_ic).min() >= -1e-10


def fixture(rng, n=6, d=3, dc=2):
    e_i, e_ic = rng.normal(size=(n, d)), rng.normal(size=(n, dc))
    batch = PairBatch(np.array([0, 1, 2, 3]), np.array([1, 2, 4, 5]), np.array([1.0, 0.0, 1.0, 0.0]))
    return e_i, e_ic, batch


class TestContrastive:
    def test_positive_at_zero_distance(self, rng):
        e = np.ones((2, 2))
        loss, _ = contrastive_loss_grad(MetricModel.identity(2, 2), PairBatch(np.array([0]), np.array([1]), np.array([1.0])), e, e)
        assert loss == 0.0

    def test_negative_beyond_margin(self):
        e_i = np.array([[0.0, 0.0], [2.0, 0.0]])
        e_ic = np.zeros((2, 1))
        loss, g = contrastive_loss_grad(MetricModel.identity(2, 1), PairBatch(np.array([0]), np.array([1]), np.array([0.0])), e_i, e_ic)
        assert loss == 0.0 and not np.any(g["L_i"])

    def test_hand_value(self):
        # d = 0.25 for one negative under margin 1: (1 - 0.25)^2 / 2
        e_i = np.array([[0.0], [0.5]])
        loss, _ = contrastive_loss_grad(MetricModel.identity(1, 1), PairBatch(np.array([0]), np.array([1]), np.array([0.0])), e_i, np.zeros((2, 1)))
        assert loss == pytest.approx(0.28125)

    def test_finite_differences(self, rng):
        for _ in range(10):
            m = random_model(rng, 3, 2, margin=float(rng.uniform(2, 8)))
            e_i, e_ic, batch = fixture(rng)
            _, g = contrastive_loss_grad(m, batch, e_i, e_ic)
            f = lambda: contrastive_loss_grad(m, batch, e_i, e_ic)[0]
            assert_grad_close(g["L_i"], central_difference(f, m.L_i))
            assert_grad_close(g["L_ic"], central_difference(f, m.L_ic))

    def test_empty_batch(self, rng):
        e_i, e_ic, _ = fixture(rng)
        with pytest.raises(ConfigError):
            contrastive_loss_grad(random_model(rng, 3, 2), PairBatch(*(np.zeros(0, int),) * 2, np.zeros(0)), e_i, e_ic)


class TestTrainMetric:
    def test_zero_steps_returns_copy(self, rng):
        m = random_model(rng, 3, 2)
        e_i, e_ic, batch = fixture(rng)
        out, hist = train_metric(m, e_i, e_ic, batch, MetricTrainConfig(steps=0))
        np.testing.assert_array_equal(out.L_i, m.L_i)
        assert hist == [] and out.L_i is not m.L_i

    def test_all_positive_shrinks_trace(self, rng):
        e_i, e_ic = rng.normal(size=(10, 3)), rng.normal(size=(10, 2))
        pairs = PairBatch(np.arange(5), np.arange(5, 10), np.ones(5))
        m0 = MetricModel.identity(3, 2)
        cfg = MetricTrainConfig(steps=50, batch_size=5, optimizer=OptimizerConfig("sgd", learning_rate=0.01))
        m1, _ = train_metric(m0, e_i, e_ic, pairs, cfg)
        assert np.trace(m1.M_i) + np.trace(m1.M_ic) < np.trace(m0.M_i) + np.trace(m0.M_ic)

    def test_planted_gap(self, rng):
        # positives differ only in the first coordinate, negatives only in the second
        n = 40
        base = rng.normal(size=(n, 2))
        pos, neg = base.copy(), base.copy()
        pos[:, 0] += rng.normal(0, 1.0, n)
        neg[:, 1] += rng.normal(0, 1.0, n)
        e_i = np.vstack([base, pos, neg])
        e_ic = np.zeros((3 * n, 1))
        idx = np.arange(n)
        pairs = PairBatch(np.concatenate([idx, idx]), np.concatenate([idx + n, idx + 2 * n]), np.r_[np.ones(n), np.zeros(n)])
        m, hist = train_metric(MetricModel.identity(2, 1), e_i, e_ic, pairs, MetricTrainConfig(steps=300, batch_size=2 * n))
        d = pair_distance(m, e_i[pairs.a], e_i[pairs.b], e_ic[pairs.a], e_ic[pairs.b])[2]
        assert d[:n].mean() < d[n:].mean()
        assert hist[-1] < hist[0]

    def test_psd_after_every_step(self, rng):
        e_i, e_ic, batch = fixture(rng)
        eig = []
        train_metric(
            random_model(rng, 3, 2), e_i, e_ic, batch, MetricTrainConfig(steps=30, batch_size=2),
            callback=lambda s, m: eig.append(min(np.linalg.eigvalsh(m.M_i).min(), np.linalg.eigvalsh(m.M_ic).min())),
        )
        assert len(eig) == 30 and min(eig) >= -1e-10


class TestPairs:
    def test_cross_category_positives(self, rng):
        cats = np.array([0, 0, 1, 1])
        pb = metric_training_pairs([np.array([0, 1, 2]), np.array([3, 0])], cats, 2, 4, rng)
        pos = {(a, b) for a, b, y in zip(pb.a, pb.b, pb.y) if y == 1}
        assert pos == {(0, 2), (1, 2), (0, 3)}
        neg = pb.y == 0
        assert neg.sum() == 3 and np.all(pb.a[neg] != pb.b[neg])

    def test_example_validation(self):
        with pytest.raises(ConfigError):
            PairExample(1, 1, 1)
        with pytest.raises(ConfigError):
            PairExample(1, 2, 3)
        pb = PairBatch.from_examples([PairExample(0, 1, 1), PairExample(2, 3, 0)])
        assert pb.y.tolist() == [1.0, 0.0]


class TestNovelty:
    cats = {"a": "X", "b": "Y", "c": "Z", "d": "W"}

    def test_all_seen(self):
        assert novelty_at_k({"u": ["a"]}, {"u": {"X"}}, self.cats) == 0.0

    def test_all_novel(self):
        assert novelty_at_k({"u": ["b", "c"]}, {"u": {"X"}}, self.cats) == 1.0

    def test_three_of_four(self):
        assert novelty_at_k({"u": ["a", "b", "c", "d"]}, {"u": {"X"}}, self.cats) == 0.75

    def test_unknown_item(self):
        with pytest.raises(ConfigError):
            novelty_at_k({"u": ["zz"]}, {}, self.cats)

    def test_recent_categories_window(self):
        day = 86400
        events = [Event("u", "a", 0, "X"), Event("u", "b", 10 * day, "Y"), Event("u", "c", 20 * day, "Z")]
        assert recent_categories(events, 20 * day, 15) == {"u": {"Y"}}


def test_metric_similar_excludes_trigger(rng):
    e_i, e_ic = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    got = metric_similar(MetricModel.identity(2, 2), e_i, e_ic, 0, 3)
    d = np.sum((e_i - e_i[0]) ** 2, 1) + np.sum((e_ic - e_ic[0]) ** 2, 1)
    assert [i for i, _ in got] == list(np.argsort(d, kind="stable")[1:4])


def test_model_roundtrip(rng):
    m = random_model(rng, 3, 2, margin=2.5)
    buf = io.StringIO()
    write_metric_model(buf, m)
    buf.seek(0)
    back = read_metric_model(buf)
    np.testing.assert_array_equal(back.L_i, m.L_i)
    np.testing.assert_array_equal(back.L_ic, m.L_ic)
    assert back.margin == 2.5
