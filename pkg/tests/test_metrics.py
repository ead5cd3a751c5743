import numpy as np
import pytest

from dsbbench import benchmark, metrics, oracle
from dsbbench.cpfield import conditional_log_prob
from dsbbench.rng import RngStream


def test_shape_score_identical_batches():
    rng = np.random.default_rng(0)
    batch = rng.integers(0, 5, (500, 3))
    per_dim, mean = metrics.shape_score(batch, batch.copy(), 5)
    assert np.array_equal(per_dim, np.ones(3))
    assert mean == 1.0


def test_shape_score_disjoint_supports():
    real = np.zeros((100, 1), int)
    pred = np.ones((100, 1), int)
    per_dim, mean = metrics.shape_score(real, pred, 2)
    assert mean == 0.0


def test_shape_score_half_vs_quarter():
    real = np.array([[0]] * 50 + [[1]] * 50)
    pred = np.array([[0]] * 25 + [[1]] * 75)
    _, mean = metrics.shape_score(real, pred, 2)
    assert mean == pytest.approx(0.75, abs=1e-15)


def test_shape_score_empty_batch_rejected():
    with pytest.raises(ValueError):
        metrics.shape_score(np.zeros((0, 2), int), np.zeros((5, 2), int), 3)


def test_trend_score_identical():
    rng = np.random.default_rng(1)
    batch = rng.integers(0, 4, (300, 3))
    per_pair, mean = metrics.trend_score(batch, batch.copy(), 4)
    assert np.array_equal(per_pair, np.ones(3))
    assert mean == 1.0


def test_trend_score_independent_vs_comonotone():
    # identical 50/50 marginals; joints (1/4 each) vs (1/2, 0, 0, 1/2)
    real = np.array([[i, j] for i in (0, 1) for j in (0, 1)] * 25)
    pred = np.array([[0, 0]] * 50 + [[1, 1]] * 50)
    _, mean = metrics.trend_score(real, pred, 2)
    assert mean == pytest.approx(0.5, abs=1e-15)


def test_trend_score_requires_two_dims():
    with pytest.raises(ValueError):
        metrics.trend_score(np.zeros((5, 1), int), np.zeros((5, 1), int), 3)


def test_trend_score_matches_independent_histogram_script():
    # independent reimplementation: dense 2-D histograms via loops
    rng = np.random.default_rng(2)
    real = rng.integers(0, 4, (200, 3))
    pred = rng.integers(0, 4, (150, 3))
    per_pair, mean = metrics.trend_score(real, pred, 4)
    idx = 0
    for i in range(3):
        for j in range(i + 1, 3):
            hr = np.zeros((4, 4))
            for row in real:
                hr[row[i], row[j]] += 1.0 / len(real)
            hp = np.zeros((4, 4))
            for row in pred:
                hp[row[i], row[j]] += 1.0 / len(pred)
            expected = 1.0 - 0.5 * np.abs(hr - hp).sum()
            assert per_pair[idx] == pytest.approx(expected, abs=1e-12)
            idx += 1


def test_scores_symmetric_and_bounded():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = rng.integers(0, 5, (rng.integers(10, 80), 3))
        b = rng.integers(0, 5, (rng.integers(10, 80), 3))
        _, sa = metrics.shape_score(a, b, 5)
        _, sb = metrics.shape_score(b, a, 5)
        assert sa == pytest.approx(sb, abs=1e-14)
        assert 0.0 <= sa <= 1.0
        _, ta = metrics.trend_score(a, b, 5)
        _, tb = metrics.trend_score(b, a, 5)
        assert ta == pytest.approx(tb, abs=1e-14)
        assert 0.0 <= ta <= 1.0


def test_scores_permutation_invariant():
    rng = np.random.default_rng(4)
    a = rng.integers(0, 4, (120, 2))
    b = rng.integers(0, 4, (120, 2))
    _, s1 = metrics.shape_score(a, b, 4)
    _, t1 = metrics.trend_score(a, b, 4)
    perm = rng.permutation(120)
    _, s2 = metrics.shape_score(a[perm], b[rng.permutation(120)], 4)
    _, t2 = metrics.trend_score(a[perm], b, 4)
    assert s1 == pytest.approx(s2, abs=1e-14)
    assert t1 == pytest.approx(t2, abs=1e-14)


@pytest.mark.parametrize("frac", [0.25, 0.5])
def test_monotone_degradation_by_disjoint_replacement(frac):
    # real = pred = 50/50 over {0,1}; replacing a fraction f of pred with
    # category 2 (disjoint support) lowers the score by exactly f
    n = 400
    real = np.array([[0]] * (n // 2) + [[1]] * (n // 2))
    pred = real.copy()
    k = int(frac * n)
    pred[:k] = 2
    _, mean = metrics.shape_score(real, pred, 3)
    assert mean == pytest.approx(1.0 - frac, abs=1e-12)


def test_score_one_iff_identical_histograms():
    real = np.array([[0], [1], [0], [1]])
    pred = np.array([[1], [0], [1], [0]])   # same histogram, different order
    _, mean = metrics.shape_score(real, pred, 2)
    assert mean == 1.0
    pred2 = np.array([[1], [1], [1], [0]])
    _, mean2 = metrics.shape_score(real, pred2, 2)
    assert mean2 < 1.0


def test_unequal_batch_sizes_normalized_separately():
    real = np.array([[0]] * 10 + [[1]] * 10)
    pred = np.array([[0]] * 50 + [[1]] * 50)
    _, mean = metrics.shape_score(real, pred, 2)
    assert mean == 1.0


# -- conditional scores ---------------------------------------------------------

def _tiny_pair():
    return benchmark.generate_pair(2, "uniform", 0.2, seed=0, n_categories=6,
                                   n_steps=4)


def test_conditional_ground_truth_sampler_near_one():
    pair = _tiny_pair()

    def sampler(x0, n, rng):
        return pair.sample_target(rng, np.tile(x0, (n, 1)))

    out = metrics.conditional_scores(pair, sampler, n_x0=30, n_per=400,
                                     stream=RngStream(1))
    assert out["cond_ssm"] >= 0.98
    assert out["cond_tsm"] >= 0.95


def test_conditional_constant_sampler_matches_enumeration():
    # a sampler that always returns one fixed point: the pooled score is
    # 1 - TV(averaged conditional, point mass), computable exactly
    pair = benchmark.generate_pair(1, "uniform", 0.3, seed=1, n_categories=5,
                                   n_steps=3)
    const = np.array([2])

    def sampler(x0, n, rng):
        return np.tile(const, (n, 1))

    n_x0, n_per = 40, 4000
    out = metrics.conditional_scores(pair, sampler, n_x0=n_x0, n_per=n_per,
                                     stream=RngStream(2))
    x0s = pair.sample_source(RngStream(2).child(0).generator(), n_x0)
    states = oracle.enumerate_states(5, 1)
    avg = np.zeros(5)
    for x0 in x0s:
        avg += np.exp(conditional_log_prob(pair.field, pair.proc,
                                           np.tile(x0, (5, 1)), states)) / n_x0
    point = np.eye(5)[2]
    expected = 1.0 - 0.5 * np.abs(avg - point).sum()
    assert out["cond_ssm"] == pytest.approx(expected, abs=0.01)


def test_conditional_scores_deterministic():
    pair = _tiny_pair()

    def sampler(x0, n, rng):
        return pair.sample_target(rng, np.tile(x0, (n, 1)))

    a = metrics.conditional_scores(pair, sampler, 10, 100, RngStream(3))
    b = metrics.conditional_scores(pair, sampler, 10, 100, RngStream(3))
    assert a == b


def test_conditional_sampler_shape_validated():
    pair = _tiny_pair()
    with pytest.raises(ValueError):
        metrics.conditional_scores(pair, lambda x0, n, rng: np.zeros((n, 5), int),
                                   4, 10, RngStream(0))


def test_report_round_trip_and_means():
    report = metrics.MetricsReport(ssm_per_dim=[0.5, 0.7], ssm=0.6,
                                   tsm_per_pair=[0.4], tsm=0.4,
                                   cond_ssm=0.9, cond_tsm=0.8,
                                   counts={"test_rows": 10},
                                   config={"method": "dlightsb"})
    d = report.to_dict()
    assert d["ssm"] == pytest.approx(np.mean(d["ssm_per_dim"]))
    row = report.csv_row()
    assert row["method"] == "dlightsb"
    assert set(metrics.CSV_COLUMNS) >= set(row.keys())
