import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from kermtkit.errors import DegenerateVariance, EmptyTrainSet, TaskMismatch, TooFewCoObserved
from kermtkit.evaluation import (
    MetricReport,
    assign_bins,
    build_report,
    categorical_enrichment,
    cross_task_correlation,
    delta_report,
    fingerprints_for,
    pearson_r2,
    regression_metrics,
    similarity_binned_metrics,
    spearman,
    task_metrics,
)
from kermtkit.train import SparseTaskTable


def test_pearson_examples():
    y = np.array([1.0, 3.0, 2.0, 5.0])
    assert pearson_r2(y, y) == 1.0
    assert pearson_r2(y, -y) == 1.0
    # cov = 4/3*..., hand: r^2 = 48/52
    assert pearson_r2([0, 1, 2], [0, 1, 4]) == pytest.approx(12 / 13, abs=1e-12)
    assert round(pearson_r2([0, 1, 2], [0, 1, 4]), 4) == 0.9231
    with pytest.raises(DegenerateVariance):
        pearson_r2([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateVariance):
        pearson_r2([1], [1])


def test_regression_examples():
    y = np.array([1.0, 2.0, 4.0, 7.0])
    assert regression_metrics(y, y) == (1.0, 0.0, 0.0)
    r2, _, _ = regression_metrics(y, np.full(4, y.mean()))
    assert r2 == 0.0
    # 4-point hand example: residuals 0.5, -0.5, 1, -1
    r2, mae, rmse = regression_metrics(y, [0.5, 2.5, 3.0, 8.0])
    assert r2 == pytest.approx(1 - 2.5 / 21.0, abs=1e-12)
    assert mae == pytest.approx(0.75, abs=1e-12)
    assert rmse == pytest.approx(math.sqrt(2.5 / 4), abs=1e-12)


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    a, b = [1, 1, 2, 2, 2, 3], [5, 4, 4, 4, 1, 1]
    assert spearman(a, b) == pytest.approx(oracles.spearman(a, b), abs=1e-12)
    with pytest.raises(TooFewCoObserved):
        spearman([1, 2], [2, 1])


def _instances(seed, count=100):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(3, 60))
        y = rng.normal(size=n)
        if rng.random() < 0.3:
            y = np.round(y)  # ties
        p = 0.7 * y + rng.normal(scale=0.5, size=n)
        if np.ptp(y) == 0 or np.ptp(p) == 0:
            continue
        yield y, p


def test_metrics_match_brute_force_on_100_instances():
    checked = 0
    for y, p in _instances(0):
        yl, pl = y.tolist(), p.tolist()
        assert abs(pearson_r2(y, p) - oracles.pearson_r2(yl, pl)) < 1e-9
        assert abs(spearman(y, p) - oracles.spearman(yl, pl)) < 1e-9
        for got, want in zip(regression_metrics(y, p), oracles.r2_mae_rmse(yl, pl)):
            assert abs(got - want) < 1e-9
        # second, library oracle
        assert abs(spearman(y, p) - stats.spearmanr(y, p).statistic) < 1e-9
        assert abs(pearson_r2(y, p) - stats.pearsonr(y, p).statistic ** 2) < 1e-9
        checked += 1
    assert checked >= 95


def test_enrichment_matches_brute_force_on_100_instances(rng):
    for _ in range(100):
        n = int(rng.integers(1, 50))
        y, p = rng.uniform(0.5, 4.5, n), rng.uniform(0.5, 4.5, n)
        got = categorical_enrichment(y, p, (2.0, 3.0))
        assert np.max(np.abs(got - np.array(oracles.enrichment(y, p, 2.0, 3.0)))) < 1e-9


def test_enrichment_examples():
    y = np.array([1.0, 2.5, 3.5])
    assert np.array_equal(categorical_enrichment(y, y), np.eye(3))
    one_col = categorical_enrichment(y, np.full(3, 2.5))
    assert one_col[:, 1].tolist() == pytest.approx([1 / 3] * 3) and one_col[:, [0, 2]].sum() == 0
    # 9 constructed points: predicted high = {h,h,m}, medium = {m,m,l}, low = {l,l,h}
    true = [1.0, 1.5, 2.5, 2.2, 2.9, 3.1, 3.5, 4.0, 0.5]
    pred = [1.0, 1.2, 1.9, 2.5, 2.6, 2.7, 3.5, 3.6, 3.7]
    expected = np.array([[2 / 3, 0, 1 / 3], [1 / 3, 2 / 3, 0], [0, 1 / 3, 2 / 3]])
    assert np.allclose(categorical_enrichment(true, pred), expected, rtol=0, atol=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=30), st.floats(0.1, 5), st.floats(-5, 5))
def test_pearson_affine_invariance(xs, slope, shift):
    y = np.array(xs)
    p = np.sin(y * 3) + y
    if np.ptp(y) < 1e-6 or np.ptp(p) < 1e-6:
        return
    base = pearson_r2(y, p)
    for s in (slope, -slope):
        assert pearson_r2(y, s * p + shift) == pytest.approx(base, abs=1e-9)


def test_similarity_bins_match_naive_oracle(synthetic):
    smiles = synthetic.smiles
    test_fps = fingerprints_for(smiles[:100])
    train_fps = fingerprints_for(smiles[100:400])
    y = np.arange(100, dtype=float)
    bins, idx = similarity_binned_metrics(test_fps, y, y, train_fps)
    edges = [0.0, 0.3, 0.4, 0.5, 0.6, 0.7, 1.0]
    tb = [fp.bits for fp in train_fps]
    for i, fp in enumerate(test_fps):
        best = max(oracles.tanimoto_bits(fp.bits, t) for t in tb)
        assert idx[i] == oracles.similarity_bin(best, edges)
    assert sum(b.n for b in bins) == 100
    assert all(b.flagged == (b.n < 10) for b in bins)


def test_similarity_bins_edge_cases(synthetic):
    fps = fingerprints_for(synthetic.smiles[:30])
    y = np.arange(30, dtype=float)
    _, idx = similarity_binned_metrics(fps, y, y, fps)
    assert np.all(idx == 5)
    with pytest.raises(EmptyTrainSet):
        similarity_binned_metrics(fps, y, y, [])
    assert assign_bins([0.0, 0.3, 0.999, 1.0], [0.0, 0.3, 0.4, 1.0]).tolist() == [0, 1, 2, 2]


def test_cross_task_correlation(rng):
    x = rng.normal(size=200)
    values = np.column_stack([x, x, rng.normal(size=200), rng.normal(size=200)])
    values[:170, 3] = np.nan
    c = cross_task_correlation(SparseTaskTable(values, ["a", "b", "c", "d"]), min_overlap=30)
    assert c.rho[0, 1] == pytest.approx(1.0)
    assert abs(c.rho[0, 2]) < 0.3
    assert c.overlap[0, 3] == 30 and np.isfinite(c.rho[0, 3])
    assert c.max_abs[0] == pytest.approx(1.0)
    values[:171, 3] = np.nan
    c2 = cross_task_correlation(SparseTaskTable(values, ["a", "b", "c", "d"]), min_overlap=30)
    assert np.isnan(c2.rho[0, 3])


def test_cross_task_hand_table():
    nan = np.nan
    values = np.array([[1, 2, nan], [2, 1, 3], [3, 4, 1], [4, 3, 2], [5, 5, nan], [nan, 6, 5]], dtype=float)
    c = cross_task_correlation(SparseTaskTable(values, ["a", "b", "c"]), min_overlap=3)
    assert c.rho[0, 1] == pytest.approx(oracles.spearman([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]))
    assert c.rho[0, 2] == pytest.approx(oracles.spearman([2, 3, 4], [3, 1, 2]))
    assert c.rho[1, 2] == pytest.approx(oracles.spearman([1, 4, 3, 6], [3, 1, 2, 5]))
    assert c.max_abs[2] == pytest.approx(max(abs(c.rho[2, 0]), abs(c.rho[2, 1])))


def test_task_metrics_ensemble_spread(rng):
    y = rng.normal(size=40)
    members = np.stack([y + rng.normal(scale=s, size=40) for s in (0.2, 0.4, 0.6, 0.8)])
    tm = task_metrics("t", y, members)
    per = [oracles.pearson_r2(y.tolist(), m.tolist()) for m in members]
    mu = sum(per) / 4
    sd = math.sqrt(sum((v - mu) ** 2 for v in per) / 3)
    assert tm.member_std == pytest.approx(sd, abs=1e-12)
    assert tm.member_se == pytest.approx(sd / 2, abs=1e-12)
    assert tm.pearson_r2 == pytest.approx(oracles.pearson_r2(y.tolist(), members.mean(0).tolist()), abs=1e-12)
    assert tm.n_test == 40


def test_report_round_trip(rng, synthetic):
    y = rng.normal(size=(30, 2))
    y[::4, 1] = np.nan
    members = y[None] + rng.normal(scale=0.3, size=(4, 30, 2))
    fps = fingerprints_for(synthetic.smiles[:30])
    train = fingerprints_for(synthetic.smiles[30:90])
    rep = build_report(["a", "b"], y, members, fps, train, potency_edges=(0.0, 1.0))
    assert rep.task("b").n_test == 22
    back = MetricReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json() and back.to_csv() == rep.to_csv()
    header = rep.to_csv().splitlines()[0].split(",")
    assert header[:9] == ["task", "n_test", "pearson_r2", "r2", "mae", "rmse", "member_mean", "member_std", "member_se"]
    assert "np." not in rep.to_csv()


def _report(member_r2):
    from kermtkit.evaluation import TaskMetrics

    return MetricReport([TaskMetrics("t", 10, None, None, None, None, list(member_r2), None, None)])


def test_delta_report():
    same = _report([0.5, 0.52, 0.48, 0.5])
    d = delta_report(same, same)[0]
    assert d.delta == 0 and not d.a_better and not d.b_better
    a = [0.80, 0.82, 0.78, 0.80]
    b = [0.50, 0.55, 0.45, 0.50]
    d = delta_report(_report(a), _report(b))[0]
    assert d.delta == pytest.approx(0.30) and d.a_better and not d.b_better
    sa, sb = np.std(a, ddof=1), np.std(b, ddof=1)
    assert d.standard_error == pytest.approx(math.sqrt(sa**2 / 4 + sb**2 / 4), abs=1e-12)
    with pytest.raises(TaskMismatch):
        delta_report(_report(a), MetricReport([]))
    with pytest.raises(TaskMismatch):
        delta_report(_report(a), _report(b[:3]))
