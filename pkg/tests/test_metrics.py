"""Coverage metrics, stratified tables, shift desiderata, and the Welch
test."""

import math

import numpy as np
import pytest

from ecp import (
    DifficultyBins,
    DomainError,
    LogitDataset,
    PredictionSet,
    ScoreParams,
    average_set_size,
    coverage_gap,
    default_size_bins,
    empirical_coverage,
    evaluate_sets,
    macro_coverage,
    ood_desiderata_report,
    size_stratified_coverage_violation,
    stratified_report,
    welch_one_tailed_p,
    worst_slab_coverage,
)


def sets_of(*label_tuples):
    return [PredictionSet(labels=t) for t in label_tuples]


def test_coverage_and_size_examples():
    sets = sets_of((0,), (0, 1), (1,), (2,))
    labels = [0, 1, 0, 2]
    assert empirical_coverage(sets, labels) == 0.75, "3 of 4 covered"
    assert average_set_size(sets) == 1.25


def test_macro_coverage_weights_classes_equally():
    # Class 0: one sample, covered. Class 1: two samples, one covered.
    # The sample mean is 2/3 but the class mean is (1.0 + 0.5)/2.
    sets = sets_of((0,), (1,), (0,))
    labels = [0, 1, 1]
    assert empirical_coverage(sets, labels) == pytest.approx(2 / 3)
    assert macro_coverage(sets, labels, class_count=2) == 0.75


def test_macro_coverage_warns_on_absent_class():
    sets = sets_of((0,), (1,))
    labels = [0, 1]
    with pytest.warns(UserWarning, match="no test samples"):
        got = macro_coverage(sets, labels, class_count=3)
    assert got == 1.0, "absent class must not drag the mean down"


def test_coverage_gap_example():
    # Per-class coverages 1.0 and 0.5 at alpha=0.1: deviations 0.1 and 0.4.
    sets = sets_of((0,), (1,), (0,))
    labels = [0, 1, 1]
    got = coverage_gap(sets, labels, class_count=2, alpha=0.1)
    assert got == pytest.approx(25.0), f"expected 25 percent, got {got}"


def test_default_size_bins_clip_to_class_count():
    assert default_size_bins(5) == ((0, 1), (2, 3), (4, 5))
    assert default_size_bins(10) == ((0, 1), (2, 3), (4, 6), (7, 10))
    assert default_size_bins(150)[-1] == (101, 150)
    assert default_size_bins(1) == ((0, 1),)


def test_sscv_example():
    sets = sets_of((0,), (1,), (0, 1), (1, 2))
    labels = [0, 0, 0, 1]
    got = size_stratified_coverage_violation(sets, labels,
                                             bins=((0, 1), (2, 3)), alpha=0.1)
    # Singleton stratum covers 0.5 (off by 0.4); pair stratum covers 1.0
    # (off by 0.1).
    assert got == pytest.approx(0.4)


def test_sscv_skips_empty_strata():
    sets = sets_of((0,), (1,))
    labels = [0, 0]
    got = size_stratified_coverage_violation(sets, labels,
                                             bins=((0, 1), (2, 3)), alpha=0.5)
    assert got == pytest.approx(0.0), "only the populated stratum counts"


def test_sscv_rejects_bad_strata():
    sets = sets_of((0,), (1,))
    labels = [0, 0]
    with pytest.raises(DomainError):
        size_stratified_coverage_violation(sets, labels,
                                           bins=((0, 2), (2, 3)), alpha=0.1)
    with pytest.raises(DomainError):
        size_stratified_coverage_violation(sets, labels,
                                           bins=((3, 2),), alpha=0.1)
    with pytest.raises(DomainError):
        size_stratified_coverage_violation(sets, labels,
                                           bins=((5, 9),), alpha=0.1)


def test_wsc_finds_uncovered_slab():
    feats = np.array([[0.0], [1.0], [2.0], [3.0]])
    sets = sets_of((0,), (0,), (1,), (1,))
    labels = [0, 0, 0, 0]
    got = worst_slab_coverage(feats, sets, labels, delta=0.5, seed=0)
    assert got == 0.0, "the two right-most samples form an uncovered slab"


def test_wsc_at_full_delta_is_marginal_coverage():
    rng = np.random.default_rng(3)
    feats = rng.standard_normal((40, 3))
    labels = rng.integers(0, 2, 40)
    sets = [PredictionSet(labels=(int(l),)) if i % 3 else PredictionSet(labels=())
            for i, l in enumerate(labels)]
    got = worst_slab_coverage(feats, sets, labels, delta=1.0, seed=7)
    assert got == empirical_coverage(sets, labels), \
        "a slab holding every sample is the whole sample"


def test_wsc_validation():
    feats = np.zeros((4, 2))
    sets = sets_of((0,), (0,), (0,), (0,))
    labels = [0, 0, 0, 0]
    with pytest.raises(DomainError):
        worst_slab_coverage(feats, sets, labels, delta=0.0)
    with pytest.raises(DomainError):
        worst_slab_coverage(feats, sets, labels, delta=1.5)
    with pytest.raises(DomainError):
        worst_slab_coverage(feats[:1], sets[:1], labels[:1], delta=1.0)


def test_wsc_never_above_any_window():
    rng = np.random.default_rng(11)
    feats = rng.standard_normal((60, 2))
    labels = rng.integers(0, 3, 60)
    sets = [PredictionSet(labels=tuple(sorted(set([int(l)] if rng.random() < 0.8 else []))))
            for l in labels]
    wsc = worst_slab_coverage(feats, sets, labels, delta=0.3, seed=5)
    assert wsc <= empirical_coverage(sets, labels) + 1e-12


def test_ood_desiderata_example():
    sets_id = sets_of((0, 1), (0, 1))
    sets_ood = sets_of((), (), (0, 1), (0, 1, 2, 3, 4))
    got = ood_desiderata_report(sets_id, sets_ood, small_k=2)
    assert got["p_empty_id"] == 0.0
    assert got["p_empty_ood"] == 0.5
    assert got["mean_size_id"] == 2.0
    assert got["mean_size_ood"] == 1.75
    assert got["mean_size_ood_nonempty"] == 3.5
    assert got["p_small_ood"] == 0.25, "only the size-2 set is small and nonempty"
    assert got["small_k"] == 2


def test_ood_desiderata_validation():
    with pytest.raises(DomainError):
        ood_desiderata_report([], sets_of((0,)), small_k=1)
    with pytest.raises(DomainError):
        ood_desiderata_report(sets_of((0,)), sets_of((0,)), small_k=0)


def rank_planted_dataset(ranks, class_count):
    """Logits strictly decreasing in class index, so label j has rank j+1."""
    logits = np.tile(-np.arange(class_count, dtype=np.float64), (len(ranks), 1))
    labels = np.array([r - 1 for r in ranks])
    return LogitDataset(class_count=class_count, labels=labels, logits=logits)


def test_stratified_report_bins_by_true_label_rank():
    ranks = [1, 2, 5, 8, 50, 500]
    ds = rank_planted_dataset(ranks, class_count=1000)
    sets = [PredictionSet(labels=(int(y),)) for y in ds.labels]
    table = stratified_report(ds, ScoreParams(base_kind="lac"), sets)
    assert [row["bin"] for row in table] == \
        ["1-1", "2-3", "4-6", "7-10", "11-100", "101-1000"]
    assert [row["count"] for row in table] == [1, 1, 1, 1, 1, 1]
    for row in table:
        assert row["coverage"] == 1.0
        assert row["avg_size"] == 1.0
        assert row["mean_neg_free_energy"] is not None


def test_stratified_report_empty_bins_are_null():
    ds = rank_planted_dataset([1], class_count=10)
    sets = [PredictionSet(labels=(0,))]
    table = stratified_report(ds, ScoreParams(base_kind="lac"), sets)
    assert table[0]["count"] == 1 and table[0]["coverage"] == 1.0
    for row in table[1:]:
        assert row["count"] == 0
        assert row["coverage"] is None and row["avg_size"] is None


def test_difficulty_bins_validation():
    with pytest.raises(DomainError):
        DifficultyBins(intervals=())
    with pytest.raises(DomainError):
        DifficultyBins(intervals=((2, 3),))
    with pytest.raises(DomainError):
        DifficultyBins(intervals=((1, 1), (3, 4)))
    with pytest.raises(DomainError):
        DifficultyBins(intervals=((1, 0),))
    bins = DifficultyBins(intervals=((1, 1), (2, 10)))
    assert bins.labels() == ["1-1", "2-10"]


def t_cdf_oracle(t, df):
    """P(T_df <= t) by trapezoid integration of the density."""
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2))
    c /= math.sqrt(df * math.pi)
    grid = np.linspace(0.0, abs(t), 200001)
    pdf = c * (1.0 + grid * grid / df) ** (-(df + 1) / 2)
    half = float(np.trapezoid(pdf, grid))
    return 0.5 - half if t <= 0 else 0.5 + half


def welch_oracle(xs, ys):
    x = np.asarray(xs, float)
    y = np.asarray(ys, float)
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    nx, ny = x.size, y.size
    se2 = vx / nx + vy / ny
    t = (x.mean() - y.mean()) / math.sqrt(se2)
    df = se2 ** 2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1))
    return t_cdf_oracle(t, df)


@pytest.mark.parametrize("case", [
    ([1.0, 2.0, 3.0, 4.0], [2.5, 3.5, 4.5, 5.5]),
    ([0.1, 0.2, 0.15], [0.1, 0.25, 0.12, 0.3]),
    ([10.0, 11.0, 9.0, 10.5, 9.5], [10.2, 10.8, 9.9]),
    ([-3.0, -2.0], [5.0, 6.0, 7.0]),
])
def test_welch_p_matches_integration_oracle(case):
    xs, ys = case
    got = welch_one_tailed_p(xs, ys)
    want = welch_oracle(xs, ys)
    assert got == pytest.approx(want, abs=1e-7), f"{got} vs oracle {want}"


def test_welch_p_direction_and_antisymmetry():
    rng = np.random.default_rng(0)
    xs = rng.normal(0.0, 1.0, 30)
    ys = rng.normal(1.5, 1.0, 30)
    p_small = welch_one_tailed_p(xs, ys)
    p_large = welch_one_tailed_p(ys, xs)
    assert p_small < 0.01, "clearly smaller mean must give a small p"
    assert p_large > 0.99
    assert abs(p_small + p_large - 1.0) < 1e-9, \
        f"swap must reflect the p-value: {p_small} + {p_large}"


def test_welch_p_identical_samples_is_half():
    xs = [1.0, 2.0, 3.0]
    assert welch_one_tailed_p(xs, xs) == 0.5


def test_welch_p_zero_variance_cases():
    assert welch_one_tailed_p([2.0, 2.0], [2.0, 2.0]) == 0.5
    with pytest.raises(DomainError):
        welch_one_tailed_p([1.0, 1.0], [2.0, 2.0])


def test_welch_p_stays_inside_open_interval():
    p = welch_one_tailed_p([0.0, 1e-12, 2e-12], [1e9, 1e9 + 1, 1e9 + 2])
    assert 0.0 < p < 1.0
    q = welch_one_tailed_p([1e9, 1e9 + 1, 1e9 + 2], [0.0, 1e-12, 2e-12])
    assert 0.0 < q < 1.0


def test_welch_p_needs_two_per_sample():
    with pytest.raises(DomainError):
        welch_one_tailed_p([1.0], [1.0, 2.0])


def eval_fixture(n=400, k=6, seed=0):
    rng = np.random.default_rng(seed)
    ds = LogitDataset(class_count=k, labels=rng.integers(0, k, n),
                      logits=rng.standard_normal((n, k)))
    sets = []
    for i in range(n):
        members = {int(ds.labels[i])} if rng.random() < 0.9 else set()
        members |= {int(c) for c in rng.integers(0, k, rng.integers(0, 3))}
        sets.append(PredictionSet(labels=tuple(sorted(members))))
    return ds, sets


def test_evaluate_sets_report_shape():
    ds, sets = eval_fixture()
    report = evaluate_sets(ds, sets, ScoreParams(base_kind="aps"), alpha=0.1,
                           config={"variant": "aps"})
    doc = report.to_dict()
    assert set(doc) == {
        "coverage", "avg_size", "macro_cov", "cov_gap_percent", "sscv",
        "wsc", "wsc_delta", "per_class_coverage", "size_histogram",
        "difficulty_table", "config",
    }
    assert doc["wsc"] is None and doc["wsc_delta"] is None
    assert doc["config"] == {"variant": "aps"}
    assert len(doc["per_class_coverage"]) == 6
    assert sum(doc["size_histogram"].values()) == 400
    assert doc["coverage"] == empirical_coverage(sets, ds.labels)


def test_evaluate_sets_wsc_delta_one_equals_coverage():
    ds, sets = eval_fixture(n=120, seed=4)
    report = evaluate_sets(ds, sets, ScoreParams(base_kind="lac"), alpha=0.1,
                           wsc_delta=1.0)
    assert report.wsc == report.coverage, \
        "a slab that must hold every sample is the marginal estimate"


def test_count_weighted_strata_reproduce_marginal():
    ds, sets = eval_fixture(n=600, k=8, seed=9)
    report = evaluate_sets(ds, sets, ScoreParams(base_kind="aps"), alpha=0.1)
    cov = report.coverage
    # Per-class weighting.
    counts = np.bincount(ds.labels, minlength=8).astype(float)
    per_class = np.array([c if c is not None else 0.0
                          for c in report.per_class_coverage])
    recon = float((per_class * counts).sum() / counts.sum())
    assert abs(recon - cov) < 1e-12, f"class-weighted {recon} vs {cov}"
    # Difficulty-bin weighting.
    num = sum(row["coverage"] * row["count"] for row in report.difficulty_table
              if row["count"])
    den = sum(row["count"] for row in report.difficulty_table)
    assert den == ds.sample_count
    assert abs(num / den - cov) < 1e-12, f"bin-weighted {num / den} vs {cov}"
