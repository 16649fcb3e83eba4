"""Evaluation metrics for prediction sets.

Covers the marginal quantities (coverage, average size), class-conditional
diagnostics (macro coverage, coverage gap, size-stratified violation),
worst-slab coverage over random feature projections, a difficulty-stratified
table, out-of-distribution desiderata statistics, and a one-tailed Welch
test for comparing per-trial set sizes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import betainc

from ._rng import STREAM_WSC, generator
from .conformal import PredictionSet
from .data import LogitDataset
from .errors import DomainError
from .scores import ScoreParams, _free_energy_rows, _softmax_rows

# Size strata reused for the size histogram and the stratified violation;
# mirrors the difficulty strata so the two tables are comparable.
_STRATA = ((0, 1), (2, 3), (4, 6), (7, 10), (11, 100), (101, None))


def default_size_bins(class_count: int) -> tuple[tuple[int, int], ...]:
    """Set-size strata {0-1, 2-3, 4-6, 7-10, 11-100, 101-K}, clipped to K."""
    bins = []
    for lo, hi in _STRATA:
        hi = class_count if hi is None else min(hi, class_count)
        if lo > class_count:
            break
        bins.append((lo, hi))
    return tuple(bins)


@dataclass(frozen=True)
class DifficultyBins:
    """Disjoint rank intervals covering [1, K]."""

    intervals: tuple[tuple[int, int], ...]

    def __post_init__(self):
        iv = tuple((int(a), int(b)) for a, b in self.intervals)
        if not iv:
            raise DomainError("at least one difficulty interval required")
        if iv[0][0] != 1:
            raise DomainError("difficulty intervals must start at rank 1")
        for (a, b), nxt in zip(iv, iv[1:]):
            if b < a or nxt[0] != b + 1:
                raise DomainError("difficulty intervals must be contiguous and increasing")
        if iv[-1][1] < iv[-1][0]:
            raise DomainError("empty final difficulty interval")
        object.__setattr__(self, "intervals", iv)

    @classmethod
    def default(cls, class_count: int) -> "DifficultyBins":
        """Default strata {1-1, 2-3, 4-6, 7-10, 11-100, 101-K}, clipped to K."""
        strata = ((1, 1), (2, 3), (4, 6), (7, 10), (11, 100), (101, None))
        iv = []
        for lo, hi in strata:
            if lo > class_count:
                break
            hi = class_count if hi is None else min(hi, class_count)
            iv.append((lo, hi))
        return cls(intervals=tuple(iv))

    def labels(self) -> list[str]:
        return [f"{a}-{b}" for a, b in self.intervals]


@dataclass
class EvalReport:
    """One trial's metric snapshot, serializable with fixed key names."""

    coverage: float
    avg_size: float
    macro_cov: float
    cov_gap_percent: float
    sscv: float
    wsc: Optional[float]
    wsc_delta: Optional[float]
    per_class_coverage: list[float]
    size_histogram: dict[str, int]
    difficulty_table: list[dict]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "avg_size": self.avg_size,
            "macro_cov": self.macro_cov,
            "cov_gap_percent": self.cov_gap_percent,
            "sscv": self.sscv,
            "wsc": self.wsc,
            "wsc_delta": self.wsc_delta,
            "per_class_coverage": self.per_class_coverage,
            "size_histogram": self.size_histogram,
            "difficulty_table": self.difficulty_table,
            "config": self.config,
        }


# ----------------------------------------------------------------------
# Indicator plumbing
# ----------------------------------------------------------------------

def set_sizes(sets: Sequence[PredictionSet]) -> np.ndarray:
    return np.array([len(s) for s in sets], dtype=np.int64)


def covered_indicator(sets: Sequence[PredictionSet], labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if len(sets) != y.shape[0]:
        raise DomainError(f"{len(sets)} sets but {y.shape[0]} labels")
    return np.array([int(y[i]) in sets[i] for i in range(len(sets))], dtype=bool)


# ----------------------------------------------------------------------
# Coverage family
# ----------------------------------------------------------------------

def empirical_coverage(sets: Sequence[PredictionSet], labels) -> float:
    """Fraction of samples whose true label lies in the prediction set."""
    if len(sets) == 0:
        raise DomainError("empirical_coverage needs at least one sample")
    return float(covered_indicator(sets, labels).mean())


def average_set_size(sets: Sequence[PredictionSet]) -> float:
    if len(sets) == 0:
        raise DomainError("average_set_size needs at least one sample")
    return float(set_sizes(sets).mean())


def per_class_coverage(sets: Sequence[PredictionSet], labels, class_count: int,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """(coverage, count) per class; coverage is NaN where count is 0."""
    y = np.asarray(labels, dtype=np.int64)
    cov = covered_indicator(sets, y).astype(np.float64)
    counts = np.bincount(y, minlength=class_count).astype(np.float64)
    hits = np.bincount(y, weights=cov, minlength=class_count)
    with np.errstate(invalid="ignore"):
        c_y = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return c_y, counts


def _present_class_coverages(sets, labels, class_count) -> np.ndarray:
    c_y, counts = per_class_coverage(sets, labels, class_count)
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        warnings.warn(
            f"classes {absent.tolist()} have no test samples; "
            "excluded from class-conditional metrics",
            UserWarning,
            stacklevel=3,
        )
    return c_y[counts > 0]


def macro_coverage(sets: Sequence[PredictionSet], labels, class_count: int) -> float:
    """Mean of per-class coverages, each class weighted equally. Classes
    absent from ``labels`` are dropped (with a warning) and the divisor
    shrinks accordingly."""
    return float(_present_class_coverages(sets, labels, class_count).mean())


def coverage_gap(sets: Sequence[PredictionSet], labels, class_count: int,
                 alpha: float) -> float:
    """Mean absolute deviation of per-class coverage from 1 - alpha, in
    percent; absent classes are excluded as in :func:`macro_coverage`."""
    c = _present_class_coverages(sets, labels, class_count)
    return float(100.0 * np.abs(c - (1.0 - alpha)).mean())


def size_stratified_coverage_violation(sets: Sequence[PredictionSet], labels,
                                       bins: Sequence[tuple[int, int]],
                                       alpha: float) -> float:
    """Max over nonempty size strata of |stratum coverage - (1 - alpha)|."""
    spans = [(int(a), int(b)) for a, b in bins]
    for (a, b) in spans:
        if b < a:
            raise DomainError(f"empty size stratum ({a}, {b})")
    for (a0, b0) in spans:
        for (a1, b1) in spans:
            if (a0, b0) != (a1, b1) and not (b0 < a1 or b1 < a0):
                raise DomainError("size strata must be disjoint")
    sizes = set_sizes(sets)
    cov = covered_indicator(sets, labels)
    worst = None
    for a, b in spans:
        mask = (sizes >= a) & (sizes <= b)
        if not mask.any():
            continue
        dev = abs(float(cov[mask].mean()) - (1.0 - alpha))
        worst = dev if worst is None else max(worst, dev)
    if worst is None:
        raise DomainError("every size stratum is empty")
    return worst


def worst_slab_coverage(features, sets: Sequence[PredictionSet], labels,
                        delta: float = 0.25, n_directions: int = 100,
                        seed: int = 0) -> float:
    """Worst coverage over projection slabs holding at least ceil(delta*N)
    samples.

    For each random unit direction the samples are sorted by projection and
    every contiguous window of at least ceil(delta*N) samples is scanned
    exactly. A window of length >= 2w splits into two halves of length >=
    w whose coverages bracket its own, so scanning lengths in [w, 2w) finds
    the same minimum as scanning all lengths >= w.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DomainError("features must be an N x d matrix with N >= 2")
    if not 0.0 < delta <= 1.0:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    n = X.shape[0]
    if delta * n < 1.0:
        raise DomainError(f"delta*N = {delta * n} < 1: no admissible slab")
    if n_directions < 1:
        raise DomainError("n_directions must be positive")
    w = int(math.ceil(delta * n))
    cov = covered_indicator(sets, labels).astype(np.float64)
    rng = generator(seed, STREAM_WSC)
    dirs = rng.standard_normal((n_directions, X.shape[1]))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / np.maximum(norms, np.finfo(np.float64).tiny)
    worst = 1.0
    hi = min(2 * w - 1, n)
    for v in dirs:
        # Fixed-order reduction keeps the projection reproducible across
        # thread configurations.
        proj = (X * v).sum(axis=1)
        order = np.argsort(proj, kind="stable")
        prefix = np.concatenate(([0.0], np.cumsum(cov[order])))
        for length in range(w, hi + 1):
            window_cov = (prefix[length:] - prefix[:-length]) / length
            m = float(window_cov.min())
            if m < worst:
                worst = m
        if worst == 0.0:
            break
    return worst


# ----------------------------------------------------------------------
# Stratified and OOD reports
# ----------------------------------------------------------------------

def stratified_report(ds: LogitDataset, params: ScoreParams,
                      sets: Sequence[PredictionSet],
                      bins: Optional[DifficultyBins] = None) -> list[dict]:
    """Per difficulty stratum: sample count, coverage, average set size,
    and mean negative free energy. Difficulty is the rank of the true label
    in the softmax ordering at ``params.T``; energies use ``params.tau``."""
    if bins is None:
        bins = DifficultyBins.default(ds.class_count)
    probs = _softmax_rows(ds.logits, params.T)
    p_true = probs[np.arange(ds.sample_count), ds.labels]
    ranks = (probs >= p_true[:, None]).sum(axis=1)
    neg_f = -_free_energy_rows(ds.logits, params.tau)
    sizes = set_sizes(sets)
    cov = covered_indicator(sets, ds.labels).astype(np.float64)
    table = []
    for (a, b), label in zip(bins.intervals, bins.labels()):
        mask = (ranks >= a) & (ranks <= b)
        count = int(mask.sum())
        row = {"bin": label, "count": count}
        if count:
            row["coverage"] = float(cov[mask].mean())
            row["avg_size"] = float(sizes[mask].mean())
            row["mean_neg_free_energy"] = float(neg_f[mask].mean())
        else:
            row["coverage"] = None
            row["avg_size"] = None
            row["mean_neg_free_energy"] = None
        table.append(row)
    return table


def ood_desiderata_report(sets_id: Sequence[PredictionSet],
                          sets_ood: Sequence[PredictionSet],
                          small_k: int) -> dict:
    """Abstention and size statistics contrasting an in-distribution stream
    with a shifted one: empty-set rates, mean sizes (overall, and over
    nonempty sets only for the shifted stream), and the rate of small
    confident sets 1 <= |C| <= small_k on the shifted stream."""
    if len(sets_id) == 0 or len(sets_ood) == 0:
        raise DomainError("both set lists must be nonempty")
    if small_k < 1:
        raise DomainError("small_k must be positive")
    sz_id = set_sizes(sets_id)
    sz_ood = set_sizes(sets_ood)
    nonempty = sz_ood[sz_ood > 0]
    return {
        "p_empty_id": float((sz_id == 0).mean()),
        "p_empty_ood": float((sz_ood == 0).mean()),
        "mean_size_id": float(sz_id.mean()),
        "mean_size_ood": float(sz_ood.mean()),
        "mean_size_ood_nonempty": float(nonempty.mean()) if nonempty.size else 0.0,
        "p_small_ood": float(((sz_ood >= 1) & (sz_ood <= small_k)).mean()),
        "small_k": int(small_k),
    }


# ----------------------------------------------------------------------
# Welch test
# ----------------------------------------------------------------------

def welch_one_tailed_p(xs, ys) -> float:
    """P-value of the one-tailed Welch test with H1: mean(xs) < mean(ys).

    Uses the Welch t statistic with Welch-Satterthwaite degrees of freedom;
    the t CDF is evaluated through the regularized incomplete beta
    function. Two zero-variance samples with equal means give 0.5 by
    convention; with unequal means the statistic is undefined.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size < 2 or y.size < 2:
        raise DomainError("welch_one_tailed_p needs two samples of size >= 2")
    nx, ny = x.size, y.size
    mx, my = float(x.mean()), float(y.mean())
    vx, vy = float(x.var(ddof=1)), float(y.var(ddof=1))
    if vx == 0.0 and vy == 0.0:
        if mx == my:
            return 0.5
        raise DomainError("both samples have zero variance and unequal means")
    se2 = vx / nx + vy / ny
    t = (mx - my) / math.sqrt(se2)
    df = se2 * se2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1))
    # P(T_df <= t) through I_x(df/2, 1/2) with x = df / (df + t^2).
    xbeta = df / (df + t * t)
    tail = 0.5 * float(betainc(df / 2.0, 0.5, xbeta))
    p = tail if t <= 0 else 1.0 - tail
    # Keep the value inside the open interval so downstream logs stay finite.
    tiny = np.finfo(np.float64).tiny
    return min(max(p, tiny), 1.0 - np.finfo(np.float64).epsneg)


def evaluate_sets(test: LogitDataset, sets: Sequence[PredictionSet],
                  params: ScoreParams, alpha: float,
                  wsc_delta: Optional[float] = None,
                  wsc_directions: int = 100, wsc_seed: int = 0,
                  config: Optional[dict] = None) -> EvalReport:
    """Assemble the full report for one evaluated trial."""
    labels = test.labels
    k = test.class_count
    cov = empirical_coverage(sets, labels)
    avg = average_set_size(sets)
    c_y, _ = per_class_coverage(sets, labels, k)
    macro = macro_coverage(sets, labels, k)
    gap = coverage_gap(sets, labels, k, alpha)
    size_bins = default_size_bins(k)
    sscv = size_stratified_coverage_violation(sets, labels, size_bins, alpha)
    sizes = set_sizes(sets)
    histogram = {
        f"{a}-{b}": int(((sizes >= a) & (sizes <= b)).sum()) for a, b in size_bins
    }
    wsc_val = None
    if wsc_delta is not None:
        wsc_val = worst_slab_coverage(test.logits, sets, labels, delta=wsc_delta,
                                      n_directions=wsc_directions, seed=wsc_seed)
    table = stratified_report(test, params, sets)
    return EvalReport(
        coverage=cov,
        avg_size=avg,
        macro_cov=macro,
        cov_gap_percent=gap,
        sscv=sscv,
        wsc=wsc_val,
        wsc_delta=wsc_delta,
        per_class_coverage=[None if math.isnan(v) else float(v) for v in c_y],
        size_histogram=histogram,
        difficulty_table=table,
        config=dict(config or {}),
    )
