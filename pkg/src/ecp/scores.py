"""Pointwise scoring: temperature softmax, free energy, entropy, rank, the
four base nonconformity scores, and their energy / entropy / prevalence
variants.

All scores follow the "lower is more conforming" convention. The four base
kinds:

* ``lac``   least-ambiguous classifier, 1 - pi_y (its scaled variants use
  the bias-free form -pi_y; see :class:`ScoreParams.lac_form`)
* ``aps``   adaptive prediction sets, sum of strictly-larger probabilities
  plus u * pi_y
* ``raps``  aps plus a rank penalty lambda * (rank - k_reg)^+
* ``saps``  u * pi_max for the top-ranked label, else
  pi_max + (rank - 2 + u) * lambda

Energy scaling multiplies adaptive scores (divides ``lac``) by
G(x) = (1/beta) * log(1 + exp(-beta * F(x))), a softplus of the negative
free energy; entropy scaling divides adaptive scores (multiplies ``lac``)
by the Shannon entropy of the softmax; prevalence adjustment divides
``lac`` scores (multiplies adaptive ones) by the class prior.

Randomization draws one uniform u per sample, shared by all K candidate
labels of that sample, from a counter-based stream keyed by
(seed, sample index) so results do not depend on execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from ._rng import STREAM_CAL_U, uniform_block
from .data import ClassPriors, LogitDataset
from .errors import DegenerateInputError, DomainError

BaseKind = Literal["lac", "aps", "raps", "saps"]
Modulation = Optional[Literal["energy", "entropy"]]

_KINDS = ("lac", "aps", "raps", "saps")
_ADAPTIVE = ("aps", "raps", "saps")


@dataclass(frozen=True)
class ScoreParams:
    """Score kind plus every temperature, penalty, and modulation switch.

    ``fixed_u`` overrides the per-sample uniform with a constant (0 or 1
    are the useful values) for debugging; leave None for the randomized
    scores that the guarantees are stated for.
    """

    base_kind: BaseKind = "lac"
    T: float = 1.0
    tau: float = 1.0
    beta: float = 1.0
    raps_lambda: float = 0.2
    raps_kreg: int = 2
    saps_lambda: float = 0.2
    modulation: Modulation = None
    priors: Optional[ClassPriors] = None
    fixed_u: Optional[float] = None

    def __post_init__(self):
        if self.base_kind not in _KINDS:
            raise DomainError(f"unknown base_kind {self.base_kind!r}")
        for name in ("T", "tau", "beta"):
            v = float(getattr(self, name))
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be a positive finite real, got {v}")
            object.__setattr__(self, name, v)
        if self.modulation not in (None, "energy", "entropy"):
            raise DomainError(f"unknown modulation {self.modulation!r}")
        if float(self.raps_lambda) < 0:
            raise DomainError("raps_lambda must be nonnegative")
        if int(self.raps_kreg) < 1:
            raise DomainError("raps_kreg must be a positive integer")
        if self.base_kind == "saps" and not float(self.saps_lambda) > 0:
            raise DomainError("saps_lambda must be positive for saps scoring")
        if self.priors is not None and not self.priors.strictly_positive:
            raise DomainError(
                "prevalence adjustment requires strictly positive priors; "
                f"classes {self.priors.zero_classes} have prior 0"
            )
        if self.fixed_u is not None and not 0.0 <= float(self.fixed_u) <= 1.0:
            raise DomainError("fixed_u must lie in [0, 1]")
        object.__setattr__(self, "raps_lambda", float(self.raps_lambda))
        object.__setattr__(self, "raps_kreg", int(self.raps_kreg))
        object.__setattr__(self, "saps_lambda", float(self.saps_lambda))

    @property
    def lac_form(self) -> str:
        """Which lac variant is in effect: the reported baseline uses
        ``1 - pi``; every scaled or prevalence-adjusted variant uses the
        bias-free ``-pi`` form."""
        if self.modulation is not None or self.priors is not None:
            return "negative-pi"
        return "one-minus-pi"

    @property
    def is_adaptive(self) -> bool:
        return self.base_kind in _ADAPTIVE


@dataclass(frozen=True)
class ScoredSample:
    """All K label scores of one sample plus its pointwise statistics."""

    scores: np.ndarray
    free_energy: float
    entropy: float
    u: float

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise DomainError("scores must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)


# ----------------------------------------------------------------------
# Pointwise quantities
# ----------------------------------------------------------------------

def softmax_with_temperature(logit_row, T: float) -> np.ndarray:
    """Softmax of a logit row at temperature T, via max-subtraction."""
    if not T > 0:
        raise DomainError(f"temperature must be positive, got {T}")
    z = np.asarray(logit_row, dtype=np.float64) / T
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def free_energy(logit_row, tau: float) -> float:
    """F = -tau * log sum_k exp(f_k / tau), computed via max-subtraction.

    Satisfies max_k f_k <= -F <= max_k f_k + tau * log K.
    """
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    z = np.asarray(logit_row, dtype=np.float64) / tau
    m = z.max()
    return float(-tau * (m + math.log(np.exp(z - m).sum())))


def softplus_scale(F: float, beta: float) -> float:
    """G = (1/beta) * log(1 + exp(-beta * F)) in overflow-safe branch form.

    The result is clamped to the smallest positive normal so it stays
    strictly positive even where the exponential underflows.
    """
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    z = -beta * float(F)
    if z > 0:
        g = (z + math.log1p(math.exp(-z))) / beta
    else:
        g = math.log1p(math.exp(z)) / beta
    return max(g, np.finfo(np.float64).tiny)


def shannon_entropy(probs) -> float:
    """H = -sum p_k log p_k with 0 log 0 taken as 0; lies in [0, log K]."""
    p = np.asarray(probs, dtype=np.float64)
    mask = p > 0
    return float(-(p[mask] * np.log(p[mask])).sum())


def label_rank(probs, y: int) -> int:
    """Rank of label y in the probability ordering: |{k : pi_k >= pi_y}|.

    Ties count, so tied labels share a rank; the best possible rank is 1.
    """
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= y < p.shape[0]:
        raise DomainError(f"label {y} outside [0, {p.shape[0]})")
    return int((p >= p[y]).sum())


# ----------------------------------------------------------------------
# Base scores and their variants (single sample)
# ----------------------------------------------------------------------

def base_score(probs, y: int, u: float, params: ScoreParams) -> float:
    """Score of label y for one sample under the configured base kind."""
    if not 0.0 <= u < 1.0:
        raise DomainError(f"u must lie in [0, 1), got {u}")
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= y < p.shape[0]:
        raise DomainError(f"label {y} outside [0, {p.shape[0]})")
    kind = params.base_kind
    if kind == "lac":
        if params.lac_form == "negative-pi":
            return float(-p[y])
        return float(1.0 - p[y])
    if kind == "aps":
        return float(p[p > p[y]].sum() + u * p[y])
    rank = label_rank(p, y)
    if kind == "raps":
        aps = float(p[p > p[y]].sum() + u * p[y])
        return aps + params.raps_lambda * max(rank - params.raps_kreg, 0)
    # saps
    p_max = float(p.max())
    if rank == 1:
        return u * p_max
    return p_max + (rank - 2 + u) * params.saps_lambda


def modulated_score(s: float, kind: BaseKind, F: float, entropy: float,
                    params: ScoreParams) -> float:
    """Apply the configured scaling to a base score.

    Energy mode multiplies adaptive scores by G(x) and divides ``lac`` by
    it; entropy mode divides adaptive scores by H(x) and multiplies ``lac``
    by it. Entropy mode refuses H = 0 for adaptive kinds: the scaled score
    is undefined on a one-hot softmax.
    """
    if params.modulation is None:
        raise DomainError("modulated_score requires modulation set on params")
    if params.modulation == "energy":
        g = softplus_scale(F, params.beta)
        if kind == "lac":
            return float(s / g)
        return float(s * g)
    # entropy
    if kind == "lac":
        return float(s * entropy)
    if entropy <= 0.0:
        raise DegenerateInputError(
            "entropy scaling of an adaptive score is undefined for a "
            "zero-entropy (one-hot) softmax"
        )
    return float(s / entropy)


def prevalence_adjusted_score(s: float, y: int, priors: ClassPriors,
                              kind: BaseKind) -> float:
    """Prevalence adjustment: ``lac`` scores (in -pi form) are divided by
    the class prior, adaptive scores are multiplied by it."""
    p_y = float(priors.p[y])
    if p_y <= 0.0:
        raise DomainError(f"class {y} has prior 0; prevalence adjustment undefined")
    if kind == "lac":
        return float(s / p_y)
    return float(s * p_y)


# ----------------------------------------------------------------------
# Vectorized scoring over a dataset
# ----------------------------------------------------------------------

def _softmax_rows(logits: np.ndarray, T: float) -> np.ndarray:
    z = logits / T
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _free_energy_rows(logits: np.ndarray, tau: float) -> np.ndarray:
    z = logits / tau
    m = z.max(axis=1)
    return -tau * (m + np.log(np.exp(z - m[:, None]).sum(axis=1)))


def _entropy_rows(probs: np.ndarray) -> np.ndarray:
    plogp = np.zeros_like(probs)
    mask = probs > 0
    plogp[mask] = probs[mask] * np.log(probs[mask])
    return -plogp.sum(axis=1)


def _softplus_scale_rows(F: np.ndarray, beta: float) -> np.ndarray:
    z = -beta * F
    g = (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / beta
    return np.maximum(g, np.finfo(np.float64).tiny)


def _tie_grouped_stats(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per element of each row: the sum of row entries <= that value, and
    the count of entries strictly smaller. Exact under ties."""
    n, k = probs.shape
    order = np.argsort(probs, axis=1, kind="stable")
    sp = np.take_along_axis(probs, order, axis=1)
    le_sum_sorted = np.cumsum(sp, axis=1)
    lt_count_sorted = np.broadcast_to(np.arange(k), (n, k)).copy()
    # Tie groups must share one value: the last cumulative sum of the group
    # (backward pass) and the first index of the group (forward pass).
    for j in range(k - 2, -1, -1):
        tie = sp[:, j] == sp[:, j + 1]
        le_sum_sorted[tie, j] = le_sum_sorted[tie, j + 1]
    for j in range(1, k):
        tie = sp[:, j] == sp[:, j - 1]
        lt_count_sorted[tie, j] = lt_count_sorted[tie, j - 1]
    le_sum = np.empty_like(probs)
    lt_count = np.empty((n, k), dtype=np.int64)
    np.put_along_axis(le_sum, order, le_sum_sorted, axis=1)
    np.put_along_axis(lt_count, order, lt_count_sorted, axis=1)
    return le_sum, lt_count


def _base_score_rows(probs: np.ndarray, u: np.ndarray, params: ScoreParams) -> np.ndarray:
    """N x K matrix of base scores; one shared u per row."""
    kind = params.base_kind
    if kind == "lac":
        if params.lac_form == "negative-pi":
            return -probs
        return 1.0 - probs
    le_sum, lt_count = _tie_grouped_stats(probs)
    if kind in ("aps", "raps"):
        greater = probs.sum(axis=1, keepdims=True) - le_sum
        aps = greater + u[:, None] * probs
        if kind == "aps":
            return aps
        rank = probs.shape[1] - lt_count
        return aps + params.raps_lambda * np.maximum(rank - params.raps_kreg, 0)
    # saps
    rank = probs.shape[1] - lt_count
    p_max = probs.max(axis=1, keepdims=True)
    top = u[:, None] * p_max
    rest = p_max + (rank - 2 + u[:, None]) * params.saps_lambda
    return np.where(rank == 1, top, rest)


def _pointwise_stats(logits: np.ndarray, params: ScoreParams,
                     with_scale: bool = False):
    """Per-row probabilities, free energy, and entropy (plus the energy
    scaling factor when asked). Every consumer of G(x), whether scoring or
    thresholding, goes through this one code path."""
    probs = _softmax_rows(logits, params.T)
    F = _free_energy_rows(logits, params.tau)
    H = _entropy_rows(probs)
    if with_scale:
        return probs, F, H, _softplus_scale_rows(F, params.beta)
    return probs, F, H


def _apply_variants(probs: np.ndarray, F: np.ndarray, H: np.ndarray,
                    u: np.ndarray, params: ScoreParams) -> np.ndarray:
    """Base scores plus the configured scaling and prevalence adjustment."""
    scores = _base_score_rows(probs, u, params)
    if params.modulation == "energy":
        g = _softplus_scale_rows(F, params.beta)
        if params.base_kind == "lac":
            scores = scores / g[:, None]
        else:
            scores = scores * g[:, None]
    elif params.modulation == "entropy":
        if params.base_kind == "lac":
            scores = scores * H[:, None]
        else:
            if np.any(H <= 0.0):
                bad = int(np.flatnonzero(H <= 0.0)[0])
                raise DegenerateInputError(
                    f"sample {bad} has zero softmax entropy; entropy scaling "
                    "of an adaptive score is undefined"
                )
            scores = scores / H[:, None]
    if params.priors is not None:
        if params.base_kind == "lac":
            scores = scores / params.priors.p[None, :]
        else:
            scores = scores * params.priors.p[None, :]
    return scores


def score_matrix(ds: LogitDataset, params: ScoreParams, seed: int,
                 substream: int = STREAM_CAL_U,
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Score every (sample, label) pair of a dataset.

    Returns ``(scores, F, H, u)``: the N x K score matrix after base
    scoring, optional scaling, and optional prevalence adjustment, plus the
    per-sample free energy, entropy, and uniform draw. ``u[i]`` is the i-th
    element of the (seed, substream) counter stream, so output is identical
    however samples are batched or scheduled.
    """
    if params.priors is not None and params.priors.p.shape[0] != ds.class_count:
        raise DomainError(
            f"priors have {params.priors.p.shape[0]} classes, dataset has {ds.class_count}"
        )
    n = ds.sample_count
    probs, F, H = _pointwise_stats(ds.logits, params)
    if params.fixed_u is not None:
        u = np.full(n, float(params.fixed_u))
    else:
        u = uniform_block(seed, substream, n)
    scores = _apply_variants(probs, F, H, u, params)
    return scores, F, H, u


def score_all(ds: LogitDataset, params: ScoreParams, seed: int,
              substream: int = STREAM_CAL_U) -> list[ScoredSample]:
    """Per-sample view of :func:`score_matrix`."""
    scores, F, H, u = score_matrix(ds, params, seed, substream)
    return [
        ScoredSample(scores=scores[i], free_energy=float(F[i]),
                     entropy=float(H[i]), u=float(u[i]))
        for i in range(ds.sample_count)
    ]
