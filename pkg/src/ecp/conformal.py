"""Split-conformal calibration and prediction-set construction.

Calibration takes the exact ceil((n+1)(1-alpha))-th smallest true-label
score of a held-out set (never an interpolated quantile: interpolation
breaks finite-sample validity); prediction includes every label whose score
is <= that threshold, ties included. For energy-scaled scores the same set
can be read as thresholding the *base* score at a sample-dependent level,
and :func:`sample_threshold` exposes that view.

A :class:`CalibratedPredictor` is immutable and serializes to JSON with the
threshold stored as an IEEE-754 hex string, so reloading is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._rng import STREAM_CAL_U, STREAM_TEST_U, uniform_block
from .data import ClassPriors, LogitDataset
from .errors import DomainError, FormatError
from .scores import (
    ScoreParams,
    _apply_variants,
    _pointwise_stats,
    score_matrix,
)


@dataclass(frozen=True)
class PredictionSet:
    """A strictly increasing tuple of class indices; may be empty or full."""

    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(int(y) for y in self.labels)
        if any(b <= a for a, b in zip(labels, labels[1:])):
            raise DomainError("prediction set labels must be strictly increasing")
        if labels and labels[0] < 0:
            raise DomainError("prediction set labels must be nonnegative")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, y) -> bool:
        return int(y) in self.labels


@dataclass(frozen=True)
class CalibratedPredictor:
    """Frozen score configuration plus the calibrated quantile threshold."""

    qhat: float
    params: ScoreParams
    alpha: float
    calibration_size: int
    seed: int
    class_count: int

    def __post_init__(self):
        if not 0.0 < float(self.alpha) < 1.0:
            raise DomainError(f"alpha must lie in (0,1), got {self.alpha}")
        if math.isnan(self.qhat):
            raise DomainError("qhat must be a real number or +infinity")


def conformal_quantile(true_scores, alpha: float) -> float:
    """The ceil((n+1)(1-alpha))-th smallest score, 1-indexed with
    duplicates counted; +infinity when that index exceeds n.

    The index is computed in exact rational arithmetic on the binary value
    of ``alpha``, so boundary cases like n=9, alpha=0.1 resolve the way the
    formula says rather than the way float rounding happens to fall.
    """
    s = np.asarray(true_scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DomainError("true_scores must be a non-empty 1-D array")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0,1), got {alpha}")
    n = s.size
    m = math.ceil(Fraction(n + 1) * (1 - Fraction(alpha)))
    if m > n:
        return math.inf
    return float(np.partition(s, m - 1)[m - 1])


def calibrate(cal: LogitDataset, params: ScoreParams, alpha: float,
              seed: int) -> CalibratedPredictor:
    """Score each calibration sample at its true label and take the
    conformal quantile. Calibration u-draws come from the (seed, cal)
    sub-stream, disjoint from the test sub-stream used by prediction."""
    scores, _, _, _ = score_matrix(cal, params, seed, substream=STREAM_CAL_U)
    true_scores = scores[np.arange(cal.sample_count), cal.labels]
    qhat = conformal_quantile(true_scores, alpha)
    return CalibratedPredictor(
        qhat=qhat, params=params, alpha=float(alpha),
        calibration_size=cal.sample_count, seed=int(seed),
        class_count=cal.class_count,
    )


def _label_set(include_row: np.ndarray) -> PredictionSet:
    return PredictionSet(labels=tuple(int(y) for y in np.flatnonzero(include_row)))


def prediction_set(logit_row, pred: CalibratedPredictor, u: float) -> PredictionSet:
    """Labels whose configured score is <= qhat for one logit row.

    ``u`` is the single uniform shared by all K candidate labels of this
    sample. An infinite qhat yields the full label set.
    """
    row = np.asarray(logit_row, dtype=np.float64).reshape(1, -1)
    if row.shape[1] != pred.class_count:
        raise DomainError(
            f"row has {row.shape[1]} logits, predictor expects {pred.class_count}"
        )
    if not np.all(np.isfinite(row)):
        raise DomainError("logit row must be finite")
    probs, F, H = _pointwise_stats(row, pred.params)
    scores = _apply_variants(probs, F, H, np.array([float(u)]), pred.params)
    return _label_set(scores[0] <= pred.qhat)


def sample_threshold(logit_row, pred: CalibratedPredictor) -> float:
    """The sample-dependent threshold theta(x) on the *base* score that
    reproduces the energy-scaled prediction set.

    For adaptive kinds the scaled comparison S*G <= qhat divides through to
    S <= qhat/G; for ``lac`` (which is divided by G) it multiplies through
    to qhat*G. The scaling factor G(x) is computed by the same code path
    that scores prediction batches, so both views share the same value.
    """
    if pred.params.modulation != "energy":
        raise DomainError("sample_threshold is defined for energy scaling only")
    if not math.isfinite(pred.qhat):
        raise DomainError("sample_threshold requires a finite qhat")
    row = np.asarray(logit_row, dtype=np.float64).reshape(1, -1)
    _, _, _, g = _pointwise_stats(row, pred.params, with_scale=True)
    if pred.params.base_kind == "lac":
        return float(pred.qhat * g[0])
    return float(pred.qhat / g[0])


def prediction_mask(test: LogitDataset, pred: CalibratedPredictor) -> np.ndarray:
    """N x K boolean matrix of set membership for a test dataset; row i uses
    the i-th uniform of the predictor's test sub-stream."""
    if test.class_count != pred.class_count:
        raise DomainError(
            f"test data has {test.class_count} classes, predictor expects "
            f"{pred.class_count}"
        )
    scores, _, _, _ = score_matrix(test, pred.params, pred.seed,
                                   substream=STREAM_TEST_U)
    return scores <= pred.qhat


def predict_batch(test: LogitDataset, pred: CalibratedPredictor) -> list[PredictionSet]:
    """Prediction sets for every row of a test dataset; deterministic in
    the predictor's seed."""
    mask = prediction_mask(test, pred)
    return [_label_set(mask[i]) for i in range(mask.shape[0])]


# ----------------------------------------------------------------------
# Predictor (de)serialization
# ----------------------------------------------------------------------

def predictor_to_dict(pred: CalibratedPredictor) -> dict:
    p = pred.params
    return {
        "base_kind": p.base_kind,
        "T": p.T,
        "tau": p.tau,
        "beta": p.beta,
        "raps_lambda": p.raps_lambda,
        "raps_kreg": p.raps_kreg,
        "saps_lambda": p.saps_lambda,
        "modulation": p.modulation,
        "priors": None if p.priors is None else [float(v) for v in p.priors.p],
        "fixed_u": p.fixed_u,
        "lac_form": p.lac_form,
        "alpha": pred.alpha,
        "qhat": pred.qhat if math.isfinite(pred.qhat) else "inf",
        "qhat_hex": float(pred.qhat).hex(),
        "calibration_size": pred.calibration_size,
        "seed": pred.seed,
        "class_count": pred.class_count,
    }


def predictor_from_dict(doc: dict) -> CalibratedPredictor:
    try:
        priors = doc["priors"]
        params = ScoreParams(
            base_kind=doc["base_kind"],
            T=doc["T"],
            tau=doc["tau"],
            beta=doc["beta"],
            raps_lambda=doc["raps_lambda"],
            raps_kreg=doc["raps_kreg"],
            saps_lambda=doc["saps_lambda"],
            modulation=doc["modulation"],
            priors=None if priors is None else ClassPriors(p=np.asarray(priors)),
            fixed_u=doc.get("fixed_u"),
        )
        return CalibratedPredictor(
            qhat=float.fromhex(doc["qhat_hex"]),
            params=params,
            alpha=float(doc["alpha"]),
            calibration_size=int(doc["calibration_size"]),
            seed=int(doc["seed"]),
            class_count=int(doc["class_count"]),
        )
    except KeyError as exc:
        raise FormatError(f"predictor document missing field {exc}") from None


def save_predictor(pred: CalibratedPredictor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(predictor_to_dict(pred), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_predictor(path) -> CalibratedPredictor:
    with open(path, "r", encoding="utf-8") as fh:
        return predictor_from_dict(json.load(fh))
