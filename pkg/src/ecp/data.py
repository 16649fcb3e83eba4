"""Datasets of pre-computed logits: validation, splitting, and file I/O.

A :class:`LogitDataset` is the universal input of the package: an N x K
matrix of finite logits plus one integer label per row. Two interchange
formats are supported:

* CSV with header ``label,f_0,...,f_{K-1}`` (UTF-8, ``.`` decimal, LF line
  ends). Floats are written with ``repr`` so the round trip is lossless.
* A little-endian binary format (magic ``ECPL``) for large sweeps: u32
  version, u32 N, u32 K, then N u32 labels, then N*K f64 logits row-major.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import STREAM_SPLIT, generator
from .errors import DomainError, FormatError, LengthError, ParseError

MAGIC = b"ECPL"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class LogitDataset:
    """Immutable N x K logit matrix with one class label per row.

    ``semantic_labels`` marks whether labels carry meaning; generators of
    distribution-shifted streams set it to False. It is metadata only: it is
    not serialized and does not participate in equality.
    """

    class_count: int
    labels: np.ndarray
    logits: np.ndarray
    semantic_labels: bool = True

    def __post_init__(self):
        k = int(self.class_count)
        if k < 2:
            raise DomainError(f"class_count must be >= 2, got {k}")
        labels = np.asarray(self.labels, dtype=np.int64)
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 2:
            raise DomainError(f"logits must be 2-D, got shape {logits.shape}")
        n = logits.shape[0]
        if n < 1:
            raise DomainError("dataset must contain at least one sample")
        if logits.shape[1] != k:
            raise DomainError(
                f"logits have {logits.shape[1]} columns, expected class_count={k}"
            )
        if labels.shape != (n,):
            raise DomainError(
                f"labels must have shape ({n},), got {labels.shape}"
            )
        if not np.all(np.isfinite(logits)):
            raise DomainError("logits must be finite")
        if labels.min() < 0 or labels.max() >= k:
            raise DomainError(f"labels must lie in [0, {k})")
        labels.setflags(write=False)
        logits.setflags(write=False)
        object.__setattr__(self, "class_count", k)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "logits", logits)

    @property
    def sample_count(self) -> int:
        return self.logits.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LogitDataset):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.logits, other.logits)
        )


@dataclass(frozen=True)
class ClassPriors:
    """Length-K probability vector over classes.

    ``zero_classes`` lists classes that received prior exactly 0 (absent
    from the data the priors were estimated on); prevalence-adjusted scoring
    refuses such priors rather than divide by zero.
    """

    p: np.ndarray
    zero_classes: tuple[int, ...] = field(init=False, default=())

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] < 1:
            raise DomainError("priors must be a non-empty 1-D vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("priors must be finite and nonnegative")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise DomainError(f"priors must sum to 1 within 1e-9, got {p.sum()!r}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "zero_classes",
                           tuple(int(c) for c in np.flatnonzero(p == 0)))

    @property
    def strictly_positive(self) -> bool:
        return bool(np.all(self.p > 0))


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic calibration/test split: fraction in (0,1) plus a seed."""

    calibration_fraction: float
    seed: int

    def __post_init__(self):
        f = float(self.calibration_fraction)
        if not 0.0 < f < 1.0:
            raise DomainError(f"calibration_fraction must be in (0,1), got {f}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "calibration_fraction", f)
        object.__setattr__(self, "seed", int(self.seed))


def _expected_header(k: int) -> list[str]:
    return ["label"] + [f"f_{j}" for j in range(k)]


def load_logits_csv(path) -> LogitDataset:
    """Load a dataset from CSV with header ``label,f_0,...,f_{K-1}``.

    K is inferred from the header; row order is preserved. A malformed
    header raises :class:`FormatError`; a non-numeric or non-finite cell
    raises :class:`ParseError` naming the offending data row (1-based);
    a label outside [0, K) raises :class:`DomainError`.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row") from None
        k = len(header) - 1
        if k < 2 or header != _expected_header(k):
            raise FormatError(
                f"{path}: header must be 'label,f_0,...,f_{{K-1}}', got {header!r}"
            )
        labels: list[int] = []
        rows: list[list[float]] = []
        for row_idx, row in enumerate(reader, start=1):
            if len(row) != k + 1:
                raise ParseError(
                    f"{path}: row {row_idx} has {len(row)} fields, expected {k + 1}"
                )
            try:
                label = int(row[0])
            except ValueError:
                raise ParseError(
                    f"{path}: row {row_idx}: label {row[0]!r} is not an integer"
                ) from None
            if not 0 <= label < k:
                raise DomainError(
                    f"{path}: row {row_idx}: label {label} outside [0, {k})"
                )
            values = []
            for col, cell in enumerate(row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_idx}: cell f_{col}={cell!r} is not a number"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(
                        f"{path}: row {row_idx}: cell f_{col}={cell!r} is not finite"
                    )
                values.append(v)
            labels.append(label)
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return LogitDataset(class_count=k, labels=np.array(labels), logits=np.array(rows))


def save_logits_csv(ds: LogitDataset, path) -> None:
    """Write a dataset as CSV; floats use repr so reloading is lossless."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_expected_header(ds.class_count))
        for label, row in zip(ds.labels, ds.logits):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def serialize_dataset(ds: LogitDataset, path) -> None:
    """Write the versioned little-endian binary form of a dataset."""
    n, k = ds.logits.shape
    parts = [
        MAGIC,
        np.array([FORMAT_VERSION, n, k], dtype="<u4").tobytes(),
        ds.labels.astype("<u4").tobytes(),
        np.ascontiguousarray(ds.logits, dtype="<f8").tobytes(),
    ]
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def deserialize_dataset(path) -> LogitDataset:
    """Read a dataset written by :func:`serialize_dataset`, bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise LengthError(f"{path}: file too short for a header ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, n, k = np.frombuffer(blob, dtype="<u4", count=3, offset=4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 16 + 4 * int(n) + 8 * int(n) * int(k)
    if len(blob) != expected:
        raise LengthError(
            f"{path}: expected {expected} bytes for N={n}, K={k}, got {len(blob)}"
        )
    labels = np.frombuffer(blob, dtype="<u4", count=int(n), offset=16).astype(np.int64)
    logits = np.frombuffer(
        blob, dtype="<f8", count=int(n) * int(k), offset=16 + 4 * int(n)
    ).reshape(int(n), int(k))
    return LogitDataset(class_count=int(k), labels=labels, logits=logits.copy())


def split_dataset(ds: LogitDataset, spec: SplitSpec) -> tuple[LogitDataset, LogitDataset]:
    """Partition a dataset into (calibration, test) parts.

    The shuffle is a deterministic function of ``spec.seed`` alone; the
    calibration part receives the first ``floor(N * fraction)`` shuffled
    rows. Both parts together are a permutation of the input.
    """
    n = ds.sample_count
    n_cal = int(math.floor(n * spec.calibration_fraction))
    if n_cal < 1 or n_cal > n - 1:
        raise DomainError(
            f"fraction {spec.calibration_fraction} leaves an empty part for N={n}"
        )
    perm = generator(spec.seed, STREAM_SPLIT).permutation(n)
    cal_idx, test_idx = perm[:n_cal], perm[n_cal:]
    make = lambda idx: LogitDataset(
        class_count=ds.class_count,
        labels=ds.labels[idx],
        logits=ds.logits[idx],
        semantic_labels=ds.semantic_labels,
    )
    return make(cal_idx), make(test_idx)


def empirical_priors(ds: LogitDataset) -> ClassPriors:
    """Per-class label frequencies; classes absent from the data get 0 and
    are flagged in ``zero_classes``."""
    counts = np.bincount(ds.labels, minlength=ds.class_count).astype(np.float64)
    return ClassPriors(p=counts / ds.sample_count)
