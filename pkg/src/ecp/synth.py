"""Synthetic logit generators and a from-scratch toy MLP.

The generator draws, per sample, a class y, a unit-pattern logit vector
g = margin * e_y + noise, and a log-normal magnitude c, emitting f = c * g.
Magnitude and label are independent of each other unless the configuration
couples them:

* label confusion: with ``flip_temperature`` t > 0, a weight
  w = exp(-c / t) moves that fraction of the margin onto one random wrong
  coordinate. Low-magnitude samples are confused the most, so the rank of
  the true label degrades exactly where the negative free energy is small.
* class imbalance: the per-class sampling weights also shift the
  log-magnitude by log p(y) minus its mean over classes, mimicking a model
  fit on imbalanced data: frequent classes produce larger logits. Uniform
  weights shift nothing.

A distribution-shifted stream is the same draw scaled toward zero. The toy
MLP (two rectifier hidden layers, cross-entropy loss, plain mini-batch
gradient descent) exists to chart confidence/entropy/energy landscapes on a
two-ring dataset and is deliberately dependency-free.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._rng import (
    STREAM_MLP_BATCH,
    STREAM_MLP_INIT,
    STREAM_RINGS,
    STREAM_SYNTH_CONFUSION,
    STREAM_SYNTH_LABELS,
    STREAM_SYNTH_NOISE,
    STREAM_SYNTH_SCALE,
    generator,
    uniform_block,
)
from .data import ClassPriors, LogitDataset
from .errors import DomainError, TrainingError
from .scores import _entropy_rows, _free_energy_rows, _softmax_rows

_BATCH_SIZE = 32


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic logit generator.

    Exactly one of ``priors`` / ``imbalance_lambda`` must be given; the
    lambda form uses class weights proportional to exp(-lambda * j).
    ``balanced_sampling`` draws labels uniformly while keeping the
    imbalance-induced magnitude shifts, which is how a balanced test stream
    from an imbalance-fitted model is produced.
    """

    class_count: int
    sample_count: int
    priors: Optional[ClassPriors] = None
    imbalance_lambda: Optional[float] = None
    margin: float = 3.0
    noise_sigma: float = 1.0
    scale_log_mu: float = 1.0
    scale_log_sigma: float = 0.5
    flip_temperature: float = 0.0
    balanced_sampling: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise DomainError("class_count must be >= 2")
        if self.sample_count < 1:
            raise DomainError("sample_count must be >= 1")
        if (self.priors is None) == (self.imbalance_lambda is None):
            raise DomainError("give exactly one of priors / imbalance_lambda")
        if self.priors is not None:
            if self.priors.p.shape[0] != self.class_count:
                raise DomainError("priors length must equal class_count")
            if not self.priors.strictly_positive:
                raise DomainError("generator priors must be strictly positive")
        if self.imbalance_lambda is not None and self.imbalance_lambda < 0:
            raise DomainError("imbalance_lambda must be >= 0")
        if not self.margin > 0:
            raise DomainError("margin must be positive")
        if not self.noise_sigma > 0:
            raise DomainError("noise_sigma must be positive")
        if self.scale_log_sigma < 0:
            raise DomainError("scale_log_sigma must be >= 0")
        if self.flip_temperature < 0:
            raise DomainError("flip_temperature must be >= 0 (0 disables confusion)")

    def class_weights(self) -> np.ndarray:
        if self.priors is not None:
            return self.priors.p.copy()
        j = np.arange(self.class_count, dtype=np.float64)
        w = np.exp(-float(self.imbalance_lambda) * j)
        return w / w.sum()


def generate_synthetic(cfg: SynthConfig) -> LogitDataset:
    """Draw a dataset from the configured generator; bit-identical across
    runs and thread counts for a fixed configuration."""
    n, k = cfg.sample_count, cfg.class_count
    weights = cfg.class_weights()
    sampling = np.full(k, 1.0 / k) if cfg.balanced_sampling else weights
    u_label = uniform_block(cfg.seed, STREAM_SYNTH_LABELS, n)
    y = np.minimum(np.searchsorted(np.cumsum(sampling), u_label, side="right"), k - 1)

    noise = generator(cfg.seed, STREAM_SYNTH_NOISE).standard_normal((n, k))
    g = cfg.noise_sigma * noise

    z = generator(cfg.seed, STREAM_SYNTH_SCALE).standard_normal(n)
    log_w = np.log(weights)
    prior_shift = log_w - log_w.mean()
    c = np.exp(cfg.scale_log_mu + prior_shift[y] + cfg.scale_log_sigma * z)

    rows = np.arange(n)
    if cfg.flip_temperature > 0:
        w_conf = np.exp(-c / cfg.flip_temperature)
        u_conf = uniform_block(cfg.seed, STREAM_SYNTH_CONFUSION, n)
        wrong = np.minimum((u_conf * (k - 1)).astype(np.int64), k - 2)
        wrong = wrong + (wrong >= y)
        g[rows, y] += cfg.margin * (1.0 - w_conf)
        g[rows, wrong] += cfg.margin * w_conf
    else:
        g[rows, y] += cfg.margin

    return LogitDataset(class_count=k, labels=y, logits=c[:, None] * g)


def generate_ood(cfg: SynthConfig, shrink: float) -> LogitDataset:
    """The same draw as :func:`generate_synthetic` with every logit pulled
    toward zero by ``shrink``, lowering the negative free energy. Labels
    are kept but marked non-semantic."""
    if not 0.0 < shrink <= 1.0:
        raise DomainError(f"shrink must lie in (0, 1], got {shrink}")
    ds = generate_synthetic(cfg)
    return LogitDataset(
        class_count=ds.class_count,
        labels=ds.labels,
        logits=ds.logits * shrink,
        semantic_labels=False,
    )


# ----------------------------------------------------------------------
# Two-ring dataset
# ----------------------------------------------------------------------

def make_rings(n: int, r_inner: float, r_outer: float, noise: float,
               seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two concentric classes in the plane: radius plus Gaussian radial
    jitter, uniform angle. Class 0 is the inner ring."""
    if not 0 < r_inner < r_outer:
        raise DomainError(f"need 0 < r_inner < r_outer, got {r_inner}, {r_outer}")
    if noise < 0:
        raise DomainError("noise must be >= 0")
    if n < 2:
        raise DomainError("need at least one point per ring")
    rng = generator(seed, STREAM_RINGS)
    theta = rng.random(n) * (2.0 * math.pi)
    jitter = rng.standard_normal(n) * noise
    n0 = n // 2
    radius = np.concatenate([np.full(n0, r_inner), np.full(n - n0, r_outer)]) + jitter
    points = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    labels = np.concatenate([np.zeros(n0, np.int64), np.ones(n - n0, np.int64)])
    return points, labels


def save_points_csv(points: np.ndarray, labels: np.ndarray, path) -> None:
    """Write a labeled 2-D point set as ``x,y,label`` CSV."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "label"])
        for (x, y), lab in zip(points, labels):
            writer.writerow([repr(float(x)), repr(float(y)), int(lab)])


# ----------------------------------------------------------------------
# Toy MLP
# ----------------------------------------------------------------------

@dataclass
class ToyMLP:
    """Fully connected net with rectifier hidden layers.

    ``weights[i]`` maps layer i to i+1; widths are implied by the shapes.
    ``activation`` exists so the gradient check can exercise the exactly
    linear case; training always uses the rectifier.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("weights and biases must pair up")
        if self.activation not in ("relu", "identity"):
            raise DomainError(f"unknown activation {self.activation!r}")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DomainError("inconsistent layer shapes")
        for w, nxt in zip(self.weights, self.weights[1:]):
            if w.shape[1] != nxt.shape[0]:
                raise DomainError("consecutive layers disagree on width")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def _act(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return z

    def forward(self, points: np.ndarray) -> np.ndarray:
        """Logits for an N x d batch of inputs."""
        h = np.asarray(points, dtype=np.float64)
        squeeze = h.ndim == 1
        if squeeze:
            h = h[None, :]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = self._act(h @ w + b)
        out = h @ self.weights[-1] + self.biases[-1]
        return out[0] if squeeze else out


def mlp_forward(mlp: ToyMLP, point) -> np.ndarray:
    """Deterministic forward pass for a single input point."""
    return mlp.forward(np.asarray(point, dtype=np.float64))


def _forward_trace(mlp: ToyMLP, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    pre = []
    h = x
    acts = [h]
    for w, b in zip(mlp.weights[:-1], mlp.biases[:-1]):
        z = h @ w + b
        pre.append(z)
        h = mlp._act(z)
        acts.append(h)
    logits = h @ mlp.weights[-1] + mlp.biases[-1]
    return logits, pre, acts


def _loss_and_grads(mlp: ToyMLP, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and gradients for every parameter."""
    logits, pre, acts = _forward_trace(mlp, x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    n = x.shape[0]
    nll = -(shifted[np.arange(n), y] - np.log(e.sum(axis=1)))
    loss = float(nll.mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads_w = [None] * len(mlp.weights)
    grads_b = [None] * len(mlp.biases)
    delta = dlogits
    for layer in range(len(mlp.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ mlp.weights[layer].T
            if mlp.activation == "relu":
                delta[pre[layer - 1] <= 0] = 0.0
    return loss, probs, grads_w, grads_b


def train_mlp(data: tuple[np.ndarray, np.ndarray], widths, epochs: int,
              learning_rate: float, seed: int) -> tuple[ToyMLP, dict]:
    """Mini-batch gradient descent (batch 32, no momentum) on mean
    cross-entropy. Deterministic in the seed; training is single-threaded.

    Returns the trained model and a trace dict with per-epoch full-data
    ``loss`` and ``accuracy`` lists. A non-finite loss aborts with the
    epoch index.
    """
    points, labels = data
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise DomainError("widths must list input and output sizes at least")
    if any(w < 1 for w in widths):
        raise DomainError("every layer width must be positive")
    if widths[0] != x.shape[1]:
        raise DomainError(f"input width {widths[0]} != data dimension {x.shape[1]}")
    if epochs < 1:
        raise DomainError("epochs must be >= 1")
    if not learning_rate > 0:
        raise DomainError("learning_rate must be positive")

    init = generator(seed, STREAM_MLP_INIT)
    weights = [
        init.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        for fan_in, fan_out in zip(widths[:-1], widths[1:])
    ]
    biases = [np.zeros(fan_out) for fan_out in widths[1:]]
    mlp = ToyMLP(weights=weights, biases=biases)

    shuffler = generator(seed, STREAM_MLP_BATCH)
    n = x.shape[0]
    trace = {"loss": [], "accuracy": []}
    for epoch in range(epochs):
        perm = shuffler.permutation(n)
        for start in range(0, n, _BATCH_SIZE):
            idx = perm[start:start + _BATCH_SIZE]
            loss, _, gw, gb = _loss_and_grads(mlp, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            for layer in range(len(mlp.weights)):
                mlp.weights[layer] -= learning_rate * gw[layer]
                mlp.biases[layer] -= learning_rate * gb[layer]
        full_loss, probs, _, _ = _loss_and_grads(mlp, x, y)
        if not math.isfinite(full_loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        trace["loss"].append(full_loss)
        trace["accuracy"].append(float((probs.argmax(axis=1) == y).mean()))
    return mlp, trace


def mlp_gradient_check(mlp: ToyMLP, point, label: int,
                       epsilon: float = 1e-5) -> float:
    """Worst relative error between analytic gradients and central finite
    differences of the single-sample cross-entropy loss."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise DomainError("epsilon must lie in [1e-7, 1e-3]")
    x = np.asarray(point, dtype=np.float64).reshape(1, -1)
    y = np.array([int(label)])

    def loss_at() -> float:
        loss, _, _, _ = _loss_and_grads(mlp, x, y)
        return loss

    _, _, gw, gb = _loss_and_grads(mlp, x, y)
    worst = 0.0
    for params, grads in ((mlp.weights, gw), (mlp.biases, gb)):
        for arr, grad in zip(params, grads):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + epsilon
                up = loss_at()
                flat[i] = keep - epsilon
                down = loss_at()
                flat[i] = keep
                numeric = (up - down) / (2.0 * epsilon)
                analytic = gflat[i]
                err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
                if err > worst:
                    worst = err
    return worst


# ----------------------------------------------------------------------
# Landscape grids
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class LandscapeGrid:
    """Max-softmax / entropy / negative-free-energy surfaces of a 2-class
    model over a rectangle. Grids are indexed [iy, ix] with both axes
    ascending."""

    bounds: tuple[float, float, float, float]
    resolution: int
    xs: np.ndarray
    ys: np.ndarray
    max_softmax: np.ndarray
    entropy: np.ndarray
    neg_free_energy: np.ndarray


def landscape_grid(mlp: ToyMLP, bounds: tuple[float, float, float, float],
                   resolution: int, tau: float = 1.0) -> LandscapeGrid:
    """Evaluate the model over a regular grid and fill the three surfaces."""
    if resolution < 2:
        raise DomainError("resolution must be >= 2")
    xmin, xmax, ymin, ymax = (float(v) for v in bounds)
    if not (xmin < xmax and ymin < ymax):
        raise DomainError("bounds must satisfy xmin < xmax and ymin < ymax")
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    logits = mlp.forward(points)
    probs = _softmax_rows(logits, 1.0)
    shape = (resolution, resolution)
    return LandscapeGrid(
        bounds=(xmin, xmax, ymin, ymax),
        resolution=resolution,
        xs=xs,
        ys=ys,
        max_softmax=probs.max(axis=1).reshape(shape),
        entropy=_entropy_rows(probs).reshape(shape),
        neg_free_energy=(-_free_energy_rows(logits, tau)).reshape(shape),
    )


def save_landscape_csv(grid: LandscapeGrid, path) -> None:
    """Emit one ``x,y,max_softmax,entropy,neg_energy`` row per grid cell."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "max_softmax", "entropy", "neg_energy"])
        for iy in range(grid.resolution):
            for ix in range(grid.resolution):
                writer.writerow([
                    repr(float(grid.xs[ix])),
                    repr(float(grid.ys[iy])),
                    repr(float(grid.max_softmax[iy, ix])),
                    repr(float(grid.entropy[iy, ix])),
                    repr(float(grid.neg_free_energy[iy, ix])),
                ])
