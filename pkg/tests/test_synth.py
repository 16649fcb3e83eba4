"""Synthetic logit generator, two-ring data, the toy network, and
landscape grids."""

import csv
import math

import numpy as np
import pytest

from ecp import (
    ClassPriors,
    DomainError,
    SynthConfig,
    ToyMLP,
    TrainingError,
    generate_ood,
    generate_synthetic,
    landscape_grid,
    make_rings,
    mlp_forward,
    mlp_gradient_check,
    train_mlp,
)
from ecp.scores import _free_energy_rows
from ecp.synth import save_landscape_csv, save_points_csv


def base_cfg(**overrides):
    kw = dict(class_count=10, sample_count=500, imbalance_lambda=0.0, seed=0)
    kw.update(overrides)
    return SynthConfig(**kw)


def test_generator_is_deterministic():
    a = generate_synthetic(base_cfg())
    b = generate_synthetic(base_cfg())
    assert np.array_equal(a.labels, b.labels)
    assert a.logits.tobytes() == b.logits.tobytes(), "bit-identical rerun"
    c = generate_synthetic(base_cfg(seed=1))
    assert not np.array_equal(a.logits, c.logits)


def test_synth_config_validation():
    with pytest.raises(DomainError):
        base_cfg(class_count=1)
    with pytest.raises(DomainError):
        base_cfg(sample_count=0)
    with pytest.raises(DomainError):
        base_cfg(margin=0.0)
    with pytest.raises(DomainError):
        base_cfg(noise_sigma=0.0)
    with pytest.raises(DomainError):
        base_cfg(scale_log_sigma=-0.1)
    with pytest.raises(DomainError):
        base_cfg(flip_temperature=-1.0)
    with pytest.raises(DomainError):
        base_cfg(imbalance_lambda=-0.5)
    with pytest.raises(DomainError):
        base_cfg(priors=ClassPriors(p=np.full(10, 0.1)))  # both forms given
    with pytest.raises(DomainError):
        SynthConfig(class_count=3, sample_count=10)  # neither form given
    with pytest.raises(DomainError):
        SynthConfig(class_count=3, sample_count=10,
                    priors=ClassPriors(p=np.array([0.5, 0.5, 0.0])))
    with pytest.raises(DomainError):
        SynthConfig(class_count=3, sample_count=10,
                    priors=ClassPriors(p=np.array([0.5, 0.5])))


def test_class_weights_forms():
    uniform = base_cfg(imbalance_lambda=0.0).class_weights()
    assert np.allclose(uniform, 0.1)
    pri = ClassPriors(p=np.array([0.7, 0.2, 0.1]))
    cfg = SynthConfig(class_count=3, sample_count=10, priors=pri)
    assert np.array_equal(cfg.class_weights(), pri.p)
    w = SynthConfig(class_count=100, sample_count=10,
                    imbalance_lambda=0.03).class_weights()
    assert w.sum() == pytest.approx(1.0)
    assert w[0] / w[99] == pytest.approx(math.exp(0.03 * 99), rel=1e-12), \
        "head to tail weight ratio is exp(lambda * (K-1))"


def test_imbalanced_label_frequencies():
    cfg = SynthConfig(class_count=100, sample_count=200_000,
                      imbalance_lambda=0.03, seed=3)
    ds = generate_synthetic(cfg)
    counts = np.bincount(ds.labels, minlength=100)
    ratio = counts[0] / counts[99]
    assert 15.0 < ratio < 25.0, \
        f"head/tail frequency {ratio} should sit near exp(2.97) = 19.5"


def test_balanced_sampling_keeps_labels_uniform():
    cfg = SynthConfig(class_count=10, sample_count=100_000,
                      imbalance_lambda=0.5, balanced_sampling=True, seed=2)
    ds = generate_synthetic(cfg)
    counts = np.bincount(ds.labels, minlength=10)
    assert counts.min() > 0.95 * 10_000 and counts.max() < 1.05 * 10_000, \
        f"balanced draw should be near-uniform, got {counts.tolist()}"


def test_noiseless_limit_puts_true_label_on_top():
    cfg = base_cfg(sample_count=2000, noise_sigma=1e-9, scale_log_sigma=0.0,
                   flip_temperature=0.0)
    ds = generate_synthetic(cfg)
    assert np.array_equal(ds.logits.argmax(axis=1), ds.labels), \
        "with the noise off, the margin decides every row"


def test_confusion_creates_hard_samples():
    clean = base_cfg(sample_count=5000, flip_temperature=0.0, seed=7)
    confused = base_cfg(sample_count=5000, flip_temperature=5.0, seed=7)
    top_clean = (generate_synthetic(clean).logits.argmax(axis=1)
                 == generate_synthetic(clean).labels).mean()
    ds = generate_synthetic(confused)
    top_confused = (ds.logits.argmax(axis=1) == ds.labels).mean()
    assert top_confused < top_clean, \
        f"confusion must cost accuracy: {top_confused} vs {top_clean}"


def test_ood_shrink_lowers_negative_free_energy():
    cfg = base_cfg(sample_count=10_000, seed=4)
    ds_id = generate_synthetic(cfg)
    ds_ood = generate_ood(cfg, shrink=0.1)
    neg_f_id = -_free_energy_rows(ds_id.logits, 1.0)
    neg_f_ood = -_free_energy_rows(ds_ood.logits, 1.0)
    assert neg_f_ood.mean() < neg_f_id.mean() - 1.0, \
        f"shrunken logits must look colder: {neg_f_ood.mean()} vs {neg_f_id.mean()}"
    assert ds_ood.semantic_labels is False
    assert np.array_equal(ds_ood.labels, ds_id.labels)


def test_ood_shrink_one_is_identity_on_logits():
    cfg = base_cfg(seed=5)
    ds_id = generate_synthetic(cfg)
    ds_ood = generate_ood(cfg, shrink=1.0)
    assert ds_ood.logits.tobytes() == ds_id.logits.tobytes()


def test_ood_shrink_validation():
    cfg = base_cfg()
    with pytest.raises(DomainError):
        generate_ood(cfg, shrink=0.0)
    with pytest.raises(DomainError):
        generate_ood(cfg, shrink=1.2)


def test_rings_geometry():
    points, labels = make_rings(400, 1.0, 2.5, 0.05, seed=1)
    assert points.shape == (400, 2) and labels.shape == (400,)
    assert labels[:200].sum() == 0 and labels[200:].sum() == 200, \
        "first half inner ring, second half outer"
    radii = np.linalg.norm(points, axis=1)
    mid = (1.0 + 2.5) / 2
    assert radii[labels == 0].max() < mid, "inner ring stays inside the gap"
    assert radii[labels == 1].min() > mid, "outer ring stays outside the gap"


def test_rings_odd_count_split():
    points, labels = make_rings(5, 1.0, 2.0, 0.0, seed=0)
    assert (labels == 0).sum() == 2 and (labels == 1).sum() == 3


def test_rings_validation():
    with pytest.raises(DomainError):
        make_rings(10, 2.0, 1.0, 0.1, seed=0)
    with pytest.raises(DomainError):
        make_rings(10, 1.0, 2.0, -0.1, seed=0)
    with pytest.raises(DomainError):
        make_rings(1, 1.0, 2.0, 0.1, seed=0)


def test_points_csv_layout(tmp_path):
    points, labels = make_rings(6, 1.0, 2.0, 0.0, seed=3)
    path = tmp_path / "rings.csv"
    save_points_csv(points, labels, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "label"]
    assert len(rows) == 7
    assert float(rows[1][0]) == points[0, 0], "repr floats parse back exactly"
    assert rows[1][2] == "0" and rows[-1][2] == "1"


def fresh_mlp(widths, seed):
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((a, b)) * math.sqrt(2.0 / a)
               for a, b in zip(widths[:-1], widths[1:])]
    biases = [np.full(b, 0.1) for b in widths[1:]]
    return ToyMLP(weights=weights, biases=biases)


def test_mlp_shape_validation():
    with pytest.raises(DomainError):
        ToyMLP(weights=[np.zeros((2, 3))], biases=[np.zeros(4)])
    with pytest.raises(DomainError):
        ToyMLP(weights=[np.zeros((2, 3)), np.zeros((4, 2))],
               biases=[np.zeros(3), np.zeros(2)])
    with pytest.raises(DomainError):
        ToyMLP(weights=[], biases=[])
    with pytest.raises(DomainError):
        ToyMLP(weights=[np.zeros((2, 2))], biases=[np.zeros(2)],
               activation="tanh")
    mlp = fresh_mlp([2, 5, 3], seed=0)
    assert mlp.widths == [2, 5, 3]


def test_mlp_forward_single_and_batch_agree():
    mlp = fresh_mlp([2, 4, 3], seed=1)
    batch = np.array([[0.3, -0.2], [1.0, 2.0]])
    out = mlp.forward(batch)
    assert out.shape == (2, 3)
    # Batch and single-row matmuls may reassociate differently, so exact
    # bit equality is not promised here.
    np.testing.assert_allclose(mlp_forward(mlp, batch[0]), out[0], rtol=1e-12)


def test_gradient_check_on_fresh_network():
    mlp = fresh_mlp([2, 5, 4, 2], seed=11)
    err = mlp_gradient_check(mlp, [0.3, -0.7], 1, epsilon=1e-5)
    assert err < 1e-6, f"analytic and numeric gradients disagree: {err}"


def test_gradient_check_identity_activation():
    mlp = fresh_mlp([2, 4, 2], seed=6)
    mlp.activation = "identity"
    err = mlp_gradient_check(mlp, [0.5, 0.25], 0, epsilon=1e-5)
    assert err < 1e-6


def test_gradient_check_epsilon_bounds():
    mlp = fresh_mlp([2, 3, 2], seed=0)
    with pytest.raises(DomainError):
        mlp_gradient_check(mlp, [0.1, 0.2], 0, epsilon=1e-8)
    with pytest.raises(DomainError):
        mlp_gradient_check(mlp, [0.1, 0.2], 0, epsilon=1e-2)


def test_training_trace_and_determinism():
    points, labels = make_rings(120, 1.0, 2.5, 0.1, seed=2)
    mlp_a, trace = train_mlp((points, labels), [2, 8, 2], 6, 0.05, seed=3)
    assert sorted(trace) == ["accuracy", "loss"]
    assert len(trace["loss"]) == 6 and len(trace["accuracy"]) == 6
    assert all(math.isfinite(v) for v in trace["loss"])
    assert trace["loss"][-1] < trace["loss"][0], "training should reduce loss"
    mlp_b, _ = train_mlp((points, labels), [2, 8, 2], 6, 0.05, seed=3)
    for wa, wb in zip(mlp_a.weights, mlp_b.weights):
        assert np.array_equal(wa, wb), "same seed must give the same model"


def test_training_diverges_to_training_error():
    points, labels = make_rings(64, 1.0, 2.5, 0.1, seed=4)
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingError):
            train_mlp((points, labels), [2, 8, 2], 50, 1e8, seed=0)


def test_train_mlp_validation():
    points, labels = make_rings(20, 1.0, 2.0, 0.1, seed=0)
    with pytest.raises(DomainError):
        train_mlp((points, labels), [2], 1, 0.1, seed=0)
    with pytest.raises(DomainError):
        train_mlp((points, labels), [3, 4, 2], 1, 0.1, seed=0)
    with pytest.raises(DomainError):
        train_mlp((points, labels), [2, 4, 2], 0, 0.1, seed=0)
    with pytest.raises(DomainError):
        train_mlp((points, labels), [2, 4, 2], 1, 0.0, seed=0)


def test_landscape_grid_surfaces():
    mlp = fresh_mlp([2, 6, 2], seed=8)
    grid = landscape_grid(mlp, (-2.0, 2.0, -1.0, 3.0), resolution=17)
    assert grid.max_softmax.shape == (17, 17)
    assert grid.xs[0] == -2.0 and grid.xs[-1] == 2.0
    assert grid.ys[0] == -1.0 and grid.ys[-1] == 3.0
    assert np.all(grid.max_softmax >= 0.5) and np.all(grid.max_softmax <= 1.0)
    assert np.all(grid.entropy >= 0.0)
    assert np.all(grid.entropy <= math.log(2) + 1e-12), "two classes cap entropy"
    # Orientation: cell [iy, ix] is the model at (xs[ix], ys[iy]).
    logits = mlp_forward(mlp, [grid.xs[3], grid.ys[5]])
    lse = math.log(math.exp(logits[0] - logits.max())
                   + math.exp(logits[1] - logits.max())) + logits.max()
    assert grid.neg_free_energy[5, 3] == pytest.approx(lse, rel=1e-9)


def test_landscape_grid_validation():
    mlp = fresh_mlp([2, 4, 2], seed=0)
    with pytest.raises(DomainError):
        landscape_grid(mlp, (-1.0, 1.0, -1.0, 1.0), resolution=1)
    with pytest.raises(DomainError):
        landscape_grid(mlp, (1.0, -1.0, -1.0, 1.0), resolution=5)
    with pytest.raises(DomainError):
        landscape_grid(mlp, (-1.0, 1.0, 2.0, 2.0), resolution=5)


def test_landscape_csv_layout(tmp_path):
    mlp = fresh_mlp([2, 4, 2], seed=9)
    grid = landscape_grid(mlp, (0.0, 1.0, 0.0, 1.0), resolution=3)
    path = tmp_path / "grid.csv"
    save_landscape_csv(grid, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "max_softmax", "entropy", "neg_energy"]
    assert len(rows) == 1 + 9
    assert [rows[1][0], rows[1][1]] == ["0.0", "0.0"], "row-major from the origin"
    assert float(rows[2][0]) == 0.5 and float(rows[2][1]) == 0.0
    assert float(rows[1][2]) == grid.max_softmax[0, 0]
