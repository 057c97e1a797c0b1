from __future__ import annotations

import math

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from pydantic import ValidationError as SchemaError

from model_core.datasets import Batch, Dataset, make_synthetic
from model_core.exceptions import DimensionMismatch, InvalidBatch, NonFiniteValues
from model_core.gradcheck import central_differences, max_relative_error, relative_errors
from model_core.io import export_csv, import_csv
from model_core.objectives import build_model, full_loss, grad, gradient_sum, loss, per_sample_grads
from model_core.params import as_param_vector
from model_core.prng import gaussian_block, splitmix64
from model_core.schemas import CurvatureSpec, ModelSpec


def _zero_features(rows: int, dim: int) -> Dataset:
    return Dataset.from_arrays(np.zeros((rows, dim)), np.zeros(rows, dtype=np.int64))


def test_quadratic_loss_and_grad_with_identity_curvature():
    spec = ModelSpec(kind="quadratic", input_dim=2)
    dataset = _zero_features(4, 2)
    batch = Batch.of([0, 2])

    assert loss(spec, [3.0, 4.0], dataset, batch) == pytest.approx(12.5, abs=1e-12)
    np.testing.assert_allclose(grad(spec, [3.0, 4.0], dataset, batch), [3.0, 4.0], atol=1e-12)


def test_logistic_regression_at_zero_weights():
    spec = ModelSpec(kind="logistic_regression", input_dim=2)
    blobs = make_synthetic("blobs", 50, 0)
    batch = Batch.of(range(50))

    assert loss(spec, np.zeros(3), blobs, batch) == pytest.approx(math.log(2.0), abs=1e-12)

    point = np.array([1.5, -0.5])
    symmetric = Dataset.from_arrays([point, -point, point, -point], [1, 1, 0, 0])
    np.testing.assert_allclose(grad(spec, np.zeros(3), symmetric, Batch.of(range(4))), np.zeros(3), atol=1e-15)


def test_mlp_loss_matches_straight_line_forward_pass():
    spec = ModelSpec(kind="mlp", input_dim=2, hidden_width=16, num_classes=2)
    desk = build_model(spec)
    blobs = make_synthetic("blobs", 200, 0)
    w = desk.init_params(0)
    w1, b1, w2, b2 = desk.unpack(w)

    total = 0.0
    for x, label in blobs.samples():
        hidden = [math.tanh(sum(w1[j, d] * x[d] for d in range(2)) + b1[j]) for j in range(16)]
        logits = [sum(w2[c, j] * hidden[j] for j in range(16)) + b2[c] for c in range(2)]
        peak = max(logits)
        total += peak + math.log(sum(math.exp(z - peak) for z in logits)) - logits[label]
    expected = total / blobs.size

    assert loss(spec, w, blobs, Batch.of(range(blobs.size))) == pytest.approx(expected, rel=1e-12)
    assert full_loss(spec, w, blobs) == loss(spec, w, blobs, Batch.of(range(blobs.size)))


def test_mlp_grad_matches_finite_differences_per_coordinate():
    spec = ModelSpec(kind="mlp", input_dim=2, hidden_width=16, num_classes=2)
    blobs = make_synthetic("blobs", 200, 0)
    w = build_model(spec).init_params(0)
    batch = Batch.of(range(blobs.size))

    analytic = grad(spec, w, blobs, batch)
    numeric = central_differences(spec, w, blobs, batch, step=1e-5)
    assert relative_errors(analytic, numeric).max() < 1e-6


GRADCHECK_CASES = [
    (
        ModelSpec(kind="quadratic", input_dim=5, curvature=CurvatureSpec(eigenvalues=(0.5, 1.0, 2.0, 3.0, 4.0), rotation_seed=1)),
        make_synthetic("noisy_quadratic", 512, 3, dim=5, sigma2=2.0),
    ),
    (
        ModelSpec(kind="logistic_regression", input_dim=2, weight_decay=0.01),
        make_synthetic("blobs", 128, 5),
    ),
    (
        ModelSpec(kind="mlp", input_dim=2, hidden_width=4, num_classes=3, weight_decay=0.01),
        make_synthetic("blobs", 128, 6, num_classes=3),
    ),
]


@pytest.mark.parametrize("spec,dataset", GRADCHECK_CASES, ids=["quadratic", "logistic_regression", "mlp"])
def test_gradients_pass_finite_difference_check_on_random_pairs(spec, dataset):
    desk = build_model(spec)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        w = rng.normal(size=desk.num_params)
        batch = Batch.of(rng.choice(dataset.size, size=8, replace=False))
        worst = max(worst, max_relative_error(desk, w, dataset, batch, grad(desk, w, dataset, batch)))
    assert worst < 1e-5


def test_per_sample_grads_average_to_grad_without_decay(mlp_spec, blobs):
    w = build_model(mlp_spec).init_params(1)
    batch = Batch.of(np.arange(0, 256, 3))

    rows = per_sample_grads(mlp_spec, w, blobs, batch)
    assert rows.shape == (batch.count, build_model(mlp_spec).num_params)
    np.testing.assert_allclose(rows.mean(axis=0), grad(mlp_spec, w, blobs, batch), atol=1e-12)

    single = Batch.of([17])
    np.testing.assert_allclose(per_sample_grads(mlp_spec, w, blobs, single)[0], grad(mlp_spec, w, blobs, single), atol=1e-15)


def test_per_sample_grads_excludes_weight_decay(blobs):
    spec = ModelSpec(kind="logistic_regression", input_dim=2, weight_decay=0.1)
    desk = build_model(spec)
    w = np.array([0.3, -0.2, 0.5])
    batch = Batch.of(range(64))

    mean = per_sample_grads(spec, w, blobs, batch).mean(axis=0)
    np.testing.assert_allclose(grad(spec, w, blobs, batch) - mean, desk.decay_term(w), atol=1e-12)
    # the bias is excluded from decay unless decay_all_params is set
    assert desk.decay_term(w)[-1] == 0.0


def test_quadratic_per_sample_grads_are_weights_plus_noise(quadratic_spec, noise_stream):
    w = np.linspace(-1.0, 1.0, 10)
    indices = np.arange(100, 140)

    rows = per_sample_grads(quadratic_spec, w, noise_stream, Batch.of(indices))
    noise, _ = noise_stream.take(indices)
    np.testing.assert_allclose(rows, w + noise, atol=1e-15)


def test_noise_stream_variance_matches_generator(quadratic_spec):
    stream = make_synthetic("noisy_quadratic", 10000, 7, dim=10, sigma2=1.0)
    rows = per_sample_grads(quadratic_spec, np.zeros(10), stream, Batch.of(range(10000)))

    trace = float(np.var(rows, axis=0, ddof=1).sum())
    assert 0.95 <= trace <= 1.05


def test_noise_stream_samples_are_addressable(noise_stream):
    block, _ = noise_stream.take([5, 6, 7])
    single, _ = noise_stream.take([6])
    np.testing.assert_array_equal(block[1], single[0])
    far, _ = noise_stream.take([10**9])
    assert far.shape == (1, 10)


def test_quadratic_gradient_is_lipschitz_with_lambda_max(noise_stream):
    spec = ModelSpec(
        kind="quadratic",
        input_dim=10,
        curvature=CurvatureSpec(eigenvalues=tuple(np.linspace(0.1, 3.0, 10)), rotation_seed=4),
    )
    desk = build_model(spec)
    assert desk.lambda_max == pytest.approx(3.0)
    np.testing.assert_allclose(desk.curvature, desk.curvature.T)
    assert np.linalg.eigvalsh(desk.curvature).min() >= -1e-12

    rng = np.random.default_rng(9)
    for _ in range(200):
        w1, w2 = rng.normal(size=(2, 10))
        batch = Batch.of(rng.choice(4096, size=4, replace=False))
        gap = np.linalg.norm(grad(spec, w1, noise_stream, batch) - grad(spec, w2, noise_stream, batch))
        assert gap <= desk.lambda_max * np.linalg.norm(w1 - w2) * (1 + 1e-12)


def test_loss_and_grad_are_pure(mlp_spec, blobs):
    w = build_model(mlp_spec).init_params(5)
    batch = Batch.of(range(32))
    assert loss(mlp_spec, w, blobs, batch) == loss(mlp_spec, w, blobs, batch)
    np.testing.assert_array_equal(grad(mlp_spec, w, blobs, batch), grad(mlp_spec, w, blobs, batch))


def test_gradient_sum_is_unnormalised(mlp_spec, blobs):
    w = build_model(mlp_spec).init_params(2)
    indices = np.arange(40)
    grad_sum, loss_sum = gradient_sum(mlp_spec, w, blobs, indices)
    np.testing.assert_allclose(grad_sum / 40, grad(mlp_spec, w, blobs, Batch.of(indices)), atol=1e-14)
    assert loss_sum / 40 == pytest.approx(loss(mlp_spec, w, blobs, Batch.of(indices)), rel=1e-14)

    empty_grad, empty_loss = gradient_sum(mlp_spec, w, blobs, [])
    assert not empty_grad.any() and empty_loss == 0.0


def test_make_synthetic_is_deterministic():
    first = make_synthetic("blobs", 1000, 42)
    second = make_synthetic("blobs", 1000, 42)
    assert np.array_equal(first.features, second.features)
    assert np.array_equal(first.labels, second.labels)
    assert not np.array_equal(first.features, make_synthetic("blobs", 1000, 43).features)


@pytest.mark.parametrize(
    "kind,n",
    [("blobs", 0), ("imagenet", 10)],
)
def test_make_synthetic_rejects_bad_requests(kind, n):
    with pytest.raises(ValidationError):
        make_synthetic(kind, n, 1)


def test_invalid_batches_and_dimensions(mlp_spec, blobs):
    with pytest.raises(InvalidBatch):
        Batch.of([])
    with pytest.raises(InvalidBatch):
        Batch.of([1, 2, 2])
    w = build_model(mlp_spec).init_params(0)
    with pytest.raises(InvalidBatch):
        loss(mlp_spec, w, blobs, Batch.of([0, 256]))
    with pytest.raises(DimensionMismatch):
        grad(mlp_spec, w[:-1], blobs, Batch.of([0]))
    with pytest.raises(DimensionMismatch):
        loss(ModelSpec(kind="quadratic", input_dim=3), np.zeros(3), blobs, Batch.of([0]))
    with pytest.raises(NonFiniteValues):
        as_param_vector([1.0, float("nan")])


def test_quadratic_spec_rejects_negative_or_misdimensioned_curvature():
    with pytest.raises(SchemaError):
        CurvatureSpec(eigenvalues=(1.0, -0.5))
    with pytest.raises(SchemaError):
        ModelSpec(kind="quadratic", input_dim=3, curvature=CurvatureSpec(eigenvalues=(1.0, 2.0)))


def test_csv_export_and_import(tmp_path):
    dataset = make_synthetic("blobs", 64, 8, num_classes=3)
    path = export_csv(dataset, tmp_path / "blobs.csv")

    assert path.read_text(encoding="utf-8").splitlines()[0] == "x0,x1,label"
    restored = import_csv(path)
    assert np.array_equal(restored.features, dataset.features)
    assert np.array_equal(restored.labels, dataset.labels)

    with pytest.raises(ValidationError):
        export_csv(make_synthetic("noisy_quadratic", 10, 0), tmp_path / "stream.csv")


def test_splitmix64_reference_outputs():
    state, first = splitmix64(0)
    _, second = splitmix64(state)
    assert first == 0xE220A8397B1DCDAF
    assert second == 0x6E789E6AA1B965F4


def test_gaussian_block_rows_are_addressed_by_sample_index():
    indices = np.arange(4000)
    block = gaussian_block(9, indices, 5)
    shuffled = np.random.default_rng(1).permutation(indices)

    np.testing.assert_array_equal(gaussian_block(9, shuffled, 5), block[shuffled])
    np.testing.assert_array_equal(gaussian_block(9, [3999, 17], 5), block[[3999, 17]])
    assert not np.array_equal(gaussian_block(10, indices[:10], 5), block[:10])

    assert abs(block.mean()) < 0.03
    assert block.std() == pytest.approx(1.0, abs=0.03)
