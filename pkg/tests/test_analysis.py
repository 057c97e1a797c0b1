from __future__ import annotations

import json
import math

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from pydantic import ValidationError as SchemaError

from analysis.noise import (
    buffer_rescale_inflation,
    estimate_grad_variance,
    momentum_variance_ratio,
    noise_scan,
    trace_covariance,
    update_variance_at_change,
)
from analysis.schemas import AnalysisConfig, MomentumOptions, NoiseOptions, TheoremConstants, TheoremOptions
from analysis.services import AnalysisService
from analysis.theory import (
    bound_terms,
    cauchy_floor,
    machine_trace,
    optimal_lr_convex,
    quadratic_constants,
    random_traces,
    theorem1_bound,
    theorem1_step_sizes,
    verify_theorem1,
)
from model_core.datasets import make_synthetic
from model_core.objectives import build_model
from model_core.schemas import DatasetSpec, ModelSpec
from optim.schemas import Strategy
from runs.presets import preset


@pytest.fixture
def worked():
    return TheoremConstants(C=1.0, L_delta=0.5, sigma2=1.0, K=4)


def test_convex_lr_examples():
    lr = optimal_lr_convex(1.0, 1.0, 1.0, 1)
    assert lr.exact == pytest.approx(0.5)
    assert lr.approx == pytest.approx(1.0)
    assert optimal_lr_convex(2.0, 4.0, 1.0, 3).exact == pytest.approx(6.0 / (4.0 * 7.0))


def test_convex_lr_is_linear_while_noise_dominates():
    one = optimal_lr_convex(1e-4, 1.0, 1.0, 1)
    for k in (2, 4, 8):
        lr = optimal_lr_convex(1e-4, 1.0, 1.0, k)
        assert lr.exact / one.exact == pytest.approx(k, rel=1e-3)
        assert lr.approx == pytest.approx(k * one.approx)


def test_convex_lr_is_increasing_and_concave_in_k():
    values = [optimal_lr_convex(0.5, 2.0, 1.0, k).exact for k in range(1, 17)]
    steps = np.diff(values)
    assert np.all(steps > 0)
    assert np.all(np.diff(steps) < 0)
    assert values[-1] < 1 / 2.0


@pytest.mark.parametrize("args", [(0.0, 1.0, 1.0, 1), (1.0, 0.0, 1.0, 1), (1.0, 1.0, -1.0, 1), (1.0, 1.0, 1.0, 0)])
def test_convex_lr_rejects_non_positive_inputs(args):
    with pytest.raises(ValidationError):
        optimal_lr_convex(*args)


def test_worked_constants(worked):
    assert worked.T0 == pytest.approx(4.0)
    assert worked.C1 == pytest.approx(1.0)
    assert worked.C2 == pytest.approx(1.0)
    with pytest.raises(SchemaError):
        TheoremConstants(C=0.0, L_delta=0.5, sigma2=1.0, K=4)


def test_step_sizes_and_bound_on_a_constant_trace(worked):
    trace = [4] * 100
    steps = theorem1_step_sizes(worked, trace, beta=1.0)
    assert steps.eta0 == pytest.approx(0.05)
    np.testing.assert_allclose(steps.etas, 0.2)
    assert steps.guaranteed
    assert steps.T == 100
    assert theorem1_bound(worked, trace, 1.0) == pytest.approx(0.05)
    assert cauchy_floor(worked, trace) == pytest.approx(0.05)


def test_single_machine_gives_constant_step_size(worked):
    steps = theorem1_step_sizes(worked, [1] * 400, beta=2.0)
    np.testing.assert_allclose(steps.etas, 1.0 / 20.0)


def test_beta_zero_keeps_the_step_size_fixed(worked):
    steps = theorem1_step_sizes(worked, [1, 2, 3, 4] * 25, beta=0.0)
    assert np.unique(steps.etas).size == 1


def test_short_traces_are_flagged(worked):
    assert not theorem1_step_sizes(worked, [2, 2, 2]).guaranteed
    assert not theorem1_step_sizes(worked, [2, 2, 2, 2]).guaranteed
    assert theorem1_step_sizes(worked, [2] * 5).guaranteed


@pytest.mark.parametrize("trace", [[], [0, 1], [1, 5]], ids=["empty", "zero", "above_K"])
def test_bad_traces_are_rejected(worked, trace):
    with pytest.raises(ValidationError):
        theorem1_bound(worked, trace)
    with pytest.raises(ValidationError):
        theorem1_step_sizes(worked, trace)


def test_negative_beta_is_rejected(worked):
    with pytest.raises(ValidationError):
        theorem1_bound(worked, [1, 2], beta=-0.5)


def test_beta_one_attains_the_cauchy_floor_on_random_traces():
    constants = TheoremConstants(C=2.0, L_delta=3.0, sigma2=0.5, K=16)
    for trace in random_traces(20, 200, 16, seed=4):
        floor = cauchy_floor(constants, trace)
        best = theorem1_bound(constants, trace, 1.0)
        assert best == pytest.approx(floor, rel=1e-12)
        for beta in (0.0, 0.5, 2.0):
            assert theorem1_bound(constants, trace, beta) >= floor * (1 - 1e-12)


def test_optimal_eta0_balances_the_two_terms(worked):
    trace = random_traces(1, 300, 4, seed=1)[0]
    for beta in (0.0, 1.0, 2.0):
        eta0 = theorem1_step_sizes(worked, trace, beta).eta0
        optimisation, noise = bound_terms(worked, trace, eta0, beta)
        assert optimisation == pytest.approx(noise, rel=1e-12)
        assert optimisation == pytest.approx(theorem1_bound(worked, trace, beta), rel=1e-12)
        slower = sum(bound_terms(worked, trace, eta0 * 0.5, beta))
        assert slower > optimisation + noise


def test_machine_trace_options():
    constant = machine_trace(TheoremOptions(trace="constant", constant_k=3, iterations=50))
    assert constant.tolist() == [3] * 50
    random = machine_trace(TheoremOptions(trace="random", max_machines=8, iterations=500, trace_seed=2))
    assert random.min() >= 1 and random.max() <= 8
    np.testing.assert_array_equal(random, machine_trace(TheoremOptions(max_machines=8, iterations=500, trace_seed=2)))
    with pytest.raises(SchemaError):
        TheoremOptions(trace="constant", constant_k=20, max_machines=16)


def test_quadratic_constants_come_from_the_model():
    config = preset("theorem_quadratic")
    w0 = build_model(config.model).init_params(0)
    constants = quadratic_constants(config.model, config.dataset, w0, TheoremOptions())
    assert constants.C == 1.0
    assert constants.L_delta == pytest.approx(0.5 * float(w0 @ w0))
    assert constants.sigma2 == 1.0
    assert constants.K == 16
    with pytest.raises(ValidationError):
        quadratic_constants(ModelSpec(kind="mlp"), config.dataset, np.zeros(66), TheoremOptions())


def test_bound_holds_for_a_single_machine():
    config = preset("theorem_quadratic")
    options = TheoremOptions(trace="constant", constant_k=1, iterations=1000, seeds=100)
    w0 = build_model(config.model).init_params(0)
    constants = quadratic_constants(config.model, config.dataset, w0, options)
    run = verify_theorem1(config.model, config.dataset, constants, machine_trace(options), 100, w0=w0)

    assert run.guaranteed
    assert run.grad_norm2.shape == (1000, 100)
    assert run.pass_fraction >= 0.95


def test_noiseless_sgd_decreases_the_gradient_monotonically():
    model = ModelSpec(kind="quadratic", input_dim=10)
    dataset = DatasetSpec(kind="noisy_quadratic", size=1024, dim=10, sigma2=0.0)
    constants = TheoremConstants(C=1.0, L_delta=5.0, sigma2=1.0, K=1)
    run = verify_theorem1(model, dataset, constants, [1] * 1000, 3, seed=2)

    assert np.all(np.diff(run.grad_norm2, axis=0) <= 0)
    assert np.all(run.grad_norm2[-1] < run.grad_norm2[0])


def test_verify_needs_a_noise_stream(worked):
    with pytest.raises(ValidationError):
        verify_theorem1(ModelSpec(kind="quadratic"), DatasetSpec(kind="blobs"), worked, [1] * 10, 2)


@pytest.mark.parametrize("mu", [0.5, 0.9, 0.99])
def test_momentum_inflates_variance_by_one_over_one_minus_mu_squared(mu):
    ratio = momentum_variance_ratio(mu, seed=1)
    assert ratio == pytest.approx(1.0 / (1.0 - mu * mu), rel=0.1)


def test_momentum_variance_ratio_without_momentum_is_exactly_one():
    assert momentum_variance_ratio(0.0, seed=3) == 1.0


def test_momentum_variance_ratio_rejects_bad_settings():
    with pytest.raises(ValidationError):
        momentum_variance_ratio(1.0)
    with pytest.raises(ValidationError):
        momentum_variance_ratio(0.9, steps=100)


@pytest.mark.parametrize("k", [2.0, 4.0, 12.0])
def test_buffer_rescale_inflates_variance_by_k_squared(k):
    assert buffer_rescale_inflation(k, 0.9, population=5000, seed=1) == pytest.approx(k * k, rel=1e-9)


def test_update_variance_at_a_twelvefold_spike():
    scaled = update_variance_at_change(Strategy.LINEAR_SCALING, 12, 0.9, seed=5)
    dynamic = update_variance_at_change(Strategy.DYNAMIC_SGD, 12, 0.9, seed=5)
    assert scaled.ratio >= 12
    assert 0.5 <= dynamic.ratio <= 2.0
    with pytest.raises(ValidationError):
        update_variance_at_change(Strategy.DYNAMIC_SGD, 0, 0.9)
    with pytest.raises(ValidationError):
        update_variance_at_change(Strategy.DYNAMIC_SGD, 12, 0.9, replicas=10)


def test_gradient_variance_shrinks_as_one_over_batch(quadratic_spec):
    stream = make_synthetic("noisy_quadratic", 4096, 11, dim=10, sigma2=4.0)
    estimate = estimate_grad_variance(quadratic_spec, np.zeros(10), stream, 16, 2000, 0)
    assert estimate.variance == pytest.approx(0.25, rel=0.1)
    assert estimate.ci_low <= estimate.variance <= estimate.ci_high
    assert estimate.reportable

    with pytest.raises(ValidationError):
        estimate_grad_variance(quadratic_spec, np.zeros(10), stream, 16, 1, 0)


def test_noise_scan_on_a_finite_dataset(mlp_spec, blobs):
    w = build_model(mlp_spec).init_params(0)
    scan = noise_scan(mlp_spec, w, blobs, [1, 4, 16], 400, 3)
    assert [estimate.batch_size for estimate in scan.estimates] == [1, 4, 16]
    assert -1.3 < scan.slope < -0.7
    with pytest.raises(ValidationError):
        noise_scan(mlp_spec, w, blobs, [8, 8], 400, 3)


def test_trace_covariance_of_known_rows():
    rows = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    variance, _ = trace_covariance(rows)
    assert variance == pytest.approx(np.var(rows, axis=0, ddof=1).sum())


def test_noise_analysis_passes_on_the_scan_preset():
    config = preset("noise_scan")
    report = AnalysisService(config.model, config.dataset, config.seed, config.analysis).run("noise")

    assert report.passed, report.as_json()["checks"]
    assert {check.name for check in report.checks} == {
        "variance_scales_inversely_with_batch",
        "single_sample_variance_matches_generator",
    }
    estimates = {row["batch_size"]: row["variance"] for row in report.payload["estimates"]}
    assert estimates[1] == pytest.approx(4.0, rel=0.05)


def test_momentum_analysis_passes():
    options = AnalysisConfig(momentum=MomentumOptions(mus=(0.0, 0.5, 0.9), chains=256))
    report = AnalysisService(ModelSpec(kind="quadratic"), DatasetSpec(kind="noisy_quadratic"), 0, options).run("momentum")
    assert report.passed, report.as_json()["checks"]
    assert len(report.payload["update_variance"]) == 5


def test_report_files(tmp_path):
    options = AnalysisConfig(noise=NoiseOptions(batch_sizes=(1, 4, 16), replicas=200))
    config = preset("noise_scan")
    report = AnalysisService(config.model, config.dataset, 0, options).run("noise")
    paths = report.write(tmp_path / "scan")

    assert paths[0] == tmp_path / "scan.noise.json"
    assert (tmp_path / "scan.noise_scan.csv").read_text(encoding="utf-8").splitlines()[0] == (
        "batch_size,variance,ci_low,ci_high"
    )
    payload = json.loads(paths[0].read_text(encoding="utf-8"))
    assert payload["kind"] == "noise"
    assert payload["passed"] == report.passed


def test_analysis_service_rejects_bad_requests():
    config = preset("noise_scan")
    service = AnalysisService(config.model, config.dataset, 0)
    with pytest.raises(ValidationError):
        service.run("spectrum")
    with pytest.raises(ValidationError):
        AnalysisService(ModelSpec(kind="mlp"), DatasetSpec(), 0).run("theorem")
    low = AnalysisConfig(noise=NoiseOptions(replicas=10))
    with pytest.raises(ValidationError):
        AnalysisService(config.model, config.dataset, 0, low).run("noise")


@pytest.mark.slow
def test_theorem_analysis_passes_on_random_machine_counts():
    config = preset("theorem_quadratic")
    report = AnalysisService(config.model, config.dataset, config.seed, config.analysis).run("theorem")
    assert report.passed, report.as_json()["checks"]
    assert report.payload["T"] == 1000
    assert math.isclose(report.payload["betas"][2]["bound"], report.payload["cauchy_floor"], rel_tol=1e-12)
