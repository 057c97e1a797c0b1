from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from model_core.datasets import build_dataset
from model_core.objectives import QuadraticModel, build_model
from model_core.schemas import DatasetSpec, ModelSpec
from optim.schemas import Strategy

from .noise import buffer_rescale_inflation, momentum_variance_ratio, noise_scan, update_variance_at_change
from .reports import checks_payload, write_csv_table, write_json_report
from .schemas import AnalysisConfig, CheckResult, GradSignal
from .theory import (
    bound_terms,
    cauchy_floor,
    machine_trace,
    optimal_lr_convex,
    quadratic_constants,
    theorem1_bound,
    theorem1_step_sizes,
    verify_theorem1,
)


logger = logging.getLogger(__name__)

ANALYSES = ("noise", "momentum", "theorem")


@dataclass
class AnalysisReport:
    kind: str
    payload: dict
    checks: list[CheckResult] = field(default_factory=list)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def as_json(self) -> dict:
        return {"kind": self.kind, **self.payload, **checks_payload(self.checks)}

    def write(self, stem: str | Path) -> list[Path]:
        stem = Path(stem)
        paths = [write_json_report(stem.parent / f"{stem.name}.{self.kind}.json", self.as_json())]
        for name, (header, rows) in self.tables.items():
            paths.append(write_csv_table(stem.parent / f"{stem.name}.{name}.csv", header, rows))
        return paths


def _within(value: float, target: float, tolerance: float) -> bool:
    return abs(value - target) <= tolerance * abs(target)


class AnalysisService:
    """Runs one of the noise, momentum or convergence analyses for a model/dataset pair."""

    minimum_replicas = 30

    def __init__(self, model: ModelSpec, dataset: DatasetSpec, seed: int, options: AnalysisConfig | None = None) -> None:
        self.model = model
        self.dataset = dataset
        self.seed = seed
        self.options = options or AnalysisConfig()

    def run(self, kind: str) -> AnalysisReport:
        if kind not in ANALYSES:
            raise ValidationError(f"Unknown analysis '{kind}'. Choose one of {', '.join(ANALYSES)}.")
        logger.info("Analysis started kind=%s seed=%s", kind, self.seed)
        report = getattr(self, kind)()
        logger.info("Analysis finished kind=%s passed=%s", kind, report.passed)
        return report

    def noise(self) -> AnalysisReport:
        options = self.options.noise
        if options.replicas < self.minimum_replicas:
            raise ValidationError(f"Reported estimates need at least {self.minimum_replicas} replicas.")
        desk = build_model(self.model)
        dataset = build_dataset(self.dataset)
        w = desk.init_params(self.seed)
        scan = noise_scan(desk, w, dataset, options.batch_sizes, options.replicas, self.seed)
        checks = [
            CheckResult(
                name="variance_scales_inversely_with_batch",
                passed=abs(scan.slope + 1.0) <= 0.05,
                detail={"slope": scan.slope},
            )
        ]
        single = next((estimate for estimate in scan.estimates if estimate.batch_size == 1), None)
        if single is not None and dataset.is_stream and isinstance(desk, QuadraticModel):
            checks.append(
                CheckResult(
                    name="single_sample_variance_matches_generator",
                    passed=_within(single.variance, dataset.sigma2, 0.05),
                    detail={"estimate": single.variance, "sigma2": dataset.sigma2},
                )
            )
        rows = [[e.batch_size, e.variance, e.ci_low, e.ci_high] for e in scan.estimates]
        return AnalysisReport(
            kind="noise",
            payload={
                "estimates": [estimate.model_dump(mode="json") for estimate in scan.estimates],
                "slope": scan.slope,
                "intercept": scan.intercept,
            },
            checks=checks,
            tables={"noise_scan": (["batch_size", "variance", "ci_low", "ci_high"], rows)},
        )

    def momentum(self) -> AnalysisReport:
        options = self.options.momentum
        checks: list[CheckResult] = []
        ratios = []
        for mu in options.mus:
            ratio = momentum_variance_ratio(mu, options.steps, self.seed, chains=options.chains)
            target = 1.0 / (1.0 - mu * mu)
            ratios.append([mu, ratio, target])
            checks.append(
                CheckResult(name=f"momentum_variance_mu_{mu:g}", passed=_within(ratio, target, 0.10),
                            detail={"ratio": ratio, "target": target})
            )
        inflation = []
        for k in options.rescale_ks:
            ratio = buffer_rescale_inflation(k, options.rescale_mu, seed=self.seed)
            inflation.append([k, ratio, k * k])
            checks.append(
                CheckResult(name=f"rescale_inflation_k_{k:g}", passed=_within(ratio, k * k, 0.10),
                            detail={"ratio": ratio, "target": k * k})
            )
        changes = {
            strategy: update_variance_at_change(
                strategy, options.change_k, options.rescale_mu, replicas=options.replicas, seed=self.seed
            )
            for strategy in options.strategies
        }
        if Strategy.DYNAMIC_SGD in changes:
            ratio = changes[Strategy.DYNAMIC_SGD].ratio
            checks.append(
                CheckResult(name="dynamic_sgd_update_variance_within_2x", passed=0.5 <= ratio <= 2.0,
                            detail={"ratio": ratio})
            )
        if Strategy.LINEAR_SCALING in changes:
            ratio = changes[Strategy.LINEAR_SCALING].ratio
            checks.append(
                CheckResult(name="linear_scaling_update_variance_inflated", passed=ratio >= options.change_k,
                            detail={"ratio": ratio, "k": options.change_k})
            )
        updates = [[s.value, c.before, c.after, c.ratio] for s, c in changes.items()]
        return AnalysisReport(
            kind="momentum",
            payload={
                "variance_ratio": [dict(zip(("mu", "ratio", "target"), row)) for row in ratios],
                "rescale_inflation": [dict(zip(("k", "ratio", "target"), row)) for row in inflation],
                "update_variance": [dict(zip(("strategy", "before", "after", "ratio"), row)) for row in updates],
                "change_k": options.change_k,
            },
            checks=checks,
            tables={
                "momentum_variance": (["mu", "ratio", "target"], ratios),
                "rescale_inflation": (["k", "ratio", "target"], inflation),
                "update_variance": (["strategy", "before", "after", "ratio"], updates),
            },
        )

    def theorem(self) -> AnalysisReport:
        options = self.options.theorem
        desk = build_model(self.model)
        if not isinstance(desk, QuadraticModel):
            raise ValidationError("The convergence analysis runs on the quadratic model only.")
        w0 = desk.init_params(self.seed)
        trace = machine_trace(options)
        base = quadratic_constants(self.model, self.dataset, w0, options)
        floor = cauchy_floor(base, trace)
        betas = sorted(set(options.betas) | {1.0})
        rows = []
        runs = {}
        for beta in betas:
            constants = base.model_copy(update={"beta": beta})
            steps = theorem1_step_sizes(constants, trace)
            run = verify_theorem1(self.model, self.dataset, constants, trace, options.seeds, w0=w0, seed=self.seed)
            runs[beta] = run
            rows.append([beta, steps.eta0, run.bound, run.pass_fraction, run.seed_average_min, run.mean_grad_norm2])

        bound_one = theorem1_bound(base, trace, 1.0)
        eta0_one = theorem1_step_sizes(base, trace, 1.0).eta0
        optimisation, noise = bound_terms(base, trace, eta0_one, 1.0)
        checks = [
            CheckResult(
                name="bound_minimised_at_beta_one",
                passed=all(bound_one <= row[2] * (1 + 1e-12) for row in rows),
                detail={"bounds": {f"{row[0]:g}": row[2] for row in rows}},
            ),
            CheckResult(
                name="cauchy_floor_attained",
                passed=math.isclose(bound_one, floor, rel_tol=1e-12),
                detail={"bound": bound_one, "floor": floor},
            ),
            CheckResult(
                name="optimal_eta0_balances_terms",
                passed=math.isclose(optimisation, noise, rel_tol=1e-12),
                detail={"optimisation": optimisation, "noise": noise},
            ),
            CheckResult(
                name="monte_carlo_bound_holds",
                passed=runs[1.0].pass_fraction >= 0.95,
                detail={"pass_fraction": runs[1.0].pass_fraction, "guaranteed": runs[1.0].guaranteed},
            ),
        ]
        if 0.0 in runs:
            checks.append(
                CheckResult(
                    name="beta_one_not_worse_than_constant_lr",
                    passed=runs[1.0].mean_grad_norm2 <= runs[0.0].mean_grad_norm2,
                    detail={"beta_one": runs[1.0].mean_grad_norm2, "beta_zero": runs[0.0].mean_grad_norm2},
                )
            )

        signal = GradSignal(g2=float(np.sum((desk.curvature @ w0) ** 2)))
        convex = []
        for k in range(1, options.max_machines + 1):
            lr = optimal_lr_convex(signal.g2, base.C, base.sigma2, k)
            convex.append([k, lr.exact, lr.approx])
        header = ["beta", "eta0", "bound", "pass_fraction", "seed_average_min", "mean_grad_norm2"]
        return AnalysisReport(
            kind="theorem",
            payload={
                "constants": base.model_dump(mode="json"),
                "T": int(trace.size),
                "cauchy_floor": floor,
                "betas": [dict(zip(header, row)) for row in rows],
                "grad_signal": signal.model_dump(mode="json"),
                "convex_lr": [dict(zip(("k", "exact", "approx"), row)) for row in convex],
            },
            checks=checks,
            tables={
                "theorem_bounds": (header, rows),
                "convex_lr": (["k", "exact", "approx"], convex),
            },
        )
