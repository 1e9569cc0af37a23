from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from core.comparison import (
    admissible_times,
    check_main_bound,
    monotonicity_certificate,
    oracle_comparison,
    out_of_sample_gap,
)
from core.errors import RidgePathError
from core.estimators import FilterSpec, cg_interpolated, residual_polynomial, ridge
from core.experiments import PATH_TARGETS, PROP2_FACTOR, Replicate, SimConfig, simulate_replicates
from core.risk import TargetSpec, cg_bound, decompose_cg, decompose_linear, nemirovskii_holds, nemirovskii_slack, risk_linear
from core.utils import get_logger


logger = get_logger("verify")

RTOL = 1e-9
# zbieżne wartości Ritza mogą się pokryć do precyzji maszynowej
INTERLACE_RTOL = 1e-12


@dataclass(frozen=True)
class Check:
    module: str
    operation: str
    t: Optional[float]
    lhs: float
    rhs: float
    ok: bool
    detail: str = ""

    def describe(self) -> str:
        where = "" if self.t is None else f" at t={self.t:.6g}"
        status = "ok" if self.ok else "FAILED"
        text = f"{self.module}.{self.operation}{where}: {status} (lhs={self.lhs:.12g}, rhs={self.rhs:.12g})"
        return f"{text} {self.detail}".rstrip()


def _le(module: str, operation: str, lhs: float, rhs: float, t: Optional[float] = None, rtol: float = RTOL) -> Check:
    return Check(module, operation, t, float(lhs), float(rhs), bool(lhs <= rhs + rtol * max(abs(rhs), abs(lhs), 1e-300)))


def _guarded(module: str, operation: str, t: Optional[float], fn: Callable[[], Check]) -> Check:
    # wyjątek biblioteki w trakcie sprawdzenia liczy się jako niepowodzenie
    try:
        return fn()
    except RidgePathError as exc:
        return Check(module, operation, t, math.nan, math.nan, False, str(exc))


def _spectral_checks(rep: Replicate) -> Iterator[Check]:
    spec = rep.spec
    X, n = rep.data.X, rep.data.n
    recon = np.abs((spec.V * spec.s) @ spec.V.T - X.T @ X / n).max()
    yield _le("spectral", "reconstruction", recon, 1e-8 * max(float(spec.s[0]), 1e-300))
    gap = np.abs(np.sqrt(spec.sl) * spec.beta_lambda_coords + spec.eps_lambda_coords - spec.y_lambda_coords).max()
    yield _le("spectral", "decomposition_identity", gap, 1e-10 * max(float(np.abs(spec.y_lambda_coords).max()), 1e-300))


def _cg_checks(rep: Replicate, subdivisions: int) -> Iterator[Check]:
    spec, trace = rep.spec, rep.trace
    terminal = trace.iterates[trace.stop_index]
    ridge_coords = ridge(spec, spec.lam)
    yield _le("estimators", "cg_terminal_equals_ridge", np.linalg.norm(terminal - ridge_coords), 1e-8 * np.linalg.norm(ridge_coords))
    yield Check("estimators", "rho_increasing", None, 0.0, 0.0, bool(np.all(np.diff(trace.rho) > 0)))
    slack = INTERLACE_RTOL * spec.norm
    interlaced = all(
        np.all(trace.ritz[k + 1][:-1] <= trace.ritz[k] + slack) and np.all(trace.ritz[k] <= trace.ritz[k + 1][1:] + slack)
        for k in range(1, trace.stop_index)
    )
    yield Check("estimators", "ritz_interlacing", None, 0.0, 0.0, bool(interlaced))

    grid = np.arange(trace.stop_index * subdivisions + 1) / subdivisions
    for t in grid:
        yield _guarded("risk", "decompose_cg", t, lambda t=t: _cg_point(rep, t))
        yield _guarded("estimators", "residual_polynomial_bounds", t, lambda t=t: _poly_bounds(rep, t))


def _cg_point(rep: Replicate, t: float) -> Check:
    spec, trace = rep.spec, rep.trace
    breakdown = decompose_cg(spec, trace, t)
    if not nemirovskii_holds(spec, breakdown, RTOL):
        return Check("risk", "nemirovskii_bound", t, breakdown.A, breakdown.nemirovskii, False)
    bound = cg_bound(spec, trace, t, TargetSpec.beta_lambda()).bound_total
    slack = nemirovskii_slack(spec, breakdown, RTOL)
    return Check("risk", "cg_loss_bound", t, breakdown.total, bound, bool(breakdown.total <= bound + slack))


def _poly_bounds(rep: Replicate, t: float) -> Check:
    poly = residual_polynomial(rep.trace, t)
    upper = poly.x1_t if math.isfinite(poly.x1_t) else float(rep.spec.norm)
    xs = np.linspace(0.0, upper, 100)
    values = poly(xs)
    lower_gap = float(np.max(np.maximum(1.0 - poly.rho_t * xs, 0.0) - values))
    upper_gap = float(np.max(values - np.exp(-poly.rho_t * xs)))
    return _le("estimators", "residual_polynomial_bounds", max(lower_gap, upper_gap), 1e-9, t, rtol=0.0)


def _linear_checks(rep: Replicate, times: np.ndarray) -> Iterator[Check]:
    spec = rep.spec
    lam = spec.lam
    targets = [TargetSpec.beta_lambda_prime(lp) for lp in (0.0, lam / 2.0, lam)]
    for t in times:
        for target in PATH_TARGETS:
            for filt in (FilterSpec.gf(t), FilterSpec.rr(lam + 1.0 / t)):
                yield _guarded("risk", f"decompose_linear[{filt.kind}]", t, lambda filt=filt, target=target: _identity_ok(spec, filt, target))
        for target in targets:
            gf = risk_linear(spec, FilterSpec.gf(t), target)
            rr = risk_linear(spec, FilterSpec.rr(lam + 1.0 / t), target)
            yield _le("risk", f"gf_vs_ridge[{target.label}]", gf, PROP2_FACTOR * rr, t)


def _identity_ok(spec, filt: FilterSpec, target: TargetSpec) -> Check:
    breakdown = decompose_linear(spec, filt, target)
    return Check("risk", f"decompose_linear[{filt.kind}]", filt.param, breakdown.total, breakdown.A + breakdown.S - 2 * breakdown.C, True)


def _comparison_checks(config: SimConfig, reps: Sequence[Replicate]) -> Iterator[Check]:
    first = reps[0]
    pairs = [rep.pair for rep in reps]
    for target in PATH_TARGETS:
        for t in admissible_times(first.spec, min(config.oracle_points, 64)):
            for rep in reps:
                yield _guarded("comparison", "main_bound", t, lambda rep=rep, t=t, target=target: _main(rep, target, t))
        record = oracle_comparison(
            first.spec,
            first.trace,
            target,
            points=config.oracle_points,
            subdivisions=config.cg_subdivisions,
            replicates=pairs if config.fixed_design else [first.pair],
        )
        yield _le("comparison", f"oracle_gf[{target.label}]", record.cg_oracle, record.gf_factor * record.gf_oracle)
        yield _le("comparison", f"oracle_rr[{target.label}]", record.cg_oracle, record.rr_factor * record.rr_oracle)
        yield _le("comparison", f"oracle_subset[{target.label}]", record.gf_oracle_unrestricted, record.gf_oracle)
    for rep in reps:
        for beta_hat in (ridge(rep.spec, rep.spec.lam), cg_interpolated(rep.trace, rep.trace.stop_index / 2.0)):
            gap = out_of_sample_gap(rep.spec, beta_hat, TargetSpec.beta0())
            yield Check("comparison", "out_of_sample_gap", None, abs(gap.loss_out - gap.loss_in), gap.op_gap * gap.loss_out, gap.gap_ok)
    cert = monotonicity_certificate(first.spec)
    yield Check("comparison", "monotonicity_certificate", None, first.spec.lam, cert.lambda_min, True, f"holds={cert.holds} feasible={cert.feasible}")


def _main(rep: Replicate, target: TargetSpec, t: float) -> Check:
    record = check_main_bound(rep.spec, rep.trace, target, t, "analytic")
    return Check("comparison", f"main_bound[{target.label}]", t, record.lhs, record.rhs, record.satisfied)


def run_suite(config: SimConfig, replicates: Optional[Sequence[Replicate]] = None) -> list[Check]:
    """Wszystkie tożsamości i nierówności dla replikacji z konfiguracji."""
    reps = list(replicates) if replicates is not None else simulate_replicates(config)
    times = admissible_times(reps[0].spec, 64)
    checks: list[Check] = []
    for rep in reps:
        checks.extend(_spectral_checks(rep))
        checks.extend(_cg_checks(rep, config.cg_subdivisions))
        checks.extend(_linear_checks(rep, times))
    checks.extend(_comparison_checks(config, reps))
    failed = [c for c in checks if not c.ok]
    logger.info(f"Verification: {len(checks)} checks, {len(failed)} failed")
    return checks
