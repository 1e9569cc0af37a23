from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConditionViolated, InputError, NumericalError
from .estimators import CGTrace, FilterSpec, cg_interpolated, rho_at, tau
from .risk import TargetSpec, gamma_condition, loss_in, risk_linear, risk_linear_parts
from .spectral import PenalisedSpectrum, pinv_power
from .utils import get_logger, mean_and_se


logger = get_logger("comparison")

# 4/(1−e^{−1/2})² oraz stałe korolarza o ryzyku wyroczni
MAIN_FACTOR = 4.0 / (1.0 - math.exp(-0.5)) ** 2
GF_ORACLE_FACTOR = 25.9
RR_ORACLE_FACTOR = 43.7
SATISFIED_RTOL = 1e-9
RISK_MODES = ("analytic", "mc")


def _check_spectrum(s: Sequence[float]) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InputError("eigenvalue list must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise InputError("eigenvalues must be finite and non-negative")
    if np.any(np.diff(s) > 0):
        raise InputError("eigenvalues must be sorted in non-increasing order")
    return s


def c_values(s: Sequence[float], lam: float) -> np.ndarray:
    """C(i) dla i = 2..p (indeksy od 1); element [i-2] odpowiada indeksowi i."""
    s = _check_spectrum(s)
    p = s.size
    if p < 2:
        return np.zeros(0)
    sl = s + lam
    head = np.cumsum(s * pinv_power(sl, -1.0))  # head[i-2] = Σ_{j<i} s_j/(s_j+λ)
    tail_s = np.cumsum(s[::-1])[::-1]  # tail_s[i-1] = Σ_{j≥i} s_j
    tail_w = np.cumsum((sl * s)[::-1])[::-1]
    idx = np.arange(2, p + 1)
    numerator = tail_s[idx - 1]
    prev = sl[idx - 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        denominator = sl[idx - 1] * head[idx - 2] + tail_w[idx - 1] / prev
        values = numerator / denominator
    return np.where(numerator > 0, values, 0.0)


def c_constant(s: Sequence[float], lam: float, t: float) -> tuple[Optional[int], float]:
    """(i_t, C_{t,λ}) ze stałej twierdzenia porównawczego CG/GF.

    i_t jest indeksem od 1; w gałęzi t ≥ ½(s_p+λ)^{-1} zwracamy (None, 0.0).
    """
    s = _check_spectrum(s)
    lam = float(lam)
    if s[0] + lam <= 0:
        raise InputError("c_constant requires s_1 + lambda > 0")
    if not 2.0 * t * (s[0] + lam) >= 1.0 - 1e-12:
        raise InputError(f"t={t} is below the admissible range t >= 1/(2(s_1+lambda))")
    last = s[-1] + lam
    if last > 0 and 2.0 * t * last >= 1.0:
        return None, 0.0
    threshold = 1.0 / (2.0 * t) - lam
    i_t = max(2, int(np.argmax(s < threshold)) + 1)
    return i_t, float(c_values(s, lam)[i_t - 2])


def c_bar(s: Sequence[float], lam: float) -> float:
    """sup_t C_{t,λ} jako maksimum po osiągalnych indeksach (s_i < s_{i-1})."""
    s = _check_spectrum(s)
    if s[0] + lam <= 0:
        raise InputError("c_bar requires s_1 + lambda > 0")
    values = c_values(s, lam)
    if values.size == 0:
        return 0.0
    attainable = s[1:] < s[:-1]
    return float(max(0.0, values[attainable].max(initial=0.0)))


@dataclass(frozen=True)
class ComparisonRecord:
    t: float
    i_t: Optional[int]
    C_t_lambda: float
    lhs: float
    rhs: float
    satisfied: bool
    mode: str
    tau: float
    lhs_stochastic: float
    cg_loss: float
    lhs_se: float = 0.0
    gamma: str = ""


def trace_term(spec: PenalisedSpectrum, t: float, sigma2: Optional[float] = None) -> float:
    """(σ²/n)·tr((2t ∧ Σ̂_λ^{-1})Σ̂)."""
    if sigma2 is None:
        sigma2 = spec.require_truth("trace_term").sigma2
    capped = np.minimum(2.0 * t, pinv_power(spec.sl, -1.0))
    capped = np.where(spec.sl > 0, capped, 0.0)
    return sigma2 / spec.n * float(np.sum(capped * spec.s))


def gf_variance(spec: PenalisedSpectrum, t: float, sigma2: float) -> float:
    """(σ²/n)·tr((I − e^{−tΣ̂_λ})²Σ̂_λ^{-1}Σ̂)."""
    gain = -np.expm1(-t * spec.sl)
    return sigma2 / spec.n * float(np.sum(gain**2 * spec.s * pinv_power(spec.sl, -1.0)))


@dataclass(frozen=True)
class StochasticRecord:
    t: float
    i_t: Optional[int]
    C_t_lambda: float
    cg_stochastic: float
    gf_stochastic: float
    rhs: float
    satisfied: bool


def stochastic_comparison(spec: PenalisedSpectrum, sigma2: float, t: float) -> StochasticRecord:
    """Porównanie członów stochastycznych CG i GF; wymaga tylko σ² i X."""
    if not (math.isfinite(sigma2) and sigma2 >= 0):
        raise InputError(f"sigma2 must be finite and non-negative, got {sigma2}")
    i_t, C = c_constant(spec.s, spec.lam, t)
    cg_part = 4.0 * trace_term(spec, t, sigma2)
    gf_part = gf_variance(spec, t, sigma2)
    rhs = MAIN_FACTOR * (1.0 + C) * gf_part
    return StochasticRecord(
        t=float(t),
        i_t=i_t,
        C_t_lambda=C,
        cg_stochastic=cg_part,
        gf_stochastic=gf_part,
        rhs=rhs,
        satisfied=bool(cg_part <= rhs * (1.0 + SATISFIED_RTOL)),
    )


def _loss_at_tau(spec: PenalisedSpectrum, trace: CGTrace, t: float, gamma: np.ndarray) -> tuple[float, float]:
    tau_t = tau(trace, t)
    return loss_in(spec, cg_interpolated(trace, tau_t), gamma), tau_t


def check_main_bound(
    spec: PenalisedSpectrum,
    trace: CGTrace,
    target: TargetSpec | np.ndarray,
    t: float,
    risk_mode: str = "analytic",
    replicates: Sequence[tuple[PenalisedSpectrum, CGTrace]] = (),
) -> ComparisonRecord:
    """Porównanie ryzyka CG w τ_t z ryzykiem GF w t.

    analytic: lhs = 4A_{λ,γ}(GF_t) + 4(σ²/n)tr((2t∧Σ̂_λ^{-1})Σ̂);
    mc: lhs = średnia strat CG w τ_t po replikacjach (każda ze swoim τ_t).
    """
    if risk_mode not in RISK_MODES:
        raise InputError(f"unknown risk mode {risk_mode!r}")
    spec.require_truth("check_main_bound")
    if spec.norm <= 0 or not 2.0 * t * spec.norm >= 1.0 - 1e-12:
        raise InputError(f"t={t} is below the admissible range t >= 1/(2||Sigma_lambda||)")
    gamma = target.resolve(spec) if isinstance(target, TargetSpec) else np.asarray(target, dtype=np.float64)
    if not isinstance(target, TargetSpec) or target.kind == "beta_lambda_prime":
        value, tolerance = gamma_condition(spec, rho_at(trace, tau(trace, t)), gamma)
        if value < -tolerance:
            raise ConditionViolated(value, tolerance)

    i_t, C = c_constant(spec.s, spec.lam, t)
    approx, variance = risk_linear_parts(spec, FilterSpec.gf(t), gamma)
    rhs = MAIN_FACTOR * (1.0 + C) * (approx + variance)
    cg_loss, tau_t = _loss_at_tau(spec, trace, t, gamma)
    stochastic = trace_term(spec, t)

    if risk_mode == "analytic":
        lhs, lhs_se = 4.0 * approx + 4.0 * stochastic, 0.0
        satisfied = lhs <= rhs * (1.0 + SATISFIED_RTOL)
    else:
        pairs = list(replicates) or [(spec, trace)]
        losses = []
        for rep_spec, rep_trace in pairs:
            rep_gamma = target.resolve(rep_spec) if isinstance(target, TargetSpec) else gamma
            losses.append(_loss_at_tau(rep_spec, rep_trace, t, rep_gamma)[0])
        lhs, lhs_se = mean_and_se(losses)
        satisfied = lhs - 3.0 * lhs_se <= rhs * (1.0 + SATISFIED_RTOL)

    if not satisfied:
        logger.warning(f"Main bound not satisfied at t={t:.6g} ({risk_mode}): lhs={lhs:.6g} > rhs={rhs:.6g}")
    return ComparisonRecord(
        t=float(t),
        i_t=i_t,
        C_t_lambda=C,
        lhs=float(lhs),
        rhs=float(rhs),
        satisfied=bool(satisfied),
        mode=risk_mode,
        tau=float(tau_t),
        lhs_stochastic=stochastic,
        cg_loss=float(cg_loss),
        lhs_se=float(lhs_se),
    )


def admissible_times(spec: PenalisedSpectrum, points: int = 512, *, restricted: bool = True) -> np.ndarray:
    """Logarytmiczna siatka czasów GF.

    restricted: t ≥ 1/(2‖Σ̂_λ‖); w przeciwnym razie siatka zaczyna się od 0.
    """
    positive = spec.sl[spec.sl > 0]
    if positive.size == 0:
        raise InputError("time grid undefined for a zero design with lambda = 0")
    t_lo = 1.0 / (2.0 * spec.norm)
    t_hi = max(100.0 / float(positive.min()), 10.0 * t_lo)
    if restricted:
        return np.geomspace(t_lo, t_hi, points)
    return np.concatenate([[0.0], np.geomspace(t_lo * 1e-3, t_hi, points - 1)])


def penalty_grid(spec: PenalisedSpectrum, points: int = 512) -> np.ndarray:
    """λ̃ ∈ [λ, λ + 2‖Σ̂_λ‖], logarytmicznie w przesunięciu, z λ̃ = λ na początku."""
    width = 2.0 * spec.norm
    offsets = np.geomspace(width * 1e-6, width, points - 1)
    return spec.lam + np.concatenate([[0.0], offsets])


@dataclass(frozen=True)
class OracleRecord:
    cg_oracle: float
    cg_argmin: float
    gf_oracle: float
    gf_argmin: float
    gf_oracle_unrestricted: float
    rr_oracle: float
    rr_argmin: float
    c_bar: float
    gf_factor: float
    rr_factor: float
    gf_satisfied: bool
    rr_satisfied: bool
    gamma: str = ""


def cg_mean_losses(
    grid: np.ndarray,
    target: TargetSpec,
    replicates: Sequence[tuple[PenalisedSpectrum, CGTrace]],
) -> tuple[np.ndarray, np.ndarray]:
    """Średnie i SE strat CG na siatce; t przycinane do stop_index każdej replikacji."""
    losses = np.empty((len(replicates), grid.size))
    for r, (rep_spec, rep_trace) in enumerate(replicates):
        gamma = target.resolve(rep_spec)
        for j, t in enumerate(grid):
            losses[r, j] = loss_in(rep_spec, cg_interpolated(rep_trace, min(float(t), rep_trace.stop_index)), gamma)
    stats = [mean_and_se(losses[:, j]) for j in range(grid.size)]
    return np.array([m for m, _ in stats]), np.array([se for _, se in stats])


def oracle_comparison(
    spec: PenalisedSpectrum,
    trace: CGTrace,
    target: TargetSpec,
    *,
    points: int = 512,
    subdivisions: int = 8,
    replicates: Sequence[tuple[PenalisedSpectrum, CGTrace]] = (),
) -> OracleRecord:
    """Najlepsze ryzyka wzdłuż ścieżek CG, GF i RR oraz stałe ich porównania."""
    if not isinstance(target, TargetSpec):
        raise InputError("oracle_comparison needs a TargetSpec of the form beta_lambda_prime")
    target.resolve(spec)
    pairs = list(replicates) or [(spec, trace)]
    stop = max(rep_trace.stop_index for _, rep_trace in pairs)
    cg_grid = np.arange(stop * subdivisions + 1) / subdivisions
    cg_means, _ = cg_mean_losses(cg_grid, target, pairs)
    j = int(np.argmin(cg_means))

    gf_times = admissible_times(spec, points)
    gf_risks = np.array([risk_linear(spec, FilterSpec.gf(t), target) for t in gf_times])
    gf_all = np.array([risk_linear(spec, FilterSpec.gf(t), target) for t in admissible_times(spec, points, restricted=False)])
    penalties = penalty_grid(spec, points)
    rr_risks = np.array([risk_linear(spec, FilterSpec.rr(lp), target) for lp in penalties])
    g, r = int(np.argmin(gf_risks)), int(np.argmin(rr_risks))

    cbar = c_bar(spec.s, spec.lam)
    gf_factor = GF_ORACLE_FACTOR * (1.0 + cbar)
    rr_factor = RR_ORACLE_FACTOR * (1.0 + cbar)
    cg_oracle = float(cg_means[j])
    record = OracleRecord(
        cg_oracle=cg_oracle,
        cg_argmin=float(cg_grid[j]),
        gf_oracle=float(gf_risks[g]),
        gf_argmin=float(gf_times[g]),
        gf_oracle_unrestricted=float(min(gf_all.min(), gf_risks[g])),
        rr_oracle=float(rr_risks[r]),
        rr_argmin=float(penalties[r]),
        c_bar=cbar,
        gf_factor=gf_factor,
        rr_factor=rr_factor,
        gf_satisfied=bool(cg_oracle <= gf_factor * gf_risks[g] * (1.0 + SATISFIED_RTOL)),
        rr_satisfied=bool(cg_oracle <= rr_factor * rr_risks[r] * (1.0 + SATISFIED_RTOL)),
    )
    if not (record.gf_satisfied and record.rr_satisfied):
        logger.warning(f"Oracle comparison not satisfied: cg={cg_oracle:.6g}, gf={record.gf_oracle:.6g}, rr={record.rr_oracle:.6g}")
    return record


@dataclass(frozen=True)
class MonotonicityCertificate:
    lambda_min: float
    holds: bool
    feasible: bool


def monotonicity_certificate(spec: PenalisedSpectrum) -> MonotonicityCertificate:
    """Najmniejsze λ z λΣ_{j≥i} s_j⟨β₀,v_j⟩² ≥ (σ²/n)Σ_{j≥i} s_j dla wszystkich i."""
    truth = spec.require_truth("monotonicity_certificate")
    s = spec.s
    signal = np.cumsum((s * spec.beta0_coords**2)[::-1])[::-1]
    noise = truth.sigma2 / spec.n * np.cumsum(s[::-1])[::-1]
    active = noise > 0
    if np.any(active & (signal <= 0)):
        return MonotonicityCertificate(lambda_min=math.inf, holds=False, feasible=False)
    lambda_min = float(np.max(noise[active] / signal[active], initial=0.0))
    return MonotonicityCertificate(lambda_min=lambda_min, holds=bool(spec.lam >= lambda_min), feasible=True)


@dataclass(frozen=True)
class OutOfSampleRecord:
    N_lambda: float
    op_gap: float
    loss_in: float
    loss_out: float
    gap_ok: bool


def _population_eigen(Sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        values, vectors = scipy.linalg.eigh(Sigma)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigendecomposition of Sigma failed: {exc}") from exc
    return np.clip(values, 0.0, None), vectors


def effective_rank(Sigma: np.ndarray, lam: float) -> float:
    """𝒩(λ) = tr(Σ_λ^{-1}Σ)."""
    values, _ = _population_eigen(np.asarray(Sigma, dtype=np.float64))
    return float(np.sum(values * pinv_power(values + lam, -1.0)))


def out_of_sample_gap(
    spec: PenalisedSpectrum,
    beta_hat: np.ndarray,
    target: TargetSpec | np.ndarray,
) -> OutOfSampleRecord:
    """Strata poza próbą ‖Σ_λ^{1/2}(β̂−γ)‖² i jej odległość od straty w próbie."""
    truth = spec.require_truth("out_of_sample_gap")
    if truth.Sigma is None:
        raise InputError("out_of_sample_gap requires a population covariance Sigma")
    gamma = target.resolve(spec) if isinstance(target, TargetSpec) else np.asarray(target, dtype=np.float64)
    values, vectors = _population_eigen(truth.Sigma)
    lam = spec.lam

    diff = spec.to_original(np.asarray(beta_hat, dtype=np.float64) - gamma)
    Sigma_l = truth.Sigma + lam * np.eye(spec.p)
    loss_out = float(diff @ Sigma_l @ diff)
    loss_inside = loss_in(spec, beta_hat, gamma)

    whitening = (vectors * pinv_power(values + lam, -0.5)) @ vectors.T
    Sigma_hat = (spec.V * spec.s) @ spec.V.T
    middle = whitening @ (truth.Sigma - Sigma_hat) @ whitening
    op_gap = float(np.max(np.abs(scipy.linalg.eigvalsh(0.5 * (middle + middle.T))), initial=0.0))
    N = float(np.sum(values * pinv_power(values + lam, -1.0)))

    slack = SATISFIED_RTOL * max(loss_out, loss_inside) + 1e-300
    gap_ok = abs(loss_out - loss_inside) <= op_gap * loss_out + slack
    return OutOfSampleRecord(N_lambda=N, op_gap=op_gap, loss_in=loss_inside, loss_out=loss_out, gap_ok=bool(gap_ok))
