from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import ConditionViolated, IdentityViolation, InputError
from .estimators import (
    CGTrace,
    FilterSpec,
    cg_interpolated,
    filter_estimate,
    residual_polynomial,
    rho_at,
)
from .spectral import PenalisedSpectrum, pinv_power
from .utils import get_logger


logger = get_logger("risk")

IDENTITY_RTOL = 1e-9
GAMMA_COND_RTOL = 1e-12

TARGET_KINDS = ("beta0", "beta_lambda", "beta_lambda_prime")


@dataclass(frozen=True)
class TargetSpec:
    """Wektor docelowy γ: β₀, β_λ lub β_{λ′} z λ′ ∈ [0, λ]."""

    kind: str
    lambda_prime: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in TARGET_KINDS:
            raise InputError(f"unknown target kind {self.kind!r}")
        if self.kind == "beta_lambda_prime":
            lp = self.lambda_prime
            if lp is None or not math.isfinite(lp) or lp < 0:
                raise InputError(f"beta_lambda_prime needs a finite lambda_prime >= 0, got {lp}")

    @classmethod
    def beta0(cls) -> "TargetSpec":
        return cls("beta0")

    @classmethod
    def beta_lambda(cls) -> "TargetSpec":
        return cls("beta_lambda")

    @classmethod
    def beta_lambda_prime(cls, lambda_prime: float) -> "TargetSpec":
        return cls("beta_lambda_prime", float(lambda_prime))

    @property
    def label(self) -> str:
        if self.kind == "beta_lambda_prime":
            return f"beta_lambda_prime={self.lambda_prime!r}"
        return self.kind

    def resolve(self, spec: PenalisedSpectrum) -> np.ndarray:
        spec.require_truth(f"target {self.kind}")
        if self.kind == "beta0":
            return np.array(spec.beta0_coords)
        if self.kind == "beta_lambda":
            return np.array(spec.beta_lambda_coords)
        if self.lambda_prime > spec.lam:
            raise InputError(f"lambda_prime={self.lambda_prime} must not exceed lambda={spec.lam}")
        return spec.s * pinv_power(spec.s + self.lambda_prime, -1.0) * spec.beta0_coords


Target = Union[TargetSpec, np.ndarray]


def _gamma(spec: PenalisedSpectrum, target: Target) -> np.ndarray:
    if isinstance(target, TargetSpec):
        return target.resolve(spec)
    gamma = np.asarray(target, dtype=np.float64)
    if gamma.shape != (spec.p,):
        raise InputError(f"target coordinates must have length p={spec.p}")
    return gamma


@dataclass(frozen=True)
class ErrorBreakdown:
    """Rozkład straty: total = A + S − 2C."""

    A: float
    S: float
    C: float
    total: float
    bound_components: Optional[tuple[float, float]] = None
    nemirovskii: Optional[float] = None

    @property
    def identity_gap(self) -> float:
        return self.total - (self.A + self.S - 2.0 * self.C)


class CGBound(NamedTuple):
    A_bar: float
    S_bar: float
    bound_total: float
    gamma_condition: float


def loss_in(spec: PenalisedSpectrum, beta_hat: np.ndarray, target: Target) -> float:
    """‖Σ̂_λ^{1/2}(β̂ − γ)‖²."""
    diff = np.asarray(beta_hat, dtype=np.float64) - _gamma(spec, target)
    return float(np.sum(spec.sl * diff**2))


def loss_pure(spec: PenalisedSpectrum, beta_hat: np.ndarray) -> float:
    """Niekarana strata predykcji ‖Σ̂^{1/2}(β̂ − β₀)‖²."""
    spec.require_truth("loss_pure")
    diff = np.asarray(beta_hat, dtype=np.float64) - spec.beta0_coords
    return float(np.sum(spec.s * diff**2))


def _check_identity(operation: str, breakdown: ErrorBreakdown, t: Optional[float] = None) -> None:
    scale = breakdown.A + breakdown.S + 2.0 * abs(breakdown.C) + abs(breakdown.total)
    if abs(breakdown.identity_gap) > IDENTITY_RTOL * max(scale, np.finfo(np.float64).tiny):
        raise IdentityViolation(operation, breakdown.total, breakdown.A + breakdown.S - 2.0 * breakdown.C, t)


def _linear_residual(spec: PenalisedSpectrum, filter: FilterSpec) -> np.ndarray:
    if not filter.is_linear:
        raise InputError("CG is not a linear filter; use decompose_cg")
    return filter.residual(spec).multipliers


def decompose_linear(spec: PenalisedSpectrum, filter: FilterSpec, target: Target) -> ErrorBreakdown:
    spec.require_truth("decompose_linear")
    R = _linear_residual(spec, filter)
    gamma = _gamma(spec, target)
    beta_l, eps_l, sl = spec.beta_lambda_coords, spec.eps_lambda_coords, spec.sl

    bias = R * beta_l + gamma - beta_l
    noise = (1.0 - R) * eps_l
    A = float(np.sum(sl * bias**2))
    S = float(np.sum(noise**2))
    C = float(np.sum(np.sqrt(sl) * bias * noise))
    total = loss_in(spec, filter_estimate(spec, filter.residual(spec)), gamma)
    breakdown = ErrorBreakdown(A=A, S=S, C=C, total=total)
    _check_identity(f"decompose_linear[{filter.kind}]", breakdown, filter.param)
    return breakdown


def risk_linear_parts(spec: PenalisedSpectrum, filter: FilterSpec, target: Target) -> tuple[float, float]:
    """(A_{λ,γ}(R), (σ²/n)·Σ(1−R)² s/(s+λ))."""
    truth = spec.require_truth("risk_linear")
    R = _linear_residual(spec, filter)
    gamma = _gamma(spec, target)
    bias = R * spec.beta_lambda_coords + gamma - spec.beta_lambda_coords
    approx = float(np.sum(spec.sl * bias**2))
    variance = truth.sigma2 / spec.n * float(np.sum((1.0 - R) ** 2 * spec.s * pinv_power(spec.sl, -1.0)))
    return approx, variance


def risk_linear(spec: PenalisedSpectrum, filter: FilterSpec, target: Target) -> float:
    approx, variance = risk_linear_parts(spec, filter, target)
    return approx + variance


def decompose_cg(spec: PenalisedSpectrum, trace: CGTrace, t: float) -> ErrorBreakdown:
    """Rozkład straty CG względem β_λ z filtrami obciętymi na x_{1,t}.

    Zwraca też ograniczenie Niemirowskiego ‖Σ̂_λ^{1/2}R_{t,<}^{1/2}β_λ‖² oraz
    składowe (Ā_t, S̄_t).
    """
    spec.require_truth("decompose_cg")
    poly = residual_polynomial(trace, t)
    sl = spec.sl
    beta_l, eps_l, y_l = spec.beta_lambda_coords, spec.eps_lambda_coords, spec.y_lambda_coords
    beta_t = cg_interpolated(trace, t)

    # Postać iloczynowa jest stabilna tylko na [0, x_{1,t}]; powyżej R_t y_λ bierzemy z iteratów
    residual = y_l - np.sqrt(sl) * beta_t
    above = sl > poly.x1_t
    below = np.where(above, 0.0, poly(np.minimum(sl, poly.x1_t)))

    nemirovskii = float(np.sum(sl * below * beta_l**2))
    A = nemirovskii + float(np.sum(residual**2)) - float(np.sum(below * y_l**2))
    S = float(np.sum((1.0 - below) * eps_l**2))
    C = float(np.sum(np.where(above, residual, 0.0) * eps_l))
    total = loss_in(spec, beta_t, beta_l)

    A_bar, S_bar = _cor_bounds(spec, poly.rho_t)
    breakdown = ErrorBreakdown(A=A, S=S, C=C, total=total, bound_components=(A_bar, S_bar), nemirovskii=nemirovskii)
    _check_identity("decompose_cg", breakdown, float(t))
    return breakdown


def nemirovskii_slack(spec: PenalisedSpectrum, breakdown: ErrorBreakdown, rtol: float = IDENTITY_RTOL) -> float:
    """Tolerancja dla A_t <= ograniczenie Niemirowskiego w skali problemu."""
    signal = float(np.sum(spec.sl * spec.beta_lambda_coords**2))
    return rtol * max(breakdown.nemirovskii or 0.0, abs(breakdown.total), signal)


def nemirovskii_holds(spec: PenalisedSpectrum, breakdown: ErrorBreakdown, rtol: float = IDENTITY_RTOL) -> bool:
    return breakdown.A <= (breakdown.nemirovskii or 0.0) + nemirovskii_slack(spec, breakdown, rtol)


def _cor_bounds(spec: PenalisedSpectrum, rho: float) -> tuple[float, float]:
    sl = spec.sl
    A_bar = float(np.sum(sl * np.exp(-rho * sl) * spec.beta_lambda_coords**2))
    S_bar = float(np.sum(np.minimum(rho * sl, 1.0) * spec.eps_lambda_coords**2))
    return A_bar, S_bar


def gamma_condition(spec: PenalisedSpectrum, rho: float, gamma: np.ndarray) -> tuple[float, float]:
    """(⟨Σ̂_λ e^{−ρΣ̂_λ/2}β_λ, γ − β_λ⟩, tolerancja)."""
    sl, beta_l = spec.sl, spec.beta_lambda_coords
    shift = gamma - beta_l
    value = float(np.sum(sl * np.exp(-0.5 * rho * sl) * beta_l * shift))
    tolerance = GAMMA_COND_RTOL * math.sqrt(float(np.sum(sl * beta_l**2)) * float(np.sum(sl * shift**2)))
    return value, tolerance


def cg_bound(spec: PenalisedSpectrum, trace: CGTrace, t: float, target: Target) -> CGBound:
    spec.require_truth("cg_bound")
    rho = rho_at(trace, t)
    A_bar, S_bar = _cor_bounds(spec, rho)
    if isinstance(target, TargetSpec) and target.kind == "beta_lambda":
        return CGBound(A_bar, S_bar, 2.0 * A_bar + 2.0 * S_bar, 0.0)

    gamma = _gamma(spec, target)
    value, tolerance = gamma_condition(spec, rho, gamma)
    if value < -tolerance:
        raise ConditionViolated(value, tolerance)
    sl = spec.sl
    shifted = np.exp(-0.5 * rho * sl) * spec.beta_lambda_coords + gamma - spec.beta_lambda_coords
    A_gamma = float(np.sum(sl * shifted**2))
    return CGBound(A_gamma, S_bar, 4.0 * A_gamma + 4.0 * S_bar, value)


def population_offset(spec: PenalisedSpectrum) -> float:
    """½σ² + ½‖Σ̂^{1/2}β₀‖² − ½‖Σ̂_λ^{1/2}β_λ‖².

    Dodane do połowy straty względem β_λ daje oczekiwane kryterium ridge.
    """
    truth = spec.require_truth("population_offset")
    signal = float(np.sum(spec.s * spec.beta0_coords**2))
    shrunk = float(np.sum(spec.sl * spec.beta_lambda_coords**2))
    return 0.5 * truth.sigma2 + 0.5 * signal - 0.5 * shrunk
