from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import InputError, NumericalError
from .spectral import EigenOperator, PenalisedSpectrum, apply_filter, pinv_power
from .utils import get_logger


logger = get_logger("estimators")

DEFAULT_REL_TOL = 1e-13
BISECT_RTOL = 1e-12

FILTER_KINDS = ("RR", "GF", "GD", "CG")


@dataclass(frozen=True)
class FilterSpec:
    """Filtr resztowy ścieżki regularyzacji.

    RR: param = λ′ (λ′ = inf oznacza estymator zerowy),
    GF: param = t, GD: param = k (liczba kroków) i eta,
    CG: param = t (indeks interpolowany).
    """

    kind: str
    param: float
    eta: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in FILTER_KINDS:
            raise InputError(f"unknown filter kind {self.kind!r}")
        param = float(self.param)
        if math.isnan(param) or param < 0:
            raise InputError(f"{self.kind} parameter must be non-negative, got {self.param}")
        if self.kind in ("CG", "GD") and math.isinf(param):
            raise InputError(f"{self.kind} parameter must be finite")
        if self.kind == "GD":
            if self.eta is None or not self.eta > 0 or not math.isfinite(self.eta):
                raise InputError("GD filter needs a positive finite eta")
            if param != int(param):
                raise InputError(f"GD step count must be an integer, got {param}")
        object.__setattr__(self, "param", param)

    @classmethod
    def rr(cls, lambda_prime: float) -> "FilterSpec":
        return cls("RR", lambda_prime)

    @classmethod
    def gf(cls, t: float) -> "FilterSpec":
        return cls("GF", t)

    @classmethod
    def gd(cls, eta: float, k: int) -> "FilterSpec":
        return cls("GD", k, eta=float(eta))

    @classmethod
    def cg(cls, t: float) -> "FilterSpec":
        return cls("CG", t)

    @property
    def is_linear(self) -> bool:
        return self.kind != "CG"

    def residual(self, spec: PenalisedSpectrum) -> EigenOperator:
        """R(Σ̂_λ) dla filtrów liniowych (RR, GF, GD)."""
        if self.kind == "GF":
            t = self.param
            return apply_filter(spec, lambda x: np.exp(-t * x))
        if self.kind == "GD":
            eta, k = float(self.eta), int(self.param)
            return apply_filter(spec, lambda x: (1.0 - eta * x) ** k)
        if self.kind == "RR":
            return _ridge_residual(spec, self.param)
        raise InputError("CG residual depends on y; use residual_polynomial(trace, t)")


def _ridge_residual(spec: PenalisedSpectrum, lambda_prime: float) -> EigenOperator:
    # R(x) = (λ′−λ)/(x+λ′−λ); tam gdzie s_i + λ′ = 0 pseudo-odwrotność daje R = 1
    if math.isinf(lambda_prime):
        return EigenOperator(np.ones_like(spec.s))
    shift = lambda_prime - spec.lam
    denom = spec.s + lambda_prime
    values = np.ones_like(spec.s)
    pos = denom > 0
    values[pos] = shift / denom[pos]
    return EigenOperator(values)


def filter_estimate(spec: PenalisedSpectrum, residual: EigenOperator) -> np.ndarray:
    """Σ̂_λ^{-1/2}(I − R(Σ̂_λ)) y_λ we współrzędnych bazy własnej."""
    y_l = spec.y_lambda_coords
    return pinv_power(spec.sl, -0.5) * (y_l - residual(y_l))


def ridge(spec: PenalisedSpectrum, lambda_prime: float) -> np.ndarray:
    lambda_prime = float(lambda_prime)
    if math.isnan(lambda_prime) or lambda_prime < 0:
        raise InputError(f"lambda_prime must be non-negative, got {lambda_prime}")
    if math.isinf(lambda_prime):
        return np.zeros_like(spec.s)
    return pinv_power(spec.s + lambda_prime, -1.0) * spec.xty_coords


def default_step(spec: PenalisedSpectrum) -> float:
    """η = 1/(2λ + ‖Σ̂‖)."""
    denom = 2.0 * spec.lam + float(spec.s[0])
    if denom <= 0:
        raise InputError("default step undefined for a zero design with lambda = 0")
    return 1.0 / denom


@dataclass(frozen=True)
class GradientDescentPath:
    eta: float
    iterates: np.ndarray
    diverging: bool

    @property
    def steps(self) -> int:
        return int(self.iterates.shape[0] - 1)


def gradient_descent(spec: PenalisedSpectrum, eta: Optional[float] = None, K: int = 0) -> GradientDescentPath:
    """Iteracje GD β̂ᵏ = β̂ᵏ⁻¹ − η(Σ̂_λβ̂ᵏ⁻¹ − Σ̂_λ^{1/2}y_λ) dla k = 0..K."""
    eta = default_step(spec) if eta is None else float(eta)
    if not eta > 0 or not math.isfinite(eta):
        raise InputError(f"eta must be positive and finite, got {eta}")
    if int(K) != K or K < 0:
        raise InputError(f"K must be a non-negative integer, got {K}")
    K = int(K)
    diverging = eta >= 2.0 / spec.norm if spec.norm > 0 else False
    if diverging:
        logger.warning(f"GD step eta={eta:.6g} is beyond the stability limit 2/(s_1+lambda)={2.0 / spec.norm:.6g}")

    sl = spec.sl
    drift = spec.xty_coords
    iterates = np.zeros((K + 1, spec.p))
    current = iterates[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, K + 1):
            current = current - eta * (sl * current - drift)
            iterates[k] = current
    return GradientDescentPath(eta=eta, iterates=iterates, diverging=bool(diverging))


def gradient_flow(spec: PenalisedSpectrum, t: float) -> np.ndarray:
    t = float(t)
    if math.isnan(t) or t < 0:
        raise InputError(f"t must be non-negative, got {t}")
    gain = -np.expm1(-t * spec.sl)
    return pinv_power(spec.sl, -0.5) * gain * spec.y_lambda_coords


@dataclass(frozen=True)
class CGTrace:
    """Stan algorytmu CG z karą po każdej iteracji.

    iterates[k] to β̂ᵏ we współrzędnych bazy własnej; a[k-1], b[k-1] to a_k, b_k.
    ritz[k] to posortowane zera R_k (ritz[0] jest puste), rho[k] = Σ 1/x_{i,k}.
    """

    lam: float
    iterates: np.ndarray
    a: np.ndarray
    b: np.ndarray
    q_norm2: np.ndarray
    lanczos_diag: np.ndarray
    lanczos_off: np.ndarray
    ritz: tuple
    rho: np.ndarray
    stop_index: int
    p_tilde: int
    stopped_by_tolerance: bool
    reorthogonalised: bool

    def tridiag(self, k: int) -> np.ndarray:
        """Macierz Lanczosa T_k (k×k)."""
        if not 1 <= k <= self.stop_index:
            raise InputError(f"T_k defined for 1 <= k <= {self.stop_index}, got {k}")
        T = np.diag(self.lanczos_diag[:k])
        if k > 1:
            off = self.lanczos_off[: k - 1]
            T += np.diag(off, 1) + np.diag(off, -1)
        return T

    def smallest_zero(self, k: int) -> float:
        return float(self.ritz[k][0]) if k >= 1 else math.inf


def _lanczos(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diag = 1.0 / a
    diag[1:] += b[:-1] / a[:-1]
    off = np.sqrt(b) / a
    return diag, off


def _ritz_values(diag: np.ndarray, off: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return np.array([diag[0]])
    try:
        values = scipy.linalg.eigh_tridiagonal(diag[:k], off[: k - 1], eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Ritz values of T_{k} failed: {exc}") from exc
    return np.sort(values)


def cg_solve(
    spec: PenalisedSpectrum,
    rel_tol: float = DEFAULT_REL_TOL,
    *,
    max_iter: Optional[int] = None,
    reorthogonalise: bool = True,
) -> CGTrace:
    """CG z karą λ w oryginalnych współrzędnych (iloczyny z X i Xᵀ).

    Zatrzymuje się gdy ‖q_k‖ <= rel_tol·‖q_0‖ albo k = p̃.
    """
    if not rel_tol > 0:
        raise InputError(f"rel_tol must be positive, got {rel_tol}")
    start_time = time.perf_counter()
    data, lam = spec.data, spec.lam
    X, n = data.X, data.n
    limit = spec.p_tilde if max_iter is None else min(spec.p_tilde, int(max_iter))

    beta = np.zeros(data.p)
    q = X.T @ data.y / n
    d = q.copy()
    e = X @ d
    q0_norm2 = float(q @ q)

    betas = [beta.copy()]
    a_list: list[float] = []
    b_list: list[float] = []
    q_norm2 = [q0_norm2]
    basis: list[np.ndarray] = []
    stopped_by_tolerance = q0_norm2 == 0.0
    if q0_norm2 > 0 and reorthogonalise:
        basis.append(q / math.sqrt(q0_norm2))

    k = 0
    while not stopped_by_tolerance and k < limit:
        k += 1
        curvature = float(e @ e) / n + lam * float(d @ d)
        if not curvature > 0:
            raise NumericalError(f"CG step {k}: non-positive curvature {curvature:.3g}")
        a_k = q_norm2[-1] / curvature
        beta = beta + a_k * d
        q_next = q - (a_k / n) * (X.T @ e) - lam * a_k * d
        if reorthogonalise and basis:
            Q = np.column_stack(basis)
            for _ in range(2):
                q_next = q_next - Q @ (Q.T @ q_next)
        norm2 = float(q_next @ q_next)
        b_k = norm2 / q_norm2[-1]
        d = q_next + b_k * d
        e = X @ d
        q = q_next

        betas.append(beta.copy())
        a_list.append(a_k)
        b_list.append(b_k)
        q_norm2.append(norm2)
        if norm2 <= (rel_tol**2) * q0_norm2:
            stopped_by_tolerance = True
        elif reorthogonalise:
            basis.append(q / math.sqrt(norm2))

    if k > spec.p_tilde:
        raise NumericalError(f"CG ran {k} steps beyond p_tilde={spec.p_tilde}")

    a = np.array(a_list)
    b = np.array(b_list)
    if k:
        diag, off = _lanczos(a, b)
    else:
        diag, off = np.zeros(0), np.zeros(0)
    ritz = [np.zeros(0)] + [_ritz_values(diag, off, j) for j in range(1, k + 1)]
    rho = np.array([0.0] + [float(np.sum(1.0 / z)) for z in ritz[1:]])

    iterates = np.array(betas) @ spec.V
    if k < spec.p_tilde:
        logger.warning(f"CG stopped at k={k} before p_tilde={spec.p_tilde} (relative residual {math.sqrt(q_norm2[-1] / q0_norm2) if q0_norm2 else 0.0:.3g})")
    elapsed_ms = (time.perf_counter() - start_time) * 1000
    logger.debug(f"CG finished in {elapsed_ms:.2f}ms (stop_index={k}, p_tilde={spec.p_tilde})")
    return CGTrace(
        lam=lam,
        iterates=iterates,
        a=a,
        b=b,
        q_norm2=np.array(q_norm2),
        lanczos_diag=diag,
        lanczos_off=off,
        ritz=tuple(ritz),
        rho=rho,
        stop_index=k,
        p_tilde=spec.p_tilde,
        stopped_by_tolerance=stopped_by_tolerance,
        reorthogonalised=reorthogonalise,
    )


def _split_time(trace: CGTrace, t: float) -> tuple[int, float]:
    t = float(t)
    if not math.isfinite(t) or t < 0 or t > trace.stop_index:
        raise InputError(f"t must lie in [0, {trace.stop_index}], got {t}")
    k = int(math.floor(t))
    if k >= trace.stop_index:
        return trace.stop_index, 0.0
    return k, t - k


def _product(zeros: np.ndarray, x: np.ndarray) -> np.ndarray:
    """∏_i (1 − x/z_i) liczony w dziedzinie logarytmów ze znakiem."""
    if zeros.size == 0:
        return np.ones_like(x)
    factors = 1.0 - x[..., None] / zeros
    with np.errstate(divide="ignore"):
        log_abs = np.sum(np.log(np.abs(factors)), axis=-1)
    sign = np.prod(np.sign(factors), axis=-1)
    return sign * np.exp(log_abs)


@dataclass(frozen=True)
class ResidualPolynomial:
    """R_t = (1−α)R_k + αR_{k+1}, R_j(x) = ∏(1 − x/x_{i,j})."""

    t: float
    k: int
    alpha: float
    rho_t: float
    x1_t: float
    zeros_k: np.ndarray
    zeros_next: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        value = _product(self.zeros_k, x)
        if self.alpha > 0:
            value = (1.0 - self.alpha) * value + self.alpha * _product(self.zeros_next, x)
        return value

    def truncated(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(R_{t,<}(x), R_{t,>}(x)); x = x_{1,t} trafia do gałęzi "<"."""
        x = np.asarray(x, dtype=np.float64)
        value = self(x)
        below = x <= self.x1_t
        return np.where(below, value, 0.0), np.where(below, 0.0, value)


def residual_polynomial(trace: CGTrace, t: float) -> ResidualPolynomial:
    k, alpha = _split_time(trace, t)
    zeros_k = trace.ritz[k]
    zeros_next = trace.ritz[k + 1] if alpha > 0 else np.zeros(0)
    rho_t = rho_at(trace, t)
    poly = ResidualPolynomial(float(t), k, alpha, rho_t, math.inf, zeros_k, zeros_next)

    if alpha == 0:
        x1 = trace.smallest_zero(k)
    elif k == 0:
        x1 = float(zeros_next[0]) / alpha
    else:
        lo, hi = float(zeros_next[0]), float(zeros_k[0])
        f = lambda x: float(poly(np.array(x)))
        f_lo, f_hi = f(lo), f(hi)
        if lo >= hi or f_lo == 0.0 or f_hi == 0.0 or f_lo * f_hi > 0:
            # przedział zdegenerowany przez zaokrąglenia
            x1 = lo if abs(f_lo) <= abs(f_hi) else hi
        else:
            x1 = scipy.optimize.bisect(f, lo, hi, xtol=BISECT_RTOL * hi, maxiter=200)
    return ResidualPolynomial(float(t), k, alpha, rho_t, float(x1), zeros_k, zeros_next)


def rho_at(trace: CGTrace, t: float) -> float:
    """ρ_t = (1−α)ρ_k + αρ_{k+1} bez wyznaczania zer."""
    k, alpha = _split_time(trace, t)
    if alpha == 0:
        return float(trace.rho[k])
    return (1.0 - alpha) * float(trace.rho[k]) + alpha * float(trace.rho[k + 1])


def cg_interpolated(trace: CGTrace, t: float) -> np.ndarray:
    k, alpha = _split_time(trace, t)
    if alpha == 0:
        return trace.iterates[k].copy()
    return (1.0 - alpha) * trace.iterates[k] + alpha * trace.iterates[k + 1]


def tau(trace: CGTrace, t: float) -> float:
    """τ_t = inf{t̃ : ρ_t̃ >= 2t} ∧ stop_index (odwrócenie kawałkami liniowej ρ)."""
    t = float(t)
    if math.isnan(t) or t < 0:
        raise InputError(f"t must be non-negative, got {t}")
    target = 2.0 * t
    if target == 0.0:
        return 0.0
    rho = trace.rho
    if target >= rho[-1]:
        return float(trace.stop_index)
    j = int(np.searchsorted(rho, target, side="left"))
    if rho[j] == target:
        return float(j)
    return (j - 1) + (target - rho[j - 1]) / (rho[j] - rho[j - 1])


def cg_time_grid(trace: CGTrace, subdivisions: int = 8) -> np.ndarray:
    """Węzły 0..stop_index z `subdivisions` podziałami na jednostkę."""
    if subdivisions < 1:
        raise InputError(f"subdivisions must be >= 1, got {subdivisions}")
    points = trace.stop_index * subdivisions + 1
    grid = np.arange(points) / subdivisions
    grid[-1] = float(trace.stop_index)
    return grid
