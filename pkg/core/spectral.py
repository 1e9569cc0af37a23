from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import InputError, NumericalError
from .utils import get_logger


logger = get_logger("spectral")

# Dwie wartości własne Σ̂_λ są "równe", gdy różnica <= CLUSTER_RTOL * (s_1 + λ)
CLUSTER_RTOL = 1e-10
SYMMETRY_RTOL = 1e-10


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def pinv_power(x: np.ndarray, power: float) -> np.ndarray:
    """x**power dla x > 0 i 0 w jądrze (konwencja pseudo-odwrotności)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] ** power
    return out


def _rank_tol(singular_values: np.ndarray, shape: tuple[int, int]) -> float:
    if singular_values.size == 0:
        return 0.0
    return float(singular_values.max()) * max(shape) * np.finfo(np.float64).eps


@dataclass(frozen=True)
class Dataset:
    """Macierz cech X (n×p, wiersze to obserwacje) i wektor odpowiedzi y."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InputError(f"X must be a non-empty 2-d array, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise InputError(f"y must have length n={X.shape[0]}, got shape {y.shape}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise InputError("dataset contains non-finite entries")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    def with_response(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.X, y)


@dataclass(frozen=True)
class ModelTruth:
    """Prawdziwe β₀, wariancja szumu σ² i opcjonalna kowariancja populacyjna Σ."""

    beta0: np.ndarray
    sigma2: float
    Sigma: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        beta0 = np.asarray(self.beta0, dtype=np.float64)
        if beta0.ndim != 1 or not np.all(np.isfinite(beta0)):
            raise InputError("beta0 must be a finite 1-d vector")
        sigma2 = float(self.sigma2)
        if not np.isfinite(sigma2) or sigma2 < 0:
            raise InputError(f"sigma2 must be finite and non-negative, got {sigma2}")
        object.__setattr__(self, "beta0", _frozen(beta0))
        object.__setattr__(self, "sigma2", sigma2)
        if self.Sigma is not None:
            object.__setattr__(self, "Sigma", _frozen(_checked_covariance(self.Sigma, beta0.shape[0])))

    @property
    def p(self) -> int:
        return int(self.beta0.shape[0])

    def attach(self, data: Dataset) -> "ModelTruth":
        """Zwraca kopię z β₀ zastąpionym rzutem na przestrzeń wierszy X."""
        if self.p != data.p:
            raise InputError(f"beta0 has length {self.p}, dataset has p={data.p}")
        return replace(self, beta0=min_norm_project(data, self.beta0))

    def noise(self, data: Dataset) -> np.ndarray:
        return data.y - data.X @ self.beta0


def _checked_covariance(Sigma: np.ndarray, p: int) -> np.ndarray:
    S = np.asarray(Sigma, dtype=np.float64)
    if S.shape != (p, p):
        raise InputError(f"Sigma must be {p}x{p}, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InputError("Sigma contains non-finite entries")
    scale = max(1.0, float(np.abs(S).max()))
    if np.abs(S - S.T).max() > SYMMETRY_RTOL * scale:
        raise InputError("Sigma is not symmetric")
    S = 0.5 * (S + S.T)
    try:
        lowest = float(scipy.linalg.eigvalsh(S)[0])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigenvalues of Sigma failed: {exc}") from exc
    if lowest < -SYMMETRY_RTOL * scale:
        raise InputError(f"Sigma is not positive semi-definite (smallest eigenvalue {lowest:.3g})")
    return S


@dataclass(frozen=True)
class EigenOperator:
    """Operator f(Σ̂_λ) zapisany jako mnożniki w bazie wektorów własnych."""

    multipliers: np.ndarray

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return self.multipliers * coords


@dataclass(frozen=True)
class PenalisedSpectrum:
    """Rozkład spektralny Σ̂ = XᵀX/n z karą λ i wielkościami y_λ, β_λ, ε_λ.

    Wszystkie wektory są współrzędnymi w bazie V (kolumny to v_i).
    """

    lam: float
    s: np.ndarray
    V: np.ndarray
    p_tilde: int
    distinct_eigenvalues: np.ndarray
    xty_coords: np.ndarray
    y_lambda_coords: np.ndarray
    data: Dataset
    truth: Optional[ModelTruth] = None
    beta0_coords: Optional[np.ndarray] = None
    beta_lambda_coords: Optional[np.ndarray] = None
    eps_lambda_coords: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def p(self) -> int:
        return self.data.p

    @property
    def sl(self) -> np.ndarray:
        """Wartości własne Σ̂_λ."""
        return self.s + self.lam

    @property
    def norm(self) -> float:
        """‖Σ̂_λ‖ = s_1 + λ."""
        return float(self.s[0] + self.lam)

    @property
    def has_truth(self) -> bool:
        return self.truth is not None

    def to_original(self, coords: np.ndarray) -> np.ndarray:
        return self.V @ coords

    def to_coords(self, vector: np.ndarray) -> np.ndarray:
        return self.V.T @ vector

    def require_truth(self, operation: str) -> ModelTruth:
        if self.truth is None:
            raise InputError(f"{operation} requires ModelTruth attached to the spectrum")
        return self.truth

    def with_response(self, data: Dataset, truth: Optional[ModelTruth] = None) -> "PenalisedSpectrum":
        """Nowe y (ta sama macierz X): eigenpary są używane ponownie."""
        if data.X.shape != self.data.X.shape or not np.array_equal(data.X, self.data.X):
            raise InputError("with_response requires the same design matrix")
        return _assemble(data, self.lam, self.s, self.V, truth)


def _eigen_pairs(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    scaled = data.X / np.sqrt(data.n)
    try:
        _, sv, vt = scipy.linalg.svd(scaled, full_matrices=True, lapack_driver="gesdd")
    except (np.linalg.LinAlgError, ValueError):
        # gesdd czasem nie zbiega - awaryjnie wolniejszy gesvd
        try:
            _, sv, vt = scipy.linalg.svd(scaled, full_matrices=True, lapack_driver="gesvd")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"singular value decomposition failed: {exc}") from exc
    sv = np.where(sv > _rank_tol(sv, scaled.shape), sv, 0.0)
    s = np.zeros(data.p)
    s[: sv.shape[0]] = sv**2
    return s, vt.T


def _cluster(sl: np.ndarray, s: np.ndarray) -> tuple[int, np.ndarray]:
    # Jądro X nie niesie masy y_λ (Xᵀy ⟂ ker X), więc liczymy tylko s_i > 0
    positive = s > 0
    if not np.any(positive):
        return 0, np.zeros(0)
    values = sl[positive]
    threshold = CLUSTER_RTOL * float(values[0])
    breaks = np.flatnonzero(-np.diff(values) > threshold) + 1
    groups = np.split(s[positive], breaks)
    return len(groups), np.array([g.mean() for g in groups])


def _assemble(
    data: Dataset,
    lam: float,
    s: np.ndarray,
    V: np.ndarray,
    truth: Optional[ModelTruth],
) -> PenalisedSpectrum:
    sl = s + lam
    inv_sqrt = pinv_power(sl, -0.5)
    xty = V.T @ (data.X.T @ data.y) / data.n
    xty = np.where(sl > 0, xty, 0.0)
    y_lambda = inv_sqrt * xty
    p_tilde, distinct = _cluster(sl, s)

    beta0_coords = beta_lambda = eps_lambda = None
    if truth is not None:
        truth = truth.attach(data)
        beta0_coords = np.where(s > 0, V.T @ truth.beta0, 0.0)
        beta_lambda = s * pinv_power(sl, -1.0) * beta0_coords
        eps = truth.noise(data)
        eps_lambda = inv_sqrt * np.where(sl > 0, V.T @ (data.X.T @ eps) / data.n, 0.0)

    return PenalisedSpectrum(
        lam=float(lam),
        s=_frozen(s),
        V=_frozen(V),
        p_tilde=int(p_tilde),
        distinct_eigenvalues=_frozen(distinct),
        xty_coords=_frozen(xty),
        y_lambda_coords=_frozen(y_lambda),
        data=data,
        truth=truth,
        beta0_coords=None if beta0_coords is None else _frozen(beta0_coords),
        beta_lambda_coords=None if beta_lambda is None else _frozen(beta_lambda),
        eps_lambda_coords=None if eps_lambda is None else _frozen(eps_lambda),
    )


def decompose(data: Dataset, lam: float, truth: Optional[ModelTruth] = None) -> PenalisedSpectrum:
    """Rozkład Σ̂ przez SVD macierzy X/√n i wielkości przekształcone dla kary λ."""
    start_time = time.perf_counter()
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise InputError(f"lambda must be finite and non-negative, got {lam}")
    s, V = _eigen_pairs(data)
    spec = _assemble(data, lam, s, V, truth)
    elapsed_ms = (time.perf_counter() - start_time) * 1000
    logger.debug(f"Spectrum decomposed in {elapsed_ms:.2f}ms (n={data.n}, p={data.p}, p_tilde={spec.p_tilde})")
    return spec


def apply_filter(spec: PenalisedSpectrum, f: Callable[[np.ndarray], np.ndarray]) -> EigenOperator:
    """f(Σ̂_λ) jako mnożenie współrzędnych przez f(s_i + λ)."""
    x = spec.sl
    with np.errstate(all="ignore"):
        try:
            values = np.asarray(f(x), dtype=np.float64)
        except TypeError:
            # funkcja skalarna (np. math.exp) - wartościujemy punkt po punkcie
            values = np.array([float(f(float(v))) for v in x])
    values = np.array(np.broadcast_to(values, x.shape), dtype=np.float64)
    bad = ~np.isfinite(values)
    if np.any(bad):
        where = float(x[np.flatnonzero(bad)[0]])
        raise NumericalError(f"filter is not finite at eigenvalue {where:.6g}")
    return EigenOperator(_frozen(values))


def min_norm_project(data: Dataset, beta: np.ndarray) -> np.ndarray:
    """X⁺X β - rzut β na przestrzeń wierszy X."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (data.p,):
        raise InputError(f"beta must have length p={data.p}, got shape {beta.shape}")
    try:
        _, sv, vt = scipy.linalg.svd(data.X, full_matrices=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular value decomposition failed: {exc}") from exc
    rank = int(np.sum(sv > _rank_tol(sv, data.X.shape)))
    Vr = vt[:rank].T
    return Vr @ (Vr.T @ beta)
