"""
Wczytywanie danych rzeczywistych z CSV i ścieżki kryterium poza próbą.

Przebieg: CSV -> (opcjonalna standaryzacja) -> losowy podzbiór 2n cech ->
wielokrotny losowy podział train/test -> średnie kryterium ridge na zbiorze
testowym wzdłuż ścieżek CG, GD i RR.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.model_selection import ShuffleSplit
from sklearn.preprocessing import StandardScaler

from .comparison import StochasticRecord, admissible_times, stochastic_comparison
from .errors import InputError
from .estimators import cg_interpolated, cg_solve, default_step, gradient_descent, ridge
from .experiments import PathRecord, make_record
from .spectral import Dataset, decompose
from .utils import get_logger, rng_stream


logger = get_logger("ingest")

CRITERION_LABEL = "criterion_out"


def load_csv(path: str, response_column: str, *, standardise: bool = False) -> tuple[Dataset, list[str]]:
    """Dataset z CSV: kolumna odpowiedzi wskazana nazwą, reszta kolumn liczbowych to cechy."""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise InputError(f"data file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    if response_column not in frame.columns:
        raise InputError(f"{path}: response column {response_column!r} not found")
    features = frame.drop(columns=[response_column]).select_dtypes(include="number")
    if features.shape[1] == 0:
        raise InputError(f"{path}: no numeric feature columns")
    response = pd.to_numeric(frame[response_column], errors="coerce")
    if features.isna().to_numpy().any() or response.isna().any():
        raise InputError(f"{path}: missing or non-numeric values")

    X = features.to_numpy(dtype=np.float64)
    y = response.to_numpy(dtype=np.float64)
    if standardise:
        X = StandardScaler().fit_transform(X)
        y = StandardScaler().fit_transform(y.reshape(-1, 1)).ravel()
    logger.info(f"Loaded {path}: n={X.shape[0]}, p={X.shape[1]}, standardised={standardise}")
    return Dataset(X, y), [str(c) for c in features.columns]


def select_features(data: Dataset, factor: int = 2, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Losowy (z ziarnem) podzbiór factor·n cech, gdy p > factor·n."""
    size = factor * data.n
    if data.p <= size:
        return data, np.arange(data.p)
    rng = rng_stream(seed, 0, "split")
    chosen = np.sort(rng.choice(data.p, size=size, replace=False))
    return Dataset(data.X[:, chosen], data.y), chosen


def criterion_out(X_test: np.ndarray, y_test: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """(1/2m)‖y − Xβ‖² + (λ/2)‖β‖² na zbiorze testowym."""
    residual = y_test - X_test @ beta
    return float(residual @ residual) / (2.0 * y_test.shape[0]) + 0.5 * lam * float(beta @ beta)


@dataclass(frozen=True)
class IngestConfig:
    lam: float = 0.1
    splits: int = 1000
    train_fraction: float = 50.0 / 71.0
    feature_factor: int = 2
    seed: int = 2024
    eta: Optional[float] = None
    cg_subdivisions: int = 8
    gd_max_iter: int = 2000
    gd_stride: int = 10
    sigma2: Optional[float] = None
    comparison_points: int = 64

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InputError(f"lambda must be finite and non-negative, got {self.lam}")
        if self.splits < 1 or not 0 < self.train_fraction < 1:
            raise InputError("splits must be >= 1 and train_fraction in (0, 1)")
        if self.sigma2 is not None and not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise InputError(f"sigma2 must be finite and non-negative, got {self.sigma2}")


def _split_paths(data: Dataset, train: np.ndarray, test: np.ndarray, config: IngestConfig, ks: np.ndarray):
    spec = decompose(Dataset(data.X[train], data.y[train]), config.lam)
    trace = cg_solve(spec)
    eta = config.eta if config.eta is not None else default_step(spec)
    X_test, y_test = data.X[test], data.y[test]

    def score(coords: np.ndarray) -> float:
        return criterion_out(X_test, y_test, spec.to_original(coords), config.lam)

    cg = {}
    for j in range(trace.stop_index * config.cg_subdivisions + 1):
        cg[j] = score(cg_interpolated(trace, j / config.cg_subdivisions))
    gd_path = gradient_descent(spec, eta, int(ks[-1]))
    gd = [score(gd_path.iterates[k]) for k in ks]
    rr = [score(ridge(spec, math.inf if k == 0 else config.lam + 1.0 / (eta * k))) for k in ks]
    return cg, gd, rr, trace.stop_index


def run_ingest(data: Dataset, config: IngestConfig) -> tuple[list[PathRecord], list[StochasticRecord]]:
    """Średnie kryterium poza próbą po podziałach; z σ² także porównanie stochastyczne."""
    start_time = time.perf_counter()
    data, _ = select_features(data, config.feature_factor, config.seed)
    split_seed = int(rng_stream(config.seed, 1, "split").integers(2**31 - 1))
    splitter = ShuffleSplit(n_splits=config.splits, train_size=config.train_fraction, random_state=split_seed)
    ks = np.arange(0, config.gd_max_iter + 1, config.gd_stride)

    cg_runs, gd_runs, rr_runs = [], [], []
    for train, test in splitter.split(data.X):
        cg, gd, rr, stop = _split_paths(data, train, test, config, ks)
        cg_runs.append((cg, stop))
        gd_runs.append(gd)
        rr_runs.append(rr)

    subdiv = config.cg_subdivisions
    longest = max(stop for _, stop in cg_runs)
    records: list[PathRecord] = []
    for j in range(longest * subdiv + 1):
        # po zatrzymaniu CG zostaje na estymatorze końcowym
        values = [cg[min(j, stop * subdiv)] for cg, stop in cg_runs]
        records.append(_criterion_record("CG", j / subdiv, values, j / subdiv))
    gd_arr, rr_arr = np.array(gd_runs), np.array(rr_runs)
    for idx, k in enumerate(ks):
        records.append(_criterion_record("GD", float(k), gd_arr[:, idx], float(k)))
    # η zależy od podziału, więc RR indeksujemy krokiem k, nie karą λ + 1/(ηk)
    for idx, k in enumerate(ks):
        records.append(_criterion_record("RR", float(k), rr_arr[:, idx], float(k)))

    stochastic: list[StochasticRecord] = []
    if config.sigma2 is not None:
        spec = decompose(data, config.lam)
        stochastic = [stochastic_comparison(spec, config.sigma2, t) for t in admissible_times(spec, config.comparison_points)]
    elapsed_ms = (time.perf_counter() - start_time) * 1000
    logger.info(f"Ingest paths over {config.splits} splits in {elapsed_ms:.2f}ms")
    return records, stochastic


def _criterion_record(method: str, param: float, values: Sequence[float], iteration: float) -> PathRecord:
    parts = [(math.nan, math.nan, math.nan, float(v)) for v in values]
    return make_record(method, param, CRITERION_LABEL, parts, iteration=iteration)
