from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.stats

from .comparison import (
    ComparisonRecord,
    OracleRecord,
    admissible_times,
    check_main_bound,
    oracle_comparison,
)
from .errors import ConfigError, InputError
from .estimators import CGTrace, FilterSpec, cg_interpolated, cg_solve, default_step
from .risk import TargetSpec, cg_bound, decompose_cg, decompose_linear, loss_in, risk_linear
from .spectral import Dataset, ModelTruth, PenalisedSpectrum, decompose
from .system_info import get_system_info, worker_count
from .utils import RNG_NAME, RecordWriter, get_logger, mean_and_se, rng_stream


logger = get_logger("experiments")

SPECTRUM_KINDS = ("spiked", "poly_decay", "beta_profile", "explicit")
BETA0_LAWS = ("gaussian", "fixed")
PROP2_FACTOR = 1.2985**2
BOUND_RTOL = 1e-9

PATH_COLUMNS = (
    "method",
    "param",
    "gamma",
    "A",
    "S",
    "C",
    "total_mean",
    "total_se",
    "bound_rhs",
    "satisfied",
    "risk",
    "tau",
    "iteration",
)
PLOT_COLUMNS = ("method", "gamma", "iteration", "x_position", "total_mean", "total_se", "risk")


@dataclass(frozen=True)
class SpectrumGen:
    """Rodzina widm kowariancji populacyjnej Σ."""

    kind: str = "spiked"
    spike_count: int = 5
    spike_high: float = 100.0
    spike_low: float = 1.0
    alpha: float = 2.0
    beta: float = 1.0
    values: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in SPECTRUM_KINDS:
            raise ConfigError(f"unknown spectrum kind {self.kind!r}")
        if self.kind == "spiked" and (self.spike_count < 0 or min(self.spike_high, self.spike_low) < 0):
            raise ConfigError("spiked spectrum needs spike_count >= 0 and non-negative levels")
        if self.kind == "explicit" and any(v < 0 for v in self.values):
            raise ConfigError("explicit spectrum values must be non-negative")

    def eigenvalues(self, p: int) -> np.ndarray:
        i = np.arange(1, p + 1, dtype=np.float64)
        if self.kind == "spiked":
            r = min(int(self.spike_count), p)
            values = np.concatenate([np.full(r, float(self.spike_high)), np.full(p - r, float(self.spike_low))])
        elif self.kind == "poly_decay":
            values = i ** (-float(self.alpha))
        elif self.kind == "beta_profile":
            values = (1.0 - i / (p + 1)) ** float(self.beta)
        else:
            if len(self.values) != p:
                raise ConfigError(f"explicit spectrum has {len(self.values)} values, p={p}")
            values = np.asarray(self.values, dtype=np.float64)
        return np.sort(values)[::-1]


@dataclass(frozen=True)
class SimConfig:
    """Konfiguracja symulacji; domyślnie skala biurkowa (n=100, p=125)."""

    n: int = 100
    p: int = 125
    spectrum: SpectrumGen = field(default_factory=SpectrumGen)
    sigma2: float = 6.0
    lam: float = 3.0
    beta0_law: str = "gaussian"
    beta0: tuple = ()
    replicates: int = 100
    seed: int = 2024
    rotate: bool = False
    fixed_design: bool = True
    eta: Optional[float] = None
    rel_tol: float = 1e-13
    cg_max_iter: Optional[int] = None
    cg_subdivisions: int = 8
    gd_max_iter: int = 2000
    gd_stride: int = 10
    oracle_points: int = 512
    scale: str = "desk"

    def __post_init__(self) -> None:
        if self.n < 1 or self.p < 1:
            raise ConfigError(f"n and p must be positive, got n={self.n}, p={self.p}")
        if self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")
        if not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ConfigError(f"sigma2 must be finite and non-negative, got {self.sigma2}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lambda must be finite and non-negative, got {self.lam}")
        if self.beta0_law not in BETA0_LAWS:
            raise ConfigError(f"unknown beta0 law {self.beta0_law!r}")
        if self.beta0_law == "fixed" and len(self.beta0) != self.p:
            raise ConfigError(f"fixed beta0 has {len(self.beta0)} entries, p={self.p}")
        if self.spectrum.kind == "explicit" and len(self.spectrum.values) != self.p:
            raise ConfigError(f"explicit spectrum has {len(self.spectrum.values)} values, p={self.p}")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if not self.rel_tol > 0:
            raise ConfigError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.cg_subdivisions < 1 or self.gd_stride < 1 or self.gd_max_iter < 0 or self.oracle_points < 2:
            raise ConfigError("grid sizes must be positive")

    def with_overrides(self, **changes: object) -> "SimConfig":
        return replace(self, **changes)

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "rng": RNG_NAME,
            "scale": self.scale,
            "replicates": self.replicates,
            "n": self.n,
            "p": self.p,
            "spectrum": self.spectrum.kind,
            "sigma2": self.sigma2,
            "lambda": self.lam,
            "fixed_design": self.fixed_design,
            "rotate": self.rotate,
        }


def design_with_spectrum(n: int, p: int, s: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """X (n×p) z widmem XᵀX/n równym dokładnie s (liczba s_i > 0 nie większa niż min(n, p))."""
    s = np.sort(np.asarray(s, dtype=np.float64))[::-1]
    m = min(n, p)
    if s.shape != (p,) or np.any(s < 0):
        raise InputError(f"spectrum must have p={p} non-negative values")
    if np.any(s[m:] > 0):
        raise InputError(f"at most min(n, p)={m} eigenvalues may be positive")
    U, _ = np.linalg.qr(rng.standard_normal((n, m)))
    V, _ = np.linalg.qr(rng.standard_normal((p, m)))
    return math.sqrt(n) * (U * np.sqrt(s[:m])) @ V.T


def _population(config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    eig = config.spectrum.eigenvalues(config.p)
    if config.rotate:
        basis = scipy.stats.ortho_group.rvs(dim=config.p, random_state=rng_stream(config.seed, 0, "rotation")) if config.p > 1 else np.ones((1, 1))
    else:
        basis = np.eye(config.p)
    return eig, basis


def generate(config: SimConfig, replicate_index: int) -> tuple[Dataset, ModelTruth]:
    """Jedna replikacja: X o wierszach N(0, Σ), ε ~ N(0, σ²), y = Xβ₀ + ε."""
    eig, basis = _population(config)
    if config.beta0_law == "gaussian":
        beta0 = rng_stream(config.seed, 0, "beta0").standard_normal(config.p) / math.sqrt(config.p)
    else:
        beta0 = np.asarray(config.beta0, dtype=np.float64)
    design_index = 0 if config.fixed_design else replicate_index
    Z = rng_stream(config.seed, design_index, "design").standard_normal((config.n, config.p))
    X = (Z * np.sqrt(eig)) @ basis.T
    eps = math.sqrt(config.sigma2) * rng_stream(config.seed, replicate_index, "noise").standard_normal(config.n)
    y = X @ beta0 + eps
    Sigma = (basis * eig) @ basis.T
    return Dataset(X, y), ModelTruth(beta0, config.sigma2, Sigma)


@dataclass(frozen=True)
class Replicate:
    index: int
    data: Dataset
    truth: ModelTruth
    spec: PenalisedSpectrum
    trace: CGTrace

    @property
    def pair(self) -> tuple[PenalisedSpectrum, CGTrace]:
        return self.spec, self.trace


def _build_replicate(config: SimConfig, index: int, base: Optional[PenalisedSpectrum]) -> Replicate:
    data, truth = generate(config, index)
    if base is not None:
        spec = base.with_response(data, truth)
    else:
        spec = decompose(data, config.lam, truth)
    trace = cg_solve(spec, config.rel_tol, max_iter=config.cg_max_iter)
    return Replicate(index, data, truth, spec, trace)


def simulate_replicates(config: SimConfig, workers: Optional[int] = None) -> list[Replicate]:
    """Wszystkie replikacje Monte Carlo, w kolejności indeksów.

    Przy stałym planie X rozkład spektralny liczony jest raz i współdzielony.
    """
    start_time = time.perf_counter()
    workers = worker_count() if workers is None else max(1, int(workers))
    info = get_system_info()
    logger.info(f"Simulating {config.replicates} replicates on {workers} workers (cpu_threads={info['cpu_threads']}, ram_available={info['ram_available']})")

    first = _build_replicate(config, 0, None)
    base = first.spec if config.fixed_design else None
    rest = range(1, config.replicates)
    if workers == 1:
        others = [_build_replicate(config, i, base) for i in rest]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            others = list(pool.map(lambda i: _build_replicate(config, i, base), rest))
    elapsed_ms = (time.perf_counter() - start_time) * 1000
    logger.info(f"Replicates ready in {elapsed_ms:.2f}ms")
    return [first] + others


@dataclass(frozen=True)
class PathRecord:
    """Jeden punkt ścieżki (metoda, parametr, cel) uśredniony po replikacjach."""

    method: str
    param: float
    gamma: str
    A: float
    S: float
    C: float
    total_mean: float
    total_se: float
    bound_rhs: float
    satisfied: Optional[bool]
    risk: float = math.nan
    tau: float = math.nan
    iteration: float = math.nan
    totals: tuple = field(default=(), compare=False, repr=False)

    def row(self) -> list:
        return [getattr(self, name) for name in PATH_COLUMNS]


def make_record(
    method: str,
    param: float,
    gamma: str,
    parts: Sequence[tuple[float, float, float, float]],
    *,
    bound_rhs: float = math.nan,
    satisfied: Optional[bool] = None,
    risk: float = math.nan,
    tau_mean: float = math.nan,
    iteration: float = math.nan,
) -> PathRecord:
    arr = np.asarray(parts, dtype=np.float64)
    total_mean, total_se = mean_and_se(arr[:, 3])
    return PathRecord(
        method=method,
        param=float(param),
        gamma=gamma,
        A=float(np.mean(arr[:, 0])),
        S=float(np.mean(arr[:, 1])),
        C=float(np.mean(arr[:, 2])),
        total_mean=total_mean,
        total_se=total_se,
        bound_rhs=float(bound_rhs),
        satisfied=satisfied,
        risk=float(risk),
        tau=float(tau_mean),
        iteration=float(iteration),
        totals=tuple(float(v) for v in arr[:, 3]),
    )


PATH_TARGETS = (TargetSpec.beta0(), TargetSpec.beta_lambda())


def _cg_rows(config: SimConfig, reps: Sequence[Replicate], target: TargetSpec) -> list[PathRecord]:
    stop = max(r.trace.stop_index for r in reps)
    grid = np.arange(stop * config.cg_subdivisions + 1) / config.cg_subdivisions
    rows = []
    for t in grid:
        parts, holds, bounds = [], [], []
        for rep in reps:
            t_rep = min(float(t), rep.trace.stop_index)
            if target.kind == "beta_lambda":
                br = decompose_cg(rep.spec, rep.trace, t_rep)
                parts.append((br.A, br.S, br.C, br.total))
                total = br.total
            else:
                total = loss_in(rep.spec, cg_interpolated(rep.trace, t_rep), target)
                parts.append((math.nan, math.nan, math.nan, total))
            bound = cg_bound(rep.spec, rep.trace, t_rep, target).bound_total
            bounds.append(bound)
            holds.append(total <= bound * (1.0 + BOUND_RTOL))
        if not all(holds):
            logger.warning(f"CG loss bound not satisfied at t={t:.6g} ({target.label})")
        rows.append(make_record("CG", t, target.label, parts, bound_rhs=float(np.mean(bounds)), satisfied=all(holds), iteration=t))
    return rows


def _linear_rows(config: SimConfig, reps: Sequence[Replicate], target: TargetSpec, eta: float) -> list[PathRecord]:
    ks = np.arange(0, config.gd_max_iter + 1, config.gd_stride)
    first = reps[0].spec
    t_admissible = 1.0 / (2.0 * first.norm) if first.norm > 0 else math.inf
    pairs = [rep.pair for rep in reps]
    rows: list[PathRecord] = []
    for method in ("GD", "GF", "RR"):
        for k in ks:
            if method == "GD":
                spec_filter, param = FilterSpec.gd(eta, int(k)), float(k)
            elif method == "GF":
                param = eta * k
                spec_filter = FilterSpec.gf(param)
            else:
                param = math.inf if k == 0 else first.lam + 1.0 / (eta * k)
                spec_filter = FilterSpec.rr(param)
            parts, risks = [], []
            for rep in reps:
                br = decompose_linear(rep.spec, spec_filter, target)
                parts.append((br.A, br.S, br.C, br.total))
                risks.append(risk_linear(rep.spec, spec_filter, target))
            risk = float(np.mean(risks))
            extra: dict = {}
            if method == "RR":
                gf_risk = float(np.mean([risk_linear(rep.spec, FilterSpec.gf(eta * k), target) for rep in reps]))
                extra = {"bound_rhs": PROP2_FACTOR * risk, "satisfied": gf_risk <= PROP2_FACTOR * risk * (1.0 + BOUND_RTOL)}
            elif method == "GF" and param >= t_admissible * (1.0 - 1e-12):
                extra = _main_bound_fields(reps, pairs, target, param, config.fixed_design)
            rows.append(make_record(method, param, target.label, parts, risk=risk, iteration=float(k), **extra))
    return rows


def _main_bound_fields(
    reps: Sequence[Replicate],
    pairs: Sequence[tuple[PenalisedSpectrum, CGTrace]],
    target: TargetSpec,
    t: float,
    fixed_design: bool,
) -> dict:
    analytic = [check_main_bound(rep.spec, rep.trace, target, t, "analytic") for rep in reps]
    satisfied = all(rec.satisfied for rec in analytic)
    if fixed_design:
        mc = check_main_bound(reps[0].spec, reps[0].trace, target, t, "mc", replicates=pairs)
        satisfied = satisfied and mc.satisfied
    return {
        "bound_rhs": float(np.mean([rec.rhs for rec in analytic])),
        "satisfied": satisfied,
        "tau_mean": float(np.mean([rec.tau for rec in analytic])),
    }


def path_step(config: SimConfig, reps: Sequence[Replicate]) -> float:
    return float(config.eta) if config.eta is not None else default_step(reps[0].spec)


def run_paths(config: SimConfig, replicates: Optional[Sequence[Replicate]] = None) -> list[PathRecord]:
    """Ścieżki CG, GD, GF i RR dla celów β₀ i β_λ, uśrednione po replikacjach."""
    start_time = time.perf_counter()
    reps = list(replicates) if replicates is not None else simulate_replicates(config)
    eta = path_step(config, reps)
    records: list[PathRecord] = []
    for target in PATH_TARGETS:
        records.extend(_cg_rows(config, reps, target))
        records.extend(_linear_rows(config, reps, target, eta))
    elapsed_ms = (time.perf_counter() - start_time) * 1000
    logger.info(f"Paths computed in {elapsed_ms:.2f}ms ({len(records)} records, eta={eta:.6g})")
    return records


def run_comparison(config: SimConfig, replicates: Optional[Sequence[Replicate]] = None) -> list[ComparisonRecord]:
    """Porównanie CG/GF na dopuszczalnej siatce czasów, w obu trybach ryzyka."""
    reps = list(replicates) if replicates is not None else simulate_replicates(config)
    first = reps[0]
    pairs = [rep.pair for rep in reps]
    records = []
    for target in PATH_TARGETS:
        for t in admissible_times(first.spec, config.oracle_points):
            records.append(replace(check_main_bound(first.spec, first.trace, target, t, "analytic"), gamma=target.label))
            if config.fixed_design:
                records.append(replace(check_main_bound(first.spec, first.trace, target, t, "mc", replicates=pairs), gamma=target.label))
    return records


def run_oracle(config: SimConfig, replicates: Optional[Sequence[Replicate]] = None) -> list[OracleRecord]:
    reps = list(replicates) if replicates is not None else simulate_replicates(config)
    first = reps[0]
    pairs = [rep.pair for rep in reps] if config.fixed_design else [first.pair]
    records = []
    for target in PATH_TARGETS:
        record = oracle_comparison(
            first.spec,
            first.trace,
            target,
            points=config.oracle_points,
            subdivisions=config.cg_subdivisions,
            replicates=pairs,
        )
        records.append(replace(record, gamma=target.label))
    return records


def path_minimum(records: Iterable[PathRecord], method: str, gamma: str) -> tuple[float, float]:
    """(iteracja, średnia strata) w minimum ścieżki danej metody."""
    chosen = [r for r in records if r.method == method and r.gamma == gamma]
    if not chosen:
        raise InputError(f"no {method} records for target {gamma}")
    best = min(chosen, key=lambda r: r.total_mean)
    return best.iteration, best.total_mean


def export(
    records: Sequence[PathRecord],
    path: str,
    fmt: str = "csv",
    metadata: Optional[dict] = None,
) -> None:
    """CSV ścieżek albo dane do wykresu (x = √iteracja, skala kwadratowa)."""
    if fmt not in ("csv", "plot"):
        raise InputError(f"unknown export format {fmt!r}")
    headers = PATH_COLUMNS if fmt == "csv" else PLOT_COLUMNS
    try:
        with RecordWriter(path, headers=headers, metadata=metadata) as writer:
            for rec in records:
                if fmt == "csv":
                    writer.write_row(rec.row())
                else:
                    x = math.sqrt(rec.iteration) if rec.iteration >= 0 else math.nan
                    writer.write_row([rec.method, rec.gamma, rec.iteration, x, rec.total_mean, rec.total_se, rec.risk])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    logger.debug(f"Exported {len(records)} records to {path} ({fmt})")


def export_table(records: Sequence[object], path: str, metadata: Optional[dict] = None) -> None:
    """CSV z rekordów-dataclass (ComparisonRecord, OracleRecord, ...)."""
    if not records:
        raise InputError("export_table needs at least one record to infer columns")
    names = [f.name for f in fields(records[0])]
    try:
        with RecordWriter(path, headers=names, metadata=metadata) as writer:
            for rec in records:
                writer.write_row(getattr(rec, name) for name in names)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_metadata(path: str) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
    return meta


def _parse_flag(value: object) -> Optional[bool]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return bool(int(value))


def import_records(path: str) -> list[PathRecord]:
    """Odczyt CSV ścieżek z pełną precyzją float (round_trip)."""
    frame = pd.read_csv(path, comment="#", float_precision="round_trip", dtype={"method": str, "gamma": str})
    missing = [c for c in PATH_COLUMNS if c not in frame.columns]
    if missing:
        raise InputError(f"{path}: missing columns {missing}")
    records = []
    for row in frame.itertuples(index=False):
        records.append(
            PathRecord(
                method=row.method,
                param=float(row.param),
                gamma=row.gamma,
                A=float(row.A),
                S=float(row.S),
                C=float(row.C),
                total_mean=float(row.total_mean),
                total_se=float(row.total_se),
                bound_rhs=float(row.bound_rhs),
                satisfied=_parse_flag(row.satisfied),
                risk=float(row.risk),
                tau=float(row.tau),
                iteration=float(row.iteration),
            )
        )
    return records
