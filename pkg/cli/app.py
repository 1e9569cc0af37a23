"""
Punkt wejścia wiersza poleceń ridgepath.

Podkomendy:
    simulate  ścieżki CG/GD/GF/RR uśrednione po replikacjach -> CSV lub dane wykresu
    path      ścieżki dla pojedynczego zbioru (jedna replikacja)
    compare   porównanie CG z przepływem gradientowym na dopuszczalnej siatce czasów
    oracle    porównanie ryzyk wyroczni CG / GF / RR
    verify    pełny zestaw tożsamości i nierówności; kod 1 przy naruszeniu
    ingest    dane rzeczywiste z CSV, kryterium ridge poza próbą

Kody wyjścia: 0 sukces, 1 niepowodzenie weryfikacji lub błąd numeryczny,
2 błąd wejścia / konfiguracji / pliku.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from core import APP_NAME, __version__
from core.errors import InputError, RidgePathError
from core.experiments import (
    SimConfig,
    export,
    export_table,
    run_comparison,
    run_oracle,
    run_paths,
    simulate_replicates,
)
from core.ingest import IngestConfig, load_csv, run_ingest
from core.system_info import get_system_info
from core.utils import LOGGER_PREFIX, get_logger

from .config import load_config
from .verify import run_suite


logger = get_logger("cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="plik konfiguracji key = value")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="nadpisanie klucza konfiguracji (powtarzalne)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--sigma2", type=float)
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--verbose", action="store_true", help="logi DEBUG")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ridgepath", description=f"{APP_NAME} {__version__}: ścieżki regularyzacji ridge / GF / GD / CG")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("simulate", "path"):
        cmd = sub.add_parser(name)
        _add_common(cmd)
        cmd.add_argument("--out", default=f"{name}.csv")
        cmd.add_argument("--format", choices=("csv", "plot"), default="csv")
    for name in ("compare", "oracle"):
        cmd = sub.add_parser(name)
        _add_common(cmd)
        cmd.add_argument("--out", default=f"{name}.csv")
    verify = sub.add_parser("verify")
    _add_common(verify)

    ingest = sub.add_parser("ingest")
    ingest.add_argument("--data", required=True, help="plik CSV z danymi")
    ingest.add_argument("--response-column", required=True)
    ingest.add_argument("--standardise", action="store_true")
    ingest.add_argument("--splits", type=int, default=IngestConfig.splits)
    ingest.add_argument("--lambda", dest="lam", type=float, default=IngestConfig.lam)
    ingest.add_argument("--sigma2", type=float, help="wariancja szumu; bez niej tylko kryterium poza próbą")
    ingest.add_argument("--seed", type=int, default=IngestConfig.seed)
    ingest.add_argument("--format", choices=("csv", "plot"), default="csv")
    ingest.add_argument("--out", default="ingest.csv")
    ingest.add_argument("--verbose", action="store_true")
    return parser


def _configure_logging(verbose: bool) -> None:
    logging.getLogger(LOGGER_PREFIX).setLevel(logging.DEBUG if verbose else logging.WARNING)


def _sim_config(args: argparse.Namespace) -> SimConfig:
    overrides = list(args.overrides)
    for key, value in (("seed", args.seed), ("replicates", args.replicates), ("sigma2", args.sigma2), ("lambda", args.lam)):
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def _simulate(args: argparse.Namespace, config: SimConfig) -> int:
    if args.command == "path":
        config = config.with_overrides(replicates=1)
    records = run_paths(config, simulate_replicates(config))
    export(records, args.out, args.format, metadata=config.metadata())
    print(f"{len(records)} records -> {args.out}")
    return EXIT_OK


def _compare(args: argparse.Namespace, config: SimConfig) -> int:
    reps = simulate_replicates(config)
    records = run_comparison(config, reps) if args.command == "compare" else run_oracle(config, reps)
    export_table(records, args.out, metadata=config.metadata())
    violated = [r for r in records if not (r.satisfied if args.command == "compare" else r.gf_satisfied and r.rr_satisfied)]
    for record in violated:
        logger.warning(f"{args.command}: bound not satisfied for target {record.gamma}")
    print(f"{len(records)} records -> {args.out}")
    return EXIT_OK


def _verify(config: SimConfig) -> int:
    checks = run_suite(config, simulate_replicates(config))
    failed = [c for c in checks if not c.ok]
    for check in failed:
        print(check.describe(), file=sys.stderr)
    print(f"{len(checks)} checks, {len(failed)} failed")
    return EXIT_FAILURE if failed else EXIT_OK


def _ingest(args: argparse.Namespace) -> int:
    data, _ = load_csv(args.data, args.response_column, standardise=args.standardise)
    config = IngestConfig(lam=args.lam, splits=args.splits, seed=args.seed, sigma2=args.sigma2)
    records, stochastic = run_ingest(data, config)
    metadata = {"data": os.path.basename(args.data), "seed": config.seed, "splits": config.splits, "lambda": config.lam}
    export(records, args.out, args.format, metadata=metadata)
    print(f"{len(records)} records -> {args.out}")
    if stochastic:
        stem, ext = os.path.splitext(args.out)
        extra = f"{stem}_stochastic{ext or '.csv'}"
        export_table(stochastic, extra, metadata={**metadata, "sigma2": config.sigma2})
        print(f"{len(stochastic)} records -> {extra}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    logger.debug(f"Host: {get_system_info()}")
    try:
        if args.command == "ingest":
            return _ingest(args)
        config = _sim_config(args)
        if args.command in ("simulate", "path"):
            return _simulate(args, config)
        if args.command in ("compare", "oracle"):
            return _compare(args, config)
        return _verify(config)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RidgePathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
