from __future__ import annotations

import os
from dataclasses import replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

from core.errors import ConfigError
from core.experiments import SimConfig


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _parse_floats(raw: str) -> tuple:
    parts = [part.strip() for part in raw.split(",") if part.strip()]
    return tuple(float(part) for part in parts)


def _optional(parser: Callable[[str], object]) -> Callable[[str], object]:
    def parse(raw: str) -> object:
        return None if raw.strip().lower() in ("", "none", "auto") else parser(raw)

    return parse


# klucz pliku -> (pole SimConfig / SpectrumGen, parser)
SIM_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "n": ("n", int),
    "p": ("p", int),
    "sigma2": ("sigma2", float),
    "lambda": ("lam", float),
    "beta0_law": ("beta0_law", str),
    "beta0": ("beta0", _parse_floats),
    "replicates": ("replicates", int),
    "seed": ("seed", int),
    "rotate": ("rotate", _parse_bool),
    "fixed_design": ("fixed_design", _parse_bool),
    "eta": ("eta", _optional(float)),
    "rel_tol": ("rel_tol", float),
    "cg_max_iter": ("cg_max_iter", _optional(int)),
    "cg_subdivisions": ("cg_subdivisions", int),
    "gd_max_iter": ("gd_max_iter", int),
    "gd_stride": ("gd_stride", int),
    "oracle_points": ("oracle_points", int),
    "scale": ("scale", str),
}
SPECTRUM_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "spectrum": ("kind", str),
    "spike_count": ("spike_count", int),
    "spike_high": ("spike_high", float),
    "spike_low": ("spike_low", float),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "spectrum_values": ("values", _parse_floats),
}
CONFIG_KEYS = frozenset(SIM_KEYS) | frozenset(SPECTRUM_KEYS)


def read_config_file(path: str) -> dict[str, str]:
    """Płaski plik `klucz = wartość`; `#` zaczyna komentarz."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, value = text.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got {text!r}")
            values[key.strip()] = value.strip()
    return values


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        values[key.strip()] = value.strip()
    return values


def build_config(values: Mapping[str, str], base: Optional[SimConfig] = None) -> SimConfig:
    unknown = sorted(set(values) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    base = base or SimConfig()
    sim_changes: dict[str, object] = {}
    spectrum_changes: dict[str, object] = {}
    for key, raw in values.items():
        target, table = (sim_changes, SIM_KEYS) if key in SIM_KEYS else (spectrum_changes, SPECTRUM_KEYS)
        name, parser = table[key]
        try:
            target[name] = parser(raw)
        except ValueError:
            raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    if spectrum_changes:
        sim_changes["spectrum"] = replace(base.spectrum, **spectrum_changes)
    return base.with_overrides(**sim_changes)


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> SimConfig:
    """Konfiguracja z pliku (opcjonalnie), a potem nadpisania --set."""
    values = read_config_file(path) if path else {}
    values.update(parse_overrides(overrides))
    return build_config(values)
