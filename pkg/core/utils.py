from __future__ import annotations

import csv
import logging
import math
import os
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


LOGGER_PREFIX = "ridgepath"

# Nazwa generatora trafia do nagłówka metadanych eksportu
RNG_NAME = "numpy.Philox+SeedSequence"
RNG_PURPOSES: dict[str, int] = {
    "beta0": 0,
    "design": 1,
    "noise": 2,
    "rotation": 3,
    "split": 4,
}


def get_logger(name: str) -> logging.Logger:
    """Logger `ridgepath.<name>` z jednym handlerem konsolowym.

    Poziomu nie ustawiamy - dziedziczony jest z loggera nadrzędnego.
    """
    logger = logging.getLogger(f"{LOGGER_PREFIX}.{name}")
    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    return logger


def rng_stream(seed: int, replicate: int, purpose: str) -> np.random.Generator:
    """Niezależny strumień Philox dla pary (replikacja, cel).

    Klucz: SeedSequence(seed, spawn_key=(replicate, purpose_id)). Ten sam
    seed i ta sama para zawsze dają identyczny strumień.
    """
    try:
        purpose_id = RNG_PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown RNG purpose: {purpose!r}") from None
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(replicate), purpose_id))
    return np.random.Generator(np.random.Philox(seq))


def format_value(value: object) -> str:
    """Tekst komórki CSV: float w najkrótszej postaci odwracalnej (repr)."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(value)


class RecordWriter:
    """Zapis wierszy do CSV z nagłówkiem metadanych.

    Linie metadanych zaczynają się od '#'. Kolejność kluczy metadanych jest
    zachowana, więc ten sam zestaw danych daje identyczne bajty.
    """

    def __init__(
        self,
        path: str,
        *,
        headers: Sequence[str],
        metadata: Optional[Mapping[str, object]] = None,
    ) -> None:
        self.path = path
        self.headers = list(headers)
        self._rows = 0
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        self._file = open(path, "w", newline="", encoding="utf-8")
        for key, value in (metadata or {}).items():
            self._file.write(f"# {key}={format_value(value)}\n")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(self.headers)

    @property
    def rows_written(self) -> int:
        return self._rows

    def write_row(self, row: Iterable[object]) -> None:
        self._writer.writerow([format_value(v) for v in row])
        self._rows += 1

    def close(self) -> None:
        if self._file:
            try:
                self._file.close()
            except Exception:
                pass

    def __enter__(self) -> "RecordWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def mean_and_se(values: Sequence[float]) -> tuple[float, float]:
    """Średnia Monte Carlo i błąd standardowy std/√R (R = 1 daje SE = 0)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(np.mean(arr)), float(np.std(arr, ddof=1) / math.sqrt(arr.size))
