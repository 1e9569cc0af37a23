from __future__ import annotations


class RidgePathError(Exception):
    """Wspólna baza dla błędów biblioteki."""


class InputError(RidgePathError, ValueError):
    """Niepoprawne dane wejściowe: kształty, wartości niefinitywne, zakresy parametrów."""


class ConfigError(InputError):
    """Nieznany klucz, nieparsowalna wartość lub brak pliku konfiguracji."""


class NumericalError(RidgePathError, ArithmeticError):
    """Awaria numeryczna albo naruszenie niezmiennika algorytmu."""


class IdentityViolation(NumericalError):
    """Dokładna tożsamość dekompozycji błędu nie zgadza się w tolerancji."""

    def __init__(self, operation: str, lhs: float, rhs: float, t: float | None = None) -> None:
        self.operation = operation
        self.lhs = float(lhs)
        self.rhs = float(rhs)
        self.t = t
        where = f" at t={t:.6g}" if t is not None else ""
        super().__init__(f"{operation}: identity violated{where} (lhs={self.lhs:.12g}, rhs={self.rhs:.12g})")


class ConditionViolated(RidgePathError):
    """Warunek geometryczny na wektor docelowy gamma nie jest spełniony."""

    def __init__(self, value: float, tolerance: float) -> None:
        self.value = float(value)
        self.tolerance = float(tolerance)
        super().__init__(f"gamma condition violated: value={self.value:.6g} < -{self.tolerance:.3g}")
