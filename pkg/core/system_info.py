"""
Moduł zbierający informacje o systemie oraz ustalający liczbę wątków roboczych.

Funkcje:
    get_system_info() -> dict: Zwraca słownik z danymi o systemie, CPU i pamięci.
    worker_count() -> int: Limit wątków dla równoległych replikacji Monte Carlo.

Wymaga pakietu: psutil
"""

import os
import platform

try:
    import psutil
except ImportError:
    psutil = None

THREADS_ENV = "RIDGEPATH_THREADS"


def get_system_info():
    """
    Pobiera informacje o systemie operacyjnym, CPU oraz pamięci RAM.

    Returns:
        dict: Słownik z kluczami:
            - os (str): Nazwa systemu operacyjnego.
            - python (str): Wersja interpretera.
            - cpu_count (int): Liczba fizycznych rdzeni CPU.
            - cpu_threads (int): Liczba logicznych wątków CPU.
            - ram_total (int): Całkowita pamięć RAM (B).
            - ram_available (int): Wolna pamięć RAM (B).
    """
    info = {
        "os": platform.system(),
        "python": platform.python_version(),
        "cpu_count": os.cpu_count(),
        "cpu_threads": os.cpu_count(),
        "ram_total": None,
        "ram_available": None,
    }
    if psutil:
        try:
            info["cpu_count"] = psutil.cpu_count(logical=False) or info["cpu_count"]
            info["cpu_threads"] = psutil.cpu_count(logical=True) or info["cpu_threads"]
        except Exception:
            pass
        try:
            vm = psutil.virtual_memory()
            info["ram_total"] = vm.total
            info["ram_available"] = vm.available
        except Exception:
            pass
    return info


def worker_count(environ=None):
    """
    Liczba wątków dla puli replikacji.

    Domyślnie liczba logicznych wątków CPU; zmienna RIDGEPATH_THREADS ją
    ogranicza (wartości niepoprawne lub < 1 są ignorowane).
    """
    env = os.environ if environ is None else environ
    available = get_system_info().get("cpu_threads") or 1
    raw = env.get(THREADS_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            cap = 0
        if cap >= 1:
            return max(1, min(cap, available))
    return max(1, available)
