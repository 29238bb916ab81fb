import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, TypeVar

from rich.console import Console
from rich.logging import RichHandler

from config import DEFAULT_THREADS

T = TypeVar("T")
R = TypeVar("R")

_threads = DEFAULT_THREADS
_logging_ready = False


def setup_logging(level: int = logging.INFO) -> None:
    global _logging_ready
    root = logging.getLogger()
    if not _logging_ready:
        handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(handler)
        _logging_ready = True
    root.setLevel(level)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def format_float(x: float) -> str:
    # repr of a float is the shortest string that round-trips
    return repr(float(x))


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """Maps fn over items on the shared thread budget, keeping input order."""
    items = list(items)
    if _threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, items))


class PhaseTimer:
    def __init__(self, history: int = 100) -> None:
        """Wall-clock bookkeeping per named phase, in milliseconds."""
        self._totals: Dict[str, float] = {}
        self._laps = deque(maxlen=history)
        self._last_lap = time.perf_counter()

    @property
    def totals(self) -> Dict[str, float]:
        return dict(self._totals)

    @property
    def mean_lap_ms(self) -> float:
        if not self._laps:
            return 0.0
        return sum(self._laps) / len(self._laps)

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = (time.perf_counter() - start) * 1000.0
            self._totals[name] = self._totals.get(name, 0.0) + elapsed

    # Call once per loop iteration; returns the milliseconds since the previous lap
    def lap(self) -> float:
        now = time.perf_counter()
        elapsed = (now - self._last_lap) * 1000.0
        self._last_lap = now
        self._laps.append(elapsed)
        return elapsed

