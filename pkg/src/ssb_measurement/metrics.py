"""
Run metrics for ensemble execution
"""
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Optional


@dataclass
class EnsembleMetrics:
    """
    Operational metrics of ensemble runs.

    Intent:
    Records how much work the ensemble runner did and how long it took, so
    slow configurations (tiny dt, huge n) and numerical trouble show up in
    the debug log. Nothing here feeds back into the physics and nothing is
    written into result files, which keeps outputs byte-identical.

    Updated from worker threads; every mutation goes through the lock.
    """

    trajectories: int = 0
    chunks: int = 0
    decided: int = 0
    undecided: int = 0

    total_chunk_time: float = 0.0
    max_chunk_time: Optional[float] = None

    errors: dict[str, int] = field(default_factory=dict)

    started_at: datetime = field(default_factory=datetime.now)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def trajectories_per_second(self) -> float:
        if self.total_chunk_time == 0.0:
            return 0.0
        return self.trajectories / self.total_chunk_time

    @property
    def undecided_fraction(self) -> float:
        counted = self.decided + self.undecided
        return self.undecided / counted if counted else 0.0

    def record_chunk(self, size: int, elapsed: float) -> None:
        """
        Record one finished chunk of trajectories.

        Args:
            size: Number of trajectories in the chunk
            elapsed: Wall time spent integrating it (seconds)
        """
        with self._lock:
            self.chunks += 1
            self.trajectories += size
            self.total_chunk_time += elapsed
            if self.max_chunk_time is None or elapsed > self.max_chunk_time:
                self.max_chunk_time = elapsed

    def record_decisions(self, decided: int, undecided: int) -> None:
        with self._lock:
            self.decided += decided
            self.undecided += undecided

    def record_error(self, error_type: str) -> None:
        with self._lock:
            self.errors[error_type] = self.errors.get(error_type, 0) + 1

    def to_dict(self) -> dict[str, Any]:
        """Export-friendly snapshot, times in milliseconds."""
        with self._lock:
            return {
                "trajectories": self.trajectories,
                "chunks": self.chunks,
                "decided": self.decided,
                "undecided": self.undecided,
                "undecided_fraction": self.undecided_fraction,
                "trajectories_per_second": self.trajectories_per_second,
                "total_chunk_time_ms": self.total_chunk_time * 1000,
                "max_chunk_time_ms": (
                    self.max_chunk_time * 1000 if self.max_chunk_time is not None else None
                ),
                "errors": dict(self.errors),
                "started_at": self.started_at.isoformat(),
            }


class MetricsCollector:
    """
    Context manager timing one chunk of trajectories.

    Intent:
    Wraps the integration of a chunk so its size, duration and any
    exception type are recorded without instrumenting the numerical code.
    Exceptions are never suppressed.
    """

    def __init__(self, metrics: EnsembleMetrics, size: int):
        self.metrics = metrics
        self.size = size
        self.start_time: Optional[float] = None

    def __enter__(self) -> "MetricsCollector":
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> bool:
        if exc_type is not None:
            self.metrics.record_error(exc_type.__name__)
        elif self.start_time is not None:
            self.metrics.record_chunk(self.size, time.perf_counter() - self.start_time)
        return False
