"""Run and training metrics collection."""
import logging
import threading
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from functools import wraps
from typing import Callable, Dict, List, Optional

try:
    from prometheus_client import Counter, Histogram
    HAS_PROMETHEUS = True
except ImportError:
    HAS_PROMETHEUS = False

logger = logging.getLogger(__name__)


@dataclass
class RunMetric:
    """One PnP run."""
    method: str
    alpha: float
    iterations: int
    converged: bool
    latency_ms: float
    timestamp: str

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TrainStepMetric:
    """One training minibatch."""
    epoch: int
    step: int
    loss: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class StageMetric:
    """One timed CLI stage."""
    stage: str
    latency_ms: float
    error: Optional[str] = None

    def to_dict(self) -> Dict:
        return asdict(self)


class MetricsCollector:
    """In-memory metric buffer with optional Prometheus export."""

    def __init__(self, namespace: str = "pnp", max_buffer_size: int = 10000):
        """Initialize metrics collector.

        Args:
            namespace: Prefix for Prometheus metric names
            max_buffer_size: Most recent metrics kept in memory
        """
        self.namespace = namespace
        self.metrics_buffer: List = []
        self.max_buffer_size = max_buffer_size
        # sweeps record from joblib worker threads
        self._lock = threading.Lock()
        if HAS_PROMETHEUS:
            self._init_prometheus_metrics()
        else:
            logger.debug("prometheus_client not installed; using in-memory metrics only")

    def _init_prometheus_metrics(self):
        self.runs_total = Counter(
            f"{self.namespace}_runs_total",
            "PnP runs by method and outcome",
            ["method", "converged"],
        )
        self.iterations_total = Counter(
            f"{self.namespace}_iterations_total",
            "PnP iterations executed",
            ["method"],
        )
        self.run_latency = Histogram(
            f"{self.namespace}_run_latency_ms",
            "PnP run wall-clock latency in milliseconds",
            buckets=[10, 100, 1000, 10000, 60000, 300000],
        )
        self.train_steps_total = Counter(
            f"{self.namespace}_train_steps_total",
            "Training minibatches processed",
        )

    def _append(self, metric) -> None:
        with self._lock:
            self.metrics_buffer.append(metric)
            if len(self.metrics_buffer) > self.max_buffer_size:
                self.metrics_buffer = self.metrics_buffer[-self.max_buffer_size:]

    def _snapshot(self) -> List:
        with self._lock:
            return list(self.metrics_buffer)

    def record_run(self, metric: RunMetric) -> None:
        self._append(metric)
        if HAS_PROMETHEUS:
            self.runs_total.labels(method=metric.method, converged=str(metric.converged).lower()).inc()
            self.iterations_total.labels(method=metric.method).inc(metric.iterations)
            self.run_latency.observe(metric.latency_ms)

    def record_train_step(self, metric: TrainStepMetric) -> None:
        self._append(metric)
        if HAS_PROMETHEUS:
            self.train_steps_total.inc()

    def record_stage(self, metric: StageMetric) -> None:
        self._append(metric)

    def get_metrics(self, metric_type: Optional[type] = None, limit: int = 100) -> List[Dict]:
        """Most recent metrics, optionally filtered by dataclass type."""
        metrics = self._snapshot()
        if metric_type is not None:
            metrics = [m for m in metrics if isinstance(m, metric_type)]
        return [m.to_dict() for m in metrics[-limit:]]

    def get_summary(self) -> Dict:
        buffer = self._snapshot()
        runs = [m for m in buffer if isinstance(m, RunMetric)]
        steps = [m for m in buffer if isinstance(m, TrainStepMetric)]
        summary = {
            "total_runs": len(runs),
            "total_train_steps": len(steps),
            "buffer_size": len(buffer),
        }
        if runs:
            summary["converged_fraction"] = sum(1 for m in runs if m.converged) / len(runs)
            summary["mean_iterations"] = sum(m.iterations for m in runs) / len(runs)
        return summary

    def clear(self) -> None:
        with self._lock:
            self.metrics_buffer = []


def track_stage(collector: "MetricsCollector", stage: Optional[str] = None) -> Callable:
    """Decorator timing a function and recording a StageMetric."""
    def decorator(func: Callable) -> Callable:
        name = stage or func.__name__

        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            error = None
            try:
                return func(*args, **kwargs)
            except Exception as e:
                error = str(e)
                logger.error(f"Stage {name} failed: {error}")
                raise
            finally:
                latency_ms = (time.perf_counter() - start_time) * 1000
                collector.record_stage(StageMetric(stage=name, latency_ms=latency_ms, error=error))
        return wrapper
    return decorator


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


# Global metrics collector instance
metrics_collector = MetricsCollector()
