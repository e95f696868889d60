"""
Prometheus metrics of one run
Kept in a per-run registry and written as a textfile next to the manifest
"""

import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.prom"


class RunMetrics:
    """Counters and gauges for a single experiment run"""

    def __init__(self):
        self.registry = CollectorRegistry()
        self.trajectories = Counter(
            'wpflow_trajectories_total', 'Geodesic trajectories integrated', registry=self.registry
        )
        self.trajectory_failures = Counter(
            'wpflow_trajectory_failures_total', 'Trajectories that did not finish', ['reason'], registry=self.registry
        )
        self.samples = Counter(
            'wpflow_samples_total', 'Liouville samples drawn', ['region'], registry=self.registry
        )
        self.experiment_seconds = Gauge(
            'wpflow_experiment_seconds', 'Wall time of an experiment', ['experiment'], registry=self.registry
        )
        self.assertions_failed = Counter(
            'wpflow_assertions_failed_total', 'Failed experiment assertions', registry=self.registry
        )

    def record_trajectories(self, total: int, failed: int = 0, reason: str = "failed") -> None:
        self.trajectories.inc(max(total, 0))
        if failed > 0:
            self.trajectory_failures.labels(reason=reason).inc(failed)

    def record_samples(self, region: str, n: int) -> None:
        self.samples.labels(region=region).inc(max(n, 0))

    def record_assertions(self, failed: int) -> None:
        if failed > 0:
            self.assertions_failed.inc(failed)

    @contextmanager
    def time_experiment(self, experiment: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.experiment_seconds.labels(experiment=experiment).set(time.perf_counter() - start)

    def write(self, run_dir: Path) -> Path:
        """Write the registry to <run_dir>/metrics.prom"""
        path = Path(run_dir) / METRICS_FILE
        write_to_textfile(str(path), self.registry)
        logger.debug(f"Metrics written to {path}")
        return path
