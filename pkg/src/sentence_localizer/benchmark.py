"""
Benchmark module: per-sentence localization time of the model against the scan baseline
"""

import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Sequence

import pandas as pd

from sentence_localizer.autodiff import UsageError
from sentence_localizer.baseline import ScanBaseline, enumerate_windows
from sentence_localizer.config_loader import BenchmarkConfig
from sentence_localizer.corpus import Sample
from sentence_localizer.trainer import Localizer

logger = logging.getLogger(__name__)

MIN_QUERIES = 100
MIN_WARMUP = 5


@dataclass
class MethodTiming:
    mean_seconds: float
    median_seconds: float
    queries: int


@dataclass
class TimingReport:
    """Seconds per sentence for each method, the window count and the speedup"""
    methods: Dict[str, MethodTiming] = field(default_factory=dict)
    window_count: int = 0
    clip_count: int = 0

    @property
    def speedup(self) -> float:
        return self.methods['scan'].mean_seconds / self.methods['model'].mean_seconds

    def to_record(self) -> Dict[str, Any]:
        return {
            'record': 'timing',
            'window_count': self.window_count,
            'clip_count': self.clip_count,
            'speedup': self.speedup,
            'methods': {name: asdict(timing) for name, timing in self.methods.items()}
        }

    def format_table(self) -> str:
        rows = [{'method': name, 'mean_s': t.mean_seconds, 'median_s': t.median_seconds, 'queries': t.queries}
                for name, t in self.methods.items()]
        table = pd.DataFrame(rows).to_string(index=False, float_format=lambda value: f"{value:.5f}")
        return f"{table}\nwindows={self.window_count} clips={self.clip_count} speedup={self.speedup:.2f}x"


def time_queries(localize: Callable[[Sample], Any], samples: Sequence[Sample], warmup: int) -> MethodTiming:
    """Wall-clock seconds per call after warmup calls on the leading samples"""
    for i in range(warmup):
        localize(samples[i % len(samples)])
    durations: List[float] = []
    for sample in samples:
        started = time.perf_counter()
        localize(sample)
        durations.append(time.perf_counter() - started)
    return MethodTiming(mean_seconds=statistics.fmean(durations),
                        median_seconds=statistics.median(durations), queries=len(durations))


def benchmark(localizer: Localizer, baseline: ScanBaseline, samples: Sequence[Sample],
              config: BenchmarkConfig) -> TimingReport:
    """
    Time end-to-end single-sentence inference for both methods on the same queries

    Raises:
        UsageError: If fewer than 100 queries are requested or available, or
            fewer than 5 warmup queries are configured
    """
    if config.queries < MIN_QUERIES:
        raise UsageError(f"Timing needs at least {MIN_QUERIES} queries, configured {config.queries}")
    if config.warmup < MIN_WARMUP:
        raise UsageError(f"Timing needs at least {MIN_WARMUP} warmup queries, configured {config.warmup}")
    if len(samples) < config.queries:
        raise UsageError(f"Only {len(samples)} queries available, {config.queries} required")

    queries = list(samples[:config.queries])
    clip_count = queries[0].clip_count
    window_count = len(enumerate_windows(clip_count, baseline.config))
    logger.info(f"Timing {len(queries)} queries at {clip_count} clips, {window_count} scan windows")

    report = TimingReport(window_count=window_count, clip_count=clip_count)
    report.methods['model'] = time_queries(localizer.predict, queries, config.warmup)
    report.methods['scan'] = time_queries(baseline.scan_localize, queries, config.warmup)
    logger.info(f"Model {report.methods['model'].mean_seconds:.5f}s, scan "
                f"{report.methods['scan'].mean_seconds:.5f}s per sentence, speedup {report.speedup:.2f}x")
    return report
