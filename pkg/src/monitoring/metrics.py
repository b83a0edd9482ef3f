"""
In-process metrics for pipeline runs (counters, gauges, timings) and system snapshots
"""
import time
import logging
from collections import defaultdict
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Dict, List, Optional

import psutil
import torch

logger = logging.getLogger(__name__)


class MetricsCollector:
    """Collects and stores run metrics in memory"""

    def __init__(self, prefix: str = "daclip_desk"):
        self.metrics_prefix = prefix
        self.counters: Dict[str, int] = defaultdict(int)
        self.gauges: Dict[str, float] = {}
        self.timings: Dict[str, List[float]] = defaultdict(list)

    def increment_counter(self, name: str, value: int = 1, tags: Optional[Dict[str, str]] = None):
        key = self._build_key(name, tags)
        self.counters[key] += value
        logger.debug(f"Incremented counter {key}: +{value}")

    def set_gauge(self, name: str, value: float, tags: Optional[Dict[str, str]] = None):
        key = self._build_key(name, tags)
        self.gauges[key] = float(value)
        logger.debug(f"Set gauge {key}: {value}")

    def record_timing(self, name: str, duration: float, tags: Optional[Dict[str, str]] = None):
        key = self._build_key(name, tags)
        self.timings[key].append(float(duration))
        logger.debug(f"Recorded timing {key}: {duration:.3f}s")

    def _build_key(self, name: str, tags: Optional[Dict[str, str]] = None) -> str:
        if not tags:
            return name
        return name + "[" + ",".join(f"{k}={v}" for k, v in sorted(tags.items())) + "]"

    def snapshot(self) -> Dict[str, Any]:
        """Counters, gauges and timing aggregates as a plain dict"""
        return {
            "prefix": self.metrics_prefix,
            "counters": dict(self.counters),
            "gauges": dict(self.gauges),
            "timings": {
                key: {"count": len(values), "total": sum(values), "avg": sum(values) / len(values)}
                for key, values in self.timings.items() if values
            },
        }


def get_system_metrics() -> Dict[str, Any]:
    """CPU, memory and process figures; empty dict if psutil fails"""
    try:
        memory = psutil.virtual_memory()
        process = psutil.Process()
        return {
            "cpu_percent": psutil.cpu_percent(interval=None),
            "cpu_count": psutil.cpu_count(),
            "memory_percent": memory.percent,
            "memory_total_gb": memory.total / (1024 ** 3),
            "process_rss_mb": process.memory_info().rss / (1024 ** 2),
            "torch_threads": torch.get_num_threads(),
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
    except Exception as e:
        logger.error(f"Failed to get system metrics: {e}")
        return {}


def timing_metric(name: str, tags: Optional[Dict[str, str]] = None):
    """Decorator recording the call duration into `self.metrics_collector` (or a metrics_collector kwarg)"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.time()
            try:
                return func(*args, **kwargs)
            finally:
                duration = time.time() - start_time
                metrics_collector = None
                if args and hasattr(args[0], "metrics_collector"):
                    metrics_collector = args[0].metrics_collector
                elif "metrics_collector" in kwargs:
                    metrics_collector = kwargs["metrics_collector"]
                if metrics_collector:
                    metrics_collector.record_timing(name, duration, tags)
        return wrapper
    return decorator
