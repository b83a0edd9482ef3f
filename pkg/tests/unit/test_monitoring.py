import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

from monitoring.metrics import MetricsCollector, get_system_metrics, timing_metric


class _Job:
    def __init__(self):
        self.metrics_collector = MetricsCollector()

    @timing_metric("job", {"kind": "test"})
    def run(self):
        return 42


def test_collector_snapshot():
    collector = MetricsCollector()
    collector.increment_counter("stages_completed")
    collector.increment_counter("stages_completed", 2)
    collector.set_gauge("psnr", 21.5, {"variant": "both"})
    collector.record_timing("stage", 1.0)
    collector.record_timing("stage", 3.0)
    snapshot = collector.snapshot()
    assert snapshot["counters"]["stages_completed"] == 3
    assert snapshot["gauges"]["psnr[variant=both]"] == 21.5
    assert snapshot["timings"]["stage"] == {"count": 2, "total": 4.0, "avg": 2.0}


def test_timing_decorator_records():
    job = _Job()
    assert job.run() == 42
    assert job.metrics_collector.snapshot()["timings"]["job[kind=test]"]["count"] == 1


def test_system_metrics_fields():
    metrics = get_system_metrics()
    assert "cpu_count" in metrics and "torch_threads" in metrics
