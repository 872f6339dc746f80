"""Open-loop workload driver with latency/throughput reporting."""

from .runner import RunReport, SaturationAnalysis, analyse_saturation, run, sweep
from .workload import Fixture, WorkloadSpec, generate_fixture, request_sequence

__all__ = ["Fixture", "RunReport", "SaturationAnalysis", "WorkloadSpec", "analyse_saturation",
           "generate_fixture", "request_sequence", "run", "sweep"]
