"""Agentic planner, generator and critic for product campaign grid collages."""

from .errors import CollageError
from .pipeline import Pipeline, PipelineConfig, Providers, RunResult, RunTrace, persist_state, resume, run
from .plan_model import GateConfig, GridLayout, ProductInput

__version__ = "0.1.0"

__all__ = [
    "CollageError", "GateConfig", "GridLayout", "Pipeline", "PipelineConfig", "ProductInput",
    "Providers", "RunResult", "RunTrace", "persist_state", "resume", "run",
]
