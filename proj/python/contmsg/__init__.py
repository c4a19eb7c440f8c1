"""Continuation-based completion for nonblocking message passing."""

from ._core import (
    ANY_SOURCE,
    ANY_TAG,
    ContinuationRequest,
    ContmsgError,
    Endpoint,
    InfoConfig,
    Operation,
    Runtime,
    ScenarioConfig,
    Status,
    run_scenario,
)

__all__ = [
    "ANY_SOURCE",
    "ANY_TAG",
    "ContinuationRequest",
    "ContmsgError",
    "Endpoint",
    "InfoConfig",
    "Operation",
    "Runtime",
    "ScenarioConfig",
    "Status",
    "run_scenario",
]
