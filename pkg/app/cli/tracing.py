"""
Tracing utilities for CLI stages.

This module provides a decorator that logs the inputs and the outcome of each
pipeline stage (``gen``, ``preprocess``, ``train`` ...). It helps with
debugging and following a run's execution flow in the structured logs.
"""

import functools
import time
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from app.core.logging import logger


def trace(name: str):
    """
    Decorator for logging input and output of CLI stages.

    This decorator logs:
    - The keyword arguments when a stage starts
    - A short summary of the result and the elapsed time when it completes

    Args:
        name (str): The name of the stage being traced

    Returns:
        Callable: A decorated function that logs its execution
    """

    def _decorator(fn):
        @functools.wraps(fn)
        def _w(*a, **kw):
            started = _log_in(name, kw)
            result = fn(*a, **kw)
            _log_out(name, result, started)
            return result

        return _w

    return _decorator


def _summarize(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, BaseModel):
        return type(value).__name__
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return repr(value)[:80]


def _log_in(name: str, kwargs: dict) -> float:
    """
    Log the inputs of a stage.

    Args:
        name (str): Name of the stage
        kwargs (dict): Keyword arguments the stage was called with

    Returns:
        float: Start time for the elapsed-time measurement
    """
    logger.info("stage_started", stage=name, inputs={k: _summarize(v) for k, v in kwargs.items()})
    return time.perf_counter()


def _log_out(name: str, result: Any, started: float) -> None:
    """
    Log the outcome of a stage.

    Args:
        name (str): Name of the stage
        result (Any): Value returned by the stage
        started (float): Value returned by ``_log_in``
    """
    logger.info(
        "stage_finished",
        stage=name,
        result=_summarize(result),
        elapsed_s=round(time.perf_counter() - started, 3),
    )
