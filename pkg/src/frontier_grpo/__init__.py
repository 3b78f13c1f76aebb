"""Step-wise GRPO over an evolving buffer of task states, with learnability-driven sampling."""
from .buffer import (
    BufferError,
    ContextState,
    ErrorClass,
    EvolvingBuffer,
    ExecFeedback,
    HistoryEntry,
    Kind,
    TaskInstance,
    classify_kind,
    new_buffer,
    transition,
)
from .config import RunConfig, load_config
from .harness import RunResult, run_training
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "BufferError",
    "ContextState",
    "ErrorClass",
    "EvolvingBuffer",
    "ExecFeedback",
    "HistoryEntry",
    "KERNEL_BACKEND",
    "Kind",
    "RunConfig",
    "RunResult",
    "TaskInstance",
    "classify_kind",
    "load_config",
    "new_buffer",
    "run_training",
    "transition",
]
