from .base import (
    DECODE,
    PREFILL,
    WHOLE,
    Backend,
    GenerationRequest,
    GenerationResult,
    Prefilled,
    tokenize,
)
from .remote import ChatCompletionsBackend
from .sim import ScriptBook, SimBackend, SimCostModel

__all__ = [
    "DECODE",
    "PREFILL",
    "WHOLE",
    "Backend",
    "ChatCompletionsBackend",
    "GenerationRequest",
    "GenerationResult",
    "Prefilled",
    "ScriptBook",
    "SimBackend",
    "SimCostModel",
    "tokenize",
]
