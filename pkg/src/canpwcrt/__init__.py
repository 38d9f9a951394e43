"""Probabilistic worst-case response-time analysis for CAN under bit errors."""

from .analysis import analyze, analyze_frame, backlog, busy_window_sequence, legacy_pwcrt, queuing_delay
from .deterministic import det_wcrt
from .exceedance import ExceedanceCurve, mse
from .model import ErrorModel, Frame, MessageSet, load_message_set
from .pmf import Pmf

__version__ = "0.1.0"

__all__ = [
    "ErrorModel",
    "ExceedanceCurve",
    "Frame",
    "MessageSet",
    "Pmf",
    "analyze",
    "analyze_frame",
    "backlog",
    "busy_window_sequence",
    "det_wcrt",
    "legacy_pwcrt",
    "load_message_set",
    "mse",
    "queuing_delay",
]
