"""Noisy-label training for sequence classifiers.

A dense + bidirectional LSTM + attention classifier is trained jointly with
per-sample label logits and contribution weights, alternating between the
two parameter groups every epoch.
"""
from .errors import InvalidArgument, NumericFailure, SchemaError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "InvalidArgument", "NumericFailure", "SchemaError", "__version__"]
