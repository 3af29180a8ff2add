"""Backend selection for the LSTM recurrence kernels.

The compiled module is used when it imports; ``RELABEL_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

from . import _lstm_py

BACKEND = "python"
lstm_forward = _lstm_py.lstm_forward
lstm_backward = _lstm_py.lstm_backward

if os.environ.get("RELABEL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _lstm_cy
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        lstm_forward = _lstm_cy.lstm_forward
        lstm_backward = _lstm_cy.lstm_backward


def get_backend(name=None):
    """Return ``(forward, backward)`` for ``name`` ('python' or 'cython');
    ``None`` gives the active backend."""
    if name is None:
        return lstm_forward, lstm_backward
    if name == "python":
        return _lstm_py.lstm_forward, _lstm_py.lstm_backward
    if name == "cython":
        from . import _lstm_cy
        return _lstm_cy.lstm_forward, _lstm_cy.lstm_backward
    raise ValueError(f"unknown backend {name!r}")
