"""Backend selection for the hot trace kernels.

At import time the compiled extension is preferred when it built; otherwise
the numpy implementation is used. ``FAIRMC_BACKEND=python`` or
``FAIRMC_BACKEND=compiled`` forces the choice (the latter raises if the
extension is unavailable). Recurrent traces always run on the numpy path.
"""

import os

from . import py_core

_forced = os.environ.get("FAIRMC_BACKEND")

if _forced == "python":
    core = py_core
else:
    try:
        from . import _core as core
    except ImportError:
        if _forced == "compiled":
            raise ImportError(
                "FAIRMC_BACKEND=compiled but the extension is not built; "
                "reinstall with a C compiler available"
            ) from None
        core = py_core

rnn_trace_batch = py_core.rnn_trace_batch


def active_backend() -> str:
    return core.NAME


def get_backend(name: str):
    """Explicit backend lookup, used by tests and the benchmark."""
    if name == "python":
        return py_core
    if name == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
