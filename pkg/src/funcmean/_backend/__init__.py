"""Training-kernel backend selection.

The compiled extension is used when importable; otherwise the NumPy
fallback takes over transparently.  Set FUNCMEAN_BACKEND=python or
FUNCMEAN_BACKEND=cython to force a choice (forcing the extension raises
if it is not built).  Both implement the same contract; within one
backend repeated runs are bit-identical.
"""

from __future__ import annotations

import os

_choice = os.environ.get("FUNCMEAN_BACKEND", "auto").strip().lower()
if _choice not in {"auto", "cython", "python"}:
    raise ImportError(
        f"FUNCMEAN_BACKEND must be auto, cython or python, got {_choice!r}"
    )

if _choice in {"auto", "cython"}:
    try:
        from . import _mlpcore as _impl
        BACKEND_NAME = "cython"
    except ImportError:
        if _choice == "cython":
            raise ImportError(
                "FUNCMEAN_BACKEND=cython but the compiled extension is not "
                "available; build it or unset the variable"
            ) from None
        from . import _numpy_mlp as _impl
        BACKEND_NAME = "python"
else:
    from . import _numpy_mlp as _impl
    BACKEND_NAME = "python"

forward = _impl.forward
forward_hidden = _impl.forward_hidden
backward = _impl.backward
adam_step = _impl.adam_step

__all__ = ["BACKEND_NAME", "forward", "forward_hidden", "backward", "adam_step"]
