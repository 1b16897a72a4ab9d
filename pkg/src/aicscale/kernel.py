"""Backend selection for the likelihood kernel.

The compiled Cython kernel is used when available; the pure-NumPy
implementation is the fallback.  Set ``AICSCALE_PURE_PYTHON=1`` to force
the fallback (useful for parity testing and debugging).
"""

from __future__ import annotations

import os

if os.environ.get("AICSCALE_PURE_PYTHON"):
    from . import _kernel_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernel as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _kernel_py as _impl

        BACKEND = "python"

nll_and_grad = _impl.nll_and_grad

__all__ = ["nll_and_grad", "BACKEND"]
