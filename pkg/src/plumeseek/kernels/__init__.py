"""Kernel backend selection.

The compiled Cython core is preferred when importable; the pure NumPy
reference implementation is the fallback. Both produce bit-identical
results (asserted by the test suite), so selection only affects speed.

Set ``PLUMESEEK_BACKEND=numpy`` or ``PLUMESEEK_BACKEND=compiled`` to force
a backend; forcing ``compiled`` raises if the extension is missing.
"""

from __future__ import annotations

import os

from . import reference

_requested = os.environ.get("PLUMESEEK_BACKEND", "").strip().lower()

if _requested not in ("", "numpy", "compiled"):
    raise ImportError(
        f"PLUMESEEK_BACKEND={_requested!r} invalid; use 'numpy' or 'compiled'"
    )

if _requested == "numpy":
    _impl = reference
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "PLUMESEEK_BACKEND=compiled but the extension is not built; "
                "reinstall with a C toolchain or drop the override"
            ) from None
        _impl = reference

BACKEND_NAME: str = _impl.BACKEND_NAME
diffuse_rb = _impl.diffuse_rb
advect = _impl.advect

__all__ = ["BACKEND_NAME", "diffuse_rb", "advect", "reference"]
