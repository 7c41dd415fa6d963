"""Hot loops with a compiled Cython core and a numpy fallback.

The compiled module is used when it was built and imports cleanly; setting
``DEPTHREFINE_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the
active implementation.
"""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("DEPTHREFINE_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from . import _ccore as compiled
    except ImportError:
        compiled = None

if compiled is not None:
    BACKEND = "cython"
    termination_moments = compiled.termination_moments
    zbuffer_splat = compiled.zbuffer_splat
else:
    BACKEND = "python"
    termination_moments = _fallback.termination_moments
    zbuffer_splat = _fallback.zbuffer_splat

__all__ = ["BACKEND", "termination_moments", "zbuffer_splat", "fallback", "compiled"]
