"""Pick the compiled kernels when available, else the pure-Python ones.

Set ``AOII_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

fallback = _fallback
compiled = None
if not os.environ.get("AOII_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

kernels = compiled if compiled is not None else fallback
HAVE_COMPILED = compiled is not None
