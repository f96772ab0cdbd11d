"""Kernel selection: compiled extension when built, numpy fallback otherwise.

OFFRL_PURE_PYTHON=1 forces the fallback (used by tests and benchmarks).
"""

import os

if os.environ.get("OFFRL_PURE_PYTHON") == "1":
    from . import _fallback as kernel

    BACKEND = "python"
else:
    try:
        from . import _kernel as kernel  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from . import _fallback as kernel  # type: ignore[no-redef]

        BACKEND = "python"
