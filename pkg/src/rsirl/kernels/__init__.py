"""Backend selection for the subgradient kernel.

The compiled extension is preferred when importable; set RSIRL_PURE_PYTHON=1
to force the numpy fallback (moduleattribute BACKEND reports the choice).
"""

import os

if os.environ.get("RSIRL_PURE_PYTHON") == "1":
    from ._subgradient_py import subgradient

    BACKEND = "python"
else:
    try:
        from ._subgradient import subgradient

        BACKEND = "compiled"
    except ImportError:
        from ._subgradient_py import subgradient

        BACKEND = "python"

__all__ = ["subgradient", "BACKEND"]
