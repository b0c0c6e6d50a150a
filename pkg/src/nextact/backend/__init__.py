"""Kernel backend selection.

The compiled Cython core (``nextact.backend._kernels``) is preferred; the
pure-numpy module (``nextact.backend.kernels_py``) is the drop-in fallback.
Selection happens once at import, controlled by ``NEXTACT_BACKEND``:

* unset / ``auto`` — compiled if importable, else fallback;
* ``ext`` — require the compiled core (ImportError otherwise);
* ``python`` — force the fallback.

``kernels`` is the selected module; ``BACKEND`` names it ("ext"/"python").
"""

import os

from ..errors import ConfigError

_choice = os.environ.get("NEXTACT_BACKEND", "auto").strip().lower()

if _choice in ("", "auto"):
    try:
        from . import _kernels as kernels

        BACKEND = "ext"
    except ImportError:
        from . import kernels_py as kernels

        BACKEND = "python"
elif _choice == "ext":
    from . import _kernels as kernels

    BACKEND = "ext"
elif _choice in ("python", "py", "numpy"):
    from . import kernels_py as kernels

    BACKEND = "python"
else:
    raise ConfigError(
        f"NEXTACT_BACKEND must be one of auto/ext/python, got {_choice!r}"
    )

__all__ = ["kernels", "BACKEND"]
