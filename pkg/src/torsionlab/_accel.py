"""Backend selection for the compiled kernels.

The numba-compiled kernels are used unless the environment variable
``TORSIONLAB_NO_NUMBA`` is set to a truthy value, or numba cannot be
imported.  :func:`set_backend` overrides the choice at runtime (used by
the tests and the benchmark to compare both paths).
"""

from __future__ import annotations

import os

_TRUTHY = {"1", "true", "yes", "on"}

try:  # pragma: no cover - exercised implicitly
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_override: str | None = None


def env_disables_numba() -> bool:
    return os.environ.get("TORSIONLAB_NO_NUMBA", "").strip().lower() in _TRUTHY


def backend() -> str:
    """Return ``"numba"`` or ``"numpy"``."""
    if _override is not None:
        return _override
    if HAVE_NUMBA and not env_disables_numba():
        return "numba"
    return "numpy"


def set_backend(name: str | None) -> None:
    """Force a backend (``"numba"``/``"numpy"``) or reset to the env default with ``None``."""
    global _override
    if name not in (None, "numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _override = name


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        from numba import njit as _njit

        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
