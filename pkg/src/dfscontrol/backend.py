"""Runtime selection of the compiled integrator core.

The hot RK4 loop ships as a Cython extension (``dfscontrol._kernel``). When
the extension is missing -- e.g. a source checkout without a build step --
everything transparently falls back to the pure numpy path in
:mod:`dfscontrol.lindblad`, which is ~50x slower but semantically identical.

Set ``DFSCONTROL_BACKEND=python`` to force the fallback (used by the
benchmark and the backend-equivalence tests), or ``=cython`` to fail loudly
if the extension is unavailable.
"""

from __future__ import annotations

import os

try:
    from . import _kernel
except ImportError:  # pragma: no cover - depends on the build environment
    _kernel = None

_ENV_VAR = "DFSCONTROL_BACKEND"
_VALID = ("auto", "python", "cython")


def kernel():
    """Return the compiled kernel module, or None if unavailable."""
    return _kernel


def have_kernel() -> bool:
    return _kernel is not None


def resolve(requested: str | None = None) -> str:
    """Resolve a backend request ('auto'/'python'/'cython'/None) to a name.

    ``None`` defers to the DFSCONTROL_BACKEND environment variable, then to
    'auto' (compiled core when built, python otherwise).
    """
    name = requested
    if name is None:
        name = os.environ.get(_ENV_VAR, "auto").strip().lower() or "auto"
    name = name.lower()
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}, expected one of {_VALID}")
    if name == "auto":
        return "cython" if have_kernel() else "python"
    if name == "cython" and not have_kernel():
        raise RuntimeError(
            "the compiled kernel is not available; build it with "
            "'python setup.py build_ext --inplace' or use backend='python'"
        )
    return name


def default_backend() -> str:
    """Backend selected at import time (modulo the environment override)."""
    return resolve(None)
