"""Jacobian-regularized MLP training toolkit.

Submodules are imported lazily so the CLI can pin the BLAS thread count via
environment variables before numpy first loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor", "network", "jacobian", "losses", "attacks",
    "bounds", "data", "trainer", "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
