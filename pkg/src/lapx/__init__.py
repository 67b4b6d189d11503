"""Lightweight multi-stage hourglass pose estimation on a numpy autodiff core.

Submodules load lazily so the CLI can pin math-library thread counts through
environment variables before numpy is first imported.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "engine",
    "nn",
    "attention",
    "model",
    "weights",
    "codec",
    "metrics",
    "synth",
    "train",
    "analysis",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module("." + name, __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
