"""Flow-matching generative fields with a learned linear (Koopman) embedding.

Subpackages load lazily so the CLI can bound BLAS threads before numpy
comes in.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "ndcore",
    "nn",
    "datasets",
    "cfm",
    "koopman",
    "linalg",
    "sampler",
    "analysis",
    "checkpoint",
    "config",
    "plots",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
