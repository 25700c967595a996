"""eqop: distributed latent-space operators for equivariant linear autoencoders.

Submodules are imported lazily so that the command-line entry point can pin
BLAS thread counts (EQOP_THREADS) before numpy is first loaded.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "errors",
    "groups",
    "operators",
    "imaging",
    "numkit",
    "models",
    "evaluate",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f"{__name__}.{name}")
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
