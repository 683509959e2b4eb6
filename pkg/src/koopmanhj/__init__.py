"""Hamilton-Jacobi solutions for control-affine systems via spectral methods.

Submodules are loaded on first attribute access so that importing the bare
package stays lightweight: the command-line front end must be able to pin
the BLAS thread count through environment variables before anything pulls
in numpy.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "basis",
    "config",
    "galerkin",
    "procedure1",
    "procedure2",
    "simulate",
    "spectral",
    "systems",
    "cli",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
