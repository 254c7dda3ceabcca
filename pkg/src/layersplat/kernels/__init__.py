"""Hot numeric kernels, selected by LAYERSPLAT_BACKEND (see backend module)."""

import importlib

from ..backend import BACKEND, NUMBA_ENABLED

_suffix = "nb" if NUMBA_ENABLED else "np"


def __getattr__(name):
    if name in ("march", "raster"):
        mod = importlib.import_module(f".{name}_{_suffix}", __name__)
        globals()[name] = mod
        return mod
    raise AttributeError(name)


__all__ = ["march", "raster", "BACKEND", "NUMBA_ENABLED"]
