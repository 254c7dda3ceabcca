"""Kernel backend selection.

The hot loops (raymarching, tile rasterization forward/backward) exist twice:
as numba @njit kernels and as vectorized numpy fallbacks. Set
LAYERSPLAT_BACKEND=numpy to force the fallback path; default is numba when
importable. Both paths implement identical arithmetic and are exercised
against each other in tests and in benchmarks/bench_kernels.py.
"""

import os

_requested = os.environ.get("LAYERSPLAT_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"LAYERSPLAT_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    NUMBA_ENABLED = False
else:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        if _requested == "numba":
            raise
        NUMBA_ENABLED = False

BACKEND = "numba" if NUMBA_ENABLED else "numpy"


def set_num_threads(n: int) -> None:
    """Cap kernel parallelism. No-op on the numpy backend."""
    if NUMBA_ENABLED and n > 0:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
