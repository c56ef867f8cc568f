"""Kernel backend selection.

Hot inner loops live in :mod:`efmqc.kernels` in two variants: a numba
``@njit`` version and a pure-numpy version. The numba path is the default;
set ``EFMQC_BACKEND=numpy`` in the environment to force the fallback
(useful on platforms without a working numba, and for benchmarking).
"""

import os

BACKEND = os.environ.get("EFMQC_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"EFMQC_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

USE_NUMBA = BACKEND == "numba"
