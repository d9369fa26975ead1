"""Hot-loop kernels with backend selection.

Three inner loops dominate wall-clock at interactive scale: the SLIC
assignment/update sweep, the UMAP layout SGD, and the LAP (Hungarian) solve.
Each has a compiled Cython implementation (``terralabel.kernels._core``) and
a pure-Python/numpy fallback with identical semantics. The compiled backend
is preferred when importable; set ``TERRALABEL_PURE_PYTHON=1`` to force the
fallback (the test suite exercises both).

``benchmarks/bench_kernels.py`` compares the two backends.
"""

import os

from . import pykernels

if os.environ.get("TERRALABEL_PURE_PYTHON"):
    _impl = pykernels
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = pykernels
        BACKEND = "python"

lap_solve = _impl.lap_solve
slic_iterate = _impl.slic_iterate
umap_optimize = _impl.umap_optimize

__all__ = ["BACKEND", "lap_solve", "pykernels", "slic_iterate", "umap_optimize"]
