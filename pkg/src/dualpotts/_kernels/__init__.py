"""Hot-kernel backend selection.

The sampling inner loops (tree completion, weight accumulation, Metropolis
sweeps) dominate runtime, so they exist twice: a compiled Cython extension
(`_core`) and a pure-numpy fallback (`_fallback`).  The compiled backend is
picked at import when it built successfully; set ``DUALPOTTS_FORCE_PYTHON=1``
to force the fallback.  Both produce bit-identical results (asserted in the
test suite), so the choice affects speed only.
"""

from __future__ import annotations

import os

from . import _fallback

if os.environ.get("DUALPOTTS_FORCE_PYTHON"):
    _backend = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _backend  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _backend = _fallback
        BACKEND = "python"

complete_batch = _backend.complete_batch
bond_log_sum = _backend.bond_log_sum
metropolis_level = _backend.metropolis_level


def backend_name() -> str:
    return BACKEND
