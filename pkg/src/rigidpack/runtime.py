"""Runtime knobs.

``RIGIDPACK_THREADS`` caps the worker threads used by parallelizable
stages (currently cost-matrix construction over row blocks). Every entry
is computed by the same kernel regardless of the split, so results are
bit-identical for any thread count. Unset or invalid values mean "all
cores".
"""

from __future__ import annotations

import os

THREADS_ENV_VAR = "RIGIDPACK_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        n = os.cpu_count() or 1
    return n
