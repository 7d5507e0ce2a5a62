"""Worker-thread cap for the numerical backend.

``VEINSEG_THREADS`` (positive integer) sets the BLAS thread count for
training and evaluation; unset means single-threaded deterministic mode.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from threadpoolctl import threadpool_limits


def worker_threads() -> int:
    raw = os.environ.get("VEINSEG_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"VEINSEG_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"VEINSEG_THREADS must be a positive integer, got {raw!r}")
    return n


@contextmanager
def thread_limit():
    with threadpool_limits(limits=worker_threads()):
        yield
