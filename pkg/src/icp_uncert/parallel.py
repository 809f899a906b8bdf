from __future__ import annotations

import os

ENV_THREADS = "ICP_UNCERT_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Thread budget: explicit request, else ``ICP_UNCERT_THREADS``; 0 means one per CPU."""
    if requested is None:
        raw = os.environ.get(ENV_THREADS, "0").strip() or "0"
        try:
            requested = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    if requested < 0:
        raise ValueError("thread count must be >= 0")
    return requested or (os.cpu_count() or 1)
