"""Slow reference implementations used to pin expected values in tests."""

from __future__ import annotations

import numpy as np


def brute_force_dtw(a, b) -> tuple[float, int]:
    """Exhaustive monotone-alignment search.

    Enumerates every path from (0, 0) to (n-1, m-1) built from diagonal,
    down, and right steps, and returns the lexicographic minimum of
    (total cost, path length). Only viable for tiny inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = a.size, b.size
    results: list[tuple[float, int]] = []

    def walk(i: int, j: int, cost: float, length: int) -> None:
        cost += abs(a[i] - b[j])
        length += 1
        if i == n - 1 and j == m - 1:
            results.append((cost, length))
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            ni, nj = i + di, j + dj
            if ni < n and nj < m:
                walk(ni, nj, cost, length)

    walk(0, 0, 0.0, 0)
    return min(results)
