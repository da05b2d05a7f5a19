"""Bipartite assignment: optimal (Hungarian) and greedy solvers.

Cost matrices are plain 2-D float arrays, rows by columns.  ``inf`` marks a
forbidden pair.  Gates are applied after solving: matched pairs whose cost
exceeds the gate are dropped from the result.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

Match = tuple[int, int]


def _checked(costs) -> np.ndarray:
    matrix = np.asarray(costs, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {matrix.shape}")
    if np.isnan(matrix).any():
        raise ValueError("cost matrix contains NaN")
    return matrix


def _apply_gate(matrix: np.ndarray, pairs: list[Match], gate: Optional[float]) -> list[Match]:
    if gate is None:
        return pairs
    return [(r, c) for r, c in pairs if matrix[r, c] <= gate]


def hungarian(costs, gate: Optional[float] = None) -> list[Match]:
    """Minimum-total-cost matching over the permitted (finite) pairs.

    Matches min(rows, cols) pairs when feasible; pairs forced onto
    forbidden entries are dropped, as are pairs above the gate.
    """
    matrix = _checked(costs)
    if matrix.size == 0:
        return []
    finite = np.isfinite(matrix)
    solvable = matrix.copy()
    if not finite.all():
        if finite.any():
            span = float(np.abs(matrix[finite]).sum())
        else:
            span = 0.0
        # large finite stand-in: never preferred over any all-finite matching
        solvable[~finite] = span + 1.0
    rows, cols = linear_sum_assignment(solvable)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if finite[r, c]]
    return _apply_gate(matrix, pairs, gate)


def greedy_assign(costs, gate: Optional[float] = None) -> list[Match]:
    """Repeatedly match the globally cheapest remaining pair.

    Ties resolve to the lowest row index, then the lowest column index.
    Matching stops when either side is exhausted or only forbidden pairs
    remain; pairs above the gate are dropped afterwards.
    """
    matrix = _checked(costs)
    if matrix.size == 0:
        return []
    work = matrix.copy()
    pairs: list[Match] = []
    remaining = min(work.shape)
    for _ in range(remaining):
        flat = np.argmin(work)  # first occurrence: lowest row, then column
        row, col = np.unravel_index(flat, work.shape)
        if not np.isfinite(work[row, col]):
            break
        pairs.append((int(row), int(col)))
        work[row, :] = np.inf
        work[:, col] = np.inf
    return _apply_gate(matrix, pairs, gate)
