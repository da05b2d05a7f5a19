"""Greedy bottom-up assembly of keypoint candidates into skeletons.

Association maps predict, from each candidate, where its connected
counterpart should be; the penalty of pairing two candidates is the mean
disagreement of the two directed predictions.  Dominant connections are
matched first against the shared root pool, then the remaining connections
by increasing order, pruning unmatched candidates after each stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assignment import greedy_assign
from .maps import CandidateKeypoint, MapStack, read_offset
from .skeleton import Pair, SkeletonSpec, XY

DEFAULT_GATE_FRACTION = 0.05


@dataclass
class PartialSkeleton:
    """An assembled (possibly incomplete) skeleton instance."""

    coords: dict[str, XY] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)


def predict_complement(
    position: XY,
    maps: MapStack,
    pair: Pair,
    reverse: bool = False,
) -> XY:
    """Predicted location of the connected counterpart of a candidate."""
    dx, dy = read_offset(maps, pair, position[0], position[1], reverse=reverse)
    return (position[0] + dx, position[1] + dy)


def association_penalty(
    parent_xy: XY,
    child_xy: XY,
    maps: MapStack,
    pair: Pair,
) -> float:
    """Mean disagreement of the two directed complement predictions."""
    forward = predict_complement(parent_xy, maps, pair, reverse=False)
    backward = predict_complement(child_xy, maps, pair, reverse=True)
    d_forward = math.hypot(forward[0] - child_xy[0], forward[1] - child_xy[1])
    d_backward = math.hypot(backward[0] - parent_xy[0], backward[1] - parent_xy[1])
    return 0.5 * (d_forward + d_backward)


def _penalty_matrix(
    parents: Sequence[XY],
    children: Sequence[CandidateKeypoint],
    maps: MapStack,
    pair: Pair,
) -> np.ndarray:
    matrix = np.empty((len(parents), len(children)), dtype=np.float64)
    for i, parent_xy in enumerate(parents):
        for j, child in enumerate(children):
            matrix[i, j] = association_penalty(parent_xy, child.xy, maps, pair)
    return matrix


def assemble(
    candidates: Sequence[CandidateKeypoint],
    maps: MapStack,
    spec: SkeletonSpec,
    image_diagonal: float | None = None,
    gate_fraction: float = DEFAULT_GATE_FRACTION,
) -> list[PartialSkeleton]:
    """Assemble candidates into skeletons anchored at root candidates.

    Returns only skeletons that kept the root plus at least one dominant
    connection.  Training-only connections are never used.
    """
    if image_diagonal is None:
        image_diagonal = math.hypot(maps.width, maps.height)
    gate = gate_fraction * image_diagonal

    by_category: dict[str, list[CandidateKeypoint]] = {c: [] for c in spec.categories}
    for cand in candidates:
        if cand.category not in by_category:
            raise ValueError(f"candidate category {cand.category!r} not in skeleton")
        by_category[cand.category].append(cand)

    roots = by_category[spec.root]
    skeletons: list[PartialSkeleton] = [
        PartialSkeleton(coords={spec.root: r.xy}, scores={spec.root: r.score})
        for r in roots
    ]

    # stage 1: dominant connections, each an independent bipartite problem
    # over the full root pool
    matched_roots: set[int] = set()
    for pair in spec.dominant:
        children = by_category[pair[1]]
        if not roots or not children:
            continue
        matrix = _penalty_matrix([r.xy for r in roots], children, maps, pair)
        for i, j in greedy_assign(matrix, gate=gate):
            skeletons[i].coords[pair[1]] = children[j].xy
            skeletons[i].scores[pair[1]] = children[j].score
            matched_roots.add(i)

    survivors = [skeletons[i] for i in sorted(matched_roots)]

    # stage 2 onwards: remaining connections by increasing order, spec
    # declaration order within an order; unmatched candidates simply drop out
    dominant = set(spec.dominant)
    for order in range(1, spec.max_order + 1):
        for pair in spec.connections_of_order(order):
            if pair in dominant:
                continue
            children = by_category[pair[1]]
            holders = [s for s in survivors if pair[0] in s.coords]
            if not holders or not children:
                continue
            matrix = _penalty_matrix(
                [s.coords[pair[0]] for s in holders], children, maps, pair
            )
            for i, j in greedy_assign(matrix, gate=gate):
                holders[i].coords[pair[1]] = children[j].xy
                holders[i].scores[pair[1]] = children[j].score

    return survivors
