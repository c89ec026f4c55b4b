"""Mesh-free Monte Carlo sampling and the progressive batch schedule.

Interior batches are i.i.d. uniform on the subdomain rectangle and grow
geometrically with the outer iteration (capped); edge batches are uniform
over the selected edges' arclength and stay the same size.  Streams are
keyed by (seed, subdomain, iteration, epoch) through a counter-based
generator, so results do not depend on worker scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoSuchEdges",
    "SampleBatch",
    "rng_for",
    "sample_boundary",
    "sample_interior",
    "schedule",
]


class NoSuchEdges(Exception):
    """The requested edge subset is empty."""


def rng_for(seed, *key):
    """Philox generator for an addressed stream (subdomain, iteration, ...)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def sample_interior(rect, m1, rng):
    """m1 i.i.d. uniform points strictly inside the rectangle."""
    if m1 < 1:
        raise ValueError("m1 must be >= 1")
    x = rng.uniform(rect.x0, rect.x1, size=m1)
    y = rng.uniform(rect.y0, rect.y1, size=m1)
    return np.column_stack([x, y])


def sample_boundary(spec, m2, which="all", rng=None):
    """Points uniform over the total arclength of the selected edges.

    Returns (points (m2, 2), sides list).  ``which`` is "all" or "interface".
    """
    if m2 < 1:
        raise ValueError("m2 must be >= 1")
    if which == "all":
        sides = list(spec.edges)
    elif which == "interface":
        sides = spec.interface_sides
    else:
        raise ValueError(f"unknown edge selector {which!r}")
    if not sides:
        raise NoSuchEdges(f"subdomain {spec.index} has no {which} edges")
    lengths = np.array([spec.edge_length(s) for s in sides])
    cuts = np.cumsum(lengths)
    s = rng.uniform(0.0, cuts[-1], size=m2)
    idx = np.searchsorted(cuts, s, side="right").clip(max=len(sides) - 1)
    offsets = s - np.concatenate([[0.0], cuts[:-1]])[idx]
    points = np.empty((m2, 2))
    chosen = []
    for j in range(m2):
        side = sides[idx[j]]
        t = offsets[j] / lengths[idx[j]]
        points[j] = spec.edge_points(side, np.array([t]))[0]
        chosen.append(side)
    return points, chosen


def schedule(k, base_m1, growth, cap, m2):
    """Interior batch size at outer iteration k; edge batch size is constant."""
    if growth < 1.0:
        raise ValueError("growth must be >= 1")
    m1 = min(int(cap), int(round(base_m1 * growth ** k)))
    return m1, int(m2)


@dataclass
class SampleBatch:
    """One training batch for a subdomain at a given outer iteration."""

    interior: np.ndarray
    boundary: np.ndarray
    boundary_sides: list = field(default_factory=list)
    iteration: int = 0

    @property
    def m1(self):
        return self.interior.shape[0]

    @property
    def m2(self):
        return self.boundary.shape[0]


def draw_batch(spec, m1, m2, rng, iteration=0):
    interior = sample_interior(spec.rect, m1, rng)
    boundary, sides = sample_boundary(spec, m2, "all", rng)
    return SampleBatch(interior, boundary, sides, iteration)
