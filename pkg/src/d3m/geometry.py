"""Rectangular domains, overlapping decompositions, and merge weights.

Subdomains are axis-aligned rectangles on a tensor grid, each extended by
half the overlap into its neighbors.  Edges are tagged as physical boundary
or as an interface into a specific neighbor.  The partition-of-unity merge
weight of a subdomain at a point is its distance to its own interface edges,
normalized over all covering subdomains, which vanishes exactly at interface
seams and is 1 wherever a single subdomain owns the point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Edge",
    "OverlapTooLarge",
    "PointOutside",
    "Rect",
    "SubdomainSpec",
    "decompose",
    "distance_to_edge_set",
    "merge_weights",
]

SIDES = ("left", "right", "bottom", "top")


class PointOutside(Exception):
    """Query point lies outside the region it must belong to."""


class OverlapTooLarge(Exception):
    """Requested overlap is not smaller than the grid cell size."""


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    def contains(self, points):
        """Closed-interval containment; vectorized over (m, 2) points."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return ((p[:, 0] >= self.x0) & (p[:, 0] <= self.x1) &
                (p[:, 1] >= self.y0) & (p[:, 1] <= self.y1))

    def as_tuple(self):
        return (self.x0, self.x1, self.y0, self.y1)


@dataclass(frozen=True)
class Edge:
    side: str                 # left | right | bottom | top
    kind: str                 # physical | interface
    neighbor: int | None = None


@dataclass
class SubdomainSpec:
    index: int
    rect: Rect
    edges: dict            # side -> Edge
    overlap_margin: float

    @property
    def interface_sides(self):
        return [s for s in SIDES if self.edges[s].kind == "interface"]

    @property
    def physical_sides(self):
        return [s for s in SIDES if self.edges[s].kind == "physical"]

    def edge_segment(self, side):
        """Endpoints (p0, p1) of an edge, ordered by increasing arclength."""
        r = self.rect
        if side == "left":
            return np.array([r.x0, r.y0]), np.array([r.x0, r.y1])
        if side == "right":
            return np.array([r.x1, r.y0]), np.array([r.x1, r.y1])
        if side == "bottom":
            return np.array([r.x0, r.y0]), np.array([r.x1, r.y0])
        if side == "top":
            return np.array([r.x0, r.y1]), np.array([r.x1, r.y1])
        raise ValueError(f"unknown side {side!r}")

    def edge_points(self, side, t):
        """Map arclength parameters t in [0, 1] to points on an edge."""
        p0, p1 = self.edge_segment(side)
        t = np.asarray(t, dtype=np.float64)[:, None]
        return p0 + t * (p1 - p0)

    def edge_length(self, side):
        p0, p1 = self.edge_segment(side)
        return float(np.linalg.norm(p1 - p0))

    def describe(self):
        return {
            "index": self.index,
            "rect": self.rect.as_tuple(),
            "edges": {s: {"kind": e.kind, "neighbor": e.neighbor}
                      for s, e in self.edges.items()},
            "overlap_margin": self.overlap_margin,
        }


def decompose(domain, grid, overlap):
    """Split a rectangle into a px-by-py grid of overlapping subdomains.

    Each cell is extended by overlap/2 into every neighbor; subdomains are
    returned in row-major order (bottom row first).  The overlap must stay
    below the cell size.
    """
    px, py = int(grid[0]), int(grid[1])
    if px < 1 or py < 1:
        raise ValueError("grid dimensions must be positive")
    cell_w = domain.width / px
    cell_h = domain.height / py
    if px * py > 1:
        if overlap <= 0:
            raise ValueError("overlap must be positive for a multi-domain grid")
        if overlap >= min(cell_w, cell_h):
            raise OverlapTooLarge(
                f"overlap {overlap} >= min cell size {min(cell_w, cell_h)}")
    half = overlap / 2.0
    xs = [domain.x0 + i * cell_w for i in range(px + 1)]
    ys = [domain.y0 + j * cell_h for j in range(py + 1)]
    specs = []
    for j in range(py):
        for i in range(px):
            x0 = xs[i] - (half if i > 0 else 0.0)
            x1 = xs[i + 1] + (half if i < px - 1 else 0.0)
            y0 = ys[j] - (half if j > 0 else 0.0)
            y1 = ys[j + 1] + (half if j < py - 1 else 0.0)
            idx = j * px + i
            edges = {
                "left": Edge("left", "interface", idx - 1) if i > 0
                        else Edge("left", "physical"),
                "right": Edge("right", "interface", idx + 1) if i < px - 1
                         else Edge("right", "physical"),
                "bottom": Edge("bottom", "interface", idx - px) if j > 0
                          else Edge("bottom", "physical"),
                "top": Edge("top", "interface", idx + px) if j < py - 1
                       else Edge("top", "physical"),
            }
            specs.append(SubdomainSpec(idx, Rect(x0, x1, y0, y1), edges, half))
    return specs


def _edge_distances(spec, points, sides):
    """Perpendicular distance from interior points to each listed edge."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    r = spec.rect
    cols = {
        "left": p[:, 0] - r.x0,
        "right": r.x1 - p[:, 0],
        "bottom": p[:, 1] - r.y0,
        "top": r.y1 - p[:, 1],
    }
    return np.column_stack([cols[s] for s in sides]) if sides else np.empty((p.shape[0], 0))


def distance_to_edge_set(spec, point, which="all"):
    """Shortest distance from a point inside the rectangle to selected edges.

    ``which`` is "all", "physical", or "interface".  Returns +inf when the
    selected edge set is empty.
    """
    p = np.asarray(point, dtype=np.float64).reshape(1, 2)
    if not spec.rect.contains(p)[0]:
        raise PointOutside(f"point {point} outside subdomain {spec.index}")
    if which == "all":
        sides = list(SIDES)
    elif which == "physical":
        sides = spec.physical_sides
    elif which == "interface":
        sides = spec.interface_sides
    else:
        raise ValueError(f"unknown edge selector {which!r}")
    if not sides:
        return float("inf")
    return float(_edge_distances(spec, p, sides).min())


def merge_weights(specs, points, domain=None):
    """Partition-of-unity weights over covering subdomains.

    Returns an (m, p) array: nonnegative rows summing to one, zero for
    non-covering subdomains, continuous in the point, and exactly one in
    single-owner regions.  Raises PointOutside for points no subdomain covers
    (or outside ``domain`` when given).
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if domain is not None and not domain.contains(p).all():
        raise PointOutside("points outside the physical domain")
    w = np.zeros((p.shape[0], len(specs)))
    for k, spec in enumerate(specs):
        inside = spec.rect.contains(p)
        if not inside.any():
            continue
        sides = spec.interface_sides
        if not sides:
            w[inside, k] = 1.0
            continue
        d = _edge_distances(spec, p, sides).min(axis=1)
        w[inside, k] = np.maximum(d[inside], 0.0)
    total = w.sum(axis=1)
    if np.any(total <= 0.0):
        bad = int(np.argmin(total))
        raise PointOutside(f"point {p[bad]} not covered by any subdomain")
    return w / total[:, None]
