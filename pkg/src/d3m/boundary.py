"""Boundary lift built from fitted interface traces.

Interface data is smoothed into a trigonometric series on each edge's
arclength parameter and extended into the subdomain with exponential decay
exp(-a*d) in the perpendicular distance d to that edge.  Summing the per-edge
extensions keeps the gradient and Laplacian in closed form, at the price of a
bounded double count where two traced edges meet; the merge weights vanish
there, so the global field is unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SIDES, PointOutside

__all__ = [
    "BoundaryFunction",
    "FieldBundle",
    "InterfaceTrace",
    "RankDeficient",
    "constant_trace",
    "fit_trace",
    "shifted_field",
]


class RankDeficient(Exception):
    """Too few samples for the requested series degree."""


def _design_matrix(t, degree):
    """Columns 1, cos(pi k t), sin(pi k t) for k = 1..degree.

    Half-integer harmonics (period 2 on the unit parameter) fit smooth
    non-periodic edge data without endpoint ringing, while plain periodic
    targets such as sin(2*pi*t) stay exactly representable.
    """
    t = np.asarray(t, dtype=np.float64)
    cols = [np.ones_like(t)]
    for k in range(1, degree + 1):
        cols.append(np.cos(np.pi * k * t))
        cols.append(np.sin(np.pi * k * t))
    return np.column_stack(cols)


@dataclass
class InterfaceTrace:
    """Series fit of values along one edge, parameterized on [0, 1]."""

    edge: str
    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.size != 2 * self.degree + 1:
            raise ValueError("coefficient count must be 2*degree + 1")

    def value(self, t):
        return _design_matrix(t, self.degree) @ self.coefficients

    def d1(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        c = self.coefficients
        for k in range(1, self.degree + 1):
            w = np.pi * k
            out += w * (-c[2 * k - 1] * np.sin(w * t) + c[2 * k] * np.cos(w * t))
        return out

    def d2(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        c = self.coefficients
        for k in range(1, self.degree + 1):
            w = np.pi * k
            out -= w * w * (c[2 * k - 1] * np.cos(w * t) + c[2 * k] * np.sin(w * t))
        return out

    def is_zero(self):
        return not np.any(self.coefficients)

    def sup_bound(self):
        """Upper bound for |value| on [0, 1]."""
        return float(np.sum(np.abs(self.coefficients)))

    def state(self):
        return {"edge": self.edge, "degree": self.degree,
                "coefficients": self.coefficients.tolist()}

    @staticmethod
    def from_state(state):
        return InterfaceTrace(state["edge"], state["degree"],
                              np.asarray(state["coefficients"]))


def constant_trace(edge, value, degree=0):
    c = np.zeros(2 * degree + 1)
    c[0] = value
    return InterfaceTrace(edge, degree, c)


def fit_trace(edge, t, values, degree):
    """Least-squares series fit of (t, value) samples on one edge.

    Returns (trace, rms residual).  Requires at least 2*degree + 1 samples.
    """
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    ncoef = 2 * degree + 1
    if t.size < ncoef:
        raise RankDeficient(f"{t.size} samples cannot determine {ncoef} coefficients")
    phi = _design_matrix(t, degree)
    coef, _, rank, _ = np.linalg.lstsq(phi, values, rcond=None)
    if rank < ncoef:
        raise RankDeficient(f"design matrix rank {rank} < {ncoef}")
    rms = float(np.sqrt(np.mean((phi @ coef - values) ** 2)))
    return InterfaceTrace(edge, degree, coef), rms


class BoundaryFunction:
    """Sum of per-edge trace extensions with decay rate ``decay``.

    Missing traces count as zero.  Physical-boundary edges carry the exact
    Dirichlet datum (a constant trace), never a fit.
    """

    def __init__(self, spec, traces=None, decay=30.0):
        if decay <= 0:
            raise ValueError("decay coefficient must be positive")
        self.spec = spec
        self.decay = float(decay)
        self.traces = {s: None for s in SIDES}
        for side, trace in (traces or {}).items():
            if side not in SIDES:
                raise ValueError(f"unknown side {side!r}")
            self.traces[side] = trace

    def is_zero(self):
        return all(t is None or t.is_zero() for t in self.traces.values())

    def evaluate(self, points, check=True):
        """(g, grad g (m, 2), lap g (m,)) at points inside the subdomain."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if check and not self.spec.rect.contains(p).all():
            raise PointOutside("boundary function evaluated outside its subdomain")
        m = p.shape[0]
        g = np.zeros(m)
        grad = np.zeros((m, 2))
        lap = np.zeros(m)
        r = self.spec.rect
        a = self.decay
        for side, trace in self.traces.items():
            if trace is None or trace.is_zero():
                continue
            if side in ("left", "right"):
                length = r.height
                t = (p[:, 1] - r.y0) / length
                d = p[:, 0] - r.x0 if side == "left" else r.x1 - p[:, 0]
                sign = 1.0 if side == "left" else -1.0    # d(d)/dx
                perp, tang = 0, 1
            else:
                length = r.width
                t = (p[:, 0] - r.x0) / length
                d = p[:, 1] - r.y0 if side == "bottom" else r.y1 - p[:, 1]
                sign = 1.0 if side == "bottom" else -1.0  # d(d)/dy
                perp, tang = 1, 0
            decay = np.exp(-a * np.maximum(d, 0.0))
            tv = trace.value(t)
            g += tv * decay
            grad[:, perp] += -a * sign * tv * decay
            grad[:, tang] += trace.d1(t) / length * decay
            lap += (a * a * tv + trace.d2(t) / (length * length)) * decay
        return g, grad, lap

    def state(self):
        return {"decay": self.decay,
                "traces": {s: (t.state() if t is not None else None)
                           for s, t in self.traces.items()}}

    @staticmethod
    def from_state(spec, state):
        traces = {s: (InterfaceTrace.from_state(ts) if ts is not None else None)
                  for s, ts in state["traces"].items()}
        return BoundaryFunction(spec, traces, state["decay"])

    def scaled(self, factor):
        """Same lift with every trace multiplied by a constant."""
        traces = {}
        for side, t in self.traces.items():
            if t is not None:
                traces[side] = InterfaceTrace(t.edge, t.degree, factor * t.coefficients)
        return BoundaryFunction(self.spec, traces, self.decay)


@dataclass
class FieldBundle:
    """Everything the losses consume at a batch of points."""

    v: np.ndarray          # network scalar output (the shifted unknown)
    grad_v: np.ndarray
    flux: np.ndarray
    div_flux: np.ndarray
    g: np.ndarray          # boundary lift and its derivatives
    grad_g: np.ndarray
    lap_g: np.ndarray

    @property
    def u(self):
        """Reconstructed physical field: network output plus the lift."""
        return self.v + self.g


def shifted_field(net, bf, points):
    """Evaluate a network together with its boundary lift at points."""
    v, flux, grad_v, div_flux = net.forward_with_derivs(points)
    g, grad_g, lap_g = bf.evaluate(points)
    return FieldBundle(v, grad_v, flux, div_flux, g, grad_g, lap_g)
