"""Trainable objectives: mixed-residual Poisson and the well Schrödinger loss.

Both are Monte Carlo estimates recorded on a tape so that one reverse sweep
produces exact parameter gradients.  The interior Poisson term penalizes the
flux definition ||flux + grad v||^2 together with the conservation residual
(div flux - f - lap g)^2; the boundary term is the squared penalty
(q * v)^2; the Schrödinger objective adds the normalization penalty
gamma * (integral of psi^2 - 1 + p_out)^2 that rules out the trivial zero
solution.  The plain Ritz energy is kept as a reporting diagnostic only.

Loss functions accept any model exposing ``bind(tape) -> builder`` whose
``apply(points, tangents)`` returns the (m, 3) output node and its coordinate
tangent nodes, which is what lets tests plant exact analytic solutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteValue, Tape

__all__ = [
    "LossBreakdown",
    "ProblemSpec",
    "energy_diagnostic",
    "loss_gradient",
    "poisson_loss",
    "schrodinger_loss",
]


@dataclass
class LossBreakdown:
    interior: float
    boundary: float
    normalization: float
    total: float
    m1: int
    m2: int


@dataclass
class ProblemSpec:
    """What is being solved: the benchmark kind and its penalty weights."""

    kind: str                      # poisson | schrodinger
    source: object = None          # f(x, y) -> array, Poisson only
    energy: float = 0.0            # eigenvalue E, Schrödinger only
    q: float = 100.0
    gamma: float = 500.0

    def __post_init__(self):
        if self.kind not in ("poisson", "schrodinger"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.q <= 0:
            raise ValueError("q must be positive")
        if self.kind == "schrodinger" and self.gamma <= 0:
            raise ValueError("gamma must be positive for the Schrödinger loss")


def _col(tape, y, j):
    sel = np.zeros((1, 3))
    sel[0, j] = 1.0
    return tape.affine(y, tape.constant(sel))


def _check_batch(bf, batch):
    inside = bf.spec.rect.contains(batch.interior)
    if not inside.all():
        raise ValueError(f"interior batch point {np.argmin(inside)} "
                         f"outside subdomain {bf.spec.index}")


def _finite_breakdown(tape, parts, batch):
    vals = [float(tape.value(p)) if p is not None else 0.0 for p in parts]
    if not all(np.isfinite(v) for v in vals):
        idx = tape.first_nonfinite()
        raise NonFiniteValue(idx, tape._ops[idx][0] if idx is not None else "?")
    return vals


def _build_poisson(tape, model, bf, f, q, batch):
    bound = model.bind(tape)
    p = batch.interior
    fields = bound.apply(p, tangents=True)
    tx = _col(tape, fields.y, 1)
    ty = _col(tape, fields.y, 2)
    ux = _col(tape, fields.yx, 0)
    uy = _col(tape, fields.yy, 0)
    div = _col(tape, fields.yx, 1) + _col(tape, fields.yy, 2)

    fvals = np.asarray(f(p[:, 0], p[:, 1]), dtype=np.float64).reshape(-1, 1)
    _, _, lap_g = bf.evaluate(p)
    flux_res = (tx + ux).square() + (ty + uy).square()
    cons_res = (div - tape.constant(fvals) - tape.constant(lap_g.reshape(-1, 1))).square()
    interior = tape.mean(flux_res + cons_res)

    vb = _col(tape, bound.apply(batch.boundary, tangents=False).y, 0)
    boundary = tape.mean((tape.constant(float(q)) * vb).square())
    total = interior + boundary
    return bound, (interior, boundary, None, total)


def poisson_loss(model, bf, f, q, batch):
    """Monte Carlo mixed-residual objective on one subdomain batch."""
    _check_batch(bf, batch)
    tape = Tape()
    _, parts = _build_poisson(tape, model, bf, f, q, batch)
    i, b, n, t = _finite_breakdown(tape, parts, batch)
    return LossBreakdown(i, b, n, t, batch.m1, batch.m2)


def _build_schrodinger(tape, model, bf, energy, q, gamma, p_out, area, batch):
    bound = model.bind(tape)
    p = batch.interior
    fields = bound.apply(p, tangents=True)
    u = _col(tape, fields.y, 0)
    tx = _col(tape, fields.y, 1)
    ty = _col(tape, fields.y, 2)
    ux = _col(tape, fields.yx, 0)
    uy = _col(tape, fields.yy, 0)
    div = _col(tape, fields.yx, 1) + _col(tape, fields.yy, 2)

    g, _, lap_g = bf.evaluate(p)
    g_c = tape.constant(g.reshape(-1, 1))
    lap_c = tape.constant(lap_g.reshape(-1, 1))
    psi = u + g_c
    # lap(psi) is represented through the flux head: lap u = -div flux, with
    # the flux tied to -grad u by the unit-weight mixed penalty below.
    res = tape.neg(div) + lap_c + tape.constant(float(energy)) * psi
    flux_pen = (tx + ux).square() + (ty + uy).square()
    interior = tape.mean(res.square() + flux_pen)

    ub = _col(tape, bound.apply(batch.boundary, tangents=False).y, 0)
    boundary = tape.mean((tape.constant(float(q)) * ub).square())

    msq = tape.mean(psi.square())
    dev = tape.constant(float(area)) * msq + tape.constant(float(p_out) - 1.0)
    normalization = tape.constant(float(gamma)) * dev.square()
    total = interior + boundary + normalization
    return bound, (interior, boundary, normalization, total)


def schrodinger_loss(model, bf, energy, q, gamma, p_out, batch):
    """Squared eigen-residual of -lap(psi) = E psi plus boundary and
    normalization penalties; psi is the network output plus the lift."""
    _check_batch(bf, batch)
    if not 0.0 <= p_out <= 1.0:
        raise ValueError("exterior probability must lie in [0, 1]")
    tape = Tape()
    _, parts = _build_schrodinger(tape, model, bf, energy, q, gamma, p_out,
                                  bf.spec.rect.area, batch)
    i, b, n, t = _finite_breakdown(tape, parts, batch)
    return LossBreakdown(i, b, n, t, batch.m1, batch.m2)


def build_graph(tape, problem, model, bf, batch, p_out=0.0):
    """Record the objective for one batch; returns (bound model, term nodes).

    The term nodes are (interior, boundary, normalization-or-None, total);
    callers run the reverse sweep themselves, which lets line-search trials
    skip it.
    """
    _check_batch(bf, batch)
    if problem.kind == "poisson":
        return _build_poisson(tape, model, bf, problem.source, problem.q, batch)
    return _build_schrodinger(tape, model, bf, problem.energy, problem.q,
                              problem.gamma, p_out, bf.spec.rect.area, batch)


def breakdown_of(tape, parts, batch):
    i, b, n, t = _finite_breakdown(tape, parts, batch)
    return LossBreakdown(i, b, n, t, batch.m1, batch.m2)


def flat_gradient(tape, bound, parts):
    grads = tape.backward(parts[3], bound.leaves)
    return (np.concatenate([g.ravel() for g in grads])
            if grads else np.zeros(0))


def loss_gradient(problem, model, bf, batch, p_out=0.0):
    """Breakdown plus the flat parameter gradient of the total loss."""
    tape = Tape()
    bound, parts = build_graph(tape, problem, model, bf, batch, p_out)
    breakdown = breakdown_of(tape, parts, batch)
    return breakdown, flat_gradient(tape, bound, parts)


def energy_diagnostic(net, bf, f, batch):
    """Ritz energy estimate of the reconstructed field (reporting only)."""
    from .boundary import shifted_field

    p = batch.interior
    bundle = shifted_field(net, bf, p)
    grad_u = bundle.grad_v + bundle.grad_g
    fvals = np.asarray(f(p[:, 0], p[:, 1]), dtype=np.float64)
    dens = 0.5 * np.sum(grad_u ** 2, axis=1) - fvals * bundle.u
    return float(bf.spec.rect.area * np.mean(dens))
