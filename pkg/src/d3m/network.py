"""Residual tanh networks mapping a 2-D point to (u, flux_x, flux_y).

A network is an input lift 2 -> M, B residual blocks (two affine layers of
width M with tanh, plus an identity skip), and a linear 3-output head.  The
same forward code runs on plain arrays, on Duals (spatial derivatives), and
on a tape (training graphs with recorded tangent streams).
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Dual, affine_map, tanh_map

__all__ = [
    "Network",
    "load_checkpoint",
    "new_network",
    "parameter_count",
    "save_checkpoint",
]


def parameter_count(blocks, width):
    """Analytic parameter count: lift + B blocks of two square layers + head."""
    m = width
    return 2 * m + m + blocks * (2 * (m * m + m)) + 3 * m + 3


def _glorot(rng, rows, cols):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def new_network(blocks, width, seed):
    """Fresh network with Glorot-uniform weights and zero biases."""
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    if width < 2:
        raise ValueError("width must be >= 2")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    arrays = [_glorot(rng, width, 2), np.zeros((1, width))]
    for _ in range(blocks):
        arrays += [_glorot(rng, width, width), np.zeros((1, width)),
                   _glorot(rng, width, width), np.zeros((1, width))]
    arrays += [_glorot(rng, 3, width), np.zeros((1, 3))]
    return Network(blocks, width, seed, arrays)


class Network:
    """Parameter container plus the forward evaluations built on it."""

    def __init__(self, blocks, width, seed, arrays):
        self.blocks = blocks
        self.width = width
        self.seed = seed
        self.arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        n = sum(a.size for a in self.arrays)
        if n != parameter_count(blocks, width):
            raise ValueError(f"parameter arrays hold {n} values, "
                             f"expected {parameter_count(blocks, width)}")

    # -- flat parameter view ---------------------------------------------

    def get_flat(self):
        return np.concatenate([a.ravel() for a in self.arrays])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != parameter_count(self.blocks, self.width):
            raise ValueError("flat vector has wrong length")
        out = []
        pos = 0
        for a in self.arrays:
            out.append(theta[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        self.arrays = out

    def copy(self):
        return Network(self.blocks, self.width, self.seed,
                       [a.copy() for a in self.arrays])

    # -- evaluation ---------------------------------------------------------

    def _features(self, x):
        a = self.arrays
        h = tanh_map(affine_map(x, a[0], a[1]))
        for b in range(self.blocks):
            w1, b1, w2, b2 = a[2 + 4 * b: 6 + 4 * b]
            h = h + tanh_map(affine_map(tanh_map(affine_map(h, w1, b1)), w2, b2))
        return affine_map(h, a[-2], a[-1])

    def forward(self, points):
        """Evaluate at (m, 2) points; returns (u (m,), flux (m, 2))."""
        y = self._features(np.atleast_2d(np.asarray(points, dtype=np.float64)))
        return y[:, 0], y[:, 1:3]

    def forward_with_derivs(self, points):
        """(u, flux, grad_u (m, 2), div_flux (m,)) via forward tangents."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        m = pts.shape[0]
        ex = np.broadcast_to([1.0, 0.0], (m, 2))
        ey = np.broadcast_to([0.0, 1.0], (m, 2))
        dx = self._features(Dual(pts, ex))
        dy = self._features(Dual(pts, ey))
        y = dx.value
        grad_u = np.column_stack([dx.tangent[:, 0], dy.tangent[:, 0]])
        div_flux = dx.tangent[:, 1] + dy.tangent[:, 2]
        return y[:, 0], y[:, 1:3], grad_u, div_flux

    def laplacian_u(self, points):
        """Second-order directional derivatives: u_xx + u_yy at each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        m = pts.shape[0]
        lap = np.zeros(m)
        for axis in range(2):
            e = np.zeros((m, 2))
            e[:, axis] = 1.0
            z = np.zeros((m, 2))
            seed = Dual(Dual(pts, e), Dual(e, z))
            out = self._features(seed)
            lap += out.tangent.tangent[:, 0]
        return lap

    def bind(self, tape):
        """Create parameter leaves on a tape; returns a graph builder."""
        return TapeNetwork(tape, self, [tape.leaf(a) for a in self.arrays])


class TapeFields:
    """Network outputs on a tape: values plus optional coordinate tangents."""

    __slots__ = ("y", "yx", "yy")

    def __init__(self, y, yx=None, yy=None):
        self.y = y
        self.yx = yx
        self.yy = yy


class TapeNetwork:
    """Builds recorded forward (and tangent) graphs against shared leaves."""

    def __init__(self, tape, net, leaves):
        self.tape = tape
        self.net = net
        self.leaves = leaves

    def apply(self, points, tangents=False):
        tp = self.tape
        net = self.net
        lv = self.leaves
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        m = pts.shape[0]
        x = tp.constant(pts)
        one = tp.constant(1.0)

        def act(z):
            h = tp.tanh(z)
            s = one + tp.neg(tp.square(h))  # tanh' as a recorded expression
            return h, s

        h, s = act(tp.affine(x, lv[0], lv[1]))
        if tangents:
            tx = tp.constant(np.broadcast_to([1.0, 0.0], (m, 2)).copy())
            ty = tp.constant(np.broadcast_to([0.0, 1.0], (m, 2)).copy())
            hx = tp.mul(tp.affine(tx, lv[0]), s)
            hy = tp.mul(tp.affine(ty, lv[0]), s)
        for b in range(net.blocks):
            w1, b1, w2, b2 = lv[2 + 4 * b: 6 + 4 * b]
            a1, s1 = act(tp.affine(h, w1, b1))
            g, sg = act(tp.affine(a1, w2, b2))
            if tangents:
                a1x = tp.mul(tp.affine(hx, w1), s1)
                a1y = tp.mul(tp.affine(hy, w1), s1)
                hx = tp.add(hx, tp.mul(tp.affine(a1x, w2), sg))
                hy = tp.add(hy, tp.mul(tp.affine(a1y, w2), sg))
            h = tp.add(h, g)
        y = tp.affine(h, lv[-2], lv[-1])
        if not tangents:
            return TapeFields(y)
        return TapeFields(y, tp.affine(hx, lv[-2]), tp.affine(hy, lv[-2]))


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(net, path):
    """JSON checkpoint: architecture header plus the flat parameter vector."""
    with open(path, "w") as fh:
        json.dump(network_state(net), fh)


def network_state(net):
    return {"blocks": net.blocks, "width": net.width, "seed": net.seed,
            "params": net.get_flat().tolist()}


def network_from_state(state):
    net = new_network(state["blocks"], state["width"], state["seed"])
    net.set_flat(np.asarray(state["params"], dtype=np.float64))
    return net


def load_checkpoint(path):
    with open(path) as fh:
        return network_from_state(json.load(fh))
