"""Recorded-graph reverse-mode differentiation with forward tangents.

A ``Tape`` records a computation over float64 numpy values (scalars or 2-D
batches) built from a closed primitive set: affine, tanh, square, mean, add,
mul, neg.  The recording can be replayed, swept forward with directional
tangents, or swept backward to accumulate an adjoint for every leaf.

The second-order pattern the training losses need -- spatial derivatives of a
network appearing inside a scalar objective that is then differentiated with
respect to the parameters -- is handled by recording the tangent propagation
itself as additional tape nodes, so a single reverse sweep over the augmented
graph yields exact parameter gradients.  ``Dual`` provides the matching
un-recorded forward-tangent arithmetic and nests for plain second-order
directional derivatives.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dual",
    "GradCheckReport",
    "NonFiniteValue",
    "Tape",
    "Var",
    "check_gradients",
    "forward_tangent",
    "record_and_backward",
]

_BUG_ENV = "D3M_INJECT_GRAD_BUG"


class NonFiniteValue(Exception):
    """A recorded value turned non-finite; carries the offending node index."""

    def __init__(self, node, op, message=None):
        self.node = node
        self.op = op
        super().__init__(message or f"non-finite value at tape node {node} (op {op})")


def _as_array(value):
    a = np.asarray(value, dtype=np.float64)
    if a.ndim not in (0, 2):
        raise ValueError(f"tape values must be scalars or 2-D arrays, got shape {a.shape}")
    return a


class Var:
    """Handle to one tape node.  Supports the closed primitive set."""

    __slots__ = ("tape", "index")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape._vals[self.index]

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.add(self, self.tape.neg(self.tape._wrap(other)))

    def __rsub__(self, other):
        return self.tape.add(self.tape._wrap(other), self.tape.neg(self))

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.neg(self)

    def tanh(self):
        return self.tape.tanh(self)

    def square(self):
        return self.tape.square(self)

    def __repr__(self):
        return f"Var(node={self.index}, shape={self.value.shape})"


class Tape:
    """Append-only recording of primitive operations.

    Nodes are stored as (op, arg indices) plus the computed value, so the
    recording can be replayed bit-identically, differentiated backward from a
    scalar root, or swept forward with tangents.  One tape is owned by one
    worker; there is no internal locking.
    """

    def __init__(self):
        self._ops = []        # (opname, tuple of arg indices)
        self._vals = []       # np.ndarray per node
        self._grad = []       # bool per node: does the node depend on a leaf
        self._leaves = []     # indices of leaf nodes

    def __len__(self):
        return len(self._ops)

    # -- node constructors -------------------------------------------------

    def _push(self, op, args, value, needs_grad):
        self._ops.append((op, args))
        self._vals.append(value)
        self._grad.append(needs_grad)
        return Var(self, len(self._ops) - 1)

    def leaf(self, value):
        """Differentiable input; backward() reports its adjoint."""
        var = self._push("leaf", (), _as_array(value), True)
        self._leaves.append(var.index)
        return var

    def constant(self, value):
        return self._push("const", (), _as_array(value), False)

    def _wrap(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("mixing variables from different tapes")
            return x
        return self.constant(x)

    # -- primitives ----------------------------------------------------------

    def _binary_value(self, a, b):
        va, vb = self._vals[a.index], self._vals[b.index]
        if va.shape != vb.shape and va.ndim != 0 and vb.ndim != 0:
            raise ValueError(f"shape mismatch {va.shape} vs {vb.shape}")
        return va, vb

    def add(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        va, vb = self._binary_value(a, b)
        return self._push("add", (a.index, b.index), va + vb,
                          self._grad[a.index] or self._grad[b.index])

    def mul(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        va, vb = self._binary_value(a, b)
        return self._push("mul", (a.index, b.index), va * vb,
                          self._grad[a.index] or self._grad[b.index])

    def neg(self, a):
        a = self._wrap(a)
        return self._push("neg", (a.index,), -self._vals[a.index], self._grad[a.index])

    def tanh(self, a):
        a = self._wrap(a)
        return self._push("tanh", (a.index,), np.tanh(self._vals[a.index]),
                          self._grad[a.index])

    def square(self, a):
        a = self._wrap(a)
        v = self._vals[a.index]
        return self._push("square", (a.index,), v * v, self._grad[a.index])

    def mean(self, a):
        a = self._wrap(a)
        return self._push("mean", (a.index,), np.mean(self._vals[a.index]),
                          self._grad[a.index])

    def affine(self, x, w, b=None):
        """x @ w.T (+ b): x is (m, k), w is (n, k), b is () or (1, n)."""
        x, w = self._wrap(x), self._wrap(w)
        vx, vw = self._vals[x.index], self._vals[w.index]
        if vx.ndim != 2 or vw.ndim != 2 or vx.shape[1] != vw.shape[1]:
            raise ValueError(f"affine shapes incompatible: {vx.shape} @ {vw.shape}.T")
        v = vx @ vw.T
        if b is None:
            args = (x.index, w.index)
            needs = self._grad[x.index] or self._grad[w.index]
        else:
            b = self._wrap(b)
            vb = self._vals[b.index]
            v = v + vb
            args = (x.index, w.index, b.index)
            needs = self._grad[x.index] or self._grad[w.index] or self._grad[b.index]
        return self._push("affine", args, v, needs)

    # -- execution sweeps ----------------------------------------------------

    def value(self, var):
        return self._vals[var.index]

    def first_nonfinite(self):
        """Index of the first node holding a non-finite value, or None."""
        for i, v in enumerate(self._vals):
            if not np.all(np.isfinite(v)):
                return i
        return None

    def _raise_nonfinite(self):
        i = self.first_nonfinite()
        op = self._ops[i][0] if i is not None else "?"
        raise NonFiniteValue(i, op)

    def replay(self, updates=None):
        """Recompute every node in recording order.

        ``updates`` maps a leaf/constant Var (or index) to a replacement value;
        with no updates the recomputed values are bit-identical to the
        recording.
        """
        subs = {}
        for key, val in (updates or {}).items():
            idx = key.index if isinstance(key, Var) else int(key)
            if self._ops[idx][0] not in ("leaf", "const"):
                raise ValueError("only leaf/constant values can be replaced on replay")
            subs[idx] = _as_array(val)
        vals = self._vals
        for i, (op, args) in enumerate(self._ops):
            if op in ("leaf", "const"):
                if i in subs:
                    vals[i] = subs[i]
            elif op == "add":
                vals[i] = vals[args[0]] + vals[args[1]]
            elif op == "mul":
                vals[i] = vals[args[0]] * vals[args[1]]
            elif op == "neg":
                vals[i] = -vals[args[0]]
            elif op == "tanh":
                vals[i] = np.tanh(vals[args[0]])
            elif op == "square":
                v = vals[args[0]]
                vals[i] = v * v
            elif op == "mean":
                vals[i] = np.mean(vals[args[0]])
            elif op == "affine":
                v = vals[args[0]] @ vals[args[1]].T
                if len(args) == 3:
                    v = v + vals[args[2]]
                vals[i] = v
            else:  # pragma: no cover
                raise AssertionError(op)

    def backward(self, root, leaves=None):
        """Reverse sweep from a finite scalar root.

        Returns one adjoint array per requested leaf (defaults to all leaves,
        in creation order).  The tape stays usable: more nodes can be recorded
        and differentiated afterwards.
        """
        rv = self._vals[root.index]
        if rv.ndim != 0:
            raise ValueError("backward root must be a scalar node")
        if not np.isfinite(rv):
            self._raise_nonfinite()
        if leaves is None:
            leaves = [Var(self, i) for i in self._leaves]

        flip = -1.0 if os.environ.get(_BUG_ENV) == "1" else 1.0
        vals = self._vals
        grad = self._grad
        adj = [None] * (root.index + 1)
        owned = [False] * (root.index + 1)   # may the slot be mutated in place
        adj[root.index] = np.float64(1.0)

        def acc(idx, g, fresh=True):
            # reduce to a scalar adjoint when the operand was scalar
            if vals[idx].ndim == 0 and np.ndim(g) != 0:
                g = np.sum(g)
            cur = adj[idx]
            if cur is None:
                adj[idx] = g
                owned[idx] = fresh
            elif np.ndim(cur) == 0:
                adj[idx] = cur + g
                owned[idx] = True
            elif owned[idx]:
                np.add(cur, g, out=cur)
            else:
                adj[idx] = cur + g
                owned[idx] = True

        for i in range(root.index, -1, -1):
            g = adj[i]
            if g is None or not grad[i]:
                continue
            op, args = self._ops[i]
            if op in ("leaf", "const"):
                continue
            adj[i] = None   # the slot of a computational node is now consumed
            if op == "add":
                a, b = args
                if grad[a] and grad[b]:
                    acc(a, g, fresh=False)
                    acc(b, g, fresh=False)
                elif grad[a]:
                    acc(a, g, fresh=False)
                else:
                    acc(b, g, fresh=False)
            elif op == "mul":
                a, b = args
                if grad[a]:
                    acc(a, g * vals[b])
                if grad[b]:
                    acc(b, g * vals[a])
            elif op == "neg":
                acc(args[0], -g)
            elif op == "tanh":
                y = vals[i]
                if np.ndim(y):
                    t = y * y
                    np.subtract(1.0, t, out=t)
                    if flip != 1.0:
                        np.negative(t, out=t)
                    np.multiply(g, t, out=t)
                    acc(args[0], t)
                else:
                    acc(args[0], g * flip * (1.0 - y * y))
            elif op == "square":
                t = g * vals[args[0]]
                if np.ndim(t):
                    np.multiply(t, 2.0, out=t)
                    acc(args[0], t)
                else:
                    acc(args[0], 2.0 * t)
            elif op == "mean":
                src = vals[args[0]]
                acc(args[0], np.full(src.shape, g / src.size))
            elif op == "affine":
                x, w = args[0], args[1]
                if grad[x]:
                    acc(x, g @ vals[w])
                if grad[w]:
                    acc(w, g.T @ vals[x])
                if len(args) == 3 and grad[args[2]]:
                    vb = vals[args[2]]
                    gb = np.sum(g, axis=0)
                    acc(args[2], gb.reshape(vb.shape) if vb.ndim else np.sum(gb))
            else:  # pragma: no cover
                raise AssertionError(op)

        out = []
        for leaf in leaves:
            g = adj[leaf.index] if leaf.index <= root.index else None
            out.append(np.zeros_like(vals[leaf.index]) if g is None else np.asarray(g))
        return out

    def tangents(self, seeds):
        """Forward tangent sweep over the recording.

        ``seeds`` maps leaf/constant Vars (or indices) to tangent values.  The
        return value maps node index -> tangent; nodes with an identically
        zero tangent are omitted.
        """
        t = {}
        for key, val in seeds.items():
            idx = key.index if isinstance(key, Var) else int(key)
            t[idx] = _as_array(val)
        for i, (op, args) in enumerate(self._ops):
            if op in ("leaf", "const"):
                continue
            if op == "add":
                ta, tb = t.get(args[0]), t.get(args[1])
                if ta is None and tb is None:
                    continue
                t[i] = tb if ta is None else (ta if tb is None else ta + tb)
            elif op == "mul":
                ta, tb = t.get(args[0]), t.get(args[1])
                if ta is None and tb is None:
                    continue
                parts = []
                if ta is not None:
                    parts.append(ta * self._vals[args[1]])
                if tb is not None:
                    parts.append(self._vals[args[0]] * tb)
                t[i] = parts[0] if len(parts) == 1 else parts[0] + parts[1]
            elif op == "neg":
                ta = t.get(args[0])
                if ta is not None:
                    t[i] = -ta
            elif op == "tanh":
                ta = t.get(args[0])
                if ta is not None:
                    y = self._vals[i]
                    t[i] = ta * (1.0 - y * y)
            elif op == "square":
                ta = t.get(args[0])
                if ta is not None:
                    t[i] = ta * (2.0 * self._vals[args[0]])
            elif op == "mean":
                ta = t.get(args[0])
                if ta is not None:
                    t[i] = np.mean(ta)
            elif op == "affine":
                tx, tw = t.get(args[0]), t.get(args[1])
                parts = []
                if tx is not None:
                    parts.append(tx @ self._vals[args[1]].T)
                if tw is not None:
                    parts.append(self._vals[args[0]] @ tw.T)
                if len(args) == 3 and args[2] in t:
                    parts.append(t[args[2]])
                if parts:
                    s = parts[0]
                    for p in parts[1:]:
                        s = s + p
                    t[i] = s
            else:  # pragma: no cover
                raise AssertionError(op)
        return t


# -- duals ------------------------------------------------------------------


class Dual:
    """Value paired with a directional derivative.

    Arithmetic follows the chain rule exactly for the supported primitives.
    Components may themselves be Duals, which yields second directional
    derivatives without any extra rules.
    """

    __slots__ = ("value", "tangent")
    __array_ufunc__ = None  # keep numpy from absorbing us in mixed expressions

    def __init__(self, value, tangent):
        self.value = value
        self.tangent = tangent

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.tangent + other.tangent)
        return Dual(self.value + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value * other.value,
                        self.tangent * other.value + self.value * other.tangent)
        return Dual(self.value * other, self.tangent * other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value @ other.value,
                        self.tangent @ other.value + self.value @ other.tangent)
        return Dual(self.value @ other, self.tangent @ other)

    def __rmatmul__(self, other):
        return Dual(other @ self.value, other @ self.tangent)

    def tanh(self):
        y = tanh_map(self.value)
        return Dual(y, self.tangent * (1.0 - y * y))

    def square(self):
        return Dual(self.value * self.value, 2.0 * self.value * self.tangent)

    def __repr__(self):
        return f"Dual({self.value!r}, {self.tangent!r})"


def tanh_map(x):
    """tanh that recurses through nested Duals."""
    if isinstance(x, Dual):
        return x.tanh()
    return np.tanh(x)


def affine_map(x, w, b=None):
    """x @ w.T (+ b) for plain arrays or (nested) Duals with constant w, b."""
    if isinstance(x, Dual):
        return Dual(affine_map(x.value, w, b), affine_map(x.tangent, w, None))
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


# -- convenience entry points -------------------------------------------------


def record_and_backward(build, leaf_values):
    """Record ``build(tape, leaves) -> root`` and differentiate the root.

    ``leaf_values`` is a sequence of arrays/scalars, one per leaf.  Returns
    ``(root value, [gradient per leaf])``.  Raises NonFiniteValue (with the
    offending node index) if the recording went non-finite.
    """
    tape = Tape()
    leaves = [tape.leaf(v) for v in leaf_values]
    root = build(tape, leaves)
    grads = tape.backward(root, leaves)
    return float(tape.value(root)), grads


def forward_tangent(build, point, direction):
    """Directional derivatives of a recorded map at a 2-D point.

    ``build(tape, x) -> sequence of output Vars`` with x a (1, 2) input node.
    ``direction`` must be a coordinate unit vector; returns one float per
    output.
    """
    d = np.asarray(direction, dtype=np.float64).reshape(2)
    if not (np.count_nonzero(d) == 1 and np.max(np.abs(d)) == 1.0):
        raise ValueError("direction must be a coordinate unit vector")
    tape = Tape()
    x = tape.constant(np.asarray(point, dtype=np.float64).reshape(1, 2))
    outs = build(tape, x)
    if not np.isfinite(tape.value(outs[-1])).all():
        tape._raise_nonfinite()
    t = tape.tangents({x: d.reshape(1, 2)})
    result = []
    for o in outs:
        to = t.get(o.index)
        result.append(0.0 if to is None else float(np.asarray(to).reshape(())))
    return result


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_index: int

    def __bool__(self):
        return self.passed


def check_gradients(fun, x, step=1e-5, tol=1e-6):
    """Compare an analytic gradient against central finite differences.

    ``fun(x) -> (value, gradient)``.  Componentwise relative error, with an
    absolute fallback of 1e-8 whenever both gradients are below 1e-6 in
    magnitude.
    """
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")
    x = np.asarray(x, dtype=np.float64).copy()
    _, analytic = fun(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = -1
    max_rel = 0.0
    for i in range(x.size):
        xi = x.flat[i]
        x.flat[i] = xi + step
        fp, _ = fun(x)
        x.flat[i] = xi - step
        fm, _ = fun(x)
        x.flat[i] = xi
        fd = (fp - fm) / (2.0 * step)
        ga = analytic.flat[i]
        scale = max(abs(ga), abs(fd))
        if scale < 1e-6:
            rel = 0.0 if abs(ga - fd) <= 1e-8 else np.inf
        else:
            rel = abs(ga - fd) / scale
        if rel > max_rel:
            max_rel = rel
            worst = i
    return GradCheckReport(float(max_rel), bool(max_rel <= tol), int(worst))
