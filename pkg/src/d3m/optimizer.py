"""Limited-memory BFGS with a backtracking line search, plus plain descent.

The two-loop recursion builds the search direction from at most ``history``
curvature pairs; pairs failing the curvature condition are skipped.  The
configured learning rate is the first trial step of an Armijo backtracking
search, so every accepted step decreases the objective.  One ``step`` call is
one full cycle (direction, line search, history update), which is what one
training epoch runs on its freshly sampled batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteValue

__all__ = ["Lbfgs", "LbfgsState", "MinimizeResult", "gd_step", "minimize", "two_loop"]

_ARMIJO_C = 1e-4
_MAX_HALVINGS = 30
_CURVATURE_EPS = 1e-10


def gd_step(theta, gradient, lr):
    """One explicit gradient-descent update."""
    return np.asarray(theta) - lr * np.asarray(gradient)


def two_loop(grad, pairs):
    """Search direction -H*grad from stored (s, y) pairs.

    With no pairs this is steepest descent (identity initial Hessian guess);
    otherwise the initial guess is scaled by s.y/y.y of the newest pair.
    """
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


@dataclass
class LbfgsState:
    """Curvature history and bookkeeping for a warm-startable optimizer."""

    lr: float = 0.5
    history: int = 10
    pairs: list = field(default_factory=list)   # (s, y, 1/s.y)
    iteration: int = 0
    line_search_failed: bool = False

    def store(self, s, y):
        sy = float(np.dot(s, y))
        if sy <= _CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.pairs.append((s, y, 1.0 / sy))
        if len(self.pairs) > self.history:
            self.pairs.pop(0)
        return True


class Lbfgs:
    """Stateful minimizer; ``step(fun)`` runs one accepted update.

    ``fun(x) -> (value, gradient)``.  When the objective also exposes
    ``value(x)`` and ``gradient_of_last()`` (a value-only evaluation plus a
    deferred reverse sweep over the recorded graph), line-search trials skip
    the gradient work and only the accepted point pays for it.
    """

    def __init__(self, x0, lr=0.5, history=10):
        self.x = np.asarray(x0, dtype=np.float64).copy()
        self.state = LbfgsState(lr=lr, history=history)
        self.f = None
        self.g = None

    def _eval(self, fun, x):
        f, g = fun(x)
        return float(f), np.asarray(g, dtype=np.float64)

    def run(self, fun, iterations):
        """Up to ``iterations`` accepted updates on one fixed objective.

        The accepted point's value and gradient carry over to the next
        iteration, so each update costs one new evaluation plus any rejected
        trials.  Returns the accepted values; stops early at a zero gradient
        or a failed line search (flagged, iterate kept).
        """
        staged = hasattr(fun, "value") and hasattr(fun, "gradient_of_last")
        self.state.line_search_failed = False
        f0, g0 = self._eval(fun, self.x)
        if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
            raise NonFiniteValue(-1, "objective",
                                 "objective non-finite at the current iterate")
        trace = []
        for _ in range(iterations):
            gnorm = float(np.linalg.norm(g0))
            if gnorm == 0.0:
                break
            d = two_loop(g0, self.state.pairs)
            slope = float(np.dot(g0, d))
            if slope >= 0.0:
                d = -g0
                slope = -gnorm * gnorm

            alpha = self.state.lr
            accepted = False
            g_new = None
            for _ in range(_MAX_HALVINGS):
                x_new = self.x + alpha * d
                if staged:
                    f_new = float(fun.value(x_new))
                else:
                    f_new, g_new = self._eval(fun, x_new)
                if np.isfinite(f_new) and f_new <= f0 + _ARMIJO_C * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                self.state.line_search_failed = True
                break

            if staged:
                g_new = np.asarray(fun.gradient_of_last(), dtype=np.float64)
            if not np.all(np.isfinite(g_new)):
                raise NonFiniteValue(-1, "gradient",
                                     "gradient non-finite at accepted point")
            self.state.store(x_new - self.x, g_new - g0)
            self.x = x_new
            f0, g0 = f_new, g_new
            self.state.iteration += 1
            trace.append(f_new)
        self.f, self.g = f0, g0
        return trace

    def step(self, fun):
        """One direction + Armijo backtracking + history update.

        Returns the accepted objective value.  A failed line search leaves
        the iterate unchanged and raises the state flag.
        """
        trace = self.run(fun, 1)
        return trace[0] if trace else self.f


@dataclass
class MinimizeResult:
    x: np.ndarray
    trace: list
    line_search_failed: bool
    iterations: int


def minimize(fun, x0, epochs, lr=0.5, history=10):
    """Run up to ``epochs`` L-BFGS cycles on a fixed objective.

    ``fun(x) -> (value, gradient)``.  The returned trace holds the accepted
    objective value of each cycle; values never increase.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    opt = Lbfgs(x0, lr=lr, history=history)
    trace = opt.run(fun, epochs)
    return MinimizeResult(opt.x, trace, opt.state.line_search_failed,
                          opt.state.iteration)
