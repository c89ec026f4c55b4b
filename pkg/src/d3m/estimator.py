"""Scikit-learn style front end: fit trains the solver, predict evaluates it.

The solver is data-free (the PDE and its sampling are fixed by the
constructor parameters), so ``fit`` ignores X and y; ``predict`` evaluates
the merged field at query points inside the domain.  ``get_params`` /
``set_params`` / ``clone`` work the usual way, so the solver drops into
pipelines and parameter sweeps.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import PointOutside, Rect, decompose
from .loss import ProblemSpec
from .reference import WELL_ENERGY, relative_error
from .schwarz import TrainSettings, run_d3m

__all__ = ["D3MSolver", "validate_points"]


def validate_points(X, domain=None):
    """Coerce to a finite (m, 2) float array, optionally inside a domain."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 2:
        raise ValueError(f"expected points with 2 coordinates, got {X.shape[1]}")
    if domain is not None and not domain.contains(X).all():
        raise PointOutside("query points outside the solver domain")
    return X


class D3MSolver(BaseEstimator):
    """Deep domain decomposition solver with an estimator interface.

    One residual network per overlapping subdomain is trained on a mixed
    residual loss; interface data is exchanged between outer iterations and
    the subdomain fields are merged with partition-of-unity weights.  A
    ``grid=(1, 1)`` solver is the single-network baseline (no decomposition,
    no interface exchange).
    """

    def __init__(self, problem="poisson", domain=(-1.0, 1.0, -1.0, 1.0),
                 grid=(2, 2), overlap=0.4, blocks=4, width=64,
                 base_m1=512, growth=2.0, cap=4096, m2=128,
                 optimizer="lbfgs", lr=0.5, epochs=30, history=10,
                 q=100.0, gamma=500.0, energy=None, eta=1e-4, max_k=8,
                 decay_a=None, fourier_degree=8, seed=0, workers=None):
        self.problem = problem
        self.domain = domain
        self.grid = grid
        self.overlap = overlap
        self.blocks = blocks
        self.width = width
        self.base_m1 = base_m1
        self.growth = growth
        self.cap = cap
        self.m2 = m2
        self.optimizer = optimizer
        self.lr = lr
        self.epochs = epochs
        self.history = history
        self.q = q
        self.gamma = gamma
        self.energy = energy
        self.eta = eta
        self.max_k = max_k
        self.decay_a = decay_a
        self.fourier_degree = fourier_degree
        self.seed = seed
        self.workers = workers

    def _problem_spec(self):
        if self.problem == "poisson":
            return ProblemSpec("poisson", source=lambda x, y: np.ones_like(x),
                               q=self.q, gamma=self.gamma)
        if self.problem == "schrodinger":
            energy = WELL_ENERGY if self.energy is None else self.energy
            return ProblemSpec("schrodinger", energy=energy,
                               q=self.q, gamma=self.gamma)
        raise ValueError(f"unknown problem {self.problem!r}")

    def fit(self, X=None, y=None):
        """Train the subdomain networks; X and y are ignored (mesh-free)."""
        domain = Rect(*self.domain)
        specs = decompose(domain, self.grid, self.overlap)
        decay = self.decay_a if self.decay_a is not None else 30.0 / self.overlap
        settings = TrainSettings(
            blocks=self.blocks, width=self.width, seed=self.seed,
            base_m1=self.base_m1, growth=self.growth, cap=self.cap, m2=self.m2,
            optimizer=self.optimizer, lr=self.lr, epochs=self.epochs,
            history=self.history, decay=decay,
            fourier_degree=self.fourier_degree, eta=self.eta,
            max_k=self.max_k, workers=self.workers)
        result = run_d3m(self._problem_spec(), domain, specs, settings)
        if self.problem == "schrodinger":
            result.solution.canonical_sign(self.seed)
        self.domain_ = domain
        self.solution_ = result.solution
        self.eps_history_ = result.eps_history
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        return self

    def predict(self, X):
        """Merged field values at (m, 2) points inside the domain."""
        check_is_fitted(self, "solution_")
        X = validate_points(X, self.domain_)
        return self.solution_.evaluate(X)

    def score(self, X, y):
        """Negative relative 2-norm error against reference values y."""
        y = np.asarray(y, dtype=np.float64).ravel()
        return -relative_error(self.predict(X), y)
