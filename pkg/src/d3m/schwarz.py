"""Outer iteration: parallel subdomain training, trace exchange, merging.

All subdomains train concurrently against the trace snapshot of the previous
iteration (additive scheduling; exchange happens only at barriers), warm
starting their networks.  Convergence is the mean per-point squared change of
the subdomain solutions on fixed evaluation grids; hitting the iteration cap
is reported, not raised.  A run can checkpoint every iteration and resume.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .boundary import BoundaryFunction, InterfaceTrace, fit_trace
from .geometry import PointOutside, merge_weights
from .loss import breakdown_of, build_graph, flat_gradient
from .network import Network, network_from_state, network_state, new_network
from .optimizer import Lbfgs, gd_step
from .sampler import draw_batch, rng_for, schedule

__all__ = [
    "GlobalSolution",
    "OuterState",
    "RunResult",
    "TrainSettings",
    "epsilon",
    "evaluate_global",
    "run_d3m",
    "train_subdomain",
]


@dataclass
class TrainSettings:
    blocks: int = 4
    width: int = 64
    seed: int = 0
    base_m1: int = 512
    growth: float = 2.0
    cap: int = 4096
    m2: int = 128
    optimizer: str = "lbfgs"
    lr: float = 0.5
    epochs: int = 30
    inner: int = 12                # optimizer cycles per epoch batch
    history: int = 10
    decay: float = 75.0            # boundary-lift decay coefficient
    fourier_degree: int = 8
    eta: float = 1e-4
    max_k: int = 8
    workers: int | None = None
    trace_points: int = 128        # fixed samples per interface edge
    eval_grid: int = 64            # fixed evaluation lattice across the domain


@dataclass
class OuterState:
    """Everything one outer iteration consumes and produces."""

    iteration: int
    networks: list
    traces: list                   # per subdomain: side -> InterfaceTrace | None
    trained_traces: list           # snapshot the current networks trained against
    sols: list                     # per subdomain values on its fixed grid
    eps_history: list = field(default_factory=list)
    p_out: list = field(default_factory=list)


@dataclass
class RunResult:
    solution: "GlobalSolution"
    eps_history: list
    converged: bool
    iterations: int
    loss_rows: list
    timings: list
    state: OuterState


class GlobalSolution:
    """Merged field: partition-of-unity blend of per-subdomain fields."""

    def __init__(self, domain, specs, networks, boundary_fns):
        self.domain = domain
        self.specs = specs
        self.networks = networks
        self.boundary_fns = boundary_fns

    def subdomain_field(self, i, points):
        u = self.networks[i].forward(points)[0]
        return u + self.boundary_fns[i].evaluate(points)[0]

    def evaluate(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        w = merge_weights(self.specs, pts, self.domain)
        out = np.zeros(pts.shape[0])
        for i in range(len(self.specs)):
            mask = w[:, i] > 0.0
            if mask.any():
                out[mask] += w[mask, i] * self.subdomain_field(i, pts[mask])
        return out

    def flip_sign(self):
        """Negate the represented field exactly (head weights and traces)."""
        for net in self.networks:
            net.arrays[-2] = -net.arrays[-2]
            net.arrays[-1] = -net.arrays[-1]
        self.boundary_fns = [bf.scaled(-1.0) for bf in self.boundary_fns]

    def canonical_sign(self, seed=0, samples=4096):
        """Fix the sign gauge: make the domain integral nonnegative.

        The eigenproblem determines the field only up to sign; reports use
        the nonnegative-integral representative.  Returns True if flipped.
        """
        rng = rng_for(seed, 3)
        pts = np.column_stack([
            rng.uniform(self.domain.x0, self.domain.x1, samples),
            rng.uniform(self.domain.y0, self.domain.y1, samples)])
        if float(np.mean(self.evaluate(pts))) < 0.0:
            self.flip_sign()
            return True
        return False


def evaluate_global(solution, points):
    return solution.evaluate(points)


def epsilon(prev_sols, curr_sols):
    """Mean over subdomains of the per-point mean squared solution change."""
    if len(prev_sols) != len(curr_sols):
        raise ValueError("subdomain count mismatch")
    total = 0.0
    for a, b in zip(prev_sols, curr_sols):
        a = np.asarray(a)
        b = np.asarray(b)
        if a.shape != b.shape:
            raise ValueError(f"evaluation-set shape mismatch: {a.shape} vs {b.shape}")
        total += float(np.sum((b - a) ** 2)) / a.size
    return total / len(prev_sols)


def _network_seed(seed, i):
    return int(np.random.SeedSequence(seed, spawn_key=(0, i)).generate_state(1)[0])


def _eval_points(domain, specs, eval_grid):
    """Fixed lattice over the domain, clipped to each subdomain."""
    xs = np.linspace(domain.x0, domain.x1, eval_grid)
    ys = np.linspace(domain.y0, domain.y1, eval_grid)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return [pts[spec.rect.contains(pts)] for spec in specs]


def _trace_requests(specs, trace_points):
    """Fixed interface sample points, grouped by the producing subdomain."""
    t = np.linspace(0.0, 1.0, trace_points)
    requests = {spec.index: [] for spec in specs}
    for spec in specs:
        for side in spec.interface_sides:
            producer = spec.edges[side].neighbor
            requests[producer].append((spec.index, side, t, spec.edge_points(side, t)))
    return requests


def _boundary_fn(spec, traces, decay):
    return BoundaryFunction(spec, traces or {}, decay)


class _Objective:
    """Adapter from a loss batch to the optimizer's staged protocol.

    ``value`` records the forward graph only; ``gradient_of_last`` runs the
    reverse sweep over that recording, so rejected line-search trials never
    pay for gradients.  Breakdowns are remembered so the accepted one can be
    logged afterwards.
    """

    def __init__(self, problem, net, bf, batch, p_out):
        self.problem = problem
        self.net = net
        self.bf = bf
        self.batch = batch
        self.p_out = p_out
        self.calls = []
        self._last = None

    def value(self, theta):
        self.net.set_flat(theta)
        tape = Tape()
        bound, parts = build_graph(tape, self.problem, self.net, self.bf,
                                   self.batch, self.p_out)
        breakdown = breakdown_of(tape, parts, self.batch)
        self.calls.append(breakdown)
        self._last = (tape, bound, parts)
        return breakdown.total

    def gradient_of_last(self):
        tape, bound, parts = self._last
        self._last = None          # drop the recording as soon as it is used
        return flat_gradient(tape, bound, parts)

    def __call__(self, theta):
        total = self.value(theta)
        return total, self.gradient_of_last()

    def accepted(self, total):
        for bd in reversed(self.calls):
            if bd.total == total:
                return bd
        return self.calls[0]


def train_subdomain(i, spec, net, traces_in, k, problem, settings, p_out,
                    eval_pts, requests):
    """One offline step on one subdomain.

    Builds the boundary lift from the incoming trace snapshot, runs the
    configured number of training epochs (fresh batch each epoch, one
    optimizer cycle per batch), then evaluates the solution on the fixed grid
    and produces the interface values requested by neighboring subdomains.
    """
    t0 = time.perf_counter()
    bf = _boundary_fn(spec, traces_in, settings.decay)
    rows = []
    opt = Lbfgs(net.get_flat(), lr=settings.lr, history=settings.history)
    m1, m2 = schedule(k, settings.base_m1, settings.growth, settings.cap,
                      settings.m2)
    for epoch in range(settings.epochs):
        batch = draw_batch(spec, m1, m2, rng_for(settings.seed, 1, i, k, epoch), k)
        objective = _Objective(problem, net, bf, batch, p_out)
        if settings.optimizer == "gd":
            total = None
            for _ in range(settings.inner):
                total, grad = objective(opt.x)
                opt.x = gd_step(opt.x, grad, settings.lr)
            accepted = objective.accepted(total)
        else:
            trace = opt.run(objective, settings.inner)
            total = trace[-1] if trace else opt.f
            accepted = objective.accepted(total)
        rows.append((k, i, epoch, accepted.interior, accepted.boundary,
                     accepted.normalization, accepted.total))
    net.set_flat(opt.x)

    sol = net.forward(eval_pts)[0]
    produced = []
    for consumer, side, t, pts in requests:
        values = net.forward(pts)[0] + bf.evaluate(pts)[0]
        produced.append((consumer, side, t, values))
    seconds = time.perf_counter() - t0
    return net, sol, produced, rows, seconds, m1


def run_d3m(problem, domain, specs, settings, outdir=None, resume=None):
    """Full offline/online cycle; returns the merged solution and history."""
    if settings.eta <= 0:
        raise ValueError("eta must be positive")
    p = len(specs)
    workers = settings.workers or min(p, os.cpu_count() or 1)
    eval_sets = _eval_points(domain, specs, settings.eval_grid)
    requests = _trace_requests(specs, settings.trace_points)

    if resume is not None:
        state = resume
    else:
        networks = [new_network(settings.blocks, settings.width,
                                _network_seed(settings.seed, i)) for i in range(p)]
        zero = [dict() for _ in range(p)]
        sols = [networks[i].forward(eval_sets[i])[0] for i in range(p)]
        p_out = [max(0.0, 1.0 - specs[i].rect.area / domain.area) for i in range(p)]
        state = OuterState(0, networks, zero, [dict() for _ in range(p)],
                           sols, [], p_out)

    loss_rows = []
    timings = []
    eps = 10.0 * settings.eta
    k = state.iteration
    while k < settings.max_k and eps > settings.eta:
        traces_in = state.traces

        def work(i):
            return train_subdomain(i, specs[i], state.networks[i], traces_in[i],
                                   k, problem, settings, state.p_out[i],
                                   eval_sets[i], requests[specs[i].index])

        if workers > 1 and p > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(work, range(p)))
        else:
            results = [work(i) for i in range(p)]

        produced_all = {}
        new_sols = []
        for i, (net, sol, produced, rows, seconds, m1) in enumerate(results):
            state.networks[i] = net
            loss_rows.extend(rows)
            timings.append({"iteration": k, "subdomain": i,
                            "seconds": seconds, "epochs": settings.epochs,
                            "m1": m1})
            new_sols.append(sol)
            for consumer, side, t, values in produced:
                produced_all[(consumer, side)] = (t, values)

        new_traces = []
        for i, spec in enumerate(specs):
            fitted = {}
            for side in spec.interface_sides:
                t, values = produced_all[(i, side)]
                trace, _ = fit_trace(side, t, values, settings.fourier_degree)
                fitted[side] = trace
            new_traces.append(fitted)

        eps = epsilon(state.sols, new_sols)
        state.eps_history.append(eps)
        state.trained_traces = traces_in
        state.traces = new_traces
        state.sols = new_sols
        state.iteration = k + 1

        if problem.kind == "schrodinger":
            state.p_out = _estimate_p_out(problem, domain, specs,
                                          state.networks, traces_in,
                                          settings, k)
        if outdir is not None:
            _write_checkpoint(outdir, state, settings)
        k += 1

    bfs = [_boundary_fn(specs[i], state.trained_traces[i], settings.decay)
           for i in range(p)]
    solution = GlobalSolution(domain, specs, state.networks, bfs)
    converged = bool(state.eps_history and state.eps_history[-1] <= settings.eta)
    return RunResult(solution, list(state.eps_history), converged,
                     state.iteration, loss_rows, timings, state)


def _estimate_p_out(problem, domain, specs, networks, traces, settings, k,
                    samples=10_000):
    """Monte Carlo exterior probabilities from the current merged field."""
    bfs = [_boundary_fn(specs[i], traces[i], settings.decay)
           for i in range(len(specs))]
    solution = GlobalSolution(domain, specs, networks, bfs)
    rng = rng_for(settings.seed, 2, k)
    pts = np.column_stack([rng.uniform(domain.x0, domain.x1, samples),
                           rng.uniform(domain.y0, domain.y1, samples)])
    psi_sq = solution.evaluate(pts) ** 2
    out = []
    for spec in specs:
        outside = ~spec.rect.contains(pts)
        out.append(float(np.clip(domain.area * np.mean(psi_sq * outside), 0.0, 1.0)))
    return out


# -- checkpointing ----------------------------------------------------------


def _traces_state(traces):
    return [{side: tr.state() for side, tr in per_sub.items() if tr is not None}
            for per_sub in traces]


def _traces_from_state(state):
    return [{side: InterfaceTrace.from_state(ts) for side, ts in per_sub.items()}
            for per_sub in state]


def _write_checkpoint(outdir, state, settings):
    os.makedirs(outdir, exist_ok=True)
    payload = {
        "iteration": state.iteration,
        "eps_history": state.eps_history,
        "networks": [network_state(n) for n in state.networks],
        "traces": _traces_state(state.traces),
        "trained_traces": _traces_state(state.trained_traces),
        "sols": [s.tolist() for s in state.sols],
        "p_out": state.p_out,
    }
    path = os.path.join(outdir, f"checkpoint_{state.iteration:03d}.json")
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint_state(path):
    with open(path) as fh:
        payload = json.load(fh)
    return OuterState(
        payload["iteration"],
        [network_from_state(s) for s in payload["networks"]],
        _traces_from_state(payload["traces"]),
        _traces_from_state(payload["trained_traces"]),
        [np.asarray(s) for s in payload["sols"]],
        payload["eps_history"],
        payload["p_out"],
    )


def latest_checkpoint(outdir):
    names = sorted(n for n in os.listdir(outdir)
                   if n.startswith("checkpoint_") and n.endswith(".json"))
    return os.path.join(outdir, names[-1]) if names else None
