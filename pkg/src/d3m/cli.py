"""Batch front door: run, compare, gradcheck, describe.

Exit codes: 0 ok, 1 check failure, 2 configuration error, 3 outer iteration
hit its cap without reaching the drift threshold (outputs are still written).
Every CSV starts with a comment carrying the canonical config hash; manifest
timestamps are the only run-to-run varying bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from .autodiff import check_gradients
from .boundary import fit_trace
from .config import ConfigError, parse_config
from .loss import ProblemSpec, loss_gradient
from .network import new_network
from .reference import exact_schrodinger, fd_poisson, relative_error
from .sampler import draw_batch, rng_for
from .schwarz import (GlobalSolution, latest_checkpoint, load_checkpoint_state,
                      run_d3m, _boundary_fn)

REPORT_GRID = 101
REFERENCE_N = 513


def _solution_grid(domain):
    xs = np.linspace(domain.x0, domain.x1, REPORT_GRID)
    ys = np.linspace(domain.y0, domain.y1, REPORT_GRID)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _write_csv(path, cfg_hash, header, rows):
    with open(path, "w") as fh:
        fh.write(f"# config={cfg_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _error_report(cfg, solution):
    domain = cfg.rect
    pts = _solution_grid(domain)
    values = solution.evaluate(pts)
    if cfg.problem == "poisson":
        ref = fd_poisson(domain, REFERENCE_N, cfg.problem_spec().source)
        report = {"e_r": relative_error(values, ref.interp(pts))}
    else:
        wave, prob = exact_schrodinger(pts)
        report = {"e_r_wave": relative_error(values, wave),
                  "e_r_prob": relative_error(values ** 2, prob)}
    return report, pts, values


def cmd_run(args):
    cfg = _load_config(args)
    outdir = cfg.output
    os.makedirs(outdir, exist_ok=True)
    cfg_hash = cfg.canonical_hash()
    started = time.perf_counter()

    resume = None
    ckpt_dir = os.path.join(outdir, "checkpoints")
    if args.resume:
        latest = latest_checkpoint(ckpt_dir) if os.path.isdir(ckpt_dir) else None
        if latest:
            resume = load_checkpoint_state(latest)

    result = run_d3m(cfg.problem_spec(), cfg.rect, cfg.subdomains(),
                     cfg.settings(workers=args.workers), outdir=ckpt_dir,
                     resume=resume)
    if cfg.problem == "schrodinger":
        result.solution.canonical_sign(cfg.seed)
    report, pts, values = _error_report(cfg, result.solution)
    report.update({"config_hash": cfg_hash, "problem": cfg.problem,
                   "converged": result.converged,
                   "iterations": result.iterations,
                   "epsilon": result.eps_history[-1] if result.eps_history else None})

    _write_csv(os.path.join(outdir, "solution.csv"), cfg_hash,
               ["x", "y", "value"],
               [(float(p[0]), float(p[1]), float(v)) for p, v in zip(pts, values)])
    _write_csv(os.path.join(outdir, "epsilon.csv"), cfg_hash,
               ["iteration", "epsilon"],
               [(k, float(e)) for k, e in enumerate(result.eps_history, start=1)])
    _write_csv(os.path.join(outdir, "loss_log.csv"), cfg_hash,
               ["iteration", "subdomain", "epoch", "interior", "boundary",
                "normalization", "total"],
               [tuple(r) for r in result.loss_rows])
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)

    manifest = {
        "config_hash": cfg_hash,
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "created": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": time.perf_counter() - started,
        "timings": result.timings,
        "epsilon_history": result.eps_history,
        "report": report,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    for key, val in sorted(report.items()):
        print(f"{key}: {val}")
    return 0 if result.converged else 3


def cmd_compare(args):
    cfg = _load_config(args)
    if not cfg.methods:
        print("error: empty method list", file=sys.stderr)
        return 2
    if not cfg.blocks_list:
        print("error: empty blocks list", file=sys.stderr)
        return 2
    cfg_hash = cfg.canonical_hash()
    os.makedirs(cfg.output, exist_ok=True)
    rows = []
    for method in cfg.methods:
        if method not in ("d3m", "drm"):
            print(f"error: unknown method {method!r}", file=sys.stderr)
            return 2
        grid = cfg.grid if method == "d3m" else (1, 1)
        for blocks in cfg.blocks_list:
            settings = cfg.settings(workers=args.workers, blocks=blocks)
            from .geometry import decompose
            specs = decompose(cfg.rect, grid, cfg.overlap)
            result = run_d3m(cfg.problem_spec(), cfg.rect, specs, settings)
            if cfg.problem == "schrodinger":
                result.solution.canonical_sign(cfg.seed)
            report, _, _ = _error_report(cfg, result.solution)
            neurons = 2 * blocks * settings.width
            if cfg.problem == "poisson":
                rows.append((method, blocks, neurons, report["e_r"]))
            else:
                rows.append(("wave", method, blocks, neurons, report["e_r_wave"]))
                rows.append(("prob", method, blocks, neurons, report["e_r_prob"]))

    if cfg.problem == "poisson":
        header = ["method", "blocks", "neurons", "e_r"]
    else:
        header = ["target", "method", "blocks", "neurons", "e_r"]
        rows.sort(key=lambda r: (r[0] == "prob", r[1], r[2]))
    path = os.path.join(cfg.output, "compare_table.csv")
    _write_csv(path, cfg_hash, header, rows)
    print(",".join(header))
    for row in rows:
        print(",".join(str(v) for v in row))
    return 0


def _gradcheck_case(problem_kind, domain, seed, tol):
    """Gradient check of a full loss on one subdomain with fitted traces."""
    from .geometry import decompose
    specs = decompose(domain, (2, 1), 0.2 * domain.width)
    spec = specs[0]
    rng = rng_for(seed, 7)
    net = new_network(4, 16, seed)
    # smooth nonzero interface data so the lift terms participate
    t = np.linspace(0.0, 1.0, 40)
    traces = {}
    for side in spec.interface_sides:
        amp = rng.uniform(0.1, 0.5)
        traces[side], _ = fit_trace(side, t, amp * np.sin(np.pi * t) + 0.1, 4)
    bf = _boundary_fn(spec, traces, 8.0 / domain.width)
    batch = draw_batch(spec, 32, 16, rng)
    if problem_kind == "poisson":
        problem = ProblemSpec("poisson", source=lambda x, y: np.ones_like(x), q=50.0)
    else:
        problem = ProblemSpec("schrodinger", energy=19.7, q=50.0, gamma=100.0)

    def fun(theta):
        net.set_flat(theta)
        bd, grad = loss_gradient(problem, net, bf, batch, p_out=0.3)
        return bd.total, grad

    return check_gradients(fun, net.get_flat(), step=1e-4, tol=tol)


def cmd_gradcheck(args):
    cfg = _load_config(args)
    worst = None
    ok = True
    for kind in ("poisson", "schrodinger"):
        for seed in range(5):
            report = _gradcheck_case(kind, cfg.rect, cfg.seed + seed, args.tol)
            status = "pass" if report.passed else "FAIL"
            print(f"{kind} seed={cfg.seed + seed}: max_rel_error="
                  f"{report.max_rel_error:.3e} worst_index={report.worst_index} "
                  f"[{status}]")
            if not report.passed:
                ok = False
                if worst is None or report.max_rel_error > worst.max_rel_error:
                    worst = report
    if not ok:
        print(f"worst offending parameter index: {worst.worst_index}",
              file=sys.stderr)
        return 1
    return 0


def cmd_describe(args):
    cfg = _load_config(args)
    payload = {
        "config_hash": cfg.canonical_hash(),
        "domain": list(cfg.domain),
        "grid": list(cfg.grid),
        "overlap": cfg.overlap,
        "subdomains": [s.describe() for s in cfg.subdomains()],
    }
    print(json.dumps(payload, indent=2))
    return 0


def _load_config(args):
    overrides = {"seed": args.seed, "output": args.output}
    return parse_config(args.config, overrides)


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to the run configuration")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--workers", type=int, default=None,
                     help="parallel subdomain workers (default: min(p, cpus))")
    sub.add_argument("--output", default=None, help="override the output directory")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="d3m",
        description="Deep domain decomposition PDE solver")
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="execute a full solve and write artifacts")
    _add_common(p_run)
    p_run.add_argument("--resume", action="store_true",
                       help="continue from the latest checkpoint in the output dir")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = subs.add_parser("compare", help="method/blocks accuracy matrix")
    _add_common(p_cmp)
    p_cmp.set_defaults(fn=cmd_compare)

    p_gc = subs.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p_gc)
    p_gc.add_argument("--tol", type=float, default=1e-5,
                      help="relative error tolerance (default 1e-5)")
    p_gc.set_defaults(fn=cmd_gradcheck)

    p_desc = subs.add_parser("describe", help="print the decomposition as JSON")
    _add_common(p_desc)
    p_desc.set_defaults(fn=cmd_describe)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
