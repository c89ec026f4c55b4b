"""Run configuration: a flat key = value text format, validated and hashed.

Grammar: one ``key = value`` pair per line; values with several components
are whitespace separated; ``#`` starts a comment; blank lines are ignored.
Unknown keys are rejected with the offending line number.  The canonical
SHA-256 hash of the effective configuration (defaults applied) is embedded
in every output file so artifacts can be traced to their settings.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields

import numpy as np

from .geometry import OverlapTooLarge, Rect, decompose
from .loss import ProblemSpec
from .reference import WELL_ENERGY
from .schwarz import TrainSettings

__all__ = ["ConfigError", "RunConfig", "parse_config"]


class ConfigError(Exception):
    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


def _parse_choice(*choices):
    def parse(s):
        if s not in choices:
            raise ValueError(f"expected one of {choices}, got {s!r}")
        return s
    return parse


def _parse_floats(n):
    def parse(s):
        parts = s.split()
        if len(parts) != n:
            raise ValueError(f"expected {n} numbers")
        return tuple(float(p) for p in parts)
    return parse


def _parse_ints(n):
    def parse(s):
        parts = s.split()
        if len(parts) != n:
            raise ValueError(f"expected {n} integers")
        return tuple(int(p) for p in parts)
    return parse


def _parse_int_list(s):
    return tuple(int(p) for p in s.split())


def _parse_str_list(s):
    return tuple(s.split())


def _parse_auto_float(s):
    return None if s == "auto" else float(s)


_SCHEMA = {
    "problem": _parse_choice("poisson", "schrodinger"),
    "domain": _parse_floats(4),
    "grid": _parse_ints(2),
    "overlap": float,
    "blocks": int,
    "width": int,
    "neurons": int,
    "base_m1": int,
    "growth": float,
    "cap": int,
    "m2": int,
    "optimizer": _parse_choice("lbfgs", "gd"),
    "lr": float,
    "epochs": int,
    "history": int,
    "q": float,
    "gamma": float,
    "energy": float,
    "eta": float,
    "max_k": int,
    "decay_a": _parse_auto_float,
    "fourier_degree": int,
    "seed": int,
    "output": str,
    "methods": _parse_str_list,
    "blocks_list": _parse_int_list,
}


@dataclass
class RunConfig:
    problem: str = "poisson"
    domain: tuple = (-1.0, 1.0, -1.0, 1.0)
    grid: tuple = (2, 2)
    overlap: float = 0.4
    blocks: int = 4
    width: int = 64
    neurons: int | None = None
    base_m1: int = 512
    growth: float = 2.0
    cap: int = 4096
    m2: int = 128
    optimizer: str = "lbfgs"
    lr: float = 0.5
    epochs: int = 30
    history: int = 10
    q: float = 100.0
    gamma: float = 500.0
    energy: float = WELL_ENERGY
    eta: float = 1e-4
    max_k: int = 8
    decay_a: float | None = None      # None: 30 / overlap
    fourier_degree: int = 8
    seed: int = 0
    output: str = "d3m-out"
    methods: tuple = ("d3m", "drm")
    blocks_list: tuple = (4, 8)

    def effective_width(self, blocks=None):
        """Width, derived from total hidden neurons when given that way."""
        blocks = blocks if blocks is not None else self.blocks
        if self.neurons is None:
            return self.width
        total = self.neurons
        if total % (2 * blocks) != 0:
            raise ConfigError(f"neurons = {total} is not divisible by "
                              f"2 * blocks = {2 * blocks}", key="neurons")
        return total // (2 * blocks)

    def validate(self):
        x0, x1, y0, y1 = self.domain
        if not (x0 < x1 and y0 < y1):
            raise ConfigError("domain must satisfy x0 < x1 and y0 < y1", key="domain")
        if min(self.grid) < 1:
            raise ConfigError("grid entries must be positive", key="grid")
        try:
            decompose(Rect(*self.domain), self.grid, self.overlap)
        except OverlapTooLarge as exc:
            raise ConfigError(f"OverlapTooLarge: {exc}", key="overlap") from exc
        except ValueError as exc:
            raise ConfigError(str(exc), key="overlap") from exc
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1", key="blocks")
        if self.effective_width() < 2:
            raise ConfigError("width must be >= 2", key="width")
        for key in ("base_m1", "cap", "m2", "epochs", "max_k"):
            if getattr(self, key) < (0 if key == "epochs" else 1):
                raise ConfigError(f"{key} must be positive", key=key)
        if self.growth < 1.0:
            raise ConfigError("growth must be >= 1", key="growth")
        if self.q <= 0 or self.gamma <= 0:
            raise ConfigError("penalty weights must be positive", key="q")
        if self.eta <= 0:
            raise ConfigError("eta must be positive", key="eta")
        if self.lr <= 0:
            raise ConfigError("lr must be positive", key="lr")
        if self.history < 1:
            raise ConfigError("history must be >= 1", key="history")
        if self.fourier_degree < 0:
            raise ConfigError("fourier_degree must be >= 0", key="fourier_degree")
        if self.decay_a is not None and self.decay_a <= 0:
            raise ConfigError("decay_a must be positive or auto", key="decay_a")
        if not math.isfinite(self.energy):
            raise ConfigError("energy must be finite", key="energy")
        return self

    # -- derived objects ---------------------------------------------------

    @property
    def rect(self):
        return Rect(*self.domain)

    def subdomains(self):
        return decompose(self.rect, self.grid, self.overlap)

    def decay(self):
        return self.decay_a if self.decay_a is not None else 30.0 / self.overlap

    def problem_spec(self):
        if self.problem == "poisson":
            return ProblemSpec("poisson", source=lambda x, y: np.ones_like(x),
                               q=self.q, gamma=self.gamma)
        return ProblemSpec("schrodinger", energy=self.energy,
                           q=self.q, gamma=self.gamma)

    def settings(self, workers=None, blocks=None):
        blocks = blocks if blocks is not None else self.blocks
        return TrainSettings(
            blocks=blocks, width=self.effective_width(blocks), seed=self.seed,
            base_m1=self.base_m1, growth=self.growth, cap=self.cap, m2=self.m2,
            optimizer=self.optimizer, lr=self.lr, epochs=self.epochs,
            history=self.history, decay=self.decay(),
            fourier_degree=self.fourier_degree, eta=self.eta,
            max_k=self.max_k, workers=workers)

    def as_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def canonical_hash(self):
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = " ".join(repr(x) for x in v)
            else:
                v = repr(v)
            lines.append(f"{f.name}={v}")
        digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()
        return digest[:12]


def parse_config(path, overrides=None):
    """Parse and validate a configuration file; overrides win over the file."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in _SCHEMA:
                raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)
            try:
                values[key] = _SCHEMA[key](val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}",
                                  line=lineno, key=key) from exc
    if "width" in values and "neurons" in values:
        raise ConfigError("give either width or neurons, not both", key="width")
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    cfg = RunConfig(**values)
    return cfg.validate()
