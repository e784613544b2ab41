"""Flat ``key = value`` run configuration and problem assembly.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines are
ignored; lists are comma separated.  Unknown or duplicate keys are errors, and
every violation in a file is reported together.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .errors import ConfigError, DataError
from .grid import Density, make_uniform_grid, project_initial
from .integrate import StepControl, stability_dt
from .kernels import (
    KernelClass,
    make_phi,
    separable_product_kernel,
    separable_sum_kernel,
    table_kernel,
    truncate_kernel,
)
from .rhs import assemble_event_tensor

MODES = ("pde", "ssa", "contraction", "truncation_sweep")
KERNEL_TYPES = ("separable_sum", "separable_product", "custom_table")
REQUIRED = ("mode", "kernel.type", "ic", "n", "cells", "t_end")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# key -> (attribute, converter)
_KEYS = {
    "mode": ("mode", str),
    "kernel.type": ("kernel_type", str),
    "kernel.a": ("kernel_a", float),
    "kernel.phi": ("kernel_phi", str),
    "kernel.eta": ("kernel_eta", str),
    "kernel.xy": ("kernel_xy", str),
    "kernel.table": ("kernel_table", str),
    "ic": ("ic", str),
    "n": ("n", float),
    "cells": ("cells", int),
    "t_end": ("t_end", float),
    "output_times": ("output_times", _floats),
    "snapshot_times": ("snapshot_times", _floats),
    "method": ("method", str),
    "dt": ("dt", _opt_float),
    "rtol": ("rtol", float),
    "atol": ("atol", float),
    "cons_tol": ("cons_tol", float),
    "seed": ("seed", int),
    "replicas": ("replicas", int),
    "particles": ("particles", int),
    "void_accepts": ("void_accepts", _bool),
    "z_weights": ("z_weights", str),
    "output_dir": ("output_dir", str),
    "sweep_n": ("sweep_n", _floats),
    "contraction_delta": ("contraction_delta", float),
}


@dataclass
class RunConfig:
    mode: str = "pde"
    kernel_type: str = "separable_sum"
    kernel_a: float = 1.0
    kernel_phi: str = "exp"
    kernel_eta: str = "sqrt"
    kernel_xy: str = "const"
    kernel_table: str | None = None
    ic: str = "exp"
    n: float = 16.0
    cells: int = 256
    t_end: float = 1.0
    output_times: list = field(default_factory=list)
    snapshot_times: list = field(default_factory=list)
    method: str = "rk45"
    dt: float | None = None
    rtol: float = 1e-6
    atol: float = 1e-12
    cons_tol: float = 1e-8
    seed: int = 0
    replicas: int = 1
    particles: int = 10_000
    void_accepts: bool = False
    z_weights: str = "clipped"
    output_dir: str = "out"
    sweep_n: list = field(default_factory=list)
    contraction_delta: float = 1e-3
    source: str | None = None

    def validate(self):
        """List of every violated constraint (empty when valid)."""
        bad = []
        if self.mode not in MODES:
            bad.append(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.kernel_type not in KERNEL_TYPES:
            bad.append(f"kernel.type must be one of {', '.join(KERNEL_TYPES)}, got {self.kernel_type!r}")
        if self.kernel_type == "custom_table" and not self.kernel_table:
            bad.append("kernel.type = custom_table needs kernel.table")
        if self.kernel_xy not in ("const", "sum"):
            bad.append(f"kernel.xy must be const or sum, got {self.kernel_xy!r}")
        if not (self.kernel_a >= 0 and math.isfinite(self.kernel_a)):
            bad.append(f"kernel.a must be finite and >= 0, got {self.kernel_a}")
        if not self.n > 1:
            bad.append(f"n must satisfy n > 1 (the truncated domain is (0, n)), got n={self.n:g}")
        if self.cells < 2:
            bad.append(f"cells must be >= 2, got {self.cells}")
        if not self.t_end >= 0:
            bad.append(f"t_end must be >= 0, got {self.t_end}")
        if any(t < 0 or t > self.t_end for t in self.output_times + self.snapshot_times):
            bad.append("output and snapshot times must lie in [0, t_end]")
        if self.z_weights not in ("clipped", "uniform"):
            bad.append(f"z_weights must be clipped or uniform, got {self.z_weights!r}")
        if self.method not in ("rk4", "rk45"):
            bad.append(f"method must be rk4 or rk45, got {self.method!r}")
        if self.method == "rk4" and not (self.dt and self.dt > 0):
            bad.append("method = rk4 needs a positive dt")
        if not (self.rtol > 0 and self.atol > 0 and self.cons_tol > 0):
            bad.append("rtol, atol and cons_tol must be > 0")
        if self.mode == "ssa":
            if self.replicas < 1:
                bad.append(f"replicas must be >= 1 in ssa mode, got {self.replicas}")
            if self.particles < 2:
                bad.append(f"particles must be >= 2, got {self.particles}")
        if self.mode == "truncation_sweep":
            if not self.sweep_n:
                bad.append("truncation_sweep mode needs sweep_n")
            elif any(not v > 1 for v in self.sweep_n):
                bad.append("every sweep_n value must satisfy n > 1")
        if self.mode == "contraction" and not self.contraction_delta > 0:
            bad.append("contraction_delta must be > 0")
        if not self._ic_ok():
            bad.append(f"ic must be exp, box:a,b or table:<path>, got {self.ic!r}")
        return bad

    def _ic_ok(self):
        if self.ic == "exp":
            return True
        if self.ic.startswith("box:"):
            try:
                a, b = _floats(self.ic[4:])
            except ValueError:
                return False
            return 0 <= a < b
        return self.ic.startswith("table:")

    @property
    def times(self):
        return self.output_times or list(np.linspace(0.0, self.t_end, 11)[1:])


def parse_config_text(text, source="<string>"):
    values, bad, seen = {}, [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad.append(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key in seen:
            bad.append(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
            continue
        seen[key] = lineno
        if key not in _KEYS:
            bad.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        attr, conv = _KEYS[key]
        try:
            values[attr] = conv(val)
        except ValueError as exc:
            bad.append(f"{source}:{lineno}: bad value for {key}: {exc}")
    for key in REQUIRED:
        if key not in seen:
            bad.append(f"{source}: missing required key {key!r}")
    cfg = RunConfig(**values, source=source)
    bad.extend(cfg.validate())
    if bad:
        raise ConfigError(f"{len(bad)} configuration error(s):\n  " + "\n  ".join(bad), bad)
    return cfg


def parse_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    cfg = parse_config_text(text, source=str(path))
    base = os.path.dirname(os.path.abspath(path))
    cfg.kernel_table = _resolve(cfg.kernel_table, base)
    if cfg.kernel_phi.startswith("table:"):
        cfg.kernel_phi = "table:" + _resolve(cfg.kernel_phi[6:], base)
    if cfg.ic.startswith("table:"):
        cfg.ic = "table:" + _resolve(cfg.ic[6:], base)
    return cfg


def _resolve(p, base):
    if p is None or os.path.isabs(p):
        return p
    return os.path.join(base, p)


# ---------------------------------------------------------------------------
# problem assembly


def build_kernel(cfg):
    phi = make_phi(cfg.kernel_phi)
    if cfg.kernel_type == "separable_sum":
        return separable_sum_kernel(cfg.kernel_a, phi, xy=cfg.kernel_xy)
    if cfg.kernel_type == "separable_product":
        return separable_product_kernel(cfg.kernel_a, phi, eta=cfg.kernel_eta)
    return table_kernel(cfg.kernel_table, cfg.kernel_a, phi, class_tag=KernelClass.CUSTOM)


def initial_data(spec):
    """(f, antiderivative or None) for an ic spec."""
    if spec == "exp":
        return (lambda x: np.exp(-x)), (lambda x: -np.exp(-x))
    if spec.startswith("box:"):
        a, b = _floats(spec[4:])

        def f(x):
            return ((x > a) & (x < b)).astype(float)

        return f, (lambda x: np.clip(x, a, b) - a)
    if spec.startswith("table:"):
        x, z = load_table_ic(spec[6:])
        return (lambda s: np.interp(s, x, z, left=0.0, right=0.0)), None
    raise ConfigError(f"unknown ic {spec!r}")


def load_table_ic(path):
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read initial-data table {path}: {exc}") from exc
    if data.shape[1] != 2 or np.any(np.diff(data[:, 0]) <= 0):
        raise DataError(f"{path}: need two columns x,zeta with increasing x")
    return data[:, 0], data[:, 1]


def ic_sampler(spec):
    from . import particles

    if spec == "exp":
        return particles.exp_sampler(1.0)
    if spec.startswith("box:"):
        a, b = _floats(spec[4:])
        return particles.box_sampler(a, b)
    x, z = load_table_ic(spec[6:])
    return particles.table_sampler(x, z)


def build_problem(cfg, n=None, cells=None):
    """Kernel, grid, tensor, projected initial state, step control and initial step."""
    n = cfg.n if n is None else n
    cells = cfg.cells if cells is None else cells
    kernel = build_kernel(cfg)
    grid = make_uniform_grid(n, cells)
    tk = truncate_kernel(kernel, n)
    tensor = assemble_event_tensor(tk, grid, void_accepts=cfg.void_accepts, z_weights=cfg.z_weights)
    f, F = initial_data(cfg.ic)
    d0 = project_initial(f, grid, antiderivative=F)
    control = StepControl(method=cfg.method, dt=cfg.dt, rtol=cfg.rtol, atol=cfg.atol)
    dt0 = cfg.dt if cfg.dt else min(stability_dt(d0, tk, grid), max(cfg.t_end, 1e-12))
    return SimpleNamespace(kernel=kernel, truncated=tk, grid=grid, tensor=tensor, d0=d0,
                           control=control, dt0=dt0)


def perturbed_initial(d0, grid, delta):
    """Second initial state c (1 + lam cos x) at weighted distance exactly delta from d0."""
    from .grid import uniqueness_weight

    shape = d0.counts * np.cos(grid.masses)
    norm = float(np.dot(uniqueness_weight(grid), np.abs(shape)))
    if norm == 0:
        raise DataError("cannot perturb an empty initial state")
    lam = delta / norm
    if lam >= 1:
        raise ConfigError(f"contraction_delta={delta} is too large for this initial state")
    return Density(d0.counts + lam * shape, grid)
