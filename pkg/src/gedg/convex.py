"""Convex weights sigma, their inequality checks, and the a priori Gronwall envelopes.

The envelopes here are exact transcriptions of closed-form bounds; they are
meant to be compared against solver output, never fed back into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ConfigError
from .grid import moment
from .kernels import ValidationReport


@dataclass(frozen=True)
class ConvexWeight:
    """sigma on [0, inf) together with its analytic derivative."""

    sigma: object
    dsigma: object
    name: str = "sigma"

    def __post_init__(self):
        problems = []
        s0, d0 = float(self.sigma(0.0)), float(self.dsigma(0.0))
        if s0 != 0.0 or d0 != 0.0:
            problems.append(f"{self.name}: need sigma(0) = sigma'(0) = 0, got {s0}, {d0}")
        xs = np.geomspace(1e-6, 1e6, 241)
        ds = np.asarray(self.dsigma(xs), dtype=float)
        if np.any(np.diff(ds) < -1e-12 * np.abs(ds[1:])):
            problems.append(f"{self.name}: sigma' is not nondecreasing")
        # concavity of sigma' via chord test on consecutive geometric triples
        a, b, c = xs[:-2], xs[1:-1], xs[2:]
        chord = ds[:-2] + (ds[2:] - ds[:-2]) * (b - a) / (c - a)
        if np.any(ds[1:-1] < chord - 1e-9 * np.maximum(1.0, np.abs(chord))):
            problems.append(f"{self.name}: sigma' is not concave")
        probe = np.array([1e2, 1e4, 1e6])
        ratio = np.asarray(self.sigma(probe), dtype=float) / probe
        if not np.all(np.diff(ratio) > 0):
            problems.append(f"{self.name}: sigma(x)/x is not increasing at 1e2, 1e4, 1e6")
        if problems:
            raise ConfigError("; ".join(problems), problems)

    def __call__(self, x):
        return self.sigma(x)


def _xlogx_sigma(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    xs = np.where(small, x, 0.0)
    # series sum_{m>=2} (-1)^m x^m / (m (m - 1))
    series = np.zeros_like(xs)
    p = xs * xs
    for m in range(2, 10):
        series += (-1) ** m * p / (m * (m - 1))
        p = p * xs
    xl = np.where(small, 1.0, x)
    direct = (1.0 + xl) * np.log1p(xl) - xl
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


def _xlogx_dsigma(x):
    out = np.log1p(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)


def default_sigma():
    """sigma(x) = (1 + x) ln(1 + x) - x, sigma'(x) = ln(1 + x)."""
    return ConvexWeight(_xlogx_sigma, _xlogx_dsigma, "xlogx")


def linearize_above(w, lam=1e3):
    """Continue sigma linearly beyond lam with slope sigma'(lam)."""
    s_lam, d_lam = float(w.sigma(lam)), float(w.dsigma(lam))

    def sigma(x):
        x = np.asarray(x, dtype=float)
        out = np.where(x <= lam, w.sigma(np.minimum(x, lam)), s_lam + d_lam * (x - lam))
        return out if out.ndim else float(out)

    def dsigma(x):
        x = np.asarray(x, dtype=float)
        out = np.where(x <= lam, w.dsigma(np.minimum(x, lam)), d_lam)
        return out if out.ndim else float(out)

    # the linear tail is deliberately not superlinear, so skip the growth check
    obj = object.__new__(ConvexWeight)
    object.__setattr__(obj, "sigma", sigma)
    object.__setattr__(obj, "dsigma", dsigma)
    object.__setattr__(obj, "name", f"{w.name}|lin>{lam:g}")
    return obj


def check_convex_inequalities(w, samples, rng_seed, rtol=1e-12):
    """Sample the three convexity inequalities on random positive pairs."""
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    x = np.exp(rng.uniform(math.log(1e-6), math.log(1e6), size=samples))
    y = np.exp(rng.uniform(math.log(1e-6), math.log(1e6), size=samples))
    rep = ValidationReport(f"convex[{w.name}]", checked=samples)
    sx, sy = w.sigma(x), w.sigma(y)
    dx_, dy_ = w.dsigma(x), w.dsigma(y)
    pts = np.stack([x, y], axis=1)

    def flag(check, lhs, rhs):
        scale = np.maximum(np.abs(lhs), np.abs(rhs))
        bad = lhs > rhs + rtol * scale + 1e-300
        if np.any(bad):
            rep.add(check, pts[bad], lhs[bad], rhs[bad])

    flag("sigma <= x sigma'", sx, x * dx_)
    flag("x sigma' <= 2 sigma", x * dx_, 2 * sx)
    flag("x sigma'(y) <= sigma(x) + sigma(y)", x * dy_, sx + sy)
    gap = w.sigma(x + y) - sx - sy
    flag("superadditive", np.zeros_like(gap), gap)
    flag("superadditive upper", gap, 2 * (x * sy + y * sx) / (x + y))
    return rep


def tail_moment(d, grid, w):
    """Sum_{i>=1} sigma(i dx) c_i."""
    return float(np.dot(w.sigma(grid.masses[1:]), d.counts[1:]))


def equiintegrability_functional(d, grid, w):
    """Lattice version of int sigma(zeta) dx: Sum_{i>=1} sigma(c_i / dx) dx."""
    return float(np.sum(w.sigma(d.counts[1:] / grid.dx)) * grid.dx)


@dataclass(frozen=True)
class BoundInputs:
    gamma: float
    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float
    phi_l1: float
    phi_l1_01: float
    a_const: float
    eta_star: float = 0.0

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if not (math.isfinite(val) and val >= 0):
                raise ConfigError(f"bound input {name} must be finite and >= 0, got {val}")

    def as_dict(self):
        return dict(self.__dict__)


def _quad_inf(f, upper):
    val, _ = integrate.quad(f, 0.0, upper, limit=400)
    return float(val)


def compute_bound_inputs(d0, grid, kernel, w1, w2=None):
    """Gamma from the lattice initial state; Gamma_3, Gamma_4 and norms of phi by quadrature."""
    w2 = w2 or w1
    phi = kernel.phi
    upper = phi.support_end
    gamma = moment(d0, grid, 0) + moment(d0, grid, 1)
    return BoundInputs(
        gamma=float(gamma),
        gamma1=tail_moment(d0, grid, w1),
        gamma2=equiintegrability_functional(d0, grid, w2),
        gamma3=_quad_inf(lambda z: float(w1.sigma(z)) * float(phi(z)), upper),
        gamma4=_quad_inf(lambda z: float(w2.sigma(float(phi(z)))), upper),
        phi_l1=float(phi.l1_norm()),
        phi_l1_01=float(phi.l1_01_norm()),
        a_const=float(kernel.a_const),
        eta_star=float(kernel.eta_star or 0.0),
    )


def gronwall_bound_sum(b, sigma1_at_1, T):
    """(G1 + A G^2 [7 G3 + 2 sigma1(1) |phi|] T) exp(4 A G |phi| T)."""
    A, G = b.a_const, b.gamma
    lin = b.gamma1 + A * G**2 * (7 * b.gamma3 + 2 * sigma1_at_1 * b.phi_l1) * T
    return lin * math.exp(4 * A * G * b.phi_l1 * T)


def gronwall_bound_product(b, sigma1_at_1, T):
    """Product-class envelope (A G^2 G3 T + theta1) exp(theta2 T).

    theta1 uses the plain L1 norm of phi, theta2 the (1 + x)-weighted one.
    """
    A, G, es, s1 = b.a_const, b.gamma, b.eta_star, sigma1_at_1
    theta1 = b.gamma1 + 2 * A * T * G**2 * (
        2 * s1 * b.phi_l1 + 2 * s1 * es * b.phi_l1 + b.gamma3 * es * b.phi_l1 + es**2 * b.gamma3
    )
    theta2 = 4 * A * es * b.phi_l1_01 * G * (1 + G * es)
    return (A * G**2 * b.gamma3 * T + theta1) * math.exp(theta2 * T)


def equiintegrability_envelope(initial_value, b, t):
    return initial_value * math.exp(2 * b.a_const * b.gamma * b.phi_l1 * t)


def equicontinuity_constant(b):
    """C0 = 4 A |phi|_1 Gamma^2."""
    return 4 * b.a_const * b.phi_l1 * b.gamma**2


def contraction_envelope(delta, a_unique, gamma, phi_l1_01, t):
    """delta * exp(34 A Gamma |phi| t) with the (1 + x)-weighted norm of phi."""
    return delta * math.exp(34 * a_unique * gamma * phi_l1_01 * t)
