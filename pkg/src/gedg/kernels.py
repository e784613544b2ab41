"""Exchange rate kernels A(x, y; z), their envelopes, truncation and quadrature.

A kernel is a vectorized closure ``func(x, y, z)`` plus the metadata of the
growth class it claims (constant ``a_const``, envelope ``phi``, optional
``eta``).  The physical constraint ``A = 0 for z > x`` is enforced by
:class:`Kernel` itself, so closures need not encode it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DataError, DomainError, LogicError

# Gauss-Legendre nodes on [0, 1] used for per-cell quadrature.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class KernelClass(str, enum.Enum):
    SUM = "sum"
    PRODUCT = "product"
    CUSTOM = "custom"


# ---------------------------------------------------------------------------
# envelopes phi(z)


@dataclass(frozen=True)
class ExpEnvelope:
    """phi(z) = exp(-rate * z)."""

    rate: float = 1.0

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"exp envelope needs a positive rate, got {self.rate}")

    def __call__(self, z):
        return np.exp(-self.rate * np.asarray(z, dtype=float))

    def integral(self, u):
        """Antiderivative from 0: int_0^u phi."""
        return -np.expm1(-self.rate * np.asarray(u, dtype=float)) / self.rate

    def inverse_integral(self, q):
        return -np.log1p(-self.rate * np.asarray(q, dtype=float)) / self.rate

    def l1_norm(self, upper=math.inf):
        return float(self.integral(upper)) if math.isfinite(upper) else 1.0 / self.rate

    def l1_01_norm(self):
        return 1.0 / self.rate + 1.0 / self.rate**2

    @property
    def support_end(self):
        return math.inf


@dataclass(frozen=True)
class TableEnvelope:
    """Piecewise-linear phi from a table; constant below the first node, zero past the last."""

    z: np.ndarray
    values: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if z.ndim != 1 or z.shape != v.shape or len(z) < 2:
            raise DataError("phi table needs two equal-length columns with >= 2 rows")
        if np.any(np.diff(z) <= 0) or z[0] < 0:
            raise DataError("phi table abscissae must be nonnegative and increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DataError("phi table values must be finite and nonnegative")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "values", v)
        seg = 0.5 * (v[1:] + v[:-1]) * np.diff(z)
        object.__setattr__(self, "_cum", np.concatenate([[z[0] * v[0]], z[0] * v[0] + np.cumsum(seg)]))

    @classmethod
    def from_file(cls, path):
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        if data.shape[1] != 2:
            raise DataError(f"{path}: phi table must have two columns (z, phi)")
        return cls(data[:, 0], data[:, 1])

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.interp(z, self.z, self.values)
        return np.where(z > self.z[-1], 0.0, out)

    def integral(self, u):
        u = np.asarray(u, dtype=float)
        z, v = self.z, self.values
        uc = np.clip(u, z[0], z[-1])
        idx = np.clip(np.searchsorted(z, uc, side="right") - 1, 0, len(z) - 2)
        left = z[idx]
        vl = v[idx]
        slope = (v[idx + 1] - vl) / (z[idx + 1] - left)
        h = uc - left
        inside = self._cum[idx] + vl * h + 0.5 * slope * h * h
        return np.where(u < z[0], v[0] * u, inside)

    def inverse_integral(self, q):
        raise NotImplementedError

    def l1_norm(self, upper=math.inf):
        return float(self.integral(min(upper, self.z[-1])))

    def l1_01_norm(self):
        z, v = self.z, self.values
        zz = np.concatenate([[0.0], z])
        vv = np.concatenate([[v[0]], v])
        return float(np.trapezoid(vv * (1.0 + zz), zz))

    @property
    def support_end(self):
        return float(self.z[-1])


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class Kernel:
    """Exchange rate kernel with class metadata.

    ``pair_integral(u, v)``, when given, is the closed form of
    ``int_0^u A(u, v; w) dw``; ``pair_factors = (f, g)`` declares that this
    integral factorizes as ``f(u) * g(v)``.
    """

    func: Callable
    class_tag: KernelClass
    a_const: float
    phi: object
    eta: Optional[Callable] = None
    eta_star: Optional[float] = None
    unique_a: Optional[float] = None
    pair_integral: Optional[Callable] = None
    pair_factors: Optional[tuple] = None
    chunk_inverse: Optional[Callable] = None
    name: str = "kernel"

    def __post_init__(self):
        if not (self.a_const >= 0 and math.isfinite(self.a_const)):
            raise ConfigError(f"kernel constant must be finite and >= 0, got {self.a_const}")
        if self.class_tag is KernelClass.PRODUCT and self.eta is None:
            raise ConfigError("product-class kernel needs an eta envelope")

    def __call__(self, x, y, z):
        x, y, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z)))
        val = np.asarray(self.func(x, y, z), dtype=float)
        val = np.broadcast_to(val, x.shape)
        return np.where(z <= x, val, 0.0)

    def bound(self, x, y, z):
        """Universal envelope a_const (1+x)(1+y) phi(z)."""
        return self.a_const * (1.0 + x) * (1.0 + y) * self.phi(z)

    def pair_rates(self, u, v, quad_cells=64):
        """Vectorized total transfer rate K(u, v); closed form when available."""
        if self.pair_integral is not None:
            u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
            return np.where(u > 0, self.pair_integral(u, v), 0.0)
        return _pair_rate_quadrature(self, u, v, quad_cells)


@dataclass(frozen=True)
class TruncatedKernel:
    """A_n(x, y; z) = A(x, y; z) 1{0 < x < n} 1{0 < y + z < n}."""

    base: Kernel
    n: float

    def __call__(self, x, y, z):
        x, y, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z)))
        s = y + z
        mask = (x > 0) & (x < self.n) & (s > 0) & (s < self.n)
        return self.base(x, y, z) * mask

    @property
    def a_const(self):
        return self.base.a_const

    @property
    def phi(self):
        return self.base.phi


def _check_finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(np.asarray(v, dtype=float))):
            raise DomainError(f"non-finite kernel argument: {v!r}")


def eval_kernel(k, x, y, z):
    """Kernel value at (x, y, z); zero when z > x."""
    _check_finite(x, y, z)
    val = k(x, y, z)
    return float(val) if np.ndim(val) == 0 else val


def truncate_kernel(k, n):
    if not (n > 1):
        raise ConfigError(f"truncation cutoff must satisfy n > 1, got n={n}")
    return TruncatedKernel(k, float(n))


# ---------------------------------------------------------------------------
# validation


@dataclass
class Violation:
    check: str
    point: tuple
    lhs: float
    rhs: float


@dataclass
class ValidationReport:
    name: str
    checked: int = 0
    violations: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.violations

    def add(self, check, points, lhs, rhs):
        for p, l, r in zip(points, lhs, rhs):
            self.violations.append(Violation(check, tuple(float(c) for c in p), float(l), float(r)))

    def summary(self):
        status = "PASS" if self.passed else f"FAIL ({len(self.violations)} violations)"
        return f"{self.name}: {status} over {self.checked} samples"


def _sample_points(rng, count):
    half = count // 2
    lin = rng.uniform(0.0, 2.0, size=(half, 2))
    log = np.exp(rng.uniform(math.log(1e-3), math.log(1e3), size=(count - half, 2)))
    xy = np.concatenate([lin, log])
    x, y = xy[:, 0], xy[:, 1]
    z = x * rng.uniform(0.0, 1.25, size=count)
    z = np.where(z > 0, z, x)
    return x, y, z


def validate_class(k, sample_count, rng_seed, derivative=False, rtol=1e-12):
    """Sample the kernel's claimed growth bounds and report every violation."""
    if sample_count < 1:
        raise ConfigError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    x, y, z = _sample_points(rng, sample_count)
    rep = ValidationReport(f"{k.name} [{k.class_tag.value}]", checked=sample_count)
    a = k.a_const
    val = k(x, y, z)
    pts = np.stack([x, y, z], axis=1)
    phi = k.phi(z)

    def flag(check, mask, lhs, rhs):
        if np.any(mask):
            rep.add(check, pts[mask], lhs[mask], rhs[mask])

    flag("nonnegative", val < 0, val, np.zeros_like(val))
    flag("physical", (z > x) & (val != 0), val, np.zeros_like(val))
    slack = 1.0 + rtol
    universal = k.bound(x, y, z)
    flag("universal", val > universal * slack, val, universal)

    if k.class_tag is KernelClass.SUM:
        rhs = np.where(x + y < 1.0, a * phi, a * (x + y) * phi)
        flag("sum-class", val > rhs * slack, val, rhs)
    elif k.class_tag is KernelClass.PRODUCT:
        ex, ey = k.eta(x), k.eta(y)
        sx, sy = x > 1.0, y > 1.0
        rhs = a * phi * np.where(sx, ex, 1.0) * np.where(sy, ey, 1.0)
        flag("product-class", val > rhs * slack, val, rhs)
        xs = np.exp(rng.uniform(0.0, math.log(1e6), size=sample_count))
        ratio = k.eta(xs) / (1.0 + xs)
        sup = float(np.max(ratio))
        rep.info["eta_star_sampled"] = sup
        if not math.isfinite(sup):
            rep.violations.append(Violation("eta-star", (float(xs[np.argmax(ratio)]),), sup, math.inf))
        elif k.eta_star is not None and sup > k.eta_star * slack:
            rep.violations.append(Violation("eta-star", (float(xs[np.argmax(ratio)]),), sup, k.eta_star))
        probe = np.concatenate([x, xs])
        below = k.eta(probe) < 1.0
        for b in probe[below][:10]:
            rep.violations.append(Violation("eta>=1", (float(b),), float(k.eta(b)), 1.0))

    if derivative:
        h = 1e-6 * np.maximum(1.0, x)
        away = (np.abs(x - z) > 4 * h) & (x > 4 * h) & (y > 4 * h)
        dx_ = (k(x + h, y, z) - k(x - h, y, z)) / (2 * h)
        dy_ = (k(x, y + h, z) - k(x, y - h, z)) / (2 * h)
        bx = a * (1.0 + y) * phi
        by = a * (1.0 + x) * phi
        tol = 1e-6 * np.maximum(1.0, bx)
        flag("d/dx", away & (dx_ > bx + tol), dx_, bx)
        tol = 1e-6 * np.maximum(1.0, by)
        flag("d/dy", away & (dy_ > by + tol), dy_, by)
    return rep


# ---------------------------------------------------------------------------
# pair rates and chunk sampling


def _cell_nodes(u, cells):
    """Gauss nodes/weights of a uniform `cells` partition of (0, u] for array u."""
    u = np.asarray(u, dtype=float)[..., None, None]
    h = u / cells
    left = np.arange(cells)[:, None] * h
    nodes = left + _GL_X[None, :] * h
    weights = np.broadcast_to(_GL_W[None, :] * h, nodes.shape)
    return nodes, weights


def _pair_rate_quadrature(k, u, v, cells):
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    nodes, weights = _cell_nodes(u, cells)
    vals = k(u[..., None, None], v[..., None, None], nodes)
    out = np.sum(vals * weights, axis=(-2, -1))
    return np.where(u > 0, out, 0.0)


def pair_rate(k, u, v, quad_cells=64):
    """Total donor->acceptor rate K(u, v) = int_0^u A(u, v; w) dw by quadrature."""
    if quad_cells < 16:
        raise ConfigError("pair_rate needs quad_cells >= 16")
    res = _pair_rate_quadrature(k, u, v, quad_cells)
    return float(res) if res.ndim == 0 else res


def sample_chunk(k, u, v, rng, quad_cells=256):
    """Draw a transferred chunk w in (0, u] with density proportional to A(u, v; .)."""
    if k.chunk_inverse is not None:
        if not (u > 0) or k.pair_rates(u, v) <= 0:
            raise LogicError(f"zero total rate for donor {u}, acceptor {v}")
        w = float(k.chunk_inverse(u, v, rng.random()))
        return min(max(w, np.nextafter(0.0, 1.0)), u)
    u = float(u)
    if not (u > 0):
        raise LogicError("donor mass must be positive to shed a chunk")
    nodes, weights = _cell_nodes(u, quad_cells)
    cell_mass = np.sum(k(u, v, nodes) * weights, axis=-1)
    cdf = np.concatenate([[0.0], np.cumsum(cell_mass)])
    total = cdf[-1]
    if not (total > 0):
        raise LogicError(f"zero total rate for donor {u}, acceptor {v}")
    target = rng.random() * total
    idx = int(np.searchsorted(cdf, target, side="right")) - 1
    idx = min(max(idx, 0), quad_cells - 1)
    while cell_mass[idx] <= 0 and idx < quad_cells - 1:
        idx += 1
    h = u / quad_cells
    frac = (target - cdf[idx]) / cell_mass[idx] if cell_mass[idx] > 0 else 1.0
    w = (idx + min(max(frac, 0.0), 1.0)) * h
    return min(max(w, np.nextafter(0.0, 1.0)), u)


# ---------------------------------------------------------------------------
# constructors for the shipped kernel families


def make_phi(spec):
    """'exp', 'exp:<rate>' or 'table:<path>'."""
    spec = spec.strip()
    if spec == "exp":
        return ExpEnvelope(1.0)
    if spec.startswith("exp:"):
        return ExpEnvelope(float(spec[4:]))
    if spec.startswith("table:"):
        return TableEnvelope.from_file(spec[6:])
    raise ConfigError(f"unknown phi spec {spec!r}")


def _eta_power(spec):
    spec = spec.strip()
    if spec == "one":
        return 0.0
    if spec == "sqrt":
        return 0.5
    if spec.startswith("pow:"):
        p = float(spec[4:])
        if not (0.0 <= p < 1.0):
            raise ConfigError(f"eta power must lie in [0, 1), got {p}")
        return p
    raise ConfigError(f"unknown eta spec {spec!r}")


def _phi_inverse(phi):
    if isinstance(phi, ExpEnvelope):
        return phi.inverse_integral
    return None


def separable_sum_kernel(a=1.0, phi=None, xy="const"):
    """A = a * s(x, y) * phi(z) 1{z <= x} with s = 1 ('const') or max(1, x + y) ('sum')."""
    phi = phi if phi is not None else ExpEnvelope(1.0)
    inv = _phi_inverse(phi)
    if xy == "const":
        def func(x, y, z):
            return a * phi(z)

        def pint(u, v):
            return a * phi.integral(u) * np.ones_like(v)

        factors = (lambda u: a * phi.integral(u), lambda v: np.ones_like(np.asarray(v, dtype=float)))
        unique_a = a
    elif xy == "sum":
        def func(x, y, z):
            return a * np.maximum(1.0, x + y) * phi(z)

        def pint(u, v):
            return a * np.maximum(1.0, u + v) * phi.integral(u)

        factors = None
        unique_a = None
    else:
        raise ConfigError(f"kernel.xy must be 'const' or 'sum', got {xy!r}")

    chunk = None
    if inv is not None:
        def chunk(u, v, p):
            return inv(p * phi.integral(u))
    return Kernel(func, KernelClass.SUM, a, phi, unique_a=unique_a, pair_integral=pint,
                  pair_factors=factors, chunk_inverse=chunk, name=f"separable_sum[{xy}]")


def separable_product_kernel(a=1.0, phi=None, eta="sqrt"):
    """A = a * eta(x) eta(y) phi(z) 1{z <= x} with eta(x) = (1 + x)^p.

    The class constant is a * eta(1)^2 so that the bound also holds on (0, 1)^2.
    """
    phi = phi if phi is not None else ExpEnvelope(1.0)
    p = _eta_power(eta)

    def eta_fn(x):
        return (1.0 + np.asarray(x, dtype=float)) ** p

    def func(x, y, z):
        return a * eta_fn(x) * eta_fn(y) * phi(z)

    def pint(u, v):
        return a * eta_fn(u) * eta_fn(v) * phi.integral(u)

    inv = _phi_inverse(phi)
    chunk = None
    if inv is not None:
        def chunk(u, v, q):
            return inv(q * phi.integral(u))
    return Kernel(func, KernelClass.PRODUCT, a * 2.0 ** (2 * p), phi, eta=eta_fn,
                  eta_star=2.0 ** (p - 1.0), unique_a=a if p <= 0.5 else None,
                  pair_integral=pint, pair_factors=(lambda u: a * eta_fn(u) * phi.integral(u), eta_fn),
                  chunk_inverse=chunk, name=f"separable_product[{eta}]")


def table_kernel(path, a, phi, class_tag=KernelClass.CUSTOM, eta=None, eta_star=None):
    """Trilinear interpolation of a rectilinear table stored as .npz (x, y, z, values)."""
    from scipy.interpolate import RegularGridInterpolator

    with np.load(path) as data:
        try:
            xs, ys, zs, vals = (np.asarray(data[key], dtype=float) for key in ("x", "y", "z", "values"))
        except KeyError as exc:
            raise DataError(f"{path}: kernel table needs arrays x, y, z, values") from exc
    if vals.shape != (len(xs), len(ys), len(zs)):
        raise DataError(f"{path}: values shape {vals.shape} does not match axes")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise DataError(f"{path}: kernel table must be finite and nonnegative")
    X, _, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    if np.any(vals[Z > X] != 0):
        raise DataError(f"{path}: kernel table violates A = 0 for z > x")
    interp = RegularGridInterpolator((xs, ys, zs), vals, bounds_error=False, fill_value=None)

    def func(x, y, z):
        pts = np.stack([np.clip(x, xs[0], xs[-1]), np.clip(y, ys[0], ys[-1]),
                        np.clip(z, zs[0], zs[-1])], axis=-1)
        return np.maximum(interp(pts.reshape(-1, 3)), 0.0).reshape(np.shape(x))

    return Kernel(func, class_tag, a, phi, eta=eta, eta_star=eta_star, name=f"table[{path}]")
