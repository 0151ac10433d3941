"""Averaging along a path, Friedrichs mollification and coefficient presets.

A :class:`Coefficient` has the product form ``c(t, z) = theta(t) * g(z)``:
the spatial profile ``g`` carries the singularity and ``theta`` carries the
time regularity (a Holder modulation with index ``gamma0``), which is what
makes its membership in L^inf_t L^2_x cap C^gamma0_t H^{-1}_x checkable by
hand. Mollification only touches ``g``.
"""

import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve

from .errors import EvaluationError
from .localtime import bessel_sup_norm, sobolev_norm


def _points(z, dim):
    z = np.asarray(z, dtype=float)
    if dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != dim:
        raise ValueError(f"expected points in R^{dim}, got array of shape {z.shape}")
    return z


def _unit_modulation(t):
    return 1.0


@dataclass(frozen=True)
class Coefficient:
    spatial: Callable
    dim: int = 1
    shape: tuple = ()
    modulation: Callable = _unit_modulation
    role: str = "drift"
    name: str = ""
    gamma0: float = 1.0
    holder_constant: float = 0.0
    sup_modulation: float = 1.0
    l2_norm: float = math.inf
    l4_norm: float = math.inf
    support_radius: float | None = None
    sup_bound: float | None = None
    lipschitz_bound: float | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, t, z):
        pts = _points(z, self.dim)
        return self.modulation(t) * np.asarray(self.spatial(pts), dtype=float)

    def slice(self, t):
        """The spatial function z -> c(t, z)."""
        theta = self.modulation(t)
        return lambda z: theta * np.asarray(self.spatial(_points(z, self.dim)), dtype=float)

    def sample(self, t, grid):
        """Values on the cell centres of a spatial grid, shape grid.shape + self.shape."""
        return self(t, grid.mesh())

    @property
    def linf_l2(self):
        return self.sup_modulation * self.l2_norm


# -- modulations ------------------------------------------------------------


def holder_modulation(gamma0, amplitude=0.5, center=0.5, horizon=1.0):
    """theta(t) = 1 + amplitude * |t - center|^gamma0 and its metadata."""
    def theta(t):
        return 1.0 + amplitude * abs(t - center) ** gamma0

    sup = 1.0 + amplitude * max(center, horizon - center) ** gamma0
    return theta, dict(gamma0=gamma0, holder_constant=amplitude, sup_modulation=sup)


def _with_modulation(coeff, modulation):
    if modulation is None:
        return coeff
    theta, meta = modulation
    return replace(coeff, modulation=theta, **meta)


# -- presets -----------------------------------------------------------------


def _sphere_area(dim):
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def constant(value, dim=1, role="drift", modulation=None):
    value = np.asarray(value, dtype=float)

    def g(z):
        return np.broadcast_to(value, z.shape[:-1] + value.shape).copy()

    coeff = Coefficient(g, dim, value.shape, role=role, name="constant",
                        params={"value": value.tolist()})
    return _with_modulation(coeff, modulation)


def zero(dim=1, role="drift", shape=()):
    return constant(np.zeros(shape), dim=dim, role=role)


def gaussian_bump(amplitude=1.0, width=1.0, dim=1, role="drift", offset=0.0, modulation=None):
    """offset + amplitude * exp(-|z|^2 / (2 width^2)); norms refer to the bump part."""
    def g(z):
        return offset + amplitude * np.exp(-np.sum(z**2, axis=-1) / (2.0 * width**2))

    coeff = Coefficient(
        g, dim, (), role=role, name="gaussian",
        l2_norm=abs(amplitude) * (math.pi * width**2) ** (dim / 4.0) if offset == 0 else math.inf,
        l4_norm=abs(amplitude) * (math.pi * width**2 / 2.0) ** (dim / 8.0) if offset == 0 else math.inf,
        params=dict(amplitude=amplitude, width=width, offset=offset),
    )
    return _with_modulation(coeff, modulation)


def power_kernel(gamma, dim=1, amplitude=1.0, odd=False, resolution=1e-3, role="drift",
                 modulation=None):
    """amplitude * |z|^{-gamma} on the unit ball (times z/|z| when ``odd``).

    Inside the cell |z| < resolution the evaluator returns the average of
    |z|^{-gamma} over that ball, k/(k-gamma) * resolution^{-gamma}, so values
    stay finite at the singularity.
    """
    if not 0 <= gamma < dim / 2.0:
        raise ValueError(f"need 0 <= gamma < k/2 for an L2 kernel, got gamma={gamma}, k={dim}")
    cell_value = dim / (dim - gamma) * resolution ** (-gamma)

    def g(z):
        r = np.sqrt(np.sum(z**2, axis=-1))
        inside = r <= 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = np.where(r < resolution, cell_value, r ** (-gamma))
            mag = np.where(inside, amplitude * mag, 0.0)
            if odd:
                direction = np.where(r[..., None] > 0, z / r[..., None], 0.0)
                out = mag[..., None] * direction
                return out[..., 0] if dim == 1 else out
        return mag

    area = _sphere_area(dim)
    l2 = abs(amplitude) * math.sqrt(area / (dim - 2 * gamma))
    l4 = abs(amplitude) * (area / (dim - 4 * gamma)) ** 0.25 if 4 * gamma < dim else math.inf
    shape = () if (dim == 1 or not odd) else (dim,)
    coeff = Coefficient(
        g, dim, shape, role=role, name="power_kernel", l2_norm=l2, l4_norm=l4,
        support_radius=1.0,
        params=dict(gamma=gamma, amplitude=amplitude, odd=odd, resolution=resolution),
    )
    return _with_modulation(coeff, modulation)


def step(role="drift"):
    return Coefficient(lambda z: (z[..., 0] > 0).astype(float), 1, (), role=role, name="step")


def ramp(role="drift"):
    """z on [0, 1], zero elsewhere; in L2 with a jump at z=1."""
    def g(z):
        x = z[..., 0]
        return np.where((x >= 0) & (x <= 1), x, 0.0)

    return Coefficient(g, 1, (), role=role, name="ramp", l2_norm=math.sqrt(1 / 3),
                       l4_norm=(1 / 5) ** 0.25, support_radius=1.0)


def squared(coeff):
    """sum_ij a_ij^2 as a scalar coefficient (modulation squared)."""
    def g(z):
        v = np.asarray(coeff.spatial(z), dtype=float)
        extra = tuple(range(v.ndim - len(coeff.shape), v.ndim))
        return np.sum(v**2, axis=extra) if extra else v**2

    theta = coeff.modulation
    return Coefficient(
        g, coeff.dim, (), modulation=lambda t: theta(t) ** 2, role="squared",
        name=f"squared({coeff.name})", gamma0=coeff.gamma0,
        holder_constant=2 * coeff.sup_modulation * coeff.holder_constant,
        sup_modulation=coeff.sup_modulation**2, l2_norm=coeff.l4_norm**2,
        l4_norm=math.inf, support_radius=coeff.support_radius,
    )


# -- mollification ------------------------------------------------------------


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierSpec:
    eps: float
    dim: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"mollifier scale must be positive, got {self.eps}")

    @property
    def _mass(self):
        val, _ = integrate.quad(lambda r: _bump(r) * r ** (self.dim - 1), 0.0, 1.0)
        return _sphere_area(self.dim) * val

    def kernel(self, y):
        """J_eps(y) for points y of shape (..., k)."""
        r = np.sqrt(np.sum(_points(y, self.dim) ** 2, axis=-1)) / self.eps
        return _bump(r) / (self._mass * self.eps**self.dim)

    def norm(self, q=2.0):
        """||J_eps||_{L^q}."""
        val, _ = integrate.quad(lambda r: _bump(r) ** q * r ** (self.dim - 1), 0.0, 1.0)
        integral = _sphere_area(self.dim) * val * self.eps**self.dim
        return integral ** (1 / q) / (self._mass * self.eps**self.dim)

    def grad_norm(self, q=2.0):
        """||grad J_eps||_{L^q}."""
        def dphi(r):
            return _bump(r) * 2 * r / (1 - r**2) ** 2 if r < 1 else 0.0

        val, _ = integrate.quad(lambda r: dphi(r) ** q * r ** (self.dim - 1), 0.0, 1.0, limit=200)
        integral = _sphere_area(self.dim) * val * self.eps**self.dim
        return integral ** (1 / q) / (self._mass * self.eps ** (self.dim + 1))


class _QuadratureMollified:
    """(g * J_eps)(z) by tensor Gauss-Legendre quadrature over the kernel support."""

    def __init__(self, g, spec, nodes):
        x, w = np.polynomial.legendre.leggauss(nodes)
        axes = np.meshgrid(*([x * spec.eps] * spec.dim), indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=-1)
        wts = np.ones(len(pts))
        for a in np.meshgrid(*([w] * spec.dim), indexing="ij"):
            wts = wts * a.ravel()
        wts = wts * spec.kernel(pts)
        keep = wts > 0
        self.offsets = pts[keep]
        self.weights = wts[keep] / wts[keep].sum()
        self.g = g

    def __call__(self, z):
        vals = np.asarray(self.g(z[..., None, :] - self.offsets), dtype=float)
        return np.tensordot(self.weights, np.moveaxis(vals, z.ndim - 1, 0), axes=(0, 0))


class _GridMollified:
    """Discrete convolution of g with J_eps on a cell-centred lattice, then
    multilinear interpolation. Used for compactly supported (possibly
    singular) profiles; the lattice is built once on first use."""

    def __init__(self, g, spec, support, cells_per_eps, shape):
        self.g, self.spec, self.shape = g, spec, shape
        self.delta = spec.eps / cells_per_eps
        self.reach = support + spec.eps + 2 * self.delta
        self._lock = threading.Lock()
        self._interp = None

    def _build(self):
        spec, d = self.spec, self.delta
        n = int(np.ceil(self.reach / d))
        axis = (np.arange(-n, n) + 0.5) * d
        mesh = np.stack(np.meshgrid(*([axis] * spec.dim), indexing="ij"), axis=-1)
        vals = np.asarray(self.g(mesh), dtype=float)
        m = int(np.ceil(spec.eps / d))
        koff = np.arange(-m, m + 1) * d
        kmesh = np.stack(np.meshgrid(*([koff] * spec.dim), indexing="ij"), axis=-1)
        kern = spec.kernel(kmesh)
        kern = kern / kern.sum()
        if vals.ndim == spec.dim:
            conv = fftconvolve(vals, kern, mode="same")
        else:
            conv = np.stack([fftconvolve(vals[..., c], kern, mode="same")
                             for c in range(vals.shape[-1])], axis=-1)
        return RegularGridInterpolator((axis,) * spec.dim, conv, bounds_error=False, fill_value=0.0)

    def __call__(self, z):
        if self._interp is None:
            with self._lock:
                if self._interp is None:
                    self._interp = self._build()
        flat = z.reshape(-1, z.shape[-1])
        out = self._interp(flat)
        return out.reshape(z.shape[:-1] + out.shape[1:])


def mollify(coeff, spec, quad_nodes=48, cells_per_eps=64):
    """Friedrichs mollification z -> (c(t, .) * J_eps)(z).

    Records the Young-inequality bounds (p = q = 2)
    sup |c_eps| <= ||J_eps||_2 ||c||_{L^inf_t L^2} and
    Lip(c_eps) <= ||grad J_eps||_2 ||c||_{L^inf_t L^2}.
    """
    if not isinstance(spec, MollifierSpec):
        spec = MollifierSpec(float(spec), coeff.dim)
    if spec.dim != coeff.dim:
        raise ValueError(f"mollifier dimension {spec.dim} != coefficient dimension {coeff.dim}")
    if coeff.support_radius is None:
        spatial = _QuadratureMollified(coeff.spatial, spec, quad_nodes)
        support = None
    else:
        spatial = _GridMollified(coeff.spatial, spec, coeff.support_radius, cells_per_eps, coeff.shape)
        support = coeff.support_radius + spec.eps
    base = coeff.linf_l2
    return replace(
        coeff, spatial=spatial, name=f"mollified({coeff.name}, eps={spec.eps})",
        support_radius=support,
        sup_bound=spec.norm(2.0) * base,
        lipschitz_bound=spec.grad_norm(2.0) * base,
        params={**coeff.params, "eps": spec.eps},
    )


# -- averaging operator ------------------------------------------------------------


def _finite(values, what):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluationError(f"{what} produced non-finite values")
    return values


def averaging_direct(f, path, s_index, t_index, x, time=None, rule="left"):
    """int_s^t f(time, x - w_r) dr by left-endpoint (or trapezoid) quadrature.

    ``time`` freezes the coefficient's time slice; it defaults to the node s.
    """
    if not 0 <= s_index <= t_index <= path.grid.steps:
        raise ValueError(f"need 0 <= s <= t <= M, got ({s_index}, {t_index})")
    if t_index == s_index:
        return np.zeros(f.shape)
    time = path.grid.nodes[s_index] if time is None else time
    x = _points(x, path.dim)
    dt = path.grid.dt
    if rule == "left":
        vals = _finite(f(time, x - path.values[s_index:t_index]), "coefficient")
        return vals.sum(axis=0) * dt
    if rule == "trapezoid":
        vals = _finite(f(time, x - path.values[s_index : t_index + 1]), "coefficient")
        return (vals.sum(axis=0) - 0.5 * (vals[0] + vals[-1])) * dt
    raise ValueError(f"unknown quadrature rule {rule!r}")


def convolve_at(f, density, grid, x):
    """(f * density)(x) = sum_j f(x - y_j) density_j dx^k for a callable f."""
    x = _points(x, grid.dim)
    mesh = grid.mesh().reshape(-1, grid.dim)
    weights = np.asarray(density, dtype=float).ravel() * grid.cell_volume
    nz = weights != 0
    if not np.any(nz):
        return np.zeros(np.shape(f(x[None, :]))[1:])
    vals = _finite(f(x - mesh[nz]), "coefficient")
    return np.tensordot(weights[nz], vals, axes=(0, 0))


def averaging_via_local_time(f_samples, field, s_index, t_index, x):
    """f * (L_t - L_s) at x, by FFT convolution of grid samples of f.

    ``f_samples`` holds f at the cell centres of ``field.grid``; the linear
    convolution lives on the lattice -2R + (i+1) dx and is interpolated at x.
    f is truncated to the box, so the box should hold x - w_r plus the
    effective support of f.
    """
    grid = field.grid
    f_samples = np.asarray(f_samples, dtype=float)
    if f_samples.shape != grid.shape:
        raise ValueError(f"f samples of shape {f_samples.shape} do not match grid {grid.shape}")
    if s_index == t_index:
        return 0.0
    inc = field.increment(s_index, t_index)
    conv = fftconvolve(f_samples, inc, mode="full") * grid.cell_volume
    axis = -2.0 * grid.radius + (np.arange(2 * grid.points - 1) + 1) * grid.dx
    x = _points(x, grid.dim)
    if grid.dim == 1:
        return float(np.interp(x[..., 0], axis, conv, left=0.0, right=0.0))
    interp = RegularGridInterpolator((axis,) * grid.dim, conv, bounds_error=False, fill_value=0.0)
    return float(interp(x.reshape(1, -1))[0])


@dataclass
class YoungReport:
    lags: np.ndarray
    starts: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    ratios: np.ndarray
    worst_ratio: float
    stability: float
    holder_ratios: np.ndarray | None = None
    holder_stability: float | None = None


def young_convolution_check(g_samples, field, alpha, lam, lags=None, starts=4, gamma=None):
    """Both sides of the Young/Sobolev convolution estimate over (s, t) pairs.

    lhs = ||g * L_{s,t}||_{W^{alpha+lam, inf}}, rhs = ||g||_{H^alpha} ||L_{s,t}||_{H^lam}.
    With ``gamma`` the Holder form lhs / (||g||_{H^alpha} |t-s|^gamma) is
    reported as well. Default lags are dyadic between T/64 and T/2; pairs
    with s = t never enter.
    """
    grid, tg = field.grid, field.time_grid
    g_samples = np.asarray(g_samples, dtype=float)
    if lags is None:
        lags = np.array([tg.steps // 2**j for j in range(6, 0, -1) if tg.steps // 2**j >= 1])
    lags = np.asarray([lag for lag in lags if lag > 0], dtype=int)
    g_norm = sobolev_norm(g_samples, alpha, grid)
    g_hat = np.fft.fftn(g_samples)
    rows = []
    for lag in lags:
        for s in np.unique(np.linspace(0, tg.steps - lag, starts).astype(int)):
            inc = field.increment(s, s + lag)
            conv = np.fft.ifftn(g_hat * np.fft.fftn(inc)).real * grid.cell_volume
            lhs = bessel_sup_norm(conv, alpha + lam, grid)
            rhs = g_norm * sobolev_norm(inc, lam, grid)
            rows.append((lag, s, lhs, rhs))
    rows = np.array(rows, dtype=float).reshape(-1, 4)
    lhs, rhs = rows[:, 2], rows[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0, lhs / rhs, 0.0)
    positive = ratios[ratios > 0]
    stability = float(positive.max() / positive.min()) if positive.size else float("nan")
    report = YoungReport(rows[:, 0].astype(int), rows[:, 1].astype(int), lhs, rhs, ratios,
                         float(ratios.max()) if ratios.size else 0.0, stability)
    if gamma is not None and g_norm > 0:
        hr = lhs / (g_norm * (rows[:, 0] * tg.dt) ** gamma)
        report.holder_ratios = hr
        report.holder_stability = float(hr.max() / hr.min()) if np.all(hr > 0) else float("nan")
    return report


def coefficient_norms(coeff, grid, t=0.0):
    """L2, L4 and H^{-1} norms of the time slice c(t, .) sampled on ``grid``."""
    vals = np.asarray(coeff.sample(t, grid), dtype=float)
    if vals.ndim > grid.dim:
        vals = np.sqrt(np.sum(vals**2, axis=tuple(range(grid.dim, vals.ndim))))
    l2 = math.sqrt(float(np.sum(vals**2)) * grid.cell_volume)
    l4 = float(np.sum(vals**4) * grid.cell_volume) ** 0.25
    return {"L2": l2, "L4": l4, "H-1": sobolev_norm(vals, -1.0, grid)}


def h_minus_one_distance(c1, c2, grid, t=0.0):
    """||c1(t, .) - c2(t, .)||_{H^{-1}} on the grid (scalar coefficients)."""
    diff = np.asarray(c1.sample(t, grid), dtype=float) - np.asarray(c2.sample(t, grid), dtype=float)
    return sobolev_norm(diff, -1.0, grid)
