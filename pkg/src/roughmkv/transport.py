"""Empirical measures, Wasserstein distances and Lipschitz measure functionals."""

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import EvaluationError

EXACT_ASSIGNMENT_MAX = 2048


class EmpiricalMeasure:
    """Uniform-weight sample cloud in R^n; ``samples`` may be a view."""

    def __init__(self, samples):
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"expected samples of shape (N, n) with N >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("empirical measure has non-finite samples")
        self.samples = x

    @property
    def size(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def __repr__(self):
        return f"EmpiricalMeasure(N={self.size}, n={self.dim})"


def _as_measure(mu):
    return mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)


@dataclass(frozen=True)
class MeasureFunctional:
    """F(mu) = int f dmu with f: R^n -> R^k and |F|_Lip = sup |grad f|."""

    f: Callable
    lipschitz: float
    out_dim: int
    name: str = ""

    def __call__(self, mu):
        return apply_functional(self, mu)


def mean_functional(n=1):
    return MeasureFunctional(lambda x: x, 1.0, n, "mean")


def tanh_functional(n=1):
    return MeasureFunctional(np.tanh, 1.0, n, "tanh")


def stacked_functional(n=1):
    """f(x) = (x, tanh x): sup of the operator norm of the Jacobian is sqrt(2)."""
    return MeasureFunctional(lambda x: np.concatenate([x, np.tanh(x)], axis=-1),
                             math.sqrt(2.0), 2 * n, "stacked")


FUNCTIONALS = {"mean": mean_functional, "tanh": tanh_functional, "stacked": stacked_functional}


def make_functional(name, n=1):
    try:
        return FUNCTIONALS[name](n)
    except KeyError:
        raise ValueError(f"unknown functional {name!r}; choose from {sorted(FUNCTIONALS)}") from None


def apply_functional(F, mu):
    """(1/N) sum_i f(x_i)."""
    mu = _as_measure(mu)
    vals = np.asarray(F.f(mu.samples), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"functional {F.name or F.f!r} produced non-finite values")
    return vals.mean(axis=0)


def wasserstein1_1d(mu, nu):
    """Exact W1 between 1-D empirical measures.

    Equal counts use the sorted-sample formula. Unequal counts integrate
    |F_mu^{-1} - F_nu^{-1}| over the merged quantile breakpoints, which is
    the same monotone coupling without resampling noise.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != 1 or nu.dim != 1:
        return wasserstein1_nd(mu, nu).value
    x, y = np.sort(mu.samples[:, 0]), np.sort(nu.samples[:, 0])
    if x.size == y.size:
        return float(np.mean(np.abs(x - y)))
    return _quantile_distance(x, y, 1)


def wasserstein2_1d(mu, nu):
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("wasserstein2_1d handles one-dimensional measures only")
    x, y = np.sort(mu.samples[:, 0]), np.sort(nu.samples[:, 0])
    if x.size == y.size:
        return float(np.sqrt(np.mean((x - y) ** 2)))
    return math.sqrt(_quantile_distance(x, y, 2))


def _quantile_distance(x, y, p):
    """int_0^1 |F_x^{-1}(q) - F_y^{-1}(q)|^p dq for sorted uniform-weight samples."""
    qs = np.union1d(np.arange(1, x.size) / x.size, np.arange(1, y.size) / y.size)
    edges = np.concatenate([[0.0], qs, [1.0]])
    mid = 0.5 * (edges[:-1] + edges[1:])
    xi = np.minimum((mid * x.size).astype(int), x.size - 1)
    yi = np.minimum((mid * y.size).astype(int), y.size - 1)
    return float(np.sum(np.diff(edges) * np.abs(x[xi] - y[yi]) ** p))


@dataclass
class TransportResult:
    """W1 value; approximate results carry a certified bracket value +/- tolerance."""

    value: float
    exact: bool
    tolerance: float = 0.0


def _resample(mu, n, rng):
    idx = rng.integers(0, mu.size, size=n)
    return EmpiricalMeasure(mu.samples[idx])


def _rounded_plan_cost(plan, cost):
    """Cost of the plan projected onto uniform marginals (a feasible coupling)."""
    n, m = plan.shape
    a, b = np.full(n, 1 / n), np.full(m, 1 / m)
    plan = plan * np.minimum(1.0, a / plan.sum(axis=1))[:, None]
    plan = plan * np.minimum(1.0, b / plan.sum(axis=0))[None, :]
    ea, eb = a - plan.sum(axis=1), b - plan.sum(axis=0)
    if ea.sum() > 0:
        plan = plan + np.outer(ea, eb) / ea.sum()
    return float(np.sum(plan * cost))


def _sinkhorn_bracket(cost, tol, sweeps=10, max_sweeps=400):
    """Lower and upper bounds on the assignment value from log-domain Sinkhorn.

    The regularisation is halved from cost.max()/4 down to ``tol`` with
    warm-started potentials. The lower bound is the dual value after a
    c-transform, the upper bound the cost of the rounded plan; iteration
    stops once they are within 2 * tol or the sweep budget is spent.
    """
    n, m = cost.shape
    log_a, log_b = np.full(n, -math.log(n)), np.full(m, -math.log(m))
    f, g = np.zeros(n), np.zeros(m)
    reg = float(cost.max()) / 4
    lower, upper = 0.0, float(cost.max())
    for _ in range(max_sweeps // sweeps):
        for _ in range(sweeps):
            f = reg * (log_a - logsumexp((g[None, :] - cost) / reg, axis=1))
            g = reg * (log_b - logsumexp((f[:, None] - cost) / reg, axis=0))
        f_c = np.min(cost - g[None, :], axis=1)
        lower = max(lower, float(f_c.mean() + g.mean()))
        upper = min(upper, _rounded_plan_cost(np.exp((f[:, None] + g[None, :] - cost) / reg), cost))
        if upper - lower <= 2 * tol:
            break
        reg = max(reg / 2, tol)
    return lower, upper


def wasserstein1_nd(mu, nu, seed=0, exact_max=EXACT_ASSIGNMENT_MAX):
    """W1 for uniform-weight clouds in R^n.

    Up to ``exact_max`` samples the assignment problem on |x_i - y_j| is
    solved exactly. Larger clouds use entropic transport and return the
    midpoint of a certified bracket, flagged approximate, with the half-gap
    as tolerance; a warning is issued when it exceeds 1e-3 * diameter.
    Unequal counts resample the smaller cloud with replacement.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.size != nu.size:
        rng = np.random.default_rng(seed)
        n = max(mu.size, nu.size)
        mu = mu if mu.size == n else _resample(mu, n, rng)
        nu = nu if nu.size == n else _resample(nu, n, rng)
    cost = cdist(mu.samples, nu.samples)
    if mu.size <= exact_max:
        rows, cols = linear_sum_assignment(cost)
        return TransportResult(float(cost[rows, cols].mean()), True)
    diameter = float(cost.max())
    if diameter == 0:
        return TransportResult(0.0, True)
    declared = 1e-3 * diameter
    lower, upper = _sinkhorn_bracket(cost, declared)
    half_gap = (upper - lower) / 2
    if half_gap > declared:
        warnings.warn(f"entropic W1 bracket half-width {half_gap:.3g} exceeds 1e-3 * diameter", stacklevel=2)
    return TransportResult((lower + upper) / 2, False, half_gap)


def wasserstein1(mu, nu):
    """W1 value, routed by dimension."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim == 1:
        return wasserstein1_1d(mu, nu)
    return wasserstein1_nd(mu, nu).value


def lipschitz_estimate(phi, points):
    """Largest difference quotient of ``phi`` over pairs of the given points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    vals = np.asarray([phi(p) for p in pts], dtype=float).reshape(len(pts))
    dist = cdist(pts, pts)
    diff = np.abs(vals[:, None] - vals[None, :])
    mask = dist > 0
    return float(np.max(diff[mask] / dist[mask])) if mask.any() else 0.0


def kantorovich_lower_bound(mu, nu, test_functions, probe=64, seed=0, slack=1e-9):
    """max over test functions of int phi d(mu - nu); a lower bound on W1.

    Each phi is checked for the 1-Lipschitz property by difference quotients
    on the union of both supports plus random probe points; violators are
    skipped with a warning.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    pts = np.vstack([mu.samples, nu.samples])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    rng = np.random.default_rng(seed)
    probes = np.vstack([pts, lo + (hi - lo + 1.0) * rng.random((probe, mu.dim))])
    best = 0.0
    for phi in test_functions:
        lip = lipschitz_estimate(phi, probes)
        if lip > 1.0 + slack:
            warnings.warn(f"test function rejected: Lipschitz estimate {lip:.6g} > 1", stacklevel=2)
            continue
        value = float(np.mean([phi(x) for x in mu.samples]) - np.mean([phi(y) for y in nu.samples]))
        best = max(best, value)
    return best


def write_measure_csv(mu, filename):
    mu = _as_measure(mu)
    header = ",".join(f"x_{i + 1}" for i in range(mu.dim))
    np.savetxt(filename, mu.samples, delimiter=",", header=header, comments="", fmt="%.17g")


def read_measure_csv(filename):
    return EmpiricalMeasure(np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2))
