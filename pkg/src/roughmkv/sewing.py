"""Deterministic sewing on dyadic partitions and the frozen-coefficient germs.

A germ is a two-parameter map (s, t) -> A_{s,t}. Its coboundary
(dA)_{s,u,t} = A_{s,t} - A_{s,u} - A_{u,t} measures the failure of
additivity; when |dA| <~ |t-s|^beta with beta > 1 the Riemann sums over
refining partitions converge and the limit is the sewing IA.

Along the dyadic tree the bookkeeping is exact: S_{n+1} - S_n is minus the
sum of the coboundaries at the midpoints of level n, so
IA - A = -sum_n sum_level-n dA, and with ||dA||_beta taken over those
midpoint triples, |IA - A| <= ||dA||_beta |t-s|^beta / (1 - 2^{1-beta}).
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._fit import loglog_fit
from .averaging import convolve_at
from .localtime import bessel_sup_norm, sobolev_norm

MAX_DEPTH = 16


@dataclass(frozen=True)
class Germ:
    """Two-parameter germ.

    ``func(s, t)`` returns a scalar or vector. With ``vectorized`` it accepts
    arrays of left and right endpoints and returns one value per pair. With
    ``grid`` set the germ is only defined on grid nodes and dyadic
    subdivisions must land on nodes.
    """

    func: Callable
    alpha: float | None = None
    beta: float | None = None
    name: str = ""
    grid: object = None
    vectorized: bool = False

    def __call__(self, s, t):
        return np.asarray(self.func(s, t), dtype=float)

    def values(self, s, t):
        """Germ on arrays of endpoints, shape (n,) + value shape."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.vectorized:
            out = np.asarray(self.func(s, t), dtype=float)
            return out.reshape((s.size,) + out.shape[1:]) if out.ndim else out.reshape(1)
        return np.array([np.asarray(self.func(a, b), dtype=float) for a, b in zip(s, t)])


def _norm(value):
    value = np.asarray(value, dtype=float)
    return float(np.sqrt(np.sum(value**2)))


def coboundary(germ, s, u, t):
    """(dA)_{s,u,t} = A_{s,t} - A_{s,u} - A_{u,t}."""
    if not s <= u <= t:
        raise ValueError(f"coboundary needs s <= u <= t, got ({s}, {u}, {t})")
    return germ(s, t) - germ(s, u) - germ(u, t)


def remainder_constant(beta):
    """c(beta) in |IA - A| <= c ||dA||_beta |t - s|^beta on the dyadic tree."""
    if beta <= 1:
        return math.inf
    return 1.0 / (1.0 - 2.0 ** (1.0 - beta))


@dataclass
class GermNorms:
    alpha_norm: float
    delta_norm: float
    alpha: float
    beta: float
    pairs: int


def germ_norms(germ, alpha, beta, grid, max_nodes=64):
    """Discrete ||A||_alpha and ||dA||_beta over node pairs of ``grid``.

    Nodes are subsampled to at most ``max_nodes + 1``; coboundaries use the
    midpoint of each pair with an even node gap.
    """
    if grid.steps < 16:
        raise ValueError(f"germ norms need a grid with >= 16 steps, got {grid.steps}")
    stride = max(1, grid.steps // max_nodes)
    nodes = grid.nodes[::stride]
    a_norm, d_norm, count = 0.0, 0.0, 0
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            s, t = nodes[i], nodes[j]
            h = t - s
            a_norm = max(a_norm, _norm(germ(s, t)) / h**alpha)
            if (j - i) % 2 == 0:
                u = nodes[(i + j) // 2]
                d_norm = max(d_norm, _norm(coboundary(germ, s, u, t)) / h**beta)
            count += 1
    return GermNorms(a_norm, d_norm, alpha, beta, count)


def coboundary_profile(germ, grid, spans=None, starts=8):
    """Log-log fit of max |dA_{s,mid,t}| against |t - s| over node spans."""
    m = grid.steps
    if spans is None:
        spans = [2**j for j in range(1, int(math.log2(m)) + 1) if 2**j <= m // 2]
    spans = np.asarray(spans, dtype=int)
    worst = np.empty(spans.size)
    for n, span in enumerate(spans):
        lefts = np.unique(np.linspace(0, m - span, starts).astype(int))
        nodes = grid.nodes
        worst[n] = max(
            _norm(coboundary(germ, nodes[i], nodes[i + span // 2], nodes[i + span])) for i in lefts
        )
    return loglog_fit(spans * grid.dt, worst), spans * grid.dt, worst


@dataclass
class SewingResult:
    s: float
    t: float
    depth: int
    germ_value: np.ndarray
    sums: np.ndarray
    diffs: np.ndarray
    limit: np.ndarray
    order: float
    certified: bool
    reason: str
    delta_norm: float
    beta: float | None
    remainder: float
    bound: float
    c_measured: float
    level_values: list = field(default=None, repr=False)

    @property
    def levels(self):
        return np.arange(1, self.depth + 1)


def _level_points(germ, s, t, depth):
    if germ.grid is None:
        return [np.linspace(s, t, 2**n + 1) for n in range(depth + 1)]
    i, j = germ.grid.index(s), germ.grid.index(t)
    if (j - i) % 2**depth:
        raise ValueError(
            f"depth {depth} needs {2**depth} subintervals of [{s}, {t}] on grid nodes, "
            f"but the window spans {j - i} steps"
        )
    nodes = germ.grid.nodes
    return [nodes[i + np.arange(2**n + 1) * ((j - i) // 2**n)] for n in range(depth + 1)]


def sew(germ, s, t, max_depth=14, beta=None):
    """Dyadic Riemann sums S_1..S_depth of ``germ`` over [s, t].

    The limit is the last iterate. The result is certified when the fitted
    decay order of |S_{n+1} - S_n| is positive, the last difference does not
    exceed the first, and the declared beta (if any) is above one.
    """
    if not s < t:
        raise ValueError(f"sewing needs s < t, got ({s}, {t})")
    if not 1 <= max_depth <= MAX_DEPTH:
        raise ValueError(f"depth must lie in [1, {MAX_DEPTH}], got {max_depth}")
    beta = germ.beta if beta is None else beta
    points = _level_points(germ, s, t, max_depth)
    level_values = [germ.values(p[:-1], p[1:]) for p in points]
    sums = np.array([v.sum(axis=0) for v in level_values])
    germ_value = sums[0]
    diffs = np.array([_norm(sums[n + 1] - sums[n]) for n in range(max_depth)])
    h = t - s
    mesh = h / 2.0 ** np.arange(max_depth)
    scale = 1e-13 * max(1.0, max(_norm(x) for x in sums))

    # ||dA||_beta over the midpoint triples of the tree
    delta_norm = 0.0
    if beta is not None:
        for n in range(max_depth):
            delta = level_values[n] - (level_values[n + 1][0::2] + level_values[n + 1][1::2])
            mags = np.sqrt(np.sum(delta.reshape(delta.shape[0], -1) ** 2, axis=1))
            delta_norm = max(delta_norm, float(mags.max()) / mesh[n] ** beta)

    if np.all(diffs <= scale):
        order, cauchy = math.inf, True
    else:
        keep = diffs > scale
        if keep.sum() >= 2:
            order = loglog_fit(mesh[keep], diffs[keep]).slope
        else:
            order = math.inf if diffs[-1] <= scale else -math.inf
        cauchy = order > 0 and diffs[-1] <= diffs[0]
    reasons = []
    if not cauchy:
        reasons.append(f"dyadic sums are not Cauchy (order {order:.3g})")
    if beta is not None and beta <= 1:
        reasons.append(f"declared beta={beta} <= 1")
    certified = not reasons
    limit = sums[-1]
    remainder = _norm(limit - germ_value)
    bound = remainder_constant(beta) * delta_norm * h**beta if beta is not None else math.nan
    denom = delta_norm * h**beta if beta is not None else 0.0
    c_measured = remainder / denom if denom > 0 else (0.0 if remainder == 0 else math.inf)
    return SewingResult(
        s, t, max_depth, germ_value, sums[1:], diffs, limit, order, certified,
        "; ".join(reasons) or "ok", delta_norm, beta, remainder, bound, c_measured,
        level_values,
    )


def write_trace_csv(result, filename):
    """Rows (level, sum..., delta) with delta = |S_level - S_{level-1}|."""
    sums = result.sums.reshape(result.depth, -1)
    cols = ["sum"] if sums.shape[1] == 1 else [f"sum_{i + 1}" for i in range(sums.shape[1])]
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level"] + cols + ["delta"])
        for n in range(result.depth):
            writer.writerow([n + 1] + [repr(float(x)) for x in sums[n]] + [repr(float(result.diffs[n]))])


# -- germs of the frozen averaged coefficients ----------------------------------------


def _flow_array(flow, field):
    flow = np.asarray(flow, dtype=float)
    if flow.ndim == 1:
        flow = flow[:, None]
    if flow.shape != (field.time_grid.steps + 1, field.grid.dim):
        raise ValueError(
            f"flow of shape {flow.shape} does not match {field.time_grid.steps + 1} nodes "
            f"in R^{field.grid.dim}"
        )
    return flow


def frozen_germ(coeff, flow, field, name="A"):
    """A_{s,t} = c(s, .) * L_{s,t} evaluated at flow(s).

    Both the time slice of the coefficient and the law-dependent argument are
    frozen at the left endpoint; only the local-time increment moves.
    """
    flow = _flow_array(flow, field)
    tg = field.time_grid
    nodes = tg.nodes
    grid = field.grid

    def func(s, t):
        i, j = tg.index(s), tg.index(t)
        if i == j:
            return np.zeros(coeff.shape)
        return convolve_at(coeff.slice(nodes[i]), field.increment(i, j), grid, flow[i])

    return Germ(func, name=name, grid=tg)


def drift_germ(b, flow, field):
    """(A_1)_{s,t} = b(s, .) * L_{s,t}(F(mu_s))."""
    return frozen_germ(b, flow, field, name="A1")


def quadratic_germ(a2, flow, field):
    """(A_2)_{s,t} = sum_ij a_ij^2(s, .) * L_{s,t}(F(mu_s)); pass a squared coefficient."""
    if a2.shape != ():
        raise ValueError("quadratic germ needs the scalar squared coefficient, see averaging.squared")
    return frozen_germ(a2, flow, field, name="A2")


def unfrozen_quadrature(coeff, flow, path, s_index, t_index):
    """Left-endpoint quadrature of int_s^t c(r, F(mu_r) - w_r) dr."""
    flow = np.asarray(flow, dtype=float)
    if flow.ndim == 1:
        flow = flow[:, None]
    nodes = path.grid.nodes
    total = np.zeros(coeff.shape)
    for r in range(s_index, t_index):
        total = total + coeff(nodes[r], flow[r] - path.values[r])
    return total * path.grid.dt


def exchange_defect(coeff, s_index, tau_index, t_index, field):
    """Both sides of swapping the frozen slice c(s) for c(tau) against L_{tau,t}.

    lhs = sup_x |(c(s) - c(tau)) * L_{tau,t}(x)| on the grid,
    rhs = ||c(s) - c(tau)||_{H^-1} ||L_{tau,t}||_{H^1}.
    """
    grid = field.grid
    nodes = field.time_grid.nodes
    diff = coeff.sample(nodes[s_index], grid) - coeff.sample(nodes[tau_index], grid)
    inc = field.increment(tau_index, t_index)
    conv = np.fft.ifftn(np.fft.fftn(diff) * np.fft.fftn(inc)).real * grid.cell_volume
    lhs = bessel_sup_norm(conv, 0.0, grid)
    rhs = sobolev_norm(diff, -1.0, grid) * sobolev_norm(inc, 1.0, grid)
    return lhs, rhs
