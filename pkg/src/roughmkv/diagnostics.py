"""Monte Carlo checks of moment/Holder bounds, law-flow continuity, the Ito
isometry and the martingale identities on simulated ensembles.

Every report has ``rows()`` (column names and one row per scale or pair)
and ``summary()`` (flags and headline numbers); :func:`write_report`
persists both.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._fit import dyadic_lags, loglog_fit
from .averaging import squared
from .errors import EstimationError
from .localtime import SpatialGrid, local_time
from .sewing import frozen_germ, sew
from .transport import wasserstein1

HOLDER_SKIP_SCALES = 2


def _fit_or_nan(x, y):
    try:
        return loglog_fit(x, y)
    except EstimationError:
        return None


# -- increment moments ------------------------------------------------------------


@dataclass
class MomentHolderReport:
    p: float
    gamma1: float
    c_hat: float
    slope: float
    fitted_gamma1: float
    r2: float
    sup_moment: float
    lags: np.ndarray
    mean_moment: np.ndarray
    max_moment: np.ndarray
    max_quotient: np.ndarray

    def rows(self):
        cols = ["lag", "mean_moment", "max_moment", "max_quotient"]
        return cols, [list(map(float, r)) for r in zip(self.lags, self.mean_moment, self.max_moment,
                                                       self.max_quotient)]

    def summary(self):
        return {"p": self.p, "gamma1": self.gamma1, "c_hat": self.c_hat, "slope": self.slope,
                "fitted_gamma1": self.fitted_gamma1, "r2": self.r2, "sup_moment": self.sup_moment}


def moment_holder(ens, p, gamma1):
    """E|x_{s,t}|^p over dyadic lags; c_hat is the largest quotient
    E|x_{s,t}|^p / |t-s|^{p gamma1 / 2} over all node pairs at those lags.

    The exponent is fitted to the s-averaged moment, skipping the two
    smallest scales; fitted_gamma1 = 2 slope / p.
    """
    m = ens.grid.steps
    if m < 2:
        raise ValueError("moment estimates need at least two steps")
    x = ens.paths

    def size(v):
        return np.abs(v[..., 0]) if v.shape[-1] == 1 else np.linalg.norm(v, axis=-1)

    lags = dyadic_lags(m)
    mean_m, max_m, max_q = [], [], []
    for lag in lags:
        inc = size(x[lag:] - x[:-lag])
        mom = np.mean(inc**p, axis=1)
        h = lag * ens.grid.dt
        mean_m.append(mom.mean())
        max_m.append(mom.max())
        max_q.append(mom.max() / h ** (p * gamma1 / 2))
    lag_t = lags * ens.grid.dt
    mean_m, max_m, max_q = map(np.array, (mean_m, max_m, max_q))
    fit = _fit_or_nan(lag_t[HOLDER_SKIP_SCALES:], mean_m[HOLDER_SKIP_SCALES:])
    slope = fit.slope if fit else math.nan
    sup_moment = float(np.max(np.mean(size(x) ** p, axis=1)))
    return MomentHolderReport(float(p), float(gamma1), float(max_q.max()), slope, 2 * slope / p,
                              fit.r2 if fit else math.nan, sup_moment, lag_t, mean_m, max_m, max_q)


# -- law-flow continuity ------------------------------------------------------------


@dataclass
class LawFlowReport:
    gamma1: float
    lags: np.ndarray
    w1_sup: np.ndarray
    w1_mean: np.ndarray
    slope: float
    r2: float
    degenerate: bool
    tolerance: float = 0.1

    @property
    def passes(self):
        return self.degenerate or self.slope >= self.gamma1 - self.tolerance

    @property
    def passes_half(self):
        """Comparison against gamma1 / 2, the exponent available for diffusive flows."""
        return self.degenerate or self.slope >= self.gamma1 / 2 - self.tolerance

    def rows(self):
        return ["lag", "w1_sup", "w1_mean"], [
            [float(a), float(b), float(c)] for a, b, c in zip(self.lags, self.w1_sup, self.w1_mean)
        ]

    def summary(self):
        return {"gamma1": self.gamma1, "slope": self.slope, "r2": self.r2,
                "degenerate": self.degenerate, "pass": self.passes, "pass_half": self.passes_half}


def law_flow_continuity(flow, gamma1, dt=None, horizon=None, tolerance=0.1, starts=32):
    """W1(mu_s, mu_{s+lag}) over dyadic lags, fitted in log-log.

    For each lag the supremum over start nodes is used in the fit (skipping
    the two smallest scales). One-dimensional clouds of equal size use the
    sorted-sample formula on all starts; otherwise ``starts`` start nodes
    are sampled.
    """
    m = len(flow) - 1
    if dt is None:
        dt = (horizon or 1.0) / m
    lags = dyadic_lags(m)
    sizes = {mu.size for mu in flow}
    one_d = all(mu.dim == 1 for mu in flow) and len(sizes) == 1
    if one_d:
        srt = np.sort(np.stack([mu.samples[:, 0] for mu in flow]), axis=1)
    sup, mean = [], []
    for lag in lags:
        if one_d:
            d = np.mean(np.abs(srt[lag:] - srt[:-lag]), axis=1)
        else:
            s_idx = np.unique(np.linspace(0, m - lag, starts).astype(int))
            d = np.array([wasserstein1(flow[s], flow[s + lag]) for s in s_idx])
        sup.append(d.max())
        mean.append(d.mean())
    sup, mean = np.array(sup), np.array(mean)
    lag_t = lags * dt
    degenerate = bool(np.all(sup == 0))
    fit = None if degenerate else _fit_or_nan(lag_t[HOLDER_SKIP_SCALES:], sup[HOLDER_SKIP_SCALES:])
    return LawFlowReport(float(gamma1), lag_t, sup, mean, fit.slope if fit else math.nan,
                         fit.r2 if fit else math.nan, degenerate, tolerance)


# -- Ito isometry ----------------------------------------------------------------------


def driver_local_time(ens, spacing=None, bandwidth=None):
    """Local-time field of the ensemble's driver on a covering grid."""
    w = ens.driver
    spread = float(np.max(np.abs(w.values))) + 1.0
    spacing = spacing or spread / 256
    h = spacing if bandwidth is None else bandwidth
    return local_time(w, SpatialGrid.covering(w, spacing, h), h)


def _depth_for(span, finest=1):
    depth = 0
    while span % 2 ** (depth + 1) == 0 and span // 2 ** (depth + 1) >= finest and depth < 16:
        depth += 1
    return depth


@dataclass
class IsometryReport:
    windows: list
    lhs: np.ndarray
    se: np.ndarray
    rhs: np.ndarray
    passed: np.ndarray
    certified: np.ndarray

    @property
    def ok(self):
        return bool(np.all(self.passed))

    def rows(self):
        cols = ["s", "t", "lhs", "se", "rhs", "ratio", "pass", "certified"]
        out = []
        for (s, t), a, e, b, ok, c in zip(self.windows, self.lhs, self.se, self.rhs, self.passed, self.certified):
            ratio = a / b if b else math.nan
            out.append([s, t, float(a), float(e), float(b), ratio, bool(ok), bool(c)])
        return cols, out

    def summary(self):
        return {"pass": self.ok, "windows": len(self.windows)}


def stochastic_integral(ens, s_index, t_index):
    """sum_r a(r, z_r) dbeta_r^i per particle, shape (N, n)."""
    a = ens.diffusion_values[s_index:t_index]
    db = ens.increments[s_index:t_index]
    return np.einsum("rij,rnj->ni", a, db)


def ito_isometry(ens, windows, diffusion, field=None, finest=1, se_band=3.0):
    """E|sum a dbeta|^2 (Monte Carlo) against the sewing of the quadratic germ.

    ``diffusion`` is the (mollified) diffusion coefficient used by the
    ensemble; windows are node-index pairs (s, t). The sewing uses dyadic
    levels down to ``finest`` steps.
    """
    field = field or driver_local_time(ens)
    a2 = squared(diffusion)
    germ = frozen_germ(a2, ens.fvalues, field, name="A2")
    nodes = ens.grid.nodes
    lhs, se, rhs, ok, cert = [], [], [], [], []
    for s, t in windows:
        if s == t:
            lhs.append(0.0), se.append(0.0), rhs.append(0.0), ok.append(True), cert.append(True)
            continue
        sq = np.sum(stochastic_integral(ens, s, t) ** 2, axis=1)
        est = float(sq.mean())
        err = float(sq.std(ddof=1) / math.sqrt(sq.size))
        res = sew(germ, nodes[s], nodes[t], max(1, _depth_for(t - s, finest)))
        val = float(res.limit)
        lhs.append(est), se.append(err), rhs.append(val), cert.append(res.certified)
        ok.append(abs(est - val) <= se_band * err)
    return IsometryReport(list(windows), np.array(lhs), np.array(se), np.array(rhs), np.array(ok),
                          np.array(cert))


# -- martingale identities -------------------------------------------------------------


class PreconditionError(ValueError):
    """A test functional looks past the conditioning time."""


@dataclass(frozen=True)
class CylinderFunctional:
    """phi(x|[0,s], beta|[0,s]) through finitely many node values.

    ``func`` maps (x values (N, len(x_nodes), n), beta values (N, len(beta_nodes), d))
    to one number per particle.
    """

    name: str
    x_nodes: tuple
    beta_nodes: tuple
    func: Callable

    def __call__(self, ens, s_index, beta_paths=None):
        used = self.x_nodes + self.beta_nodes
        if used and max(used) > s_index:
            raise PreconditionError(
                f"functional {self.name!r} uses node {max(used)} after the conditioning node {s_index}"
            )
        beta_paths = ens.brownian_paths() if beta_paths is None else beta_paths
        xv = np.moveaxis(ens.paths[list(self.x_nodes)], 0, 1)
        bv = np.moveaxis(beta_paths[list(self.beta_nodes)], 0, 1)
        return np.asarray(self.func(xv, bv), dtype=float).reshape(ens.n_particles)


def cylinder_presets(s_index):
    """phi = 1, tanh(x_s), tanh(beta_{s/2}) and their product (first components)."""
    half = s_index // 2
    return [
        CylinderFunctional("one", (), (), lambda x, b: np.ones(x.shape[0])),
        CylinderFunctional("tanh_x", (s_index,), (), lambda x, b: np.tanh(x[:, 0, 0])),
        CylinderFunctional("tanh_beta", (), (half,), lambda x, b: np.tanh(b[:, 0, 0])),
        CylinderFunctional("product", (s_index,), (half,),
                           lambda x, b: np.tanh(x[:, 0, 0]) * np.tanh(b[:, 0, 0])),
    ]


def _cumulative_sewing(germ, grid):
    """I_{0,t} at every node: the dyadic sum over single steps, shape (M+1, ...)."""
    nodes = grid.nodes
    steps = germ.values(nodes[:-1], nodes[1:])
    out = np.zeros((grid.steps + 1,) + steps.shape[1:])
    np.cumsum(steps, axis=0, out=out[1:])
    return out


@dataclass
class DefectRow:
    process: str
    functional: str
    s: int
    t: int
    estimate: float
    se: float
    passed: bool


@dataclass
class MartingaleDefectReport:
    rows_: list = field(default_factory=list)
    compensated: bool = True
    se_band: float = 3.0

    def passed(self, process=None):
        sel = [r for r in self.rows_ if process is None or r.process == process]
        return all(r.passed for r in sel)

    def rows(self):
        cols = ["process", "functional", "s", "t", "estimate", "se", "pass"]
        return cols, [[r.process, r.functional, r.s, r.t, r.estimate, r.se, r.passed] for r in self.rows_]

    def summary(self):
        return {"compensated": self.compensated, "pass": self.passed(),
                **{f"pass_{p}": self.passed(p) for p in ("M", "R", "N")}}


def martingale_processes(ens, drift, diffusion, field=None, compensated=True):
    """M, R, N at every node (first components), compensators sewn from frozen germs.

    ``drift`` and ``diffusion`` are the mollified coefficients of the
    ensemble. With ``compensated=False`` M is the raw displacement x_t - x_0.
    """
    field = field or driver_local_time(ens)
    grid = ens.grid
    flow = ens.fvalues
    x = ens.paths[:, :, 0]
    beta = ens.brownian_paths()[:, :, 0]
    drift_int = _cumulative_sewing(frozen_germ(drift, flow, field, "A1"), grid).reshape(grid.steps + 1, -1)[:, 0]
    quad_int = _cumulative_sewing(frozen_germ(squared(diffusion), flow, field, "A2"), grid).reshape(-1)
    diff_int = _cumulative_sewing(frozen_germ(diffusion, flow, field, "A3"), grid).reshape(grid.steps + 1, -1)[:, 0]
    disp = x - x[0]
    mart = disp - drift_int[:, None] if compensated else disp
    rem = mart**2 - quad_int[:, None]
    cross = mart * beta - diff_int[:, None]
    return {"M": mart, "R": rem, "N": cross}


def martingale_defect(ens, pairs, drift, diffusion, functionals=None, field=None,
                      compensated=True, se_band=3.0):
    """E[phi (P_t - P_s)] for P in {M, R, N} with pass at ``se_band`` standard errors."""
    procs = martingale_processes(ens, drift, diffusion, field, compensated)
    beta_paths = ens.brownian_paths()
    report = MartingaleDefectReport(compensated=compensated, se_band=se_band)
    for s, t in pairs:
        if not s < t:
            raise ValueError(f"pairs need s < t, got ({s}, {t})")
        phis = cylinder_presets(s) if functionals is None else functionals
        for phi in phis:
            weights = phi(ens, s, beta_paths)
            for name, proc in procs.items():
                y = weights * (proc[t] - proc[s])
                est = float(y.mean())
                se = float(y.std(ddof=1) / math.sqrt(y.size))
                ok = abs(est) <= se_band * se if se > 0 else abs(est) <= 1e-12
                report.rows_.append(DefectRow(name, phi.name, int(s), int(t), est, se, ok))
    return report


# -- finite-N fluctuation -------------------------------------------------------------


@dataclass
class NSweepReport:
    sizes: list
    pairs: list
    w1: list
    slope: float
    repeats: int

    def rows(self):
        return ["n_small", "n_large", "w1"], [[a, b, float(c)] for (a, b), c in zip(self.pairs, self.w1)]

    def summary(self):
        return {"sizes": self.sizes, "slope": self.slope, "repeats": self.repeats}


def nsweep_fluctuation(run, sizes, repeats=4, seed=0):
    """W1 between terminal laws at consecutive particle counts.

    ``run(n_particles, seed)`` returns an ensemble. Distances are averaged
    over ``repeats`` seeds (seed, seed+1, ...), and the decay exponent is
    the log-log slope against the smaller count of each pair.
    """
    sizes = list(sizes)
    pairs = list(zip(sizes, sizes[1:]))
    if not pairs:
        return NSweepReport(sizes, [], [], math.nan, repeats)
    totals = np.zeros(len(pairs))
    for r in range(repeats):
        laws = {n: run(n, seed + r).law(-1) for n in sizes}
        for i, (a, b) in enumerate(pairs):
            totals[i] += wasserstein1(laws[a], laws[b])
    w1 = totals / repeats
    fit = _fit_or_nan([a for a, _ in pairs], w1) if np.all(w1 > 0) else None
    return NSweepReport(sizes, pairs, list(w1), fit.slope if fit else math.nan, repeats)


# -- persistence ------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def report_bytes(report, extra=None):
    """(csv bytes, json bytes) for a report; ``extra`` is merged into the summary."""
    cols, rows = report.rows()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    summary = _jsonable({**report.summary(), **(extra or {})})
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    return buf.getvalue().encode(), text.encode()


def write_report(report, stem, extra=None):
    """stem.csv (rows) and stem.json (summary); returns the two paths."""
    csv_bytes, json_bytes = report_bytes(report, extra)
    csv_path, json_path = Path(f"{stem}.csv"), Path(f"{stem}.json")
    csv_path.write_bytes(csv_bytes)
    json_path.write_bytes(json_bytes)
    return csv_path, json_path
