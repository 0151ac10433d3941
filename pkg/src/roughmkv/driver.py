"""Fractional Brownian drivers and their local non-determinism index.

Paths are synthesised exactly (Davies-Harte circulant embedding of the
fractional Gaussian noise covariance, with a dense Cholesky fallback), so
the law at every grid node is the fBm law and no approximation error leaks
into the regularity estimates downstream.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._fit import loglog_fit
from .errors import ConditioningError, SynthesisError

CHOLESKY_FALLBACK_MAX_STEPS = 2048


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def nodes(self):
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def index(self, t, tol=1e-9):
        """Index of the node equal to ``t`` (raises if ``t`` is not a node)."""
        pos = t / self.dt
        i = int(round(pos))
        if abs(pos - i) > tol * max(1.0, abs(pos)) or not 0 <= i <= self.steps:
            raise ValueError(f"time {t!r} is not a node of {self}")
        return i


@dataclass(frozen=True)
class FbmSpec:
    hurst: float
    dim: int
    grid: TimeGrid
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise ValueError(f"Hurst index must lie in (0, 1), got {self.hurst}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class SamplePath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.steps + 1:
            raise ValueError(
                f"expected {self.grid.steps + 1} node values, got array of shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("sample path contains non-finite entries")
        self.values = values

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.grid.nodes

    def __getitem__(self, index):
        return self.values[index]


@dataclass
class NondeterminismReport:
    zeta_hat: float
    inf_ratio: float
    regression_r2: float
    s_index: int
    lags: np.ndarray = field(repr=False)
    conditional_variance: np.ndarray = field(repr=False)
    zeta: float | None = None


def fbm_covariance(s, t, hurst):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(t) ** h2 + np.abs(s) ** h2 - np.abs(t - s) ** h2)


def fgn_autocovariance(lags, hurst):
    """Autocovariance of unit-step fractional Gaussian noise."""
    k = np.abs(np.asarray(lags, dtype=float))
    h2 = 2.0 * hurst
    return 0.5 * ((k + 1) ** h2 + np.abs(k - 1) ** h2 - 2 * k**h2)


def circulant_eigenvalues(steps, hurst):
    gamma = fgn_autocovariance(np.arange(steps + 1), hurst)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    return np.fft.fft(row).real


def realisation_rng(seed, index):
    """Independent generator for realisation ``index`` of a seeded experiment."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _synthesis_plan(spec, method):
    m = spec.grid.steps
    if method not in ("auto", "circulant", "cholesky"):
        raise ValueError(f"unknown synthesis method {method!r}")
    if method in ("auto", "circulant"):
        lam = circulant_eigenvalues(m, spec.hurst)
        # round-off can push exact zeros slightly negative
        if lam.min() >= -1e-10 * lam.max():
            return "circulant", np.sqrt(np.clip(lam, 0.0, None) / (2 * m))
        if method == "circulant" or m > CHOLESKY_FALLBACK_MAX_STEPS:
            raise SynthesisError(
                f"circulant embedding is not nonnegative for H={spec.hurst}, M={m} "
                f"(min eigenvalue {lam.min():.3e}) and no Cholesky fallback is available"
            )
    if m > CHOLESKY_FALLBACK_MAX_STEPS:
        raise SynthesisError(f"dense Cholesky synthesis is limited to M <= {CHOLESKY_FALLBACK_MAX_STEPS}")
    t = spec.grid.nodes[1:]
    cov = fbm_covariance(t[:, None], t[None, :], spec.hurst)
    return "cholesky", np.linalg.cholesky(cov)


def _draw(spec, kind, factor, rng):
    m, k = spec.grid.steps, spec.dim
    out = np.zeros((m + 1, k))
    if kind == "circulant":
        z = rng.standard_normal((k, 2 * m)) + 1j * rng.standard_normal((k, 2 * m))
        noise = np.fft.fft(factor * z, axis=1)[:, :m].real * spec.grid.dt**spec.hurst
        out[1:] = np.cumsum(noise, axis=1).T
    else:
        out[1:] = factor @ rng.standard_normal((m, k))
    return out


def sample_fbm(spec, realisation=0, method="auto"):
    """One realisation of a ``spec.dim``-dimensional fBm with iid components."""
    kind, factor = _synthesis_plan(spec, method)
    values = _draw(spec, kind, factor, realisation_rng(spec.seed, realisation))
    return SamplePath(spec.grid, values)


def sample_fbm_batch(spec, n_paths, nodes=None, method="auto", first=0):
    """Realisations ``first .. first+n_paths-1`` as an array (n_paths, nodes, dim).

    Each realisation is bit-identical to ``sample_fbm(spec, realisation=i)``.
    ``nodes`` selects grid indices to keep, which keeps memory bounded for
    large ensembles.
    """
    kind, factor = _synthesis_plan(spec, method)
    idx = np.arange(spec.grid.steps + 1) if nodes is None else np.asarray(nodes, dtype=int)
    out = np.empty((n_paths, idx.size, spec.dim))
    for i in range(n_paths):
        out[i] = _draw(spec, kind, factor, realisation_rng(spec.seed, first + i))[idx]
    return out


def _cholesky(cov, grid):
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            f"covariance of the observed nodes is singular on {grid}", grid=grid
        ) from exc
    if not np.all(np.isfinite(chol)) or np.min(np.diag(chol)) <= 0:
        raise ConditioningError(f"covariance of the observed nodes is singular on {grid}", grid=grid)
    return chol


def _node_covariance(grid, hurst=None, covariance=None, paths=None, upto=None):
    n = grid.steps if upto is None else upto
    t = grid.nodes[1 : n + 1]
    if hurst is not None:
        return fbm_covariance(t[:, None], t[None, :], hurst)
    if covariance is not None:
        return np.asarray(covariance(t[:, None], t[None, :]), dtype=float) * np.ones((n, n))
    # sample cross-check: components of every path count as realisations
    data = np.asarray(
        [p.values if isinstance(p, SamplePath) else np.asarray(p) for p in paths], dtype=float
    )
    if data.ndim == 2:
        data = data[:, :, None]
    data = np.moveaxis(data, 2, 1).reshape(-1, data.shape[1])
    if data.shape[0] < 1000:
        raise ValueError(f"sample conditioning needs >= 1000 realisations, got {data.shape[0]}")
    x = data[:, 1 : n + 1]
    x = x - x.mean(axis=0)
    return x.T @ x / (x.shape[0] - 1)


def conditional_variance_matrix(grid, hurst=None, covariance=None, paths=None, upto=None):
    """cv[i, j] = Var(w_{t_j} | w_{t_1}, ..., w_{t_i}) for 0 <= i < j <= upto.

    One Cholesky factor of the node covariance gives every Schur complement:
    the conditional variance is the squared norm of the factor row tail.
    """
    cov = _node_covariance(grid, hurst, covariance, paths, upto)
    chol = _cholesky(cov, grid)
    n = chol.shape[0]
    csum = np.concatenate([np.zeros((n, 1)), np.cumsum(chol**2, axis=1)], axis=1)
    cv = np.full((n + 1, n + 1), np.nan)
    for j in range(1, n + 1):
        cv[:j, j] = csum[j - 1, j] - csum[j - 1, :j]
    return cv


def _regression_window(grid, lags):
    return (lags >= 4 * grid.dt * (1 - 1e-9)) & (lags <= grid.horizon / 4 * (1 + 1e-9))


def conditional_variance_profile(grid, s_index, *, hurst=None, covariance=None, paths=None):
    """Index estimate from the conditional variance of w_t given the nodes up to s.

    Exactly one source of covariance is used: the closed-form fBm covariance
    (``hurst``), a covariance callable, or the empirical covariance of sample
    ``paths`` (a cross-check). zeta_hat is half the log-log slope of the
    conditional variance against t - s over lags in [4 dt, T/4].
    """
    if sum(x is not None for x in (hurst, covariance, paths)) != 1:
        raise ValueError("give exactly one of hurst, covariance or paths")
    if not 0 <= s_index < grid.steps:
        raise ValueError(f"s_index must lie in [0, {grid.steps}), got {s_index}")
    return _profile(grid, s_index, conditional_variance_matrix(grid, hurst, covariance, paths))


def _profile(grid, s_index, cv):
    j = np.arange(s_index + 1, grid.steps + 1)
    lags = (j - s_index) * grid.dt
    var = cv[s_index, j]
    if np.any(var <= 0):
        raise ConditioningError(f"non-positive conditional variance after s_index={s_index}", grid=grid)
    keep = _regression_window(grid, lags)
    fit = loglog_fit(lags[keep], var[keep])
    zeta_hat = fit.slope / 2
    inf_ratio = float(np.min(var / lags ** (2 * zeta_hat)))
    return NondeterminismReport(zeta_hat, inf_ratio, fit.r2, s_index, lags, var)


NONDETERMINISM_MAX_STEPS = 2048


def check_local_nondeterminism(spec, zeta, max_steps=NONDETERMINISM_MAX_STEPS):
    """Grid version of the local non-determinism quotient at candidate index zeta.

    Components are iid, so the conditional covariance is a multiple of the
    identity and the infimum over unit directions is that scalar. The
    covariance is closed-form, so grids finer than ``max_steps`` are checked
    on ``max_steps`` nodes over the same horizon.
    """
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"candidate index must lie in (0, 1), got {zeta}")
    grid = spec.grid
    if grid.steps > max_steps:
        grid = TimeGrid(grid.horizon, max_steps)
    cv = conditional_variance_matrix(grid, hurst=spec.hurst)
    i, j = np.triu_indices(grid.steps + 1, k=1)
    ratios = cv[i, j] / ((j - i) * grid.dt) ** (2 * zeta)
    profile = _profile(grid, grid.steps // 2, cv)
    profile.inf_ratio = float(np.min(ratios))
    profile.zeta = zeta
    return profile


def write_path_csv(path, filename):
    times = path.grid.nodes
    header = ",".join(["t"] + [f"w_{i + 1}" for i in range(path.dim)])
    np.savetxt(filename, np.column_stack([times, path.values]), delimiter=",",
               header=header, comments="", fmt="%.17g")


def read_path_csv(filename):
    filename = Path(filename)
    with open(filename) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t":
        raise ValueError(f"{filename}: expected header starting with 't'")
    data = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    times = data[:, 0]
    grid = TimeGrid(float(times[-1]), len(times) - 1)
    return SamplePath(grid, data[:, 1:])
