"""Occupation measures, local-time fields and spectral Sobolev norms.

A path on a time grid of step dt occupies, up to node n, the measure
sum_{i<n} dt * delta_{w_i}. Binning those atoms on a uniform box grid gives
the raw occupation density; the local-time field is that density smoothed
by a discrete Gaussian kernel of bandwidth h (h = 0 keeps the histogram).

Sobolev norms use the DFT on the box: ||f||_{H^s}^2 is approximated by
dx^k / P^k * sum_xi (1 + |xi|^2)^s |f_hat(xi)|^2 with xi = 2 pi fftfreq(P, dx).
The box truncation fixes the lowest resolved frequency, so the radius R is
part of what the norm means for negative s.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._fit import loglog_fit
from .driver import TimeGrid
from .errors import CoverageError, EstimationError


@dataclass(frozen=True)
class SpatialGrid:
    radius: float
    points: int
    dim: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if int(self.points) != self.points or self.points < 2:
            raise ValueError(f"points must be an integer >= 2, got {self.points}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")

    @classmethod
    def covering(cls, path, spacing, bandwidth=0.0):
        """Smallest grid of the given spacing whose box holds the path plus 3h and one cell."""
        reach = float(np.max(np.abs(path.values))) + 3.0 * bandwidth + spacing
        points = int(np.ceil(2.0 * reach / spacing))
        points += points % 2
        return cls(points * spacing / 2.0, points, path.dim)

    @property
    def dx(self):
        return 2.0 * self.radius / self.points

    @property
    def cell_volume(self):
        return self.dx**self.dim

    @property
    def shape(self):
        return (self.points,) * self.dim

    @property
    def centers(self):
        return -self.radius + (np.arange(self.points) + 0.5) * self.dx

    def mesh(self):
        """Cell centres as an array of shape (P, ..., P, k)."""
        axes = np.meshgrid(*([self.centers] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    def frequencies(self):
        """|xi|^2 on the DFT grid, shape ``self.shape``."""
        xi = 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.dx)
        axes = np.meshgrid(*([xi] * self.dim), indexing="ij")
        return sum(a**2 for a in axes)

    def bin_index(self, values):
        """Flat cell index of each row of ``values`` (shape (n, k))."""
        cells = np.floor((np.asarray(values) + self.radius) / self.dx).astype(np.int64)
        cells = np.clip(cells, 0, self.points - 1)
        return np.ravel_multi_index(tuple(cells.T), self.shape)


@dataclass
class HolderEstimate:
    gamma_hat: float
    C_hat: float
    r2: float
    pair_count: int
    lam: float
    ceiling: float | None = None
    lags: np.ndarray = field(default=None, repr=False)
    norms: np.ndarray = field(default=None, repr=False)


def _check_coverage(path, grid, margin=0.0):
    if path.dim != grid.dim:
        raise ValueError(f"path dimension {path.dim} does not match grid dimension {grid.dim}")
    reach = np.max(np.abs(path.values), axis=1) + margin
    bad = np.flatnonzero(reach > grid.radius)
    if bad.size:
        i = int(bad[0])
        raise CoverageError(
            f"path leaves the box of radius {grid.radius} at node {i} "
            f"(|w|={np.max(np.abs(path.values[i])):.6g}, margin {margin:.3g})",
            node=i,
        )


def smoothing_multiplier(grid, bandwidth):
    """Fourier multiplier of the discrete Gaussian kernel with standard deviation h.

    The discrete Gaussian is nonnegative, has unit mass and forms a semigroup
    in h, so its multiplier lies in (0, 1] and decreases with h.
    """
    xi = 2.0 * np.pi * np.fft.fftfreq(grid.points, d=grid.dx)
    per_axis = np.exp((bandwidth / grid.dx) ** 2 * (np.cos(xi * grid.dx) - 1.0))
    mult = np.ones(grid.shape)
    for axis in range(grid.dim):
        shape = [1] * grid.dim
        shape[axis] = grid.points
        mult = mult * per_axis.reshape(shape)
    return mult


def smooth(density, grid, bandwidth):
    if bandwidth == 0:
        return density
    out = np.fft.ifftn(np.fft.fftn(density) * smoothing_multiplier(grid, bandwidth)).real
    return np.maximum(out, 0.0)


def occupation_measure(path, t_index, grid):
    """Histogram density of the occupation measure up to node ``t_index``.

    Node i contributes dt at the cell holding w_i for i < t_index, so the
    density integrates to t_index * dt.
    """
    _check_coverage(path, grid)
    if not 0 <= t_index <= path.grid.steps:
        raise ValueError(f"t_index out of range: {t_index}")
    idx = grid.bin_index(path.values[:t_index])
    counts = np.bincount(idx, minlength=grid.points**grid.dim)
    return (counts * (path.grid.dt / grid.cell_volume)).reshape(grid.shape)


class LocalTimeField:
    """Smoothed occupation density L_t for every node of a path's time grid.

    Only the cell index of each path atom is stored; slices and increments
    L_t - L_s are assembled on demand, which keeps fine grids cheap.
    """

    def __init__(self, time_grid, grid, bandwidth, cells):
        self.time_grid = time_grid
        self.grid = grid
        self.bandwidth = float(bandwidth)
        self.cells = np.asarray(cells, dtype=np.int64)
        self._mult = None if bandwidth == 0 else smoothing_multiplier(grid, bandwidth)

    def increment(self, s_index, t_index):
        if not 0 <= s_index <= t_index <= self.time_grid.steps:
            raise ValueError(f"need 0 <= s <= t <= M, got ({s_index}, {t_index})")
        counts = np.bincount(self.cells[s_index:t_index], minlength=self.grid.points**self.grid.dim)
        raw = (counts * (self.time_grid.dt / self.grid.cell_volume)).reshape(self.grid.shape)
        if self._mult is None:
            return raw
        return np.maximum(np.fft.ifftn(np.fft.fftn(raw) * self._mult).real, 0.0)

    def density(self, t_index):
        return self.increment(0, t_index)

    def mass(self, t_index):
        return float(self.density(t_index).sum() * self.grid.cell_volume)

    def tensor(self, time_indices=None):
        """Stack of L_t slices, shape (len(time_indices), P, ..., P)."""
        if time_indices is None:
            time_indices = np.arange(self.time_grid.steps + 1)
        out = np.empty((len(time_indices),) + self.grid.shape)
        for n, t in enumerate(time_indices):
            out[n] = self.density(int(t))
        return out


def local_time(path, grid, bandwidth=None):
    """Local-time field of ``path``; bandwidth defaults to one cell."""
    h = grid.dx if bandwidth is None else float(bandwidth)
    if h < 0:
        raise ValueError(f"bandwidth must be >= 0, got {h}")
    _check_coverage(path, grid, margin=3.0 * h)
    return LocalTimeField(path.grid, grid, h, grid.bin_index(path.values[:-1]))


def bessel_potential(samples, s, grid):
    """(I - Laplacian)^{s/2} applied spectrally to grid samples."""
    mult = (1.0 + grid.frequencies()) ** (s / 2.0)
    return np.fft.ifftn(np.fft.fftn(samples) * mult).real


def sobolev_norm(samples, lam, grid):
    """Discrete H^lam norm of samples on ``grid`` (Parseval-exact L2 for lam=0)."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != grid.shape:
        raise ValueError(f"samples of shape {samples.shape} do not match grid {grid.shape}")
    fhat = np.fft.fftn(samples)
    weight = (1.0 + grid.frequencies()) ** lam
    total = np.sum(weight * np.abs(fhat) ** 2) / samples.size
    return float(np.sqrt(grid.cell_volume * total))


def bessel_sup_norm(samples, s, grid):
    """Grid version of the W^{s,inf} norm: sup |(I - Laplacian)^{s/2} f|."""
    return float(np.max(np.abs(bessel_potential(samples, s, grid))))


def holder_pairs(time_grid, n_lags=40, min_steps=8, max_fraction=0.5):
    """Integer lags log-spaced over [min_steps*dt, max_fraction*T], duplicates dropped."""
    hi = int(time_grid.steps * max_fraction)
    if hi < min_steps:
        return np.array([], dtype=int)
    return np.unique(np.round(np.geomspace(min_steps, hi, n_lags)).astype(int))


def local_time_holder_profile(field, lam, zeta=None, n_lags=40, starts=16, min_pairs=20):
    """Time-Holder exponent of t -> L_t in H^lam from a log-log regression.

    For each lag the norm ||L_t - L_s||_{H^lam} is averaged over ``starts``
    windows spread along [0, T]; C_hat is the largest quotient
    norm / lag^gamma_hat over all windows. With ``zeta`` given, the report
    carries the ceiling 1 - (lam + k/2) zeta for comparison.
    """
    tg = field.time_grid
    lags = holder_pairs(tg, n_lags)
    if lags.size * starts < min_pairs or lags.size < 2:
        raise EstimationError(
            f"only {lags.size} lags x {starts} starts available on a grid of {tg.steps} steps"
        )
    mean_norms = np.empty(lags.size)
    ratios = []
    all_norms = []
    for n, lag in enumerate(lags):
        s_values = np.unique(np.linspace(0, tg.steps - lag, starts).astype(int))
        norms = np.array([sobolev_norm(field.increment(s, s + lag), lam, field.grid) for s in s_values])
        mean_norms[n] = norms.mean()
        all_norms.append(norms)
    lag_times = lags * tg.dt
    fit = loglog_fit(lag_times, mean_norms)
    for lag_t, norms in zip(lag_times, all_norms):
        ratios.append(np.max(norms) / lag_t**fit.slope)
    ceiling = None if zeta is None else 1.0 - (lam + field.grid.dim / 2.0) * zeta
    return HolderEstimate(
        gamma_hat=fit.slope,
        C_hat=float(np.max(ratios)),
        r2=fit.r2,
        pair_count=int(sum(len(x) for x in all_norms)),
        lam=lam,
        ceiling=ceiling,
        lags=lag_times,
        norms=mean_norms,
    )


HOLDER_CSV_COLUMNS = ["H", "lambda", "k", "gamma_hat", "C_hat", "r2", "pair_count", "ceiling"]


def write_holder_csv(rows, filename):
    """One row per (H, lambda, k): rows are (hurst, HolderEstimate, k) triples."""
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HOLDER_CSV_COLUMNS)
        for hurst, est, k in rows:
            ceiling = "" if est.ceiling is None else repr(float(est.ceiling))
            writer.writerow([repr(float(hurst)), repr(float(est.lam)), k, repr(est.gamma_hat),
                             repr(est.C_hat), repr(est.r2), est.pair_count, ceiling])


_MAGIC = "ROUGHMKV-LOCALTIME"


def save_local_time(field, filename, time_indices=None):
    """Dense float64 tensor preceded by a one-line text header."""
    if time_indices is None:
        time_indices = np.arange(field.time_grid.steps + 1)
    time_indices = np.asarray(time_indices, dtype=int)
    data = field.tensor(time_indices)
    g, tg = field.grid, field.time_grid
    header = (
        f"{_MAGIC} dims={g.dim} points={g.points} R={g.radius!r} h={field.bandwidth!r} "
        f"T={tg.horizon!r} M={tg.steps} times={','.join(map(str, time_indices))}\n"
    )
    with open(filename, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_local_time(filename):
    """Return (header dict, time indices, tensor) written by :func:`save_local_time`."""
    raw = Path(filename).read_bytes()
    line, _, body = raw.partition(b"\n")
    parts = line.decode("ascii").split()
    if not parts or parts[0] != _MAGIC:
        raise ValueError(f"{filename}: not a local-time tensor file")
    meta = dict(p.split("=", 1) for p in parts[1:])
    header = {
        "dims": int(meta["dims"]),
        "points": int(meta["points"]),
        "R": float(meta["R"]),
        "h": float(meta["h"]),
        "T": float(meta["T"]),
        "M": int(meta["M"]),
    }
    times = np.array([int(x) for x in meta["times"].split(",")], dtype=int)
    shape = (times.size,) + (header["points"],) * header["dims"]
    tensor = np.frombuffer(body, dtype="<f8").reshape(shape).copy()
    return header, times, tensor


def time_grid_of(header):
    return TimeGrid(header["T"], header["M"])
