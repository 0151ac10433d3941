"""Interacting-particle Euler scheme for the mollified law-dependent SDE.

    dx = b_eps(t, F(mu_t) - w_t) dt + a_eps(t, F(mu_t) - w_t) dbeta_t

The coefficients see the particles only through the law, so at each step
one argument z_t = F(mu_hat_t) - w_t is computed and shared by every
particle; the particles differ only through their Brownian increments.
"""

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .averaging import MollifierSpec, mollify
from .driver import SamplePath, TimeGrid, read_path_csv, write_path_csv
from .errors import BlowUpError
from .transport import EmpiricalMeasure, apply_functional, wasserstein1


class StepSizeWarning(UserWarning):
    """Time step is large relative to the mollification scale."""


def _exact(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class HypothesisCheck:
    zeta0: float
    gamma0: float
    gamma1: float
    k: int
    slacks: tuple
    passed: tuple

    LABELS = ("(2 + 3k/2) zeta0 < 1", "(1 + k/2) zeta0 < gamma0", "gamma1/2 > (1 + k/2) zeta0")

    @property
    def ok(self):
        return all(self.passed)

    @property
    def tag(self):
        return "inside-hypothesis" if self.ok else "outside-hypothesis"

    def summary(self):
        return {
            "zeta0": self.zeta0, "gamma0": self.gamma0, "gamma1": self.gamma1, "k": self.k,
            "tag": self.tag,
            "conditions": [
                {"condition": lab, "slack": float(s), "slack_exact": str(s), "pass": p}
                for lab, s, p in zip(self.LABELS, self.slacks, self.passed)
            ],
        }


def hypothesis_gate(zeta0, gamma0, gamma1, k):
    """Evaluate the three index inequalities in exact rational arithmetic.

    Decimal inputs are read as written (0.3 is 3/10), so boundary cases such
    as (2 + 3k/2) zeta0 = 1 are decided exactly. Slacks are the margins
    1 - (2+3k/2) zeta0, gamma0 - (1+k/2) zeta0 and gamma1/2 - (1+k/2) zeta0.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    if min(zeta0, gamma0, gamma1) < 0:
        raise ValueError("indices must be nonnegative")
    z, g0, g1, kk = _exact(zeta0), _exact(gamma0), _exact(gamma1), Fraction(int(k))
    slacks = (
        1 - (2 + 3 * kk / 2) * z,
        g0 - (1 + kk / 2) * z,
        g1 / 2 - (1 + kk / 2) * z,
    )
    return HypothesisCheck(float(zeta0), float(gamma0), float(gamma1), int(k), slacks,
                           tuple(s > 0 for s in slacks))


def particle_rng(seed, index, stream=1):
    """Brownian stream of particle ``index``; stream 2 is the initial cloud."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream, int(index))))


def brownian_increments(grid, n_particles, noise_dim, seed, threads=1, first=0):
    """(M, N, d) increments; column i depends only on (seed, i)."""
    out = np.empty((grid.steps, n_particles, noise_dim))
    scale = math.sqrt(grid.dt)

    def fill(i):
        out[:, i, :] = particle_rng(seed, first + i).standard_normal((grid.steps, noise_dim)) * scale

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(n_particles)))
    else:
        for i in range(n_particles):
            fill(i)
    return out


@dataclass
class ParticleEnsemble:
    grid: TimeGrid
    paths: np.ndarray  # (M+1, N, n)
    increments: np.ndarray  # (M, N, d)
    driver: SamplePath
    fvalues: np.ndarray  # (M+1, k)
    drift_values: np.ndarray  # (M, n)
    diffusion_values: np.ndarray  # (M, n, d)
    config: dict = field(default_factory=dict)

    @property
    def n_particles(self):
        return self.paths.shape[1]

    @property
    def dim(self):
        return self.paths.shape[2]

    @property
    def noise_dim(self):
        return self.increments.shape[2]

    @property
    def z(self):
        """Shared coefficient argument F(mu_t) - w_t at the step nodes, (M, k)."""
        return self.fvalues[:-1] - self.driver.values[:-1]

    def law(self, index):
        return EmpiricalMeasure(self.paths[index])

    def brownian_paths(self):
        """Cumulative Brownian motion per particle, (M+1, N, d)."""
        out = np.zeros((self.grid.steps + 1,) + self.increments.shape[1:])
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def law_flow(ens):
    """Cross-sections mu_hat_t as measure handles over views of the path array."""
    return [ens.law(i) for i in range(ens.grid.steps + 1)]


def _value_dims(drift, diffusion, n_dim):
    n = n_dim or (int(np.prod(drift.shape)) if drift.shape else 1)
    if diffusion.shape == ():
        d = n
    elif len(diffusion.shape) == 1:
        d = 1
    else:
        d = diffusion.shape[1]
    return n, d


def _as_matrix(value, n, d):
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return value * np.eye(n, d)
    return value.reshape(n, d)


def simulate(drift, diffusion, functional, driver, eps, n_particles, seed=0, x0=0.0,
             initial=None, n_dim=None, threads=1, gate=None, name=""):
    """Euler-Maruyama for N particles driven by a frozen regularising path.

    ``drift`` and ``diffusion`` are :class:`~roughmkv.averaging.Coefficient`
    objects on R^k (k = driver.dim); both are mollified at scale ``eps``.
    The initial state is the point ``x0`` unless an ``initial`` cloud of
    shape (N, n) is given. The result is a deterministic function of the
    arguments.
    """
    if not eps > 0:
        raise ValueError(f"mollification scale must be positive, got {eps}")
    if n_particles < 2:
        raise ValueError(f"need at least 2 particles, got {n_particles}")
    grid = driver.grid
    k = driver.dim
    if functional.out_dim != k:
        raise ValueError(f"functional maps into R^{functional.out_dim} but the driver lives in R^{k}")
    if drift.dim != k or diffusion.dim != k:
        raise ValueError("coefficients must be defined on the driver's space R^k")
    n, d = _value_dims(drift, diffusion, n_dim)
    step_warning = grid.dt > eps**2 / 4
    if step_warning:
        warnings.warn(f"dt={grid.dt:.3g} exceeds eps^2/4={eps**2 / 4:.3g}", StepSizeWarning, stacklevel=2)

    spec = MollifierSpec(eps, k)
    b_eps, a_eps = mollify(drift, spec), mollify(diffusion, spec)
    increments = brownian_increments(grid, n_particles, d, seed, threads)

    paths = np.empty((grid.steps + 1, n_particles, n))
    if initial is None:
        paths[0] = np.broadcast_to(np.asarray(x0, dtype=float), (n,))
    else:
        paths[0] = np.asarray(initial, dtype=float).reshape(n_particles, n)
    fvalues = np.empty((grid.steps + 1, k))
    bvals = np.empty((grid.steps, n))
    avals = np.empty((grid.steps, n, d))
    nodes = grid.nodes
    for m in range(grid.steps):
        fvalues[m] = apply_functional(functional, paths[m])
        zm = fvalues[m] - driver.values[m]
        bvals[m] = np.asarray(b_eps(nodes[m], zm), dtype=float).reshape(n)
        avals[m] = _as_matrix(a_eps(nodes[m], zm), n, d)
        paths[m + 1] = paths[m] + bvals[m] * grid.dt + increments[m] @ avals[m].T
        if not np.all(np.isfinite(paths[m + 1])):
            raise BlowUpError(f"particle state became non-finite at step {m + 1}", step=m + 1)
    fvalues[-1] = apply_functional(functional, paths[-1])

    config = {
        "name": name,
        "eps": float(eps),
        "seed": int(seed),
        "n_particles": int(n_particles),
        "steps": grid.steps,
        "horizon": grid.horizon,
        "dt": grid.dt,
        "drift": drift.name,
        "diffusion": diffusion.name,
        "functional": functional.name,
        "step_warning": bool(step_warning),
        "drift_sup_bound": b_eps.sup_bound,
        "drift_lipschitz_bound": b_eps.lipschitz_bound,
        "diffusion_sup_bound": a_eps.sup_bound,
        "diffusion_lipschitz_bound": a_eps.lipschitz_bound,
    }
    if gate is not None:
        config["hypothesis"] = gate.summary()
    return ParticleEnsemble(grid, paths, increments, driver, fvalues, bvals, avals, config)


@dataclass
class SolverSetup:
    """Everything :func:`simulate` needs except the mollification scale."""

    drift: object
    diffusion: object
    functional: object
    driver: SamplePath
    n_particles: int
    seed: int = 0
    x0: float = 0.0
    gate: HypothesisCheck | None = None
    name: str = ""

    def run(self, eps, threads=1):
        return simulate(self.drift, self.diffusion, self.functional, self.driver, eps,
                        self.n_particles, self.seed, self.x0, threads=threads, gate=self.gate,
                        name=self.name)


@dataclass
class SweepResult:
    eps: list
    ensembles: list
    c_values: list
    c_ratios: list
    terminal_w1: list
    non_uniform: bool
    growth_factor: float


def epsilon_sweep(setup, eps_list, p=2, gamma1=1.0, growth_factor=2.0, threads=1):
    """Ensembles for a descending list of eps on common Brownian increments.

    Reports c_{p,eps,gamma1} per eps, its ratio between consecutive entries
    (flagged non-uniform when a ratio leaves [1/growth, growth]) and W1
    between consecutive terminal laws.
    """
    from .diagnostics import moment_holder

    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError(f"eps list must be strictly descending, got {eps_list}")
    if not eps_list:
        return SweepResult([], [], [], [], [], False, growth_factor)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ensembles = list(pool.map(lambda e: setup.run(e), eps_list))
    else:
        ensembles = [setup.run(e) for e in eps_list]
    c_values = [moment_holder(ens, p, gamma1).c_hat for ens in ensembles]
    ratios = [b / a if a > 0 else math.inf for a, b in zip(c_values, c_values[1:])]
    w1 = [wasserstein1(a.law(-1), b.law(-1)) for a, b in zip(ensembles, ensembles[1:])]
    non_uniform = any(not (1 / growth_factor <= r <= growth_factor) for r in ratios)
    return SweepResult(eps_list, ensembles, c_values, ratios, w1, non_uniform, growth_factor)


# -- persistence ----------------------------------------------------------------


def save_ensemble(ens, directory):
    """config.json, paths/increments/coefficient tensors (.npy), driver and F-values CSVs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {"shapes": {"paths": list(ens.paths.shape), "increments": list(ens.increments.shape)},
              "config": ens.config}
    (directory / "config.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    np.save(directory / "paths.npy", ens.paths)
    np.save(directory / "increments.npy", ens.increments)
    np.save(directory / "drift_values.npy", ens.drift_values)
    np.save(directory / "diffusion_values.npy", ens.diffusion_values)
    write_path_csv(ens.driver, directory / "driver.csv")
    k = ens.fvalues.shape[1]
    cols = ["t"] + [f"F_{i + 1}" for i in range(k)]
    np.savetxt(directory / "fvalues.csv", np.column_stack([ens.grid.nodes, ens.fvalues]),
               delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    return sorted(p.name for p in directory.iterdir())


def load_ensemble(directory):
    directory = Path(directory)
    header = json.loads((directory / "config.json").read_text())
    driver = read_path_csv(directory / "driver.csv")
    fv = np.loadtxt(directory / "fvalues.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:]
    return ParticleEnsemble(
        driver.grid,
        np.load(directory / "paths.npy"),
        np.load(directory / "increments.npy"),
        driver,
        fv,
        np.load(directory / "drift_values.npy"),
        np.load(directory / "diffusion_values.npy"),
        header["config"],
    )

