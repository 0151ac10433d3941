"""Experiment pipeline: driver -> local time -> eps-sweep -> diagnostics.

Every numerical artifact is written deterministically (CSV with repr
floats, .npy tensors, sorted JSON), so two runs of one config produce
byte-identical files. Wall-clock timings live only in the manifest, which
is not itself hashed.
"""

import csv
import hashlib
import io
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .averaging import mollify
from .config import TOLERANCE_FIELDS, build_coefficients, load_config, parse_config
from .driver import (
    NONDETERMINISM_MAX_STEPS,
    FbmSpec,
    TimeGrid,
    check_local_nondeterminism,
    sample_fbm,
    write_path_csv,
)
from .errors import ConfigError, ReproducibilityError
from .localtime import SpatialGrid, local_time, local_time_holder_profile, save_local_time, write_holder_csv
from .particles import (SolverSetup, StepSizeWarning, epsilon_sweep, law_flow, load_ensemble, save_ensemble,
                        simulate)
from .sewing import coboundary_profile, frozen_germ
from .transport import make_functional

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CHECKS_FAILED, EXIT_ERROR = 0, 2, 3
MANIFEST = "manifest.json"


@dataclass
class Check:
    name: str
    value: float
    band: str
    passed: bool

    def as_dict(self):
        value = self.value if math.isfinite(self.value) else repr(self.value)
        return {"name": self.name, "value": value, "band": self.band, "pass": bool(self.passed)}


@dataclass
class RunResult:
    exit_code: int
    manifest: dict
    out_dir: Path
    checks: list = field(default_factory=list)


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    Path(path).write_text(buf.getvalue())


def _write_json(path, data):
    Path(path).write_text(json.dumps(dg._jsonable(data), indent=2, sort_keys=True) + "\n")


# -- stages ----------------------------------------------------------------------------


def make_driver(cfg):
    grid = TimeGrid(cfg.driver.horizon, cfg.driver.steps)
    spec = FbmSpec(cfg.driver.hurst, cfg.driver.dim, grid, cfg.solver.seed)
    return spec, sample_fbm(spec)


def driver_field(path):
    spread = float(np.max(np.abs(path.values))) + 1.0
    spacing = spread / 256
    return local_time(path, SpatialGrid.covering(path, spacing, spacing), spacing)


def _mollified(cfg, eps):
    drift, diffusion = build_coefficients(cfg)
    return mollify(drift, eps), mollify(diffusion, eps)


def _windows(m):
    return [(0, m), (m // 4, m // 2)]


def _pairs(m):
    return [(m // 4, m // 2), (m // 2, m)]


def evaluate(cfg, ensembles, field):
    """Diagnostic reports as {relative path: bytes} plus the check list."""
    d = cfg.diagnostics
    tag = {"hypothesis": cfg.gate.tag}
    gamma1 = cfg.hypothesis.gamma1
    files, checks = {}, []
    c_values = []

    def put(stem, report):
        csv_bytes, json_bytes = dg.report_bytes(report, tag)
        files[f"{stem}.csv"] = csv_bytes
        files[f"{stem}.json"] = json_bytes

    for i, ens in enumerate(ensembles):
        eps = ens.config["eps"]
        stem = f"diagnostics/eps_{i}"
        label = f"eps={eps:g}"
        m = ens.grid.steps
        b_eps, a_eps = _mollified(cfg, eps)
        if d.moment_holder:
            rep = dg.moment_holder(ens, d.moment_p, gamma1)
            put(f"{stem}/moment_holder", rep)
            c_values.append(rep.c_hat)
            lo = gamma1 - d.exponent_tolerance
            checks.append(Check(f"moment_exponent[{label}]", rep.fitted_gamma1, f">= {lo:g}",
                                rep.fitted_gamma1 >= lo))
        if d.law_flow:
            rep = dg.law_flow_continuity(law_flow(ens), gamma1, dt=ens.grid.dt,
                                         tolerance=d.law_flow_tolerance)
            put(f"{stem}/law_flow", rep)
            lo = cfg.law_flow_target - d.law_flow_tolerance
            checks.append(Check(f"law_flow_exponent[{label}]", rep.slope, f">= {lo:g}",
                                rep.degenerate or rep.slope >= lo))
        if d.ito_isometry:
            rep = dg.ito_isometry(ens, _windows(m), a_eps, field, se_band=d.se_band)
            put(f"{stem}/ito_isometry", rep)
            worst = float(np.max(np.abs(rep.lhs - rep.rhs) / np.where(rep.se > 0, rep.se, np.inf)))
            checks.append(Check(f"ito_isometry[{label}]", worst, f"<= {d.se_band:g} SE", rep.ok))
        if d.martingale:
            rep = dg.martingale_defect(ens, _pairs(m), b_eps, a_eps, field=field, se_band=d.se_band)
            put(f"{stem}/martingale", rep)
            checks.append(Check(f"martingale[{label}]", float(sum(not r.passed for r in rep.rows_)),
                                "0 failing rows", rep.passed()))
        if d.adversarial:
            rep = dg.martingale_defect(ens, _pairs(m), b_eps, a_eps, field=field, compensated=False,
                                       se_band=d.se_band)
            put(f"{stem}/adversarial", rep)
            checks.append(Check(f"adversarial_detected[{label}]",
                                float(sum(not r.passed for r in rep.rows_ if r.process == "M")),
                                ">= 1 failing M row", not rep.passed("M")))
        if d.germ_scan:
            germ = frozen_germ(b_eps, ens.fvalues, field, "A1")
            fit, spans, worst = coboundary_profile(germ, ens.grid, starts=4)
            scan = _Table(["span", "max_coboundary"], [[float(a), float(b)] for a, b in zip(spans, worst)],
                          {"exponent": fit.slope, "r2": fit.r2})
            put(f"{stem}/germ_scan", scan)
            if cfg.gate.ok:
                checks.append(Check(f"coboundary_exponent[{label}]", fit.slope, "> 1", fit.slope > 1))

    if len(c_values) > 1:
        ratios = [b / a for a, b in zip(c_values, c_values[1:])]
        worst = max(max(ratios), 1 / min(ratios))
        checks.append(Check("c_ratio", worst, f"<= {d.c_ratio_max:g}", worst <= d.c_ratio_max))
    return files, checks


@dataclass
class _Table:
    columns: list
    data: list
    info: dict

    def rows(self):
        return self.columns, self.data

    def summary(self):
        return self.info


def run(cfg, out_dir=None, seed=None, threads=1):
    """Execute the pipeline; returns a :class:`RunResult` (never raises for stage failures)."""
    if seed is not None:
        cfg = cfg.with_values(**{"solver.seed": int(seed)})
    out = Path(out_dir or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    timings, checks = {}, []
    manifest = {"scenario": cfg.name, "config_digest": cfg.digest(), "hypothesis": cfg.gate.summary()}
    (out / "config.ini").write_text(cfg.to_ini())
    stage = "setup"
    try:
        stage = "driver"
        t0 = time.perf_counter()
        spec, path = make_driver(cfg)
        write_path_csv(path, out / "driver.csv")
        if cfg.diagnostics.nondeterminism:
            rep = check_local_nondeterminism(spec, min(max(cfg.zeta0, 1e-6), 1 - 1e-6))
            _write_json(out / "nondeterminism.json",
                        {"zeta_hat": rep.zeta_hat, "inf_ratio": rep.inf_ratio, "r2": rep.regression_r2,
                         "hurst": cfg.driver.hurst,
                         "check_steps": min(spec.grid.steps, NONDETERMINISM_MAX_STEPS)})
            tol = cfg.diagnostics.nondeterminism_tolerance
            checks.append(Check("nondeterminism_index", rep.zeta_hat,
                                f"{cfg.driver.hurst:g} +/- {tol:g}",
                                abs(rep.zeta_hat - cfg.driver.hurst) <= tol))
        timings[stage] = time.perf_counter() - t0

        stage = "local_time"
        t0 = time.perf_counter()
        field_ = driver_field(path)
        if cfg.diagnostics.local_time:
            m = path.grid.steps
            save_local_time(field_, out / "local_time.bin", np.linspace(0, m, 17).astype(int))
            est = local_time_holder_profile(field_, 0.0, zeta=cfg.driver.hurst)
            write_holder_csv([(cfg.driver.hurst, est, cfg.driver.dim)], out / "local_time_holder.csv")
        timings[stage] = time.perf_counter() - t0

        stage = "simulation"
        t0 = time.perf_counter()
        drift, diffusion = build_coefficients(cfg)
        setup = SolverSetup(drift, diffusion, make_functional(cfg.solver.functional, cfg.driver.dim),
                            path, cfg.solver.particles, cfg.solver.seed, cfg.solver.x0, cfg.gate, cfg.name)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", StepSizeWarning)
            sweep = epsilon_sweep(setup, cfg.solver.eps, p=cfg.diagnostics.moment_p,
                                  gamma1=cfg.hypothesis.gamma1, growth_factor=cfg.diagnostics.c_ratio_max,
                                  threads=threads)
        for w in caught:
            log.warning("%s", w.message)
        for i, ens in enumerate(sweep.ensembles):
            save_ensemble(ens, out / "ensembles" / f"eps_{i}")
        rows = []
        for i, (eps, c, ens) in enumerate(zip(sweep.eps, sweep.c_values, sweep.ensembles)):
            ratio = sweep.c_ratios[i - 1] if i else math.nan
            w1 = sweep.terminal_w1[i - 1] if i else math.nan
            rows.append([eps, c, ratio, w1, ens.config["step_warning"], cfg.gate.tag])
        _write_csv(out / "eps_sweep.csv", ["eps", "c_hat", "c_ratio", "terminal_w1", "step_warning", "tag"], rows)
        timings[stage] = time.perf_counter() - t0

        stage = "diagnostics"
        t0 = time.perf_counter()
        files, diag_checks = evaluate(cfg, sweep.ensembles, field_)
        for rel, data in files.items():
            target = out / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        checks.extend(diag_checks)
        timings[stage] = time.perf_counter() - t0
        _write_json(out / "checks.json", {"checks": [c.as_dict() for c in checks],
                                          "hypothesis": cfg.gate.tag})
        exit_code = EXIT_OK if all(c.passed for c in checks) else EXIT_CHECKS_FAILED
        manifest["status"] = "pass" if exit_code == EXIT_OK else "fail"
    except Exception as exc:  # stage failure: keep what was written, say where it stopped
        log.error("stage %s failed: %s", stage, exc)
        exit_code = EXIT_ERROR
        manifest["status"] = "error"
        manifest["failed_stage"] = stage
        manifest["error"] = f"{type(exc).__name__}: {exc}"
    manifest["exit_code"] = exit_code
    manifest["checks"] = [c.as_dict() for c in checks]
    manifest["timings"] = timings
    manifest["files"] = {
        str(p.relative_to(out)): sha256_file(p)
        for p in sorted(out.rglob("*")) if p.is_file() and p.name != MANIFEST
    }
    _write_json(out / MANIFEST, manifest)
    return RunResult(exit_code, manifest, out, checks)


# -- replay ------------------------------------------------------------------------------


@dataclass
class ReplayResult:
    exit_code: int
    verified: list
    reproduced: list
    checks: list


def replay(manifest_path, tolerances=None):
    """Verify every listed checksum, recompute diagnostics from the stored
    ensembles (they must reproduce the stored reports byte for byte) and
    re-evaluate the checks, optionally with overridden tolerances."""
    manifest_path = Path(manifest_path)
    out = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    verified = []
    for rel, digest in sorted(manifest["files"].items()):
        p = out / rel
        if not p.is_file():
            raise ReproducibilityError(f"artifact missing: {rel}", path=rel)
        if sha256_file(p) != digest:
            raise ReproducibilityError(f"checksum mismatch: {rel}", path=rel)
        verified.append(rel)
    cfg = parse_config((out / "config.ini").read_text())
    n_eps = len(list((out / "ensembles").glob("eps_*")))
    ensembles = [load_ensemble(out / "ensembles" / f"eps_{i}") for i in range(n_eps)]
    field_ = driver_field(ensembles[0].driver) if ensembles else None
    files, checks = evaluate(cfg, ensembles, field_)
    reproduced = []
    for rel, data in files.items():
        if (out / rel).read_bytes() != data:
            raise ReproducibilityError(f"recomputed report differs from stored artifact: {rel}", path=rel)
        reproduced.append(rel)
    if tolerances:
        unknown = set(tolerances) - set(TOLERANCE_FIELDS)
        if unknown:
            raise ConfigError(f"not a tolerance field: {sorted(unknown)[0]}", field=sorted(unknown)[0])
        cfg = replace(cfg, diagnostics=replace(cfg.diagnostics, **tolerances))
        _, checks = evaluate(cfg, ensembles, field_)
    stored = {c["name"]: c for c in manifest.get("checks", [])}
    keep = [c for c in stored.values() if c["name"] == "nondeterminism_index"]
    for c in keep:
        if tolerances and "nondeterminism_tolerance" in tolerances:
            tol = cfg.diagnostics.nondeterminism_tolerance
            c = dict(c, band=f"{cfg.driver.hurst:g} +/- {tol:g}",
                     **{"pass": abs(c["value"] - cfg.driver.hurst) <= tol})
        checks.insert(0, Check(c["name"], c["value"], c["band"], c["pass"]))
    code = EXIT_OK if all(c.passed for c in checks) else EXIT_CHECKS_FAILED
    return ReplayResult(code, verified, reproduced, checks)


# -- sweep -----------------------------------------------------------------------------

SWEEP_AXES = {
    "H": "driver.hurst",
    "eps": "solver.eps",
    "N": "solver.particles",
    "dt": "driver.steps",
    "gamma": "coefficients.gamma",
}

SWEEP_COLUMNS = ["axis", "value", "tag", "slack_1", "slack_2", "slack_3", "hurst", "eps", "N", "dt",
                 "gamma", "c_hat", "moment_exponent", "law_flow_exponent", "terminal_mean", "terminal_std"]


def sweep(cfg, axis, values, out_csv, threads=1):
    """One row of headline statistics per axis value (smallest eps of the schedule)."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}", field="axis")
    rows = []
    for v in values:
        if axis == "H":
            c = cfg.with_values(**{"driver.hurst": float(v), "hypothesis.zeta0": None})
        elif axis == "eps":
            c = cfg.with_values(**{"solver.eps": (float(v),)})
        elif axis == "N":
            c = cfg.with_values(**{"solver.particles": int(v)})
        elif axis == "dt":
            c = cfg.with_values(**{"driver.steps": int(round(cfg.driver.horizon / float(v)))})
        else:
            c = cfg.with_values(**{"coefficients.gamma": float(v)})
        _, path = make_driver(c)
        drift, diffusion = build_coefficients(c)
        eps = c.solver.eps[-1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StepSizeWarning)
            ens = simulate(drift, diffusion, make_functional(c.solver.functional, c.driver.dim), path,
                           eps, c.solver.particles, c.solver.seed, c.solver.x0, threads=threads,
                           gate=c.gate, name=c.name)
        mh = dg.moment_holder(ens, c.diagnostics.moment_p, c.hypothesis.gamma1)
        lf = dg.law_flow_continuity(law_flow(ens), c.hypothesis.gamma1, dt=ens.grid.dt)
        gate = c.gate
        term = ens.paths[-1][:, 0]
        rows.append([axis, float(v), gate.tag, *[float(s) for s in gate.slacks], c.driver.hurst, eps,
                     c.solver.particles, ens.grid.dt, c.coefficients.gamma, mh.c_hat, mh.fitted_gamma1,
                     lf.slope, float(term.mean()), float(term.std())])
    _write_csv(out_csv, SWEEP_COLUMNS, rows)
    return rows


def run_path(config_path, **kwargs):
    return run(load_config(config_path), **kwargs)
