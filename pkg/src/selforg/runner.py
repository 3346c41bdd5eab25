"""Config-driven runs producing CSV datasets plus a JSON metadata sidecar.

The on-disk contract: every task writes its tables as CSV (17 significant
digits, LF line endings, deterministic row order) and a metadata.json carrying
the fully resolved config echo, code version, truncation diagnostics, and the
column-label maps needed to interpret the tables without importing this
package.
"""

from __future__ import annotations

import csv
import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from math import ceil, sqrt
from pathlib import Path

import numpy as np

from ._version import __version__
from .evolve import (
    ConvergenceError,
    integrate,
    spectrum,
    steady_state,
    two_time_correlation,
)
from .liouville import SystemParams, build_hamiltonian, shifted_detuning
from .modes import (
    InitialKind,
    Statistics,
    TopShellPolicy,
    enumerate_fock_basis,
    enumerate_modes,
    initial_signatures,
    initial_state,
    restrict_basis,
)
from .observables import (
    CutoffError,
    husimi_q,
    locate_q_maxima,
    momentum_populations,
    order_parameter,
    scalar_observables,
)
from .operators import (
    JointSpace,
    Sector,
    dump_operator,
    embed_joint,
    expect,
    momentum_number_operators,
)

TRUNCATION_WARN = 1e-4
TRUNCATION_FAIL = 1e-2


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class Task(Enum):
    EVOLVE = "evolve"
    STEADY = "steady"
    SPECTRUM = "spectrum"
    QFUNC = "qfunc"
    PHASE_DIAGRAM = "phase_diagram"


SWEEPABLE = ("eta", "delta_c", "u0", "kappa")


@dataclass
class QGridSpec:
    resolution: float = 0.05
    extent: float | None = None


@dataclass
class NumericsSpec:
    tol: float = 1e-8
    steady_tol: float = 1e-6
    t_end: float | None = None
    max_time: float | None = None
    t_max_corr: float | None = None
    dt_corr: float = 0.02
    window: str = "none"
    record_points: int = 21
    split_blocks: bool = True
    method: str = "long_time"
    q_grid: QGridSpec = field(default_factory=QGridSpec)


@dataclass
class InitialSpec:
    kind: InitialKind
    top_shell_policy: TopShellPolicy = TopShellPolicy.SYMMETRIC_MIXTURE


@dataclass
class SweepAxis:
    name: str
    values: tuple[float, ...]


@dataclass
class SweepSpec:
    axis1: SweepAxis
    axis2: SweepAxis | None = None


@dataclass
class RunConfig:
    params: SystemParams
    task: Task
    initial: InitialSpec
    numerics: NumericsSpec
    sweep: SweepSpec | None = None
    output_dir: str | None = None


# ---------------------------------------------------------------------------
# Parsing.  Strict: unknown keys anywhere are rejected with their path.


def _check_keys(obj: dict, allowed, path: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) under '{path}': {', '.join(unknown)}")


def _need(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"missing required key '{path}.{key}'")
    return obj[key]


def _as_int(val, path: str, minimum: int | None = None) -> int:
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"'{path}' must be an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ConfigError(f"'{path}' must be >= {minimum}, got {val}")
    return val


def _as_float(val, path: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"'{path}' must be a number, got {val!r}")
    return float(val)


def _as_str(val, path: str, choices=None) -> str:
    if not isinstance(val, str):
        raise ConfigError(f"'{path}' must be a string, got {val!r}")
    if choices is not None and val not in choices:
        raise ConfigError(
            f"'{path}' must be one of {sorted(choices)}, got {val!r}"
        )
    return val


def _as_bool(val, path: str) -> bool:
    if not isinstance(val, bool):
        raise ConfigError(f"'{path}' must be a boolean, got {val!r}")
    return val


def _parse_axis(obj, path: str) -> SweepAxis:
    if not isinstance(obj, dict):
        raise ConfigError(f"'{path}' must be an object")
    _check_keys(obj, ("name", "values"), path)
    name = _as_str(_need(obj, "name", path), f"{path}.name", choices=SWEEPABLE)
    raw_values = _need(obj, "values", path)
    if not isinstance(raw_values, list) or not raw_values:
        raise ConfigError(f"'{path}.values' must be a non-empty list")
    values = tuple(
        _as_float(v, f"{path}.values[{i}]") for i, v in enumerate(raw_values)
    )
    return SweepAxis(name=name, values=values)


def default_photon_cutoff(n_particles: int, max_eta: float, kappa: float) -> int:
    """Photon cutoff heuristic from the pump-to-loss scale N*eta/kappa."""
    x = n_particles * abs(max_eta) / kappa
    x = min(max(x, 4.0), 60.0)
    return int(ceil(x + 3.0 * sqrt(x)))


def parse_config(raw: dict) -> RunConfig:
    """Validate and resolve a raw config mapping into a RunConfig.

    All defaults are filled in here, so the result echoes back to a complete,
    reproducible description of the run.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    _check_keys(
        raw, ("params", "task", "initial", "numerics", "sweep", "output_dir"),
        "config",
    )
    task = Task(_as_str(_need(raw, "task", "config"), "task",
                        choices=[t.value for t in Task]))

    sweep = None
    if "sweep" in raw:
        if task is not Task.PHASE_DIAGRAM:
            raise ConfigError("'sweep' is only valid for the phase_diagram task")
        sobj = raw["sweep"]
        if not isinstance(sobj, dict):
            raise ConfigError("'sweep' must be an object")
        _check_keys(sobj, ("axis1", "axis2"), "sweep")
        axis1 = _parse_axis(_need(sobj, "axis1", "sweep"), "sweep.axis1")
        axis2 = _parse_axis(sobj["axis2"], "sweep.axis2") if "axis2" in sobj else None
        if axis2 is not None and axis2.name == axis1.name:
            raise ConfigError("sweep axes must differ")
        sweep = SweepSpec(axis1=axis1, axis2=axis2)
    elif task is Task.PHASE_DIAGRAM:
        raise ConfigError("the phase_diagram task requires a 'sweep' section")

    pobj = _need(raw, "params", "config")
    if not isinstance(pobj, dict):
        raise ConfigError("'params' must be an object")
    _check_keys(
        pobj,
        ("N", "statistics", "n_c", "n_ph", "M", "eta", "delta_c", "u0", "kappa"),
        "params",
    )
    n_particles = _as_int(_need(pobj, "N", "params"), "params.N", minimum=1)
    statistics = Statistics(
        _as_str(_need(pobj, "statistics", "params"), "params.statistics",
                choices=[s.value for s in Statistics])
    )
    order = _as_int(_need(pobj, "M", "params"), "params.M", minimum=1)
    eta = _as_float(_need(pobj, "eta", "params"), "params.eta")
    delta_c = _as_float(_need(pobj, "delta_c", "params"), "params.delta_c")
    u0 = _as_float(_need(pobj, "u0", "params"), "params.u0")
    kappa = _as_float(_need(pobj, "kappa", "params"), "params.kappa")
    if kappa <= 0:
        raise ConfigError(f"'params.kappa' must be > 0, got {kappa}")
    n_c = (
        _as_int(pobj["n_c"], "params.n_c", minimum=1)
        if "n_c" in pobj else 3 * order
    )
    if "n_ph" in pobj:
        n_ph = _as_int(pobj["n_ph"], "params.n_ph", minimum=1)
    else:
        etas = [eta]
        if sweep is not None:
            for axis in (sweep.axis1, sweep.axis2):
                if axis is not None and axis.name == "eta":
                    etas.extend(axis.values)
        n_ph = default_photon_cutoff(n_particles, max(abs(e) for e in etas), kappa)
    try:
        params = SystemParams(
            N=n_particles, statistics=statistics, n_c=n_c, n_ph=n_ph, M=order,
            eta=eta, delta_c=delta_c, u0=u0, kappa=kappa,
        )
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from exc

    iobj = raw.get("initial", {})
    if not isinstance(iobj, dict):
        raise ConfigError("'initial' must be an object")
    _check_keys(iobj, ("kind", "top_shell_policy"), "initial")
    default_kind = (
        InitialKind.BEC if statistics is Statistics.BOSON
        else InitialKind.FERMI_SEA
    )
    kind = (
        InitialKind(_as_str(iobj["kind"], "initial.kind",
                            choices=[k.value for k in InitialKind]))
        if "kind" in iobj else default_kind
    )
    if kind is InitialKind.BEC and statistics is not Statistics.BOSON:
        raise ConfigError("initial.kind 'bec' requires boson statistics")
    policy = (
        TopShellPolicy(_as_str(iobj["top_shell_policy"],
                               "initial.top_shell_policy",
                               choices=[p.value for p in TopShellPolicy]))
        if "top_shell_policy" in iobj else TopShellPolicy.SYMMETRIC_MIXTURE
    )
    initial = InitialSpec(kind=kind, top_shell_policy=policy)

    nobj = raw.get("numerics", {})
    if not isinstance(nobj, dict):
        raise ConfigError("'numerics' must be an object")
    _check_keys(
        nobj,
        ("tol", "steady_tol", "t_end", "max_time", "t_max_corr", "dt_corr",
         "window", "record_points", "split_blocks", "method", "q_grid"),
        "numerics",
    )
    qobj = nobj.get("q_grid", {})
    if not isinstance(qobj, dict):
        raise ConfigError("'numerics.q_grid' must be an object")
    _check_keys(qobj, ("resolution", "extent"), "numerics.q_grid")
    q_grid = QGridSpec(
        resolution=_as_float(qobj.get("resolution", 0.05),
                             "numerics.q_grid.resolution"),
        extent=(_as_float(qobj["extent"], "numerics.q_grid.extent")
                if "extent" in qobj else None),
    )
    if q_grid.resolution <= 0:
        raise ConfigError("'numerics.q_grid.resolution' must be > 0")
    numerics = NumericsSpec(
        tol=_as_float(nobj.get("tol", 1e-8), "numerics.tol"),
        steady_tol=_as_float(nobj.get("steady_tol", 1e-6), "numerics.steady_tol"),
        t_end=(_as_float(nobj["t_end"], "numerics.t_end")
               if "t_end" in nobj else None),
        max_time=(_as_float(nobj["max_time"], "numerics.max_time")
                  if "max_time" in nobj else 1000.0 / kappa),
        t_max_corr=(_as_float(nobj["t_max_corr"], "numerics.t_max_corr")
                    if "t_max_corr" in nobj else 40.0 / kappa),
        dt_corr=_as_float(nobj.get("dt_corr", 0.02), "numerics.dt_corr"),
        window=_as_str(nobj.get("window", "none"), "numerics.window",
                       choices=("none", "hann")),
        record_points=_as_int(nobj.get("record_points", 21),
                              "numerics.record_points", minimum=2),
        split_blocks=_as_bool(nobj.get("split_blocks", True),
                              "numerics.split_blocks"),
        method=_as_str(nobj.get("method", "long_time"), "numerics.method",
                       choices=("long_time", "nullspace")),
        q_grid=q_grid,
    )
    for name in ("tol", "steady_tol", "dt_corr"):
        if getattr(numerics, name) <= 0:
            raise ConfigError(f"'numerics.{name}' must be > 0")
    if task is Task.EVOLVE and numerics.t_end is None:
        raise ConfigError("the evolve task requires 'numerics.t_end'")

    output_dir = None
    if "output_dir" in raw:
        output_dir = _as_str(raw["output_dir"], "output_dir")

    return RunConfig(
        params=params, task=task, initial=initial, numerics=numerics,
        sweep=sweep, output_dir=output_dir,
    )


def echo_config(cfg: RunConfig) -> dict:
    """Fully resolved config as a JSON-ready mapping; parses back equal."""
    p = cfg.params
    out: dict = {
        "task": cfg.task.value,
        "params": {
            "N": p.N, "statistics": p.statistics.value, "n_c": p.n_c,
            "n_ph": p.n_ph, "M": p.M, "eta": p.eta, "delta_c": p.delta_c,
            "u0": p.u0, "kappa": p.kappa,
        },
        "initial": {
            "kind": cfg.initial.kind.value,
            "top_shell_policy": cfg.initial.top_shell_policy.value,
        },
        "numerics": {
            "tol": cfg.numerics.tol,
            "steady_tol": cfg.numerics.steady_tol,
            "dt_corr": cfg.numerics.dt_corr,
            "window": cfg.numerics.window,
            "record_points": cfg.numerics.record_points,
            "split_blocks": cfg.numerics.split_blocks,
            "method": cfg.numerics.method,
            "q_grid": {"resolution": cfg.numerics.q_grid.resolution},
        },
    }
    num = out["numerics"]
    if cfg.numerics.t_end is not None:
        num["t_end"] = cfg.numerics.t_end
    if cfg.numerics.max_time is not None:
        num["max_time"] = cfg.numerics.max_time
    if cfg.numerics.t_max_corr is not None:
        num["t_max_corr"] = cfg.numerics.t_max_corr
    if cfg.numerics.q_grid.extent is not None:
        num["q_grid"]["extent"] = cfg.numerics.q_grid.extent
    if cfg.sweep is not None:
        sweep: dict = {
            "axis1": {"name": cfg.sweep.axis1.name,
                      "values": list(cfg.sweep.axis1.values)},
        }
        if cfg.sweep.axis2 is not None:
            sweep["axis2"] = {"name": cfg.sweep.axis2.name,
                              "values": list(cfg.sweep.axis2.values)}
        out["sweep"] = sweep
    if cfg.output_dir is not None:
        out["output_dir"] = cfg.output_dir
    return out


def config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(echo_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# CSV writing: 17 significant digits, LF endings, deterministic order.


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_metadata(path, meta: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# System assembly shared by the tasks.


def build_system(params: SystemParams, initial: InitialSpec):
    """Joint space restricted to the initially populated conserved blocks,
    plus the (particle x field-vacuum) starting state."""
    mode_set = enumerate_modes(params.n_c, params.statistics, params.M)
    full = enumerate_fock_basis(mode_set, params.N)
    sigs = initial_signatures(
        mode_set, params.N, initial.kind, initial.top_shell_policy
    )
    basis = restrict_basis(full, sigs) if sigs != full.signature_set() else full
    space = JointSpace(basis, params.n_ph)
    rho_p = initial_state(basis, initial.kind, initial.top_shell_policy)
    rho_ph = np.zeros((space.photon_dim,) * 2, dtype=complex)
    rho_ph[0, 0] = 1.0
    return space, np.kron(rho_p, rho_ph)


@dataclass
class TruncationReport:
    status: str
    max_top_photon: float
    max_top_mode_frac: float
    max_trace_dev: float

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "max_top_photon": self.max_top_photon,
            "max_top_mode_frac": self.max_top_mode_frac,
            "max_trace_dev": self.max_trace_dev,
            "warn_threshold": TRUNCATION_WARN,
            "fail_threshold": TRUNCATION_FAIL,
        }


def validate_truncation(top_photon: float, top_mode: float, trace_dev: float,
                        n_particles: int) -> TruncationReport:
    """Grade edge-of-basis populations: OK / WARN / FAIL."""
    frac = top_mode / n_particles
    worst = max(top_photon, frac)
    if worst > TRUNCATION_FAIL:
        status = "FAIL"
    elif worst > TRUNCATION_WARN:
        status = "WARN"
    else:
        status = "OK"
    return TruncationReport(
        status=status, max_top_photon=float(top_photon),
        max_top_mode_frac=float(frac), max_trace_dev=float(trace_dev),
    )


def _momentum_columns(basis) -> list[str]:
    return [f"pop_p{m:+d}" for m in sorted(momentum_number_operators(basis))]


def _momentum_meta(params: SystemParams) -> dict:
    return {
        f"pop_p{m:+d}": {"m": m, "p_over_k": m / params.M}
        for m in range(-params.n_c, params.n_c + 1)
    }


def _steady_row(liou, rho, numerics: NumericsSpec, residual: float,
                converged: bool, error: str, strict_q: bool):
    """Observable row shared by the steady task and sweep points."""
    space = liou.space
    sc = scalar_observables(rho, liou)
    opr = order_parameter(
        rho, space, resolution=numerics.q_grid.resolution,
        extent=numerics.q_grid.extent, strict=strict_q,
    )
    _, pops = momentum_populations(rho, space)
    top_ph = expect(liou.ops.top_photon_projector, rho).real
    top_mode = expect(liou.ops.top_mode_number, rho).real
    row = {
        "theta": opr.theta,
        "above_threshold": opr.above_threshold,
        "n_maxima": opr.n_maxima,
        "photon_number": sc.photon_number,
        "re_mean_field": sc.mean_field.real,
        "im_mean_field": sc.mean_field.imag,
        "order_coupling": sc.order_coupling,
        "kinetic_energy": sc.kinetic_energy,
        "residual": residual,
        "converged": converged,
        "error": error,
        "pops": pops,
        "top_photon": top_ph,
        "top_mode": top_mode,
        "trace_dev": abs(np.trace(rho) - 1.0),
    }
    return row


_NAN_ROW_KEYS = (
    "theta", "photon_number", "re_mean_field", "im_mean_field",
    "order_coupling", "kinetic_energy", "residual",
)


def _failed_row(basis_size_m: int, error: str):
    row = {k: float("nan") for k in _NAN_ROW_KEYS}
    row.update({
        "above_threshold": False, "n_maxima": 0, "converged": False,
        "error": error, "pops": np.full(basis_size_m, np.nan),
        "top_photon": 0.0, "top_mode": 0.0, "trace_dev": 0.0,
    })
    return row


# ---------------------------------------------------------------------------
# Tasks.


def _run_evolve(cfg: RunConfig, out: Path, meta: dict) -> TruncationReport:
    params, numerics = cfg.params, cfg.numerics
    space, rho0 = build_system(params, cfg.initial)
    liou = build_hamiltonian(params, space)
    mom_ops = momentum_number_operators(space.particle_basis)
    record = {
        "photon_number": liou.ops.photon_number,
        "mean_field": liou.ops.annihilator,
        "order_coupling": liou.ops.pump_coupling,
        "kinetic_energy": liou.ops.kinetic,
    }
    for m in sorted(mom_ops):
        record[f"pop_p{m:+d}"] = embed_joint(mom_ops[m], Sector.PARTICLE, space)
    t_eval = np.linspace(0.0, numerics.t_end, numerics.record_points)
    traj = integrate(
        liou, rho0, numerics.t_end, tol=numerics.tol, t_eval=t_eval,
        record=record,
    )
    mom_cols = _momentum_columns(space.particle_basis)
    header = (
        ["time", "photon_number", "re_mean_field", "im_mean_field",
         "order_coupling", "kinetic_energy"]
        + mom_cols
        + ["trace_dev", "herm_dev", "top_photon_pop", "top_mode_pop"]
    )
    rows = []
    for i, t in enumerate(traj.times):
        row = [
            t,
            traj.values["photon_number"][i].real,
            traj.values["mean_field"][i].real,
            traj.values["mean_field"][i].imag,
            traj.values["order_coupling"][i].real,
            traj.values["kinetic_energy"][i].real,
        ]
        row.extend(traj.values[c][i].real for c in mom_cols)
        row.extend(
            traj.diagnostics[d][i]
            for d in ("trace_dev", "herm_dev", "top_photon_pop", "top_mode_pop")
        )
        rows.append(row)
    write_csv(out / "trajectory.csv", header, rows)
    meta["columns"] = {"trajectory.csv": header}
    meta["outputs"] = ["trajectory.csv"]
    return validate_truncation(
        float(traj.diagnostics["top_photon_pop"].max()),
        float(traj.diagnostics["top_mode_pop"].max()),
        float(traj.diagnostics["trace_dev"].max()),
        params.N,
    )


def _steady_header(params, basis) -> list[str]:
    return (
        ["eta", "delta_c", "u0", "kappa", "shifted_detuning", "theta",
         "above_threshold", "n_maxima", "photon_number", "re_mean_field",
         "im_mean_field", "order_coupling", "kinetic_energy", "residual",
         "converged"]
        + _momentum_columns(basis)
        + ["error"]
    )


def _steady_row_list(params, row) -> list:
    return (
        [params.eta, params.delta_c, params.u0, params.kappa,
         shifted_detuning(params), row["theta"], row["above_threshold"],
         row["n_maxima"], row["photon_number"], row["re_mean_field"],
         row["im_mean_field"], row["order_coupling"], row["kinetic_energy"],
         row["residual"], row["converged"]]
        + list(row["pops"])
        + [row["error"]]
    )


def _solve_steady(cfg: RunConfig, space, rho0):
    liou = build_hamiltonian(cfg.params, space)
    result = steady_state(
        liou, rho0, method=cfg.numerics.method, tol=cfg.numerics.steady_tol,
        max_time=cfg.numerics.max_time, split_blocks=cfg.numerics.split_blocks,
    )
    return liou, result


def _run_steady(cfg: RunConfig, out: Path, meta: dict) -> TruncationReport:
    space, rho0 = build_system(cfg.params, cfg.initial)
    liou, result = _solve_steady(cfg, space, rho0)
    row = _steady_row(liou, result.rho, cfg.numerics, result.residual, True,
                      "", strict_q=True)
    header = _steady_header(cfg.params, space.particle_basis)
    write_csv(out / "steady.csv", header, [_steady_row_list(cfg.params, row)])
    meta["columns"] = {"steady.csv": header}
    meta["outputs"] = ["steady.csv"]
    meta["steady_info"] = {
        "method": result.method,
        "t_final": result.info.get("t_final"),
        "n_blocks": len(result.info.get("blocks", [])),
    }
    return validate_truncation(
        row["top_photon"], row["top_mode"], row["trace_dev"], cfg.params.N
    )


def _run_spectrum(cfg: RunConfig, out: Path, meta: dict) -> TruncationReport:
    numerics = cfg.numerics
    space, rho0 = build_system(cfg.params, cfg.initial)
    liou, result = _solve_steady(cfg, space, rho0)
    corr = two_time_correlation(
        liou, result.rho, t_max=numerics.t_max_corr, dt=numerics.dt_corr,
        tol=numerics.tol, residual_tol=max(10.0 * numerics.steady_tol, 1e-5),
    )
    spec = spectrum(corr, window=numerics.window)
    write_csv(
        out / "correlation.csv", ["time", "re_g", "im_g"],
        [[t, g.real, g.imag] for t, g in zip(corr.times, corr.values)],
    )
    write_csv(
        out / "spectrum.csv", ["omega", "value"],
        [[w, v] for w, v in zip(spec.omegas, spec.values)],
    )
    meta["columns"] = {
        "correlation.csv": ["time", "re_g", "im_g"],
        "spectrum.csv": ["omega", "value"],
    }
    meta["outputs"] = ["correlation.csv", "spectrum.csv"]
    meta["spectrum_info"] = {
        "coherent_weight": spec.coherent_weight,
        "g0": corr.g0.real,
        "window": spec.window,
        "residual_imag": spec.residual_imag,
    }
    top_ph = expect(liou.ops.top_photon_projector, result.rho).real
    top_mode = expect(liou.ops.top_mode_number, result.rho).real
    return validate_truncation(
        top_ph, top_mode, abs(np.trace(result.rho) - 1.0), cfg.params.N
    )


def _run_qfunc(cfg: RunConfig, out: Path, meta: dict) -> TruncationReport:
    from .observables import reduce_field

    numerics = cfg.numerics
    space, rho0 = build_system(cfg.params, cfg.initial)
    liou, result = _solve_steady(cfg, space, rho0)
    grid = husimi_q(
        reduce_field(result.rho, space),
        resolution=numerics.q_grid.resolution,
        extent=numerics.q_grid.extent,
        strict=True,
    )
    maxima = locate_q_maxima(grid)
    rows = []
    for i, im in enumerate(grid.im_alphas):
        for j, re in enumerate(grid.re_alphas):
            rows.append([re, im, grid.values[i, j]])
    write_csv(out / "qgrid.csv", ["re_alpha", "im_alpha", "q"], rows)
    meta["columns"] = {"qgrid.csv": ["re_alpha", "im_alpha", "q"]}
    meta["outputs"] = ["qgrid.csv"]
    meta["qfunc_info"] = {
        "maxima": [
            {"re": mx.alpha.real, "im": mx.alpha.imag, "value": mx.value}
            for mx in maxima
        ],
        "resolution": grid.resolution,
        "extent": float(grid.re_alphas[-1]),
        "integral": grid.integral,
        "norm_deficit": grid.norm_deficit,
    }
    top_ph = expect(liou.ops.top_photon_projector, result.rho).real
    top_mode = expect(liou.ops.top_mode_number, result.rho).real
    return validate_truncation(
        top_ph, top_mode, abs(np.trace(result.rho) - 1.0), cfg.params.N
    )


def _run_phase_diagram(cfg: RunConfig, out: Path, meta: dict,
                       threads: int) -> TruncationReport:
    sweep = cfg.sweep
    axis1 = sweep.axis1
    axis2 = sweep.axis2
    v2_list = list(axis2.values) if axis2 is not None else [None]
    space, rho0 = build_system(cfg.params, cfg.initial)
    basis = space.particle_basis
    mom_cols = _momentum_columns(basis)
    axis_cols = [axis1.name] + ([axis2.name] if axis2 is not None else [])
    header = (
        axis_cols
        + ["theta", "above_threshold", "n_maxima", "photon_number",
           "re_mean_field", "im_mean_field", "order_coupling",
           "kinetic_energy", "residual", "converged"]
        + mom_cols
        + ["error"]
    )
    csv_path = out / "phase_diagram.csv"
    lock = threading.Lock()
    results: dict[tuple[int, int], list] = {}
    health: dict[tuple[int, int], tuple[float, float, float]] = {}
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        fh.flush()

        def flush_row(key, row_list):
            with lock:
                results[key] = row_list
                writer.writerow([_fmt(v) for v in row_list])
                fh.flush()

        def run_row(i2: int):
            v2 = v2_list[i2]
            rho_prev = rho0
            for i1, v1 in enumerate(axis1.values):
                overrides = {axis1.name: float(v1)}
                if axis2 is not None:
                    overrides[axis2.name] = float(v2)
                point_params = replace(cfg.params, **overrides)
                prefix = [v1] + ([v2] if axis2 is not None else [])
                try:
                    liou = build_hamiltonian(point_params, space)
                    try:
                        result = steady_state(
                            liou, rho_prev, method=cfg.numerics.method,
                            tol=cfg.numerics.steady_tol,
                            max_time=cfg.numerics.max_time,
                            split_blocks=cfg.numerics.split_blocks,
                        )
                        rho_point, resid, converged, err = (
                            result.rho, result.residual, True, ""
                        )
                    except ConvergenceError as exc:
                        partial = exc.partial
                        rho_point = partial.rho
                        resid = partial.residual
                        converged, err = False, "convergence"
                    rho_prev = rho_point
                    row = _steady_row(liou, rho_point, cfg.numerics, resid,
                                      converged, err, strict_q=False)
                except Exception as exc:  # isolate the point, keep sweeping
                    row = _failed_row(len(mom_cols),
                                      f"{type(exc).__name__}: {exc}")
                    rho_prev = rho0
                row_list = (
                    prefix
                    + [row["theta"], row["above_threshold"], row["n_maxima"],
                       row["photon_number"], row["re_mean_field"],
                       row["im_mean_field"], row["order_coupling"],
                       row["kinetic_energy"], row["residual"], row["converged"]]
                    + list(row["pops"])
                    + [row["error"]]
                )
                health[(i2, i1)] = (
                    row["top_photon"], row["top_mode"], row["trace_dev"]
                )
                flush_row((i2, i1), row_list)

        if threads > 1 and len(v2_list) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run_row, range(len(v2_list))))
        else:
            for i2 in range(len(v2_list)):
                run_row(i2)

    # rewrite in grid order (axis2 outer, axis1 inner) so output is
    # deterministic regardless of completion order
    ordered = [
        results[(i2, i1)]
        for i2 in range(len(v2_list))
        for i1 in range(len(axis1.values))
    ]
    write_csv(csv_path, header, ordered)
    meta["columns"] = {"phase_diagram.csv": header}
    meta["outputs"] = ["phase_diagram.csv"]
    n_failed = sum(1 for r in ordered if r[-1])
    meta["sweep_info"] = {
        "points": len(ordered),
        "points_failed": n_failed,
        "axis1": axis1.name,
        "axis2": axis2.name if axis2 is not None else None,
    }
    worst = [0.0, 0.0, 0.0]
    for triple in health.values():
        for i, v in enumerate(triple):
            worst[i] = max(worst[i], v)
    return validate_truncation(worst[0], worst[1], worst[2], cfg.params.N)


def run_task(
    cfg: RunConfig,
    out_dir,
    *,
    reproducible: bool = False,
    threads: int = 1,
    dump_operators: bool = False,
) -> dict:
    """Execute the configured task, writing datasets + metadata into out_dir.

    Returns a summary with the truncation report and output list.  Raises
    ConvergenceError / CutoffError for unrecoverable single-point failures
    (sweep points are isolated instead).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    meta: dict = {
        "version": __version__,
        "task": cfg.task.value,
        "config": echo_config(cfg),
        "config_sha1": config_digest(cfg),
        "momentum_labels": _momentum_meta(cfg.params),
        "shifted_detuning": shifted_detuning(cfg.params),
    }
    if cfg.task is Task.EVOLVE:
        report = _run_evolve(cfg, out, meta)
    elif cfg.task is Task.STEADY:
        report = _run_steady(cfg, out, meta)
    elif cfg.task is Task.SPECTRUM:
        report = _run_spectrum(cfg, out, meta)
    elif cfg.task is Task.QFUNC:
        report = _run_qfunc(cfg, out, meta)
    else:
        report = _run_phase_diagram(cfg, out, meta, threads)
    if dump_operators:
        op_dir = out / "operators"
        op_dir.mkdir(exist_ok=True)
        space, _ = build_system(cfg.params, cfg.initial)
        liou = build_hamiltonian(cfg.params, space)
        dump_operator(liou.hamiltonian, op_dir / "hamiltonian.csv")
        dump_operator(liou.ops.annihilator, op_dir / "annihilator.csv")
        dump_operator(liou.ops.photon_number, op_dir / "photon_number.csv")
        dump_operator(liou.ops.pump_interaction, op_dir / "pump_interaction.csv")
        dump_operator(liou.ops.lattice_interaction,
                      op_dir / "lattice_interaction.csv")
        space.particle_basis.dump(op_dir / "basis.csv")
        meta["operator_dumps"] = sorted(
            p.name for p in op_dir.iterdir() if p.is_file()
        )
    meta["truncation"] = report.as_dict()
    meta["timings"] = {
        "elapsed_s": None if reproducible else time.perf_counter() - started
    }
    write_metadata(out / "metadata.json", meta)
    return {
        "truncation": report.as_dict(),
        "outputs": meta.get("outputs", []) + ["metadata.json"],
        "task": cfg.task.value,
        "out_dir": str(out),
    }
