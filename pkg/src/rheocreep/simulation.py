"""Time loop with step control, energy CSV, field dumps and restart.

Outputs written into the run directory:

* ``energy.csv``: one row for the initial state and one per accepted step;
* ``fields_<step>.dump``: coefficient dumps (initial, every ``dump_every``
  accepted steps, and final);
* ``summary.txt``: ``key: value`` lines describing the run.

A dump stores the time-loop state (t, dt, easy-step counter, energy sums) on
its ``time`` line, so a run restarted from it continues exactly as the
original run would have.
"""

from dataclasses import dataclass, field
import os

import numpy as np

from . import constitutive as cm
from .galerkin.assembly import DeterminantBreached, Discretization, Loads, SystemState
from .galerkin.stepping import (EnergyAccumulator, NewtonDiverged, SolverSettings,
                                project_initial, step_implicit_euler)

ENERGY_COLUMNS = ("t", "kinetic", "elastic", "constraint", "gradient", "diss_kv", "diss_m",
                  "diss_h", "work_ext", "balance_residual", "min_detP", "min_det_grad_y",
                  "newton_iters")
EASY_NEWTON_ITERS = 4
EASY_STEPS_TO_GROW = 5
MAX_DT_HALVINGS = 12


class SimulationFailed(RuntimeError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class LoopState:
    step: int = 0
    dt: float = 0.0
    easy: int = 0


@dataclass
class SimulationResult:
    out_dir: str
    steps: int
    rejected: int
    t_final: float
    min_det_P: float
    min_det_grad_y: float
    max_balance_residual: float
    peak_stored: float
    reports: list = field(default_factory=list)
    records: list = field(default_factory=list)


def _fmt(v):
    return str(v) if isinstance(v, (int, np.integer)) else f"{float(v):.17g}"


# -- loads and initial data --------------------------------------------------------

def build_loads(cfg):
    def vec(ramp):
        return lambda t: np.asarray(ramp(t), dtype=float)

    body = None
    if cfg.body_force is not None:
        ramp = cfg.body_force
        body = lambda t, x: np.broadcast_to(np.asarray(ramp(t), dtype=float), x.shape)  # noqa: E731
    return Loads(body_force=body,
                 traction={side: vec(r) for side, r in cfg.traction},
                 dirichlet={side: vec(r) for side, r in cfg.dirichlet})


def _shear_field(amp):
    def fn(x):
        out = np.zeros(x.shape)
        out[..., 0] = amp * x[..., 1]
        return out
    return fn


def initial_state(cfg, disc):
    d = cfg.dim
    y0 = v0 = P0 = None
    if cfg.initial_y.name == "shear":
        shear = _shear_field(cfg.initial_y.amplitude)
        y0 = lambda x: x + shear(x)  # noqa: E731
    if cfg.initial_v.name == "shear":
        v0 = _shear_field(cfg.initial_v.amplitude)
    if cfg.initial_P.name == "shear":
        amp = cfg.initial_P.amplitude

        def P0(x):
            P = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
            P[..., 0, 1] = amp
            return P
    return project_initial(disc, y0, v0, P0, det_min=cfg.det_min)


# -- dumps ---------------------------------------------------------------------------

def field_names(d):
    return ([f"u{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)]
            + [f"P{i + 1}{j + 1}" for i in range(d) for j in range(d)])


def write_dump(path, grid, state, meta=None):
    """Plain-text coefficient dump, one row per basis function in index order."""
    d = grid.dim
    meta = dict(meta or {})
    lines = [
        f"dim {d}",
        "grid lengths={} cells={} periodic={}".format(
            ",".join(_fmt(v) for v in grid.lengths), ",".join(str(c) for c in grid.cells),
            ",".join("1" if p else "0" for p in grid.periodic)),
        "fields " + " ".join(field_names(d)),
        "time " + " ".join([f"t={_fmt(state.t)}"] + [f"{k}={_fmt(v)}" for k, v in meta.items()]),
    ]
    data = np.concatenate([state.u, state.v, state.P.reshape(len(state.P), -1)], axis=1)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        for row in data:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_dump(path):
    """Returns (grid_spec dict, (t, u, v, P), meta dict)."""
    with open(path) as fh:
        header = [fh.readline().strip() for _ in range(4)]
        rows = np.loadtxt(fh, ndmin=2)
    if not (header[0].startswith("dim ") and header[1].startswith("grid ")
            and header[2].startswith("fields ") and header[3].startswith("time ")):
        raise ValueError(f"{path}: not a field dump")
    d = int(header[0].split()[1])
    kv = dict(item.split("=", 1) for item in header[1].split()[1:])
    grid = {"lengths": tuple(float(v) for v in kv["lengths"].split(",")),
            "cells": tuple(int(v) for v in kv["cells"].split(",")),
            "periodic": tuple(v == "1" for v in kv["periodic"].split(","))}
    meta = dict(item.split("=", 1) for item in header[3].split()[1:])
    t = float(meta.pop("t"))
    if rows.shape[1] != 2 * d + d * d:
        raise ValueError(f"{path}: expected {2 * d + d * d} columns, got {rows.shape[1]}")
    u, v = rows[:, :d].copy(), rows[:, d:2 * d].copy()
    P = rows[:, 2 * d:].reshape(-1, d, d).copy()
    return grid, SystemState(t, u, v, P), meta


# -- main loop -----------------------------------------------------------------------

def settings_from(cfg):
    return SolverSettings(tol=cfg.tol, max_iter=cfg.max_iter, max_halvings=cfg.max_halvings,
                          fd_step=cfg.fd_step, det_min=cfg.det_min, mode=cfg.mode)


def _energy_row(t, e, residual, dets, iters):
    vals = (t, e.kinetic, e.elastic, e.constraint, e.gradient, e.dissipated_kv, e.dissipated_m,
            e.dissipated_h, e.external_work, residual, dets[0], dets[1], int(iters))
    return ",".join(_fmt(v) for v in vals) + "\n"


def simulate(cfg, out_dir, threads=None, log=None):
    """Run the configured simulation, writing outputs into ``out_dir``.

    Raises SimulationFailed (after dumping the last accepted state) when the
    step size has been halved MAX_DT_HALVINGS times below dt0 without success.
    """
    os.makedirs(out_dir, exist_ok=True)
    disc = Discretization(cfg.grid, nquad=cfg.nquad, threads=threads)
    params = cfg.material
    settings = settings_from(cfg)
    loads = build_loads(cfg)
    rho = cfg.effective_rho

    if cfg.restart:
        grid_spec, state, meta = read_dump(cfg.restart)
        if (grid_spec["cells"] != cfg.grid.cells or grid_spec["periodic"] != cfg.grid.periodic
                or grid_spec["lengths"] != cfg.grid.lengths):
            raise ValueError(f"restart dump {cfg.restart} was written for a different grid")
        loop = LoopState(step=int(meta["step"]), dt=float(meta["dt"]), easy=int(meta["easy"]))
        acc = EnergyAccumulator(float(meta["e0"]), float(meta["diss_kv"]), float(meta["diss_m"]),
                                float(meta["diss_h"]), float(meta["work"]))
    else:
        state = initial_state(cfg, disc)
        loop = LoopState(step=0, dt=cfg.dt0, easy=0)
        acc = EnergyAccumulator(disc.energies(state, params, rho).total)

    def loop_meta():
        return {"step": loop.step, "dt": loop.dt, "easy": loop.easy, "e0": acc.initial_total,
                "diss_kv": acc.dissipated_kv, "diss_m": acc.dissipated_m,
                "diss_h": acc.dissipated_h, "work": acc.external_work}

    def dump(tag):
        path = os.path.join(out_dir, f"fields_{tag}.dump")
        write_dump(path, cfg.grid, state, loop_meta())
        return path

    energy_path = os.path.join(out_dir, "energy.csv")
    e_start = disc.energies(state, params, rho)
    dets0 = disc.monitor_determinants(state)
    reports, records = [], []
    min_dP, min_dy = dets0[0], dets0[1]
    max_res, peak = 0.0, e_start.stored
    rejected = 0
    status = "completed"
    failure = None
    with open(energy_path, "w") as csv:
        csv.write(",".join(ENERGY_COLUMNS) + "\n")
        if not cfg.restart:
            start = cm.EnergyBreakdown(kinetic=e_start.kinetic, elastic=e_start.elastic,
                                       constraint=e_start.constraint, gradient=e_start.gradient)
            csv.write(_energy_row(state.t, start, 0.0, dets0, 0))
            dump(f"{loop.step:06d}")
        dt_floor = cfg.dt0 / 2 ** MAX_DT_HALVINGS
        while cfg.T - state.t > 1e-12 * cfg.T:
            dt = min(loop.dt, cfg.T - state.t)
            try:
                new, rep = step_implicit_euler(disc, state, dt, loads, params, settings)
            except (NewtonDiverged, DeterminantBreached) as exc:
                rejected += 1
                loop.dt, loop.easy = loop.dt / 2, 0
                if log:
                    log(f"step rejected at t = {state.t:.6g} ({exc}); dt -> {loop.dt:.3e}")
                if loop.dt < dt_floor:
                    status, failure = "failed", str(exc)
                    break
                continue
            state = new
            loop.step += 1
            rec = acc.add(rep)
            reports.append(rep)
            records.append(rec)
            csv.write(_energy_row(rep.t, rec.energy, rec.balance_residual,
                                  (rep.min_det_P, rep.min_det_grad_y), rep.newton_iters))
            csv.flush()
            min_dP, min_dy = min(min_dP, rep.min_det_P), min(min_dy, rep.min_det_grad_y)
            max_res = max(max_res, rec.balance_residual)
            peak = max(peak, rec.energy.stored)
            loop.easy = loop.easy + 1 if rep.newton_iters <= EASY_NEWTON_ITERS else 0
            if loop.easy >= EASY_STEPS_TO_GROW and loop.dt < cfg.dt_max:
                loop.dt, loop.easy = min(2 * loop.dt, cfg.dt_max), 0
            if cfg.dump_every and loop.step % cfg.dump_every == 0:
                dump(f"{loop.step:06d}")

    final_path = dump("final")
    summary = {
        "status": status,
        "mode": cfg.mode,
        "steps": loop.step,
        "rejected_steps": rejected,
        "t_final": _fmt(state.t),
        "min_det_P": _fmt(min_dP),
        "min_det_grad_y": _fmt(min_dy),
        "max_balance_residual": _fmt(max_res),
        "final_balance_residual": _fmt(records[-1].balance_residual if records else 0.0),
        "peak_stored_energy": _fmt(peak),
    }
    if failure:
        summary["failure"] = failure.replace("\n", " ")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.writelines(f"{k}: {v}\n" for k, v in summary.items())
    if failure:
        raise SimulationFailed(f"simulation failed at t = {state.t:.6g}: {failure}", final_path)
    return SimulationResult(out_dir=out_dir, steps=loop.step, rejected=rejected, t_final=state.t,
                            min_det_P=min_dP, min_det_grad_y=min_dy, max_balance_residual=max_res,
                            peak_stored=peak, reports=reports, records=records)


# -- reading energy series back --------------------------------------------------------

def read_energy_csv(path):
    """Returns a dict column -> numpy array."""
    data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    return {name: np.asarray(data[name]) for name in data.dtype.names}


def recompute_balance(series):
    """|E_total(t) + D(0,t) - E_total(0) - W(0,t)| from the cumulative columns."""
    total = series["kinetic"] + series["elastic"] + series["constraint"] + series["gradient"]
    diss = series["diss_kv"] + series["diss_m"] + series["diss_h"]
    return np.abs(total + diss - total[0] - series["work_ext"])
