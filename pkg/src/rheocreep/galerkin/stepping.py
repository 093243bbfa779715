"""Backward-Euler time stepping with a damped Newton solver.

One step solves for (u⁺, Π⁺) with

    v⁺ = (u⁺ - u)/dt,   v̇ = (v⁺ - v)/dt,   Π̇ = (Π⁺ - Π)/dt

and every integrand evaluated at the new time level. Each step also records
the increments that enter the energy balance: dissipation dt·∫(ν|rate|²) and
the work of applied loads and Dirichlet reactions.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .. import constitutive as cm
from ..tensor import NonPositiveDeterminant
from .assembly import (DET_MIN, DeterminantBreached, ProjectionViolatesDeterminant,
                       SystemState)

MODES = ("dynamic", "quasi_static")
# a factorized Jacobian is reused while each iteration shrinks |r| by this factor
REUSE_CONTRACTION = 0.1


class NewtonDiverged(RuntimeError):
    def __init__(self, message, last_iterate=None, residual_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 25
    max_halvings: int = 8
    fd_step: float = 1e-7
    det_min: float = DET_MIN
    mode: str = "dynamic"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass
class StepReport:
    """Outcome of one accepted step.

    ``energy`` holds the kinetic and stored energies at the new state; its
    dissipation and work fields hold this step's increments only.
    ``balance_residual`` is the step's own energy defect
    |ΔE_total + ΔD - ΔW|; cumulative values come from :func:`energy_report`.
    """
    t: float
    dt: float
    newton_iters: int
    residual_norm: float
    min_det_P: float
    min_det_grad_y: float
    min_det_F_el: float
    energy: cm.EnergyBreakdown = field(default_factory=cm.EnergyBreakdown)
    balance_residual: float = 0.0


def effective_rho(params, settings):
    return 0.0 if settings.mode == "quasi_static" else params.rho


def _apply_constraints(z, constraints):
    if constraints:
        idx = np.fromiter(constraints.keys(), dtype=int)
        z[idx] = np.fromiter(constraints.values(), dtype=float)
    return z


def _constrained_jacobian(J, constraints, n):
    if not constraints:
        return J.tocsc()
    mask = np.ones(n)
    mask[np.fromiter(constraints.keys(), dtype=int)] = 0.0
    return (sp.diags(mask) @ J + sp.diags(1.0 - mask)).tocsc()


def _residual_or_none(disc, z, old, dt, loads, t1, params, rho, constraints):
    try:
        return disc.step_residual(z, old, dt, loads, t1, params, rho, constraints)
    except NonPositiveDeterminant:
        return None


def solve_step(disc, old, dt, loads, params, settings):
    """Newton iteration for the backward-Euler system; returns (z, r_full, iters, norm).

    The factorized Jacobian is kept across iterations while the residual
    contracts by at least REUSE_CONTRACTION per iteration, and rebuilt otherwise.
    """
    rho = effective_rho(params, settings)
    t1 = old.t + dt
    constraints = disc.dirichlet_constraints(loads, t1)

    z_keep = _apply_constraints(disc.pack(old.u, old.P), constraints)
    z = _apply_constraints(disc.pack(old.u + dt * old.v, old.P), constraints)
    res = _residual_or_none(disc, z, old, dt, loads, t1, params, rho, constraints)
    if res is None:
        z = z_keep
        res = _residual_or_none(disc, z, old, dt, loads, t1, params, rho, constraints)
    if res is None:
        raise DeterminantBreached("initial guess of the step has non-positive determinant")
    r, r_full = res
    norm = float(np.linalg.norm(r))
    iters = 0
    lu, fresh = None, False
    while norm > settings.tol:
        if iters >= settings.max_iter:
            raise NewtonDiverged(f"no convergence in {iters} iterations (|r| = {norm:.3e})", z, norm)
        if lu is None:
            J = disc.step_jacobian(z, old, dt, params, rho, settings.fd_step)
            try:
                lu = splu(_constrained_jacobian(J, constraints, disc.n))
            except RuntimeError as exc:
                raise NewtonDiverged(f"singular Newton system: {exc}", z, norm) from exc
            fresh = True
        dz = lu.solve(-r)
        iters += 1
        accepted = False
        if np.all(np.isfinite(dz)):
            alpha = 1.0
            for _ in range(settings.max_halvings + 1):
                trial = _apply_constraints(z + alpha * dz, constraints)
                res = _residual_or_none(disc, trial, old, dt, loads, t1, params, rho, constraints)
                if res is not None:
                    trial_norm = float(np.linalg.norm(res[0]))
                    if trial_norm < norm or trial_norm <= settings.tol:
                        accepted = True
                        break
                alpha *= 0.5
        if not accepted:
            if fresh:
                raise NewtonDiverged(f"line search failed at iteration {iters} (|r| = {norm:.3e})", z, norm)
            lu = None
            continue
        # keep the factorization only while it still contracts quickly
        if trial_norm > REUSE_CONTRACTION * norm:
            lu = None
        fresh = False
        z, (r, r_full), norm = trial, res, trial_norm
    return z, r_full, iters, norm


def step_implicit_euler(disc, state, dt, loads, params, settings=SolverSettings()):
    """Advance ``state`` by ``dt``; returns (new_state, StepReport).

    Raises NewtonDiverged or DeterminantBreached; the input state is never
    modified, so the caller can retry with a smaller step.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z, r_full, iters, norm = solve_step(disc, state, dt, loads, params, settings)
    u1, P1 = disc.unpack(z)
    new = SystemState(state.t + dt, u1.copy(), (u1 - state.u) / dt, P1.copy())

    dP, dy, de = disc.monitor_determinants(new)
    if dP < settings.det_min or dy < settings.det_min:
        raise DeterminantBreached(
            f"determinant monitor breached at t = {new.t:.6g}: min det Π = {dP:.3e}, min det ∇y = {dy:.3e}")

    rho = effective_rho(params, settings)
    energy = disc.energies(new, params, rho)
    kv, m, h = disc.dissipation_rates(new, (P1 - state.P) / dt, params)
    energy.dissipated_kv, energy.dissipated_m, energy.dissipated_h = dt * kv, dt * m, dt * h
    du = (u1 - state.u).ravel()
    work = float(disc.load_vector(loads, new.t).ravel() @ du)
    constraints = disc.dirichlet_constraints(loads, new.t)
    if constraints:
        idx = np.fromiter(constraints.keys(), dtype=int)
        work += float(r_full[idx] @ du[idx])
    energy.external_work = work
    before = disc.energies(state, params, rho)
    balance = abs(energy.total - before.total + energy.dissipated - work)
    report = StepReport(t=new.t, dt=dt, newton_iters=iters, residual_norm=norm,
                        min_det_P=dP, min_det_grad_y=dy, min_det_F_el=de,
                        energy=energy, balance_residual=balance)
    return new, report


def project_initial(disc, y0=None, v0=None, P0=None, det_min=DET_MIN):
    """L² projection of analytic initial fields onto the spline space.

    Each argument maps points x (..., d) to values; None selects the
    reference data y = x, v = 0, Π = I.
    """
    d = disc.d
    state = disc.reference_state()
    if y0 is not None:
        state.u = disc.l2_project(lambda x: np.asarray(y0(x), dtype=float) - x)
    if v0 is not None:
        state.v = disc.l2_project(lambda x: np.broadcast_to(np.asarray(v0(x), dtype=float), x.shape))
    if P0 is not None:
        state.P = disc.l2_project(
            lambda x: np.broadcast_to(np.asarray(P0(x), dtype=float), x.shape[:-1] + (d, d)))
    dP, dy, _ = disc.monitor_determinants(state)
    if dP < det_min or dy < det_min:
        raise ProjectionViolatesDeterminant(
            f"projected initial data violate the determinant monitor: min det Π = {dP:.3e}, "
            f"min det ∇y = {dy:.3e}")
    return state


@dataclass
class EnergyRecord:
    """Cumulative energy bookkeeping at one time."""
    t: float
    energy: cm.EnergyBreakdown
    balance_residual: float


@dataclass
class EnergyAccumulator:
    """Running sums of dissipation and external work since the start time.

    ``initial_total`` is E_total at the start; the balance residual is
    |E_total(t) + D(0,t) - E_total(0) - W(0,t)|.
    """
    initial_total: float
    dissipated_kv: float = 0.0
    dissipated_m: float = 0.0
    dissipated_h: float = 0.0
    external_work: float = 0.0

    def add(self, report):
        e = report.energy
        self.dissipated_kv += e.dissipated_kv
        self.dissipated_m += e.dissipated_m
        self.dissipated_h += e.dissipated_h
        self.external_work += e.external_work
        acc = cm.EnergyBreakdown(
            kinetic=e.kinetic, elastic=e.elastic, constraint=e.constraint, gradient=e.gradient,
            dissipated_kv=self.dissipated_kv, dissipated_m=self.dissipated_m,
            dissipated_h=self.dissipated_h, external_work=self.external_work)
        residual = abs(acc.total + acc.dissipated - self.initial_total - acc.external_work)
        return EnergyRecord(report.t, acc, residual)


def energy_report(initial, reports, t0=None):
    """Cumulative energies and balance residual before and after each step.

    ``initial`` is the EnergyBreakdown of the starting state.
    """
    if t0 is None:
        t0 = reports[0].t - reports[0].dt if reports else 0.0
    start = cm.EnergyBreakdown(kinetic=initial.kinetic, elastic=initial.elastic,
                               constraint=initial.constraint, gradient=initial.gradient)
    acc = EnergyAccumulator(initial.total)
    return [EnergyRecord(t0, start, 0.0)] + [acc.add(rep) for rep in reports]
