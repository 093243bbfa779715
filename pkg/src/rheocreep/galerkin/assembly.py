"""Quadrature assembly of the Galerkin residual, energies and monitors.

Unknowns are spline coefficients of the displacement ``u = y - x`` (so that
periodic directions need no special treatment) and of the inelastic strain Π.
The global vector layout is ``z = [u.ravel(), P.ravel()]`` with u of shape
(n_basis, d) and P of shape (n_basis, d, d).

Cells are processed in fixed-size chunks. Chunks may run on several threads,
but per-cell results are always reduced in cell order, so the output does not
depend on the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import os
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .. import constitutive as cm
from .. import tensor as tn
from ..weakform import driving_forces, energetic_forces, kv_forces
from .splines import SplineBasis

DET_MIN = 1e-6
CHUNK_CELLS = 16


class DeterminantBreached(RuntimeError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class ProjectionViolatesDeterminant(DeterminantBreached):
    pass


@dataclass
class SystemState:
    """Time plus spline coefficients: u = y - x, v = ẏ, and Π."""
    t: float
    u: np.ndarray
    v: np.ndarray
    P: np.ndarray

    def copy(self):
        return SystemState(self.t, self.u.copy(), self.v.copy(), self.P.copy())


@dataclass
class Rates:
    """Coefficient rates entering the residual: v̇ and Π̇."""
    a: np.ndarray
    Pdot: np.ndarray


@dataclass
class Loads:
    """External loads.

    body_force(t, x) -> (..., d); traction[side](t) -> (d,);
    dirichlet[side](t) -> (d,) prescribed displacement on that side.
    """
    body_force: Optional[Callable] = None
    traction: Dict[str, Callable] = field(default_factory=dict)
    dirichlet: Dict[str, Callable] = field(default_factory=dict)


def _threads_from_env():
    raw = os.environ.get("RHEO_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


class Discretization:
    def __init__(self, grid, nquad=4, threads=None):
        self.grid = grid
        self.basis = SplineBasis(grid)
        self.nquad = nquad
        self.table = self.basis.quad_table(nquad)
        self.d = grid.dim
        self.nb = self.basis.n_basis
        self.n_u = self.nb * self.d
        self.n_P = self.nb * self.d * self.d
        self.n = self.n_u + self.n_P
        self.threads = threads if threads is not None else _threads_from_env()
        T = self.table
        nc, nloc = T.dofs.shape
        self.n_cells, self.n_loc = nc, nloc
        self.chunks = [slice(i, min(i + CHUNK_CELLS, nc)) for i in range(0, nc, CHUNK_CELLS)]
        # cell-local -> global reduction as a sparse matrix (fixed summation order)
        self._scatter = sp.csr_matrix(
            (np.ones(nc * nloc), (T.dofs.ravel(), np.arange(nc * nloc))), shape=(self.nb, nc * nloc))
        self.local_mass = np.einsum("cq,caq,cbq->cab", T.w, T.N, T.N)
        self._hess_gram = np.einsum("cq,caqjk,cbqjk->cab", T.w, T.d2N, T.d2N)
        self._face_tables = {}
        d = self.d
        u_rows = (T.dofs[:, :, None] * d + np.arange(d)).reshape(nc, nloc * d)
        P_rows = (self.n_u + T.dofs[:, :, None] * d * d + np.arange(d * d)).reshape(nc, nloc * d * d)
        self._local_rows = np.concatenate([u_rows, P_rows], axis=1)
        self._pattern = None

    # -- helpers -----------------------------------------------------------

    def face_table(self, side):
        if side not in self._face_tables:
            self._face_tables[side] = self.basis.face_table(side, self.nquad)
        return self._face_tables[side]

    def pack(self, u, P):
        return np.concatenate([u.ravel(), P.ravel()])

    def unpack(self, z):
        d, nb = self.d, self.nb
        return z[:self.n_u].reshape(nb, d), z[self.n_u:].reshape(nb, d, d)

    def reference_state(self, t=0.0):
        d, nb = self.d, self.nb
        P = np.broadcast_to(np.eye(d), (nb, d, d)).copy()
        return SystemState(t, np.zeros((nb, d)), np.zeros((nb, d)), P)

    def gather(self, coef, cells=slice(None)):
        return coef[self.table.dofs[cells]]

    def reduce(self, local, dofs=None):
        """Sum cell-local contributions (nc, nloc, ...) into global (nb, ...).

        ``dofs`` defaults to the volume table; pass a face table's dofs for
        boundary contributions.
        """
        nc, nloc = local.shape[:2]
        flat = local.reshape(nc * nloc, -1)
        if dofs is None:
            return np.asarray(self._scatter @ flat).reshape((self.nb,) + local.shape[2:])
        out = np.stack([np.bincount(dofs.ravel(), weights=flat[:, k], minlength=self.nb)
                        for k in range(flat.shape[1])], axis=1)
        return out.reshape((self.nb,) + local.shape[2:])

    def _map_chunks(self, fn):
        if self.threads > 1 and len(self.chunks) > 1:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(self.chunks))) as ex:
                return list(ex.map(fn, self.chunks))
        return [fn(c) for c in self.chunks]

    # -- pointwise fields ----------------------------------------------------

    def eval_fields(self, coef, cells=slice(None)):
        """Value, gradient and Hessian of a field with coefficients (n_basis, *comp)
        at the quadrature points; derivative axes come last."""
        T = self.table
        loc = coef[T.dofs[cells]]
        return (np.einsum("ca...,caq->cq...", loc, T.N[cells]),
                np.einsum("ca...,caqj->cq...j", loc, T.dN[cells]),
                np.einsum("ca...,caqjk->cq...jk", loc, T.d2N[cells]))

    def quad_state(self, U, V, P, Pd, cells=slice(None)):
        """QuadState at the quadrature points of ``cells`` from cell-local coefficients.

        U, V: (..., nc, nloc, d); P, Pd: (..., nc, nloc, d, d).
        """
        T = self.table
        dN, d2N = T.dN[cells], T.d2N[cells]
        d = self.d
        eye = np.eye(d)
        grad_y = eye + np.einsum("...cai,caqj->...cqij", U, dN)
        grad2_y = np.einsum("...cai,caqjk->...cqijk", U, d2N)
        Pq = np.einsum("...cakl,caq->...cqkl", P, T.N[cells])
        grad_P = np.einsum("...cakl,caqj->...cqklj", P, dN)
        rate_grad_y = np.einsum("...cai,caqj->...cqij", V, dN)
        rate_P = np.einsum("...cakl,caq->...cqkl", Pd, T.N[cells])
        rate_grad2_P = np.einsum("...cakl,caqjm->...cqkljm", Pd, d2N)
        return cm.QuadState(grad_y=grad_y, grad2_y=grad2_y, P=Pq, grad_P=grad_P,
                            grad2_P=None, rate_grad_y=rate_grad_y, rate_P=rate_P,
                            rate_grad2_P=rate_grad2_P)

    # -- residual ------------------------------------------------------------

    def _check_dets(self, q, cells):
        JP = tn.det(q.P)
        Jy = tn.det(q.grad_y)
        for J, name in ((JP, "det Π"), (Jy, "det ∇y")):
            if np.any(J <= 0):
                idx = np.unravel_index(np.argmin(J), J.shape)
                c, qp = idx[-2], idx[-1]
                cell = np.arange(self.n_cells)[cells][c]
                x = self.table.x[cell, qp]
                raise tn.NonPositiveDeterminant(
                    f"{name} = {J[idx]:.3e} <= 0 at cell {cell}, x = {np.array2string(x, precision=4)}")

    def local_residual(self, U, V, A, P, Pd, params, rho, cells=slice(None)):
        """Cell-local momentum (…, nc, nloc, d) and flow (…, nc, nloc, d, d) residuals,
        without external loads."""
        T = self.table
        q = self.quad_state(U, V, P, Pd, cells)
        self._check_dets(q, cells)
        f = driving_forces(q, params)
        w = T.w[cells]
        dN, d2N, N = T.dN[cells], T.d2N[cells], T.N[cells]
        Ru = (np.einsum("...cqij,caqj->...cai", f.stress_1 * w[..., None, None], dN)
              + np.einsum("...cqijk,caqjk->...cai", f.hyperstress * w[..., None, None, None], d2N))
        if rho:
            Ru = Ru + rho * np.einsum("cab,...cbi->...cai", self.local_mass[cells], A)
        RP = (np.einsum("...cqkl,caq->...cakl", f.flow_force * w[..., None, None], N)
              + np.einsum("...cqklj,caqj->...cakl", f.flow_hyper * w[..., None, None, None], dN)
              + np.einsum("...cqkljm,caqjm->...cakl", f.flow_hyper2 * w[..., None, None, None, None], d2N))
        return Ru, RP

    def load_vector(self, loads, t):
        """(f, ỹ) + (g, ỹ)_Γ for every basis function, shape (n_basis, d)."""
        b = np.zeros((self.nb, self.d))
        if loads is None:
            return b
        T = self.table
        if loads.body_force is not None:
            fq = np.asarray(loads.body_force(t, T.x), dtype=float)
            fq = np.broadcast_to(fq, T.x.shape)
            b += self.reduce(np.einsum("cq,cqi,caq->cai", T.w, fq, T.N))
        for side, g in loads.traction.items():
            F = self.face_table(side)
            gv = np.asarray(g(t), dtype=float)
            b += self.reduce(np.einsum("cq,caq->ca", F.w, F.N)[..., None] * gv, F.dofs)
        return b

    def internal_residual(self, state, rates, params, rho):
        """Global residual (n,) of inertia + internal forces, without loads and constraints."""
        U, V, P = state.u, state.v, state.P

        def work(cells):
            return self.local_residual(self.gather(U, cells), self.gather(V, cells),
                                       self.gather(rates.a, cells), self.gather(P, cells),
                                       self.gather(rates.Pdot, cells), params, rho, cells)
        parts = self._map_chunks(work)
        Ru = np.concatenate([r[0] for r in parts])
        RP = np.concatenate([r[1] for r in parts])
        return self.pack(self.reduce(Ru), self.reduce(RP))

    def assemble_residual(self, state, rates, loads, params, rho=None, constraints=None):
        """Full residual vector; rows in ``constraints`` (index -> value) become z_i - value."""
        rho = params.rho if rho is None else rho
        r = self.internal_residual(state, rates, params, rho)
        r[:self.n_u] -= self.load_vector(loads, state.t).ravel()
        if constraints:
            idx = np.fromiter(constraints.keys(), dtype=int)
            vals = np.fromiter(constraints.values(), dtype=float)
            z = self.pack(state.u, state.P)
            r[idx] = z[idx] - vals
        return r

    # -- constraints ---------------------------------------------------------

    def dirichlet_constraints(self, loads, t):
        """Map from global z-index to prescribed value for all Dirichlet sides."""
        out = {}
        if loads is None:
            return out
        d = self.d
        for side, fn in loads.dirichlet.items():
            val = np.asarray(fn(t), dtype=float)
            for a in self.basis.side_dofs(side):
                for i in range(d):
                    out[int(a * d + i)] = float(val[i])
        return dict(sorted(out.items()))

    # -- backward-Euler step residual and its Jacobian ----------------------

    def _field_operator(self, cells):
        """Matrix B (nc, nq, nX, ncol) taking local coefficients to pointwise fields.

        Fields are stacked as [∇y, ∇²y, Π, ∇Π] (flattened); columns follow the
        local layout [U (nloc, d), P (nloc, d, d)].
        """
        T = self.table
        d, nloc = self.d, self.n_loc
        N, dN, d2N = T.N[cells], T.dN[cells], T.d2N[cells]
        nc, nq = N.shape[0], N.shape[2]
        e = np.eye(d)
        ee = np.eye(d * d).reshape(d, d, d, d)
        gy = np.einsum("caqj,ik->cqijak", dN, e).reshape(nc, nq, d * d, nloc * d)
        g2y = np.einsum("caqjm,ik->cqijmak", d2N, e).reshape(nc, nq, d ** 3, nloc * d)
        Pv = np.einsum("caq,klrs->cqklars", N, ee).reshape(nc, nq, d * d, nloc * d * d)
        gP = np.einsum("caqj,klrs->cqkljars", dN, ee).reshape(nc, nq, d ** 3, nloc * d * d)
        nu, nP = nloc * d, nloc * d * d
        B = np.zeros((nc, nq, 2 * (d * d + d ** 3), nu + nP))
        r0, r1, r2 = d * d, d * d + d ** 3, 2 * d * d + d ** 3
        B[:, :, :r0, :nu] = gy
        B[:, :, r0:r1, :nu] = g2y
        B[:, :, r1:r2, nu:] = Pv
        B[:, :, r2:, nu:] = gP
        return B

    def _pointwise_forces(self, X, old, dt, params):
        """Stacked [S, H, Q, K] at stacked fields X (..., nX) for a backward-Euler step.

        ``old`` holds (∇y, Π) of the previous step at the same points.
        """
        d = self.d
        a, b, c = d * d, d * d + d ** 3, 2 * d * d + d ** 3
        lead = X.shape[:-1]
        gy = X[..., :a].reshape(lead + (d, d))
        P = X[..., b:c].reshape(lead + (d, d))
        q = cm.QuadState(
            grad_y=gy, grad2_y=X[..., a:b].reshape(lead + (d, d, d)),
            P=P, grad_P=X[..., c:].reshape(lead + (d, d, d)), grad2_P=None,
            rate_grad_y=(gy - old[0]) / dt, rate_P=(P - old[1]) / dt, rate_grad2_P=None)
        S, H, Q, K = energetic_forces(q, params)
        S_kv, Q_kv = kv_forces(q, params)
        Q = Q + Q_kv + params.nu_m * q.rate_P
        return np.concatenate([(S + S_kv).reshape(lead + (-1,)), H.reshape(lead + (-1,)),
                               Q.reshape(lead + (-1,)), K.reshape(lead + (-1,))], axis=-1)

    def step_jacobian(self, z1, old, dt, params, rho, fd_step=1e-7):
        """Jacobian of the step residual w.r.t. z1, as a sparse matrix.

        The nonlinear part is a consistent tangent Σ_q w Bᵀ D B, where D is the
        derivative of the pointwise driving forces w.r.t. the pointwise fields,
        taken by forward differences with step fd_step·(1+|field|). Inertia and
        the ∇²Π̇ viscosity are linear and enter as exact element matrices.
        """
        u1, P1 = self.unpack(z1)
        T = self.table
        d, nloc = self.d, self.n_loc
        nu = nloc * d
        lin_u = (rho / dt ** 2) * np.einsum("cab,ij->caibj", self.local_mass, np.eye(d))
        lin_P = (params.nu_h / dt) * np.einsum("cab,rs->carbs", self._hess_gram, np.eye(d * d))

        def work(cells):
            B = self._field_operator(cells)
            coef = np.concatenate([self.gather(u1, cells).reshape(B.shape[0], -1),
                                   self.gather(P1, cells).reshape(B.shape[0], -1)], axis=1)
            coef0 = np.concatenate([self.gather(old.u, cells).reshape(B.shape[0], -1),
                                    self.gather(old.P, cells).reshape(B.shape[0], -1)], axis=1)
            X = np.einsum("cqxk,ck->cqx", B, coef)
            X[..., :d * d] += np.eye(d).ravel()
            X0 = np.einsum("cqxk,ck->cqx", B, coef0)
            X0[..., :d * d] += np.eye(d).ravel()
            a, b, c = d * d, d * d + d ** 3, 2 * d * d + d ** 3
            lead = X.shape[:-1]
            old_pts = (X0[..., :a].reshape(lead + (d, d)), X0[..., b:c].reshape(lead + (d, d)))
            base = self._pointwise_forces(X, old_pts, dt, params)
            nX = X.shape[-1]
            h = fd_step * (1.0 + np.abs(X))                       # (nc, nq, nX)
            Xp = np.broadcast_to(X, (nX,) + X.shape).copy()
            k = np.arange(nX)
            Xp[k, :, :, k] += np.moveaxis(h, -1, 0)
            Fp = self._pointwise_forces(Xp, old_pts, dt, params)  # (nX, nc, nq, nY)
            D = (Fp - base) / np.moveaxis(h, -1, 0)[..., None]
            D = np.moveaxis(D, 0, -1) * T.w[cells][..., None, None]  # (nc, nq, nY, nX)
            DB = D @ B
            nc, nq, _, ncol = B.shape
            Bt = B.reshape(nc, nq * nX, ncol).transpose(0, 2, 1)
            return Bt @ DB.reshape(nc, nq * nX, ncol)

        Ke = np.concatenate(self._map_chunks(work))
        Ke[:, :nu, :nu] += lin_u.reshape(self.n_cells, nu, nu)
        nP = nloc * d * d
        Ke[:, nu:, nu:] += lin_P.reshape(self.n_cells, nP, nP)
        return self._sparse_from_elements(Ke)

    def _sparse_from_elements(self, Ke):
        """Sum element matrices into CSR; the summation order is fixed by cell order."""
        if self._pattern is None:
            shape = (self.n_cells,) + (self._local_rows.shape[1],) * 2
            rows = np.broadcast_to(self._local_rows[:, :, None], shape).ravel()
            cols = np.broadcast_to(self._local_rows[:, None, :], shape).ravel()
            keys = rows.astype(np.int64) * self.n + cols
            uniq, slot = np.unique(keys, return_inverse=True)
            indptr = np.searchsorted(uniq // self.n, np.arange(self.n + 1))
            self._pattern = (slot, (uniq % self.n).astype(np.int32), indptr.astype(np.int32))
        slot, indices, indptr = self._pattern
        data = np.bincount(slot, weights=Ke.ravel(), minlength=len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(self.n, self.n))

    def step_residual(self, z1, old, dt, loads, t1, params, rho, constraints=None):
        u1, P1 = self.unpack(z1)
        v1 = (u1 - old.u) / dt
        rates = Rates(a=(v1 - old.v) / dt, Pdot=(P1 - old.P) / dt)
        state = SystemState(t1, u1, v1, P1)
        r = self.internal_residual(state, rates, params, rho)
        r[:self.n_u] -= self.load_vector(loads, t1).ravel()
        if constraints:
            idx = np.fromiter(constraints.keys(), dtype=int)
            vals = np.fromiter(constraints.values(), dtype=float)
            r_full = r.copy()
            r[idx] = z1[idx] - vals
            return r, r_full
        return r, r

    # -- energies and monitors ---------------------------------------------

    def _state_quad(self, state, Pdot=None):
        T = self.table
        Pd = np.zeros_like(state.P) if Pdot is None else Pdot
        return self.quad_state(state.u[T.dofs], state.v[T.dofs], state.P[T.dofs], Pd[T.dofs])

    def integrate(self, values):
        return float(np.sum(values * self.table.w))

    def energies(self, state, params, rho=None):
        """Stored and kinetic energies of a state as an EnergyBreakdown."""
        rho = params.rho if rho is None else rho
        q = self._state_quad(state)
        fe, fh, fg = cm.stored_parts(q, params)
        vq = np.einsum("cai,caq->cqi", state.v[self.table.dofs], self.table.N)
        kin = 0.5 * rho * self.integrate(np.einsum("cqi,cqi->cq", vq, vq))
        return cm.EnergyBreakdown(kinetic=kin, elastic=self.integrate(fe),
                                  constraint=self.integrate(fh), gradient=self.integrate(fg))

    def dissipation_rates(self, state, Pdot, params):
        """(kv, m, h) integrals of ν|·|² (twice the dissipation potential) at the state."""
        q = self._state_quad(state, Pdot)
        kv, m, h = cm.dissipation_parts(q, params)
        return 2 * self.integrate(kv), 2 * self.integrate(m), 2 * self.integrate(h)

    def monitor_determinants(self, state):
        """(min det Π, min det ∇y, min det F_el) over all quadrature points."""
        q = self._state_quad(state)
        JP = tn.det(q.P)
        Jy = tn.det(q.grad_y)
        with np.errstate(divide="ignore", invalid="ignore"):
            Je = Jy / JP
        return float(JP.min()), float(Jy.min()), float(Je.min())

    # -- projection ------------------------------------------------------------

    def mass_matrix(self):
        T = self.table
        nc, nloc = T.dofs.shape
        rows = np.broadcast_to(T.dofs[:, :, None], (nc, nloc, nloc)).ravel()
        cols = np.broadcast_to(T.dofs[:, None, :], (nc, nloc, nloc)).ravel()
        return sp.csr_matrix((self.local_mass.ravel(), (rows, cols)), shape=(self.nb, self.nb))

    def l2_project(self, fn):
        """L² projection of fn(x) -> (..., *comp) onto the spline space; returns (n_basis, *comp)."""
        T = self.table
        vals = np.asarray(fn(T.x), dtype=float)
        comp = vals.shape[2:]
        rhs = self.reduce(np.einsum("cq,cq...,caq->ca...", T.w, vals, T.N))
        lu = splu(self.mass_matrix().tocsc())
        sol = lu.solve(rhs.reshape(self.nb, -1))
        return sol.reshape((self.nb,) + comp)


    def green_defect(self, A, v):
        """∫ A:∇v + ∫ div A · v for spline fields A (n_basis, d, d) and v (n_basis, d).

        Vanishes up to round-off when every direction is periodic.
        """
        Aq, dA, _ = self.eval_fields(A)
        vq, dv, _ = self.eval_fields(v)
        div = np.einsum("cqijj->cqi", dA)
        return (self.integrate(np.einsum("cqij,cqij->cq", Aq, dv))
                + self.integrate(np.einsum("cqi,cqi->cq", div, vq)))
