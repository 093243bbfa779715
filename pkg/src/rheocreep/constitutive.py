"""Energy densities, dissipation potential and elastic kinematics.

Stored energy density at a material point::

    F_E(F_el) + F_H(Π) + F_G(∇F_el),   F_el = ∇y Π^{-1}

with a compressible neo-Hookean F_E plus a one-sided volumetric barrier,
a smoothed isochoric penalty F_H on det Π, and F_G = eps_g |·|^p_g.

Dissipation density (quadratic in rates)::

    ν_m/2 |Π̇|² + ν_h/2 |∇²Π̇|² + ν_kv/2 |Ċ_el|²

All functions broadcast over leading batch dimensions.
"""

from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from . import tensor as tn
from .tensor import NonPositiveDeterminant


@dataclass(frozen=True)
class MaterialParams:
    rho: float = 1.0
    nu_m: float = 1.0
    nu_h: float = 0.01
    nu_kv: float = 1.0
    mu: float = 1.0
    eps_b: float = 0.1
    r_el: float = 7.0
    delta: float = 0.01
    s_h: int = 4
    eps_g: float = 0.01
    p_g: float = 3.0

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class QuadState:
    """Pointwise fields entering the weak forms.

    Shapes (with optional leading batch dims ``...``): grad_y, P, rate_grad_y,
    rate_P are ``(..., d, d)``; grad2_y, grad_P are ``(..., d, d, d)``;
    grad2_P and rate_grad2_P are ``(..., d, d, d, d)`` with the two
    derivative indices last.
    """
    grad_y: np.ndarray
    grad2_y: np.ndarray
    P: np.ndarray
    grad_P: np.ndarray
    grad2_P: np.ndarray
    rate_grad_y: np.ndarray
    rate_P: np.ndarray
    rate_grad2_P: np.ndarray

    @property
    def dim(self):
        return self.grad_y.shape[-1]

    @classmethod
    def reference(cls, d, batch=()):
        eye = np.broadcast_to(np.eye(d), tuple(batch) + (d, d)).copy()
        z2 = np.zeros(tuple(batch) + (d, d))
        z3 = np.zeros(tuple(batch) + (d, d, d))
        z4 = np.zeros(tuple(batch) + (d, d, d, d))
        return cls(eye, z3, eye.copy(), z3.copy(), z4, z2, z2.copy(), z4.copy())

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass
class EnergyBreakdown:
    kinetic: float = 0.0
    elastic: float = 0.0
    constraint: float = 0.0
    gradient: float = 0.0
    dissipated_kv: float = 0.0
    dissipated_m: float = 0.0
    dissipated_h: float = 0.0
    external_work: float = 0.0

    @property
    def stored(self):
        return self.elastic + self.constraint + self.gradient

    @property
    def total(self):
        return self.kinetic + self.stored

    @property
    def dissipated(self):
        return self.dissipated_kv + self.dissipated_m + self.dissipated_h


def _positive_det(A, what):
    J = tn.det(A)
    if np.any(J <= 0):
        raise NonPositiveDeterminant(f"det {what} <= 0 (min {np.min(J):.3e})")
    return J


def _barrier(J, r):
    # (1/J - 1)_+^r
    return np.maximum(1.0 / J - 1.0, 0.0) ** r


def _barrier_slope(J, r):
    # d/dJ (1/J - 1)_+^r
    return -r * np.maximum(1.0 / J - 1.0, 0.0) ** (r - 1) / J**2


# -- elastic energy --------------------------------------------------------

def fe_eval(F_el, p):
    F_el = np.asarray(F_el, dtype=float)
    d = F_el.shape[-1]
    J = tn.det(F_el)
    pos = J > 0
    Js = np.where(pos, J, 1.0)
    sq = np.einsum("...ij,...ij->...", F_el, F_el)
    val = 0.5 * p.mu * (sq - d - 2.0 * np.log(Js)) + p.eps_b * _barrier(Js, p.r_el)
    return np.where(pos, val, np.inf)


def fe_dF(F_el, p):
    F_el = np.asarray(F_el, dtype=float)
    J = _positive_det(F_el, "F_el")
    FinvT = tn.inverse_transpose(F_el)
    # d ln J / dF = F^{-T},  dJ/dF = J F^{-T}
    coef = p.eps_b * _barrier_slope(J, p.r_el) * J
    return p.mu * (F_el - FinvT) + coef[..., None, None] * FinvT


# -- isochoric constraint --------------------------------------------------

def fh_eval(P, p):
    P = np.asarray(P, dtype=float)
    J = tn.det(P)
    pos = J > 0
    Js = np.where(pos, J, 1.0)
    val = p.delta * (1.0 + _barrier(Js, p.s_h)) + (Js - 1.0) ** 2 / (2.0 * p.delta)
    return np.where(pos, val, np.inf)


def fh_dP(P, p):
    P = np.asarray(P, dtype=float)
    J = _positive_det(P, "Π")
    coef = p.delta * _barrier_slope(J, p.s_h) + (J - 1.0) / p.delta
    return coef[..., None, None] * tn.cofactor(P)


# -- gradient term ---------------------------------------------------------

def fg_eval(G, p):
    G = np.asarray(G, dtype=float)
    nrm = np.sqrt(np.einsum("...ijk,...ijk->...", G, G))
    return p.eps_g * nrm**p.p_g


def fg_dG(G, p):
    G = np.asarray(G, dtype=float)
    nrm = np.sqrt(np.einsum("...ijk,...ijk->...", G, G))
    safe = np.where(nrm > 0, nrm, 1.0)
    coef = np.where(nrm > 0, p.eps_g * p.p_g * safe ** (p.p_g - 2), 0.0)
    return coef[..., None, None, None] * G


# -- kinematics ------------------------------------------------------------

def elastic_strain(grad_y, P):
    _positive_det(P, "Π")
    return np.asarray(grad_y, dtype=float) @ tn.inverse(P)


def elastic_strain_gradient(grad_y, grad2_y, P, grad_P):
    """∇F_el for F_el = ∇y Π^{-1}, by the product rule."""
    _positive_det(P, "Π")
    Pinv = tn.inverse(P)
    return tn.grad_product(grad_y, grad2_y, Pinv, tn.grad_inverse(P, grad_P))


def cel(grad_y, P):
    """Elastic Cauchy-Green tensor Π^{-T} ∇y^T ∇y Π^{-1}."""
    Fe = elastic_strain(grad_y, P)
    return tn.transpose(Fe) @ Fe


def cel_rate(q):
    """Time derivative of C_el along (∇ẏ, Π̇)."""
    _positive_det(q.P, "Π")
    Pinv = tn.inverse(q.P)
    F, Fd = q.grad_y, q.rate_grad_y
    C = tn.transpose(Pinv) @ tn.transpose(F) @ F @ Pinv
    M = C @ q.rate_P @ Pinv
    return (tn.transpose(Pinv) @ (tn.transpose(Fd) @ F + tn.transpose(F) @ Fd) @ Pinv
            - (M + tn.transpose(M)))


def sigma_kv(q, p):
    return p.nu_kv * cel_rate(q)


# -- energy and dissipation densities -------------------------------------

def stored_parts(q, p):
    """(F_E, F_H, F_G) densities at the quadrature state."""
    Fe = elastic_strain(q.grad_y, q.P)
    G = elastic_strain_gradient(q.grad_y, q.grad2_y, q.P, q.grad_P)
    return fe_eval(Fe, p), fh_eval(q.P, p), fg_eval(G, p)


def stored_density(q, p):
    fe, fh, fg = stored_parts(q, p)
    return fe + fh + fg


def dissipation_parts(q, p):
    """(kv, m, h) parts of the dissipation potential density."""
    cd = cel_rate(q)
    kv = 0.5 * p.nu_kv * np.einsum("...ij,...ij->...", cd, cd)
    m = 0.5 * p.nu_m * np.einsum("...ij,...ij->...", q.rate_P, q.rate_P)
    h = 0.5 * p.nu_h * np.einsum("...ijkl,...ijkl->...", q.rate_grad2_P, q.rate_grad2_P)
    return kv, m, h


def dissipation_density(q, p):
    kv, m, h = dissipation_parts(q, p)
    return kv + m + h


# -- admissibility of the exponents ---------------------------------------

def sobolev_star(d, p_g):
    """Exponent 2* for W^{1,2}; for d = 2 any finite value works and we take 2·p_g."""
    if d == 3:
        return 6.0
    if d == 2:
        return 2.0 * p_g
    raise ValueError(f"dimension must be 2 or 3, got {d}")


def validate_params(p, d, mode: Optional[str] = None):
    """Return the list of violated assumptions (empty if admissible)."""
    out = []
    if p.rho < 0:
        out.append("rho must be >= 0")
    if mode == "dynamic" and not p.rho > 0:
        out.append("rho must be > 0 in dynamic mode")
    for name in ("nu_m", "nu_h", "nu_kv"):
        if not getattr(p, name) > 0:
            out.append(f"{name} must be > 0")
    for name in ("mu", "eps_b", "delta", "eps_g"):
        if not getattr(p, name) > 0:
            out.append(f"{name} must be > 0")
    if d not in (2, 3):
        out.append(f"dimension must be 2 or 3, got {d}")
        return out
    star = sobolev_star(d, p.p_g)
    if not p.p_g > d:
        out.append("p_g must exceed d")
    elif not p.p_g < star:
        out.append(f"p_g must be below 2* = {star:g}")
    else:
        bound = p.p_g * d / (p.p_g - d)
        if not p.r_el > bound:
            out.append(f"r_el must exceed p_g*d/(p_g-d) = {bound:g}")
    if float(p.s_h) != int(p.s_h) or p.s_h < 3:
        out.append("s_h must be an integer >= 3")
    s_bound = star * d / (star - d)
    if not p.s_h > s_bound:
        out.append(f"s_h must exceed 2*d/(2*-d) = {s_bound:g}")
    return out
