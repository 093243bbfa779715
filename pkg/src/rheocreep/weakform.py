"""Pointwise integrands of the momentum balance and the creep flow rule.

Both integrands are linear in the test functions, so they are evaluated as
contractions of conjugate "driving force" tensors with the test data::

    momentum = S : ∇ỹ + H ⋮ ∇∇ỹ
    flow     = Q : Π̃ + K ⋮ ∇Π̃ + ν_h ∇²Π̇ :: ∇²Π̃

The assembler uses the conjugates directly; the integrand functions exist for
verification against finite differences of the energy and dissipation
densities.
"""

from dataclasses import dataclass

import numpy as np

from . import constitutive as cm
from . import tensor as tn


@dataclass
class DrivingForces:
    stress_1: np.ndarray     # S, paired with ∇ỹ
    hyperstress: np.ndarray  # H, paired with ∇∇ỹ
    flow_force: np.ndarray   # Q, paired with Π̃
    flow_hyper: np.ndarray   # K, paired with ∇Π̃
    flow_hyper2: np.ndarray  # ν_h ∇²Π̇, paired with ∇²Π̃


def _kinematics(q):
    Pinv = tn.inverse(q.P)
    dPinv = tn.grad_inverse(q.P, q.grad_P)
    Fe = q.grad_y @ Pinv
    G = tn.grad_product(q.grad_y, q.grad2_y, Pinv, dPinv)
    return Pinv, dPinv, Fe, G


def energetic_forces(q, p, parts=("E", "H", "G")):
    """Conjugates of the stored-energy variation, (S, H, Q, K).

    ``parts`` selects which of F_E, F_H, F_G contribute.
    """
    cm._positive_det(q.P, "Π")
    Pinv, dPinv, Fe, G = _kinematics(q)
    PinvT = tn.transpose(Pinv)
    F = q.grad_y
    shape = F.shape
    d = shape[-1]
    S = np.zeros(shape)
    H = np.zeros(shape + (d,))
    Q = np.zeros(shape)
    K = np.zeros(shape + (d,))

    if "E" in parts:
        dFE = cm.fe_dF(Fe, p)
        S = S + dFE @ PinvT
        Q = Q - PinvT @ tn.transpose(F) @ dFE @ PinvT
    if "H" in parts:
        Q = Q + cm.fh_dP(q.P, p)
    if "G" in parts and p.eps_g != 0:
        Hg = cm.fg_dG(G, p)
        # y-variation: δG_ijk = ∂_k∇ỹ_im Pinv_mj + ∇ỹ_im ∂_kPinv_mj
        S = S + tn.batched_einsum("...ijk,...mjk->...im", Hg, dPinv)
        H = H + tn.batched_einsum("...ijk,...mj->...imk", Hg, Pinv)
        # Π-variation through W = -Pinv Π̃ Pinv and ∂_k W
        A1 = tn.batched_einsum("...ijk,...imk->...mj", Hg, q.grad2_y)
        B = tn.batched_einsum("...im,...ijk->...mjk", F, Hg)
        Q = Q - PinvT @ A1 @ PinvT
        Q = Q - tn.batched_einsum("...mpk,...mjk,...qj->...pq", dPinv, B, Pinv)
        Q = Q - tn.batched_einsum("...mp,...mjk,...qjk->...pq", Pinv, B, dPinv)
        K = K - tn.batched_einsum("...mp,...mjk,...qj->...pqk", Pinv, B, Pinv)
    return S, H, Q, K


def kv_forces(q, p):
    """Kelvin-Voigt conjugates: stress 2 F Π⁻¹ Σ Π⁻ᵀ and flow force -2 C_el Σ Π⁻ᵀ."""
    Pinv = tn.inverse(q.P)
    PinvT = tn.transpose(Pinv)
    Sigma = cm.sigma_kv(q, p)
    F = q.grad_y
    C = PinvT @ tn.transpose(F) @ F @ Pinv
    return 2.0 * F @ Pinv @ Sigma @ PinvT, -2.0 * C @ Sigma @ PinvT


def driving_forces(q, p):
    S, H, Q, K = energetic_forces(q, p)
    S_kv, Q_kv = kv_forces(q, p)
    return DrivingForces(
        stress_1=S + S_kv,
        hyperstress=H,
        flow_force=Q + Q_kv + p.nu_m * q.rate_P,
        flow_hyper=K,
        flow_hyper2=p.nu_h * q.rate_grad2_P,
    )


def momentum_integrand(q, test_grad_y, test_grad2_y, p):
    """Instantaneous momentum integrand without inertia and loads."""
    f = driving_forces(q, p)
    return tn.contract22(f.stress_1, test_grad_y) + tn.contract33(f.hyperstress, test_grad2_y)


def flow_integrand(q, test_P, test_grad_P, test_grad2_P, p):
    f = driving_forces(q, p)
    return (tn.contract22(f.flow_force, test_P)
            + tn.contract33(f.flow_hyper, test_grad_P)
            + tn.contract44(f.flow_hyper2, test_grad2_P))


# -- finite-difference verification ---------------------------------------

def _sym_last2(T):
    return 0.5 * (T + np.swapaxes(T, -1, -2))


def random_quad_state(rng, d, amp=0.3):
    """Random admissible state: det ∇y > 0.2 and det Π in (0.3, 3)."""
    eye = np.eye(d)
    while True:
        F = eye + amp * rng.standard_normal((d, d))
        if tn.det(F) > 0.2:
            break
    while True:
        P = eye + amp * rng.standard_normal((d, d))
        if 0.3 < tn.det(P) < 3.0:
            break
    return cm.QuadState(
        grad_y=F,
        grad2_y=_sym_last2(amp * rng.standard_normal((d, d, d))),
        P=P,
        grad_P=amp * rng.standard_normal((d, d, d)),
        grad2_P=_sym_last2(amp * rng.standard_normal((d, d, d, d))),
        rate_grad_y=rng.standard_normal((d, d)),
        rate_P=rng.standard_normal((d, d)),
        rate_grad2_P=_sym_last2(rng.standard_normal((d, d, d, d))),
    )


def _unit(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.sqrt(np.sum(x * x))


def _central(fun, base_norm):
    h = 1e-6 * (1.0 + base_norm)
    return (fun(h) - fun(-h)) / (2.0 * h)


def _rel(a, b):
    a, b = float(a), float(b)
    den = max(abs(a), abs(b))
    return 0.0 if den == 0.0 else abs(a - b) / den


def fd_check_all(seed=7, trials=20, d=2, params=None):
    """Compare every variational derivative with central finite differences.

    Returns the maximum relative error per derivative family over ``trials``
    random admissible states and directions.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = params if params is not None else cm.MaterialParams()
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(("delta_y_phi", "delta_P_phi", "hyperstress", "kv_stress", "kv_flow"), 0.0)

    def phi(s):
        return float(cm.stored_density(s, p))

    def fg_only(s):
        return float(cm.fg_eval(cm.elastic_strain_gradient(s.grad_y, s.grad2_y, s.P, s.grad_P), p))

    def r_kv(s):
        return float(cm.dissipation_parts(s, p)[0])

    for _ in range(trials):
        q = random_quad_state(rng, d)
        X = _unit(rng, (d, d))
        Y = _sym_last2(_unit(rng, (d, d, d)))
        Z = _unit(rng, (d, d))
        Zg = _unit(rng, (d, d, d))
        ny = np.sqrt(np.sum(q.grad_y**2) + np.sum(q.grad2_y**2))
        nP = np.sqrt(np.sum(q.P**2) + np.sum(q.grad_P**2))

        def along_y(h):
            return q.replace(grad_y=q.grad_y + h * X, grad2_y=q.grad2_y + h * Y)

        def along_P(h):
            return q.replace(P=q.P + h * Z, grad_P=q.grad_P + h * Zg)

        S, H, Q, K = energetic_forces(q, p)
        an_y = tn.contract22(S, X) + tn.contract33(H, Y)
        an_P = tn.contract22(Q, Z) + tn.contract33(K, Zg)
        worst["delta_y_phi"] = max(worst["delta_y_phi"], _rel(an_y, _central(lambda h: phi(along_y(h)), ny)))
        worst["delta_P_phi"] = max(worst["delta_P_phi"], _rel(an_P, _central(lambda h: phi(along_P(h)), nP)))

        Sg, Hg, Qg, Kg = energetic_forces(q, p, parts=("G",))
        an_g = (tn.contract22(Sg, X) + tn.contract33(Hg, Y)
                + tn.contract22(Qg, Z) + tn.contract33(Kg, Zg))

        def along_both(h):
            return q.replace(grad_y=q.grad_y + h * X, grad2_y=q.grad2_y + h * Y,
                             P=q.P + h * Z, grad_P=q.grad_P + h * Zg)
        worst["hyperstress"] = max(worst["hyperstress"],
                                   _rel(an_g, _central(lambda h: fg_only(along_both(h)), ny + nP)))

        S_kv, Q_kv = kv_forces(q, p)
        nr = np.sqrt(np.sum(q.rate_grad_y**2) + np.sum(q.rate_P**2))
        fd_kv_y = _central(lambda h: r_kv(q.replace(rate_grad_y=q.rate_grad_y + h * X)), nr)
        fd_kv_P = _central(lambda h: r_kv(q.replace(rate_P=q.rate_P + h * Z)), nr)
        worst["kv_stress"] = max(worst["kv_stress"], _rel(tn.contract22(S_kv, X), fd_kv_y))
        worst["kv_flow"] = max(worst["kv_flow"], _rel(tn.contract22(Q_kv, Z), fd_kv_P))
    return worst
