import numpy as np
import pytest

from rheocreep import constitutive as cm
from rheocreep import tensor as tn
from rheocreep.weakform import random_quad_state

P0 = cm.MaterialParams()


def central(fun, x, direction, h=1e-6):
    return (fun(x + h * direction) - fun(x - h * direction)) / (2 * h)


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_fe_reference_is_stress_free():
    for d in (2, 3):
        assert cm.fe_eval(np.eye(d), P0) == 0.0
        assert np.allclose(cm.fe_dF(np.eye(d), P0), 0.0)


def test_fe_isochoric_diagonal_value():
    p = P0.replace(mu=1.0, eps_b=0.0)
    assert np.isclose(cm.fe_eval(np.diag([2.0, 0.5]), p), 1.125, rtol=1e-15)


def test_fe_infinite_and_derivative_error_for_nonpositive_det():
    F = np.diag([1.0, -1.0])
    assert cm.fe_eval(F, P0) == np.inf
    with pytest.raises(tn.NonPositiveDeterminant):
        cm.fe_dF(F, P0)


@pytest.mark.parametrize("d", [2, 3])
def test_density_gradients_match_fd(d):
    rng = np.random.default_rng(100 + d)
    worst = 0.0
    for _ in range(50):
        F = np.eye(d) + 0.3 * rng.standard_normal((d, d))
        if tn.det(F) <= 0.2:
            continue
        P = np.eye(d) + 0.3 * rng.standard_normal((d, d))
        if not 0.3 < tn.det(P) < 3.0:
            continue
        G = rng.standard_normal((d, d, d))
        H3 = rng.standard_normal((d, d, d))
        H = rng.standard_normal((d, d))
        for fun, grad, x, dirn, pair in (
                (lambda A: cm.fe_eval(A, P0), cm.fe_dF, F, H, tn.contract22),
                (lambda A: cm.fh_eval(A, P0), cm.fh_dP, P, H, tn.contract22),
                (lambda A: cm.fg_eval(A, P0), cm.fg_dG, G, H3, tn.contract33)):
            an = pair(grad(x, P0), dirn)
            fd = central(fun, x, dirn)
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-12))
    assert worst <= 1e-5


def test_fh_examples():
    assert np.isclose(cm.fh_eval(np.eye(2), P0), P0.delta)
    assert np.allclose(cm.fh_dP(np.eye(2), P0), 0.0)
    assert np.isclose(cm.fh_eval(np.diag([2.0, 1.0]), P0.replace(delta=0.01)), 50.01, rtol=1e-13)
    assert cm.fh_eval(np.diag([-1.0, 1.0]), P0) == np.inf
    with pytest.raises(tn.NonPositiveDeterminant):
        cm.fh_dP(np.diag([-1.0, 1.0]), P0)


def test_fh_blows_up_near_zero_det():
    assert cm.fh_eval(0.01 * np.eye(2), P0) > 1e4 * cm.fh_eval(0.5 * np.eye(2), P0)


def test_fg_examples():
    G = np.zeros((2, 2, 2))
    assert cm.fg_eval(G, P0) == 0.0
    assert np.array_equal(cm.fg_dG(G, P0), G)
    G[0, 1, 1] = 1.0
    assert cm.fg_eval(G, P0.replace(eps_g=1.0, p_g=3.0)) == 1.0


def test_fg_monotonicity_constant_positive():
    rng = np.random.default_rng(7)
    p = P0.replace(eps_g=1.0, p_g=3.0)
    ratios = []
    for _ in range(100):
        G, Gt = rng.standard_normal((2, 2, 2, 2))
        diff = G - Gt
        ratios.append(tn.contract33(cm.fg_dG(G, p) - cm.fg_dG(Gt, p), diff) / np.linalg.norm(diff) ** p.p_g)
    assert min(ratios) > 0.0


def test_fe_frame_indifference():
    rng = np.random.default_rng(8)
    for _ in range(20):
        F = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
        if tn.det(F) <= 0.2:
            continue
        Q = rotation(rng.uniform(0, 2 * np.pi))
        assert abs(cm.fe_eval(Q @ F, P0) - cm.fe_eval(F, P0)) <= 1e-12 * max(1.0, cm.fe_eval(F, P0))


def test_cel_examples():
    assert np.allclose(cm.cel(np.eye(2), np.eye(2)), np.eye(2))
    P = np.array([[1.0, 0.7], [0.0, 1.0]])
    assert np.allclose(cm.cel(P, P), np.eye(2), atol=1e-15)
    rng = np.random.default_rng(9)
    F, P = np.eye(3) + 0.2 * rng.standard_normal((2, 3, 3))
    Fe = F @ np.linalg.inv(P)
    assert np.allclose(cm.cel(F, P), Fe.T @ Fe, rtol=1e-13, atol=1e-13)


def test_cel_rate_examples():
    d = 2
    q = cm.QuadState.reference(d)
    rng = np.random.default_rng(10)
    F = np.eye(d) + 0.2 * rng.standard_normal((d, d))
    Fd = rng.standard_normal((d, d))
    qa = q.replace(grad_y=F, rate_grad_y=Fd)
    assert np.allclose(cm.cel_rate(qa), Fd.T @ F + F.T @ Fd)
    E = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.allclose(cm.cel_rate(q.replace(rate_P=E)), -2 * tn.sym(E))


@pytest.mark.parametrize("d", [2, 3])
def test_cel_rate_is_path_derivative(d):
    rng = np.random.default_rng(11 + d)
    h = 1e-6
    for _ in range(10):
        q = random_quad_state(rng, d)
        fd = (cm.cel(q.grad_y + h * q.rate_grad_y, q.P + h * q.rate_P)
              - cm.cel(q.grad_y - h * q.rate_grad_y, q.P - h * q.rate_P)) / (2 * h)
        an = cm.cel_rate(q)
        assert np.linalg.norm(fd - an) <= 1e-6 * np.linalg.norm(an)
        assert np.allclose(an, an.T)


def test_sigma_kv_properties():
    rng = np.random.default_rng(12)
    q = random_quad_state(rng, 2)
    assert np.allclose(cm.sigma_kv(q.replace(rate_P=0 * q.rate_P, rate_grad_y=0 * q.rate_grad_y), P0), 0.0)
    assert np.allclose(cm.sigma_kv(q, P0.replace(nu_kv=0.0)), 0.0)
    assert np.allclose(cm.sigma_kv(q, P0.replace(nu_kv=2 * P0.nu_kv)), 2 * cm.sigma_kv(q, P0))


def test_dissipation_density_examples():
    q = cm.QuadState.reference(2)
    assert cm.dissipation_density(q, P0) == 0.0
    E11 = np.array([[1.0, 0.0], [0.0, 0.0]])
    expect = P0.nu_m / 2 + P0.nu_kv / 2 * np.sum((-2 * tn.sym(E11)) ** 2)
    assert np.isclose(cm.dissipation_density(q.replace(rate_P=E11), P0), expect)
    qr = random_quad_state(np.random.default_rng(13), 2)
    doubled = qr.replace(rate_grad_y=2 * qr.rate_grad_y, rate_P=2 * qr.rate_P, rate_grad2_P=2 * qr.rate_grad2_P)
    assert np.isclose(cm.dissipation_density(doubled, P0), 4 * cm.dissipation_density(qr, P0), rtol=1e-13)
    assert cm.dissipation_density(qr, P0) >= P0.nu_m / 2 * np.sum(qr.rate_P ** 2)


def test_validate_params_examples():
    assert cm.validate_params(P0, 2) == []
    p3 = P0.replace(p_g=4.0, r_el=12.0, s_h=7)
    assert any("r_el must exceed" in v and "12" in v for v in cm.validate_params(p3, 3))
    assert cm.validate_params(P0.replace(p_g=4.0, r_el=13.0, s_h=7), 3) == []
    assert "p_g must exceed d" in cm.validate_params(P0.replace(p_g=2.0), 2)
    assert "nu_h must be > 0" in cm.validate_params(P0.replace(nu_h=0.0), 2)
    assert "rho must be > 0 in dynamic mode" in cm.validate_params(P0.replace(rho=0.0), 2, "dynamic")
    assert cm.validate_params(P0.replace(rho=0.0), 2, "quasi_static") == []
    assert any("s_h" in v for v in cm.validate_params(P0.replace(s_h=2), 2))
    assert cm.sobolev_star(3, 4.0) == 6.0 and cm.sobolev_star(2, 3.0) == 6.0


def test_energy_breakdown_totals():
    e = cm.EnergyBreakdown(kinetic=1, elastic=2, constraint=3, gradient=4,
                           dissipated_kv=5, dissipated_m=6, dissipated_h=7)
    assert (e.stored, e.total, e.dissipated) == (9, 10, 18)
