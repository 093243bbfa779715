import json

import numpy as np
import pytest
from scipy.integrate import quad

from rheocreep import constitutive as cm
from rheocreep import stratified as st
from rheocreep import tensor as tn
from rheocreep.stratified import RegularizerKind as K

TANH = st.SlipProfile("tanh", 1.0, 0.2)
LINEAR = st.SlipProfile("linear", 1.0)
X2 = np.linspace(-1.0, 1.0, 41)


@pytest.mark.parametrize("prof", [TANH, LINEAR, st.SlipProfile("tanh", 2.5, 0.7)])
def test_profile_boundary_values(prof):
    assert prof.g(prof.ell) == pytest.approx(1.0, abs=1e-15)
    assert prof.g(-prof.ell) == pytest.approx(-1.0, abs=1e-15)
    assert prof.slip(4.0, prof.ell) == pytest.approx(4.0, abs=1e-14)


def test_profile_derivatives_match_fd():
    x, h = np.linspace(-0.9, 0.9, 13), 1e-5
    for order in (1, 2):
        fd = (TANH.g(x + h, order - 1) - TANH.g(x - h, order - 1)) / (2 * h)
        assert np.allclose(TANH.g(x, order), fd, rtol=1e-7, atol=1e-6)


def test_profile_validation():
    for bad in (dict(kind="cubic"), dict(kind="tanh", ell=0.0), dict(kind="tanh", width=-1.0)):
        with pytest.raises(ValueError):
            st.SlipProfile(**bad)


def test_plastic_strain_examples():
    assert np.array_equal(st.plastic_strain_stripe(TANH, 0.0, X2), np.broadcast_to(np.eye(2), (41, 2, 2)))
    P = st.plastic_strain_stripe(st.SlipProfile("linear", 2.0), 3.0, X2 * 2)
    assert np.allclose(P[:, 0, 1], 1.5, rtol=0, atol=1e-15)
    P = st.plastic_strain_stripe(TANH, 37.0, X2)
    assert np.all(tn.det(P) == 1.0)
    fh = cm.fh_eval(P, cm.MaterialParams())
    assert np.allclose(fh, cm.MaterialParams().delta, rtol=1e-15)


def test_vanishing_densities_are_exact_zero():
    for kind in (K.GradFel, K.CurlP, K.PCurlP):
        for prof in (TANH, LINEAR):
            assert np.all(st.regularizer_density(kind, prof, 50.0, X2) == 0.0)


def test_standard_density_matches_formula():
    t, kappa = 7.0, 0.3
    got = st.regularizer_density(K.StandardGradP, TANH, t, X2, kappa)
    assert np.allclose(got, 0.5 * kappa * t ** 2 * TANH.g(X2, 2) ** 2, rtol=1e-14, atol=0)


def test_push_forward_and_metric_components():
    t = 3.0
    a, b = t * TANH.g(X2, 1), t * TANH.g(X2, 2)
    push = st.regularizer_density(K.PushForward, TANH, t, X2)
    assert np.allclose(push, 0.5 * (b ** 2 + (a * b) ** 2), rtol=1e-12)
    metric = st.regularizer_density(K.MetricTensor, TANH, t, X2)
    assert np.allclose(metric, 0.5 * (2 * b ** 2 + (2 * a * b) ** 2), rtol=1e-12)
    assert np.all(metric >= st.regularizer_density(K.StandardGradP, TANH, t, X2))


def test_densities_are_linear_in_kappa():
    for kind in st.ALL_KINDS:
        one = st.regularizer_density(kind, TANH, 5.0, X2, 1.0)
        assert np.allclose(st.regularizer_density(kind, TANH, 5.0, X2, 2.0), 2 * one, rtol=1e-15, atol=0)


def test_density_broadcasts_over_time():
    times = np.array([1.0, 2.0, 10.0])[:, None]
    for kind in st.ALL_KINDS:
        grid = st.regularizer_density(kind, TANH, times, X2)
        assert grid.shape == (3, 41)
        assert np.allclose(grid[2], st.regularizer_density(kind, TANH, 10.0, X2), rtol=1e-15, atol=0)


def test_standard_energy_against_adaptive_quadrature():
    kappa, t = 0.7, 12.0
    c = 0.5 * kappa * quad(lambda x: TANH.g(x, 2) ** 2, -1.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)[0]
    got = st.stripe_energy(K.StandardGradP, TANH, t, kappa)
    assert abs(got - c * t * t) <= 1e-8 * c * t * t


def test_stripe_energy_examples():
    assert st.stripe_energy(K.StandardGradP, LINEAR, 10.0) == 0.0
    assert st.stripe_energy(K.GradFel, TANH, 10.0) == 0.0
    with pytest.raises(ValueError):
        st.stripe_energy(K.StandardGradP, TANH, 1.0, quad_points=8)


def test_grad_pdot_energy_is_constant():
    E = st.stripe_energies(K.GradPdot, TANH, np.linspace(1.0, 100.0, 25))
    assert (E.max() - E.min()) / E.max() <= 1e-12


def test_mean_gradients():
    assert np.array_equal(st.mean_rate_gradient(st.SlipProfile("tanh", 1.0), 5.0), [[0, 1], [0, 0]])
    assert st.mean_rate_gradient(st.SlipProfile("linear", 2.0), 1.0)[0, 1] == 0.5
    for t in (0.1, 100.0):
        assert np.array_equal(st.mean_rate_gradient(TANH, t), st.mean_rate_gradient(LINEAR, t))
    assert st.mean_slip_gradient(TANH, 3.0) == pytest.approx(3.0, abs=1e-12)
    assert st.mean_slip_gradient(TANH, 0.0) == 0.0
    x, w = np.polynomial.legendre.leggauss(400)
    numeric = 7.0 * np.sum(w * TANH.g(x, 1)) / 2.0
    assert abs(numeric - st.mean_slip_gradient(TANH, 7.0)) <= 1e-12


def test_audit_classifications():
    rep = st.audit([TANH, LINEAR])
    assert rep.entry(K.GradFel, TANH).classification == "vanishes"
    assert rep.entry(K.CurlP, TANH).classification == "vanishes"
    assert rep.entry(K.PCurlP, TANH).classification == "vanishes"
    assert rep.entry(K.StandardGradP, LINEAR).classification == "vanishes"
    std = rep.entry(K.StandardGradP, TANH)
    assert std.classification == "grows" and abs(std.exponent - 2.0) <= 0.05
    for kind in (K.PushForward, K.MetricTensor):
        e = rep.entry(kind, TANH)
        assert e.classification == "grows" and abs(e.exponent - 4.0) <= 0.10
    assert rep.entry(K.GradPdot, TANH).classification == "bounded"
    with pytest.raises(KeyError):
        st.audit(TANH, kinds=[K.CurlP]).entry(K.GradFel)


def test_audit_is_kappa_invariant():
    a, b = st.audit(TANH, kappa=1.0), st.audit(TANH, kappa=1e-3)
    assert [e.classification for e in a.entries] == [e.classification for e in b.entries]


def test_audit_rejects_bad_grids():
    for grid in ([1.0, 2.0, 50.0], [1.0, 0.5, 200.0], [0.0, 1.0, 100.0]):
        with pytest.raises(ValueError):
            st.audit(TANH, t_grid=grid)


def test_fit_and_classify_helpers():
    t = st.default_time_grid(100.0, 21)
    assert t[0] == pytest.approx(1.0) and t[-1] == pytest.approx(100.0)
    assert st.fit_exponent(t, 3 * t ** 2.5) == pytest.approx(2.5, abs=1e-12)
    assert st.classify(t, np.zeros_like(t))[0] == "vanishes"
    assert st.classify(t, np.ones_like(t))[0] == "bounded"
    assert st.classify(t, t)[0] == "grows"


def test_audit_outputs(tmp_path):
    rep = st.audit(TANH)
    csv = tmp_path / "audit.csv"
    st.write_audit_csv(rep, csv)
    rows = csv.read_text().splitlines()
    assert rows[0].split(",") == ["t"] + [k.value for k in st.ALL_KINDS]
    assert len(rows) == 1 + len(rep.t)
    back = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1], rep.entries[0].energies)
    summ = tmp_path / "summary.txt"
    st.write_audit_summary(rep, summ, {"profile": TANH.label})
    data = json.loads(summ.read_text())
    assert data["profile"] == "tanh(w=0.2)" and len(data["entries"]) == 7
