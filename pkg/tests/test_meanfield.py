import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, fsolve

from hostparasite import meanfield as mf
from hostparasite.simplex import TernaryWeights

simplex_pt = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v))
etas = st.floats(0.05, 0.95)


def projected(x, eta, r):
    d = mf.rhs((x[0], 1 - x[0] - x[1], x[1]), eta, r)
    return np.array([d[0], d[2]])


@given(v=simplex_pt, eta=etas, r=st.floats(0, 20))
def test_rhs_conserves_mass(v, eta, r):
    assert abs(mf.rhs(v, eta, r).sum()) < 1e-14 * max(1.0, r)


@pytest.mark.parametrize("pt", [(1, 0, 0), (0, 0, 1)])
@pytest.mark.parametrize("eta,r", [(0.3, 1.0), (0.5, 2.0), (0.8, 7.0)])
def test_boundary_points_are_fixed(pt, eta, r):
    assert np.array_equal(mf.rhs(pt, eta, r), np.zeros(3))


def test_r0_closed_form():
    for eta in (0.2, 0.5, 0.7):
        path = mf.integrate((0, 1, 0), eta, 0.0, 5.0)
        ts = np.linspace(0, 5, 41)
        e = np.exp(-ts)
        exact = np.c_[(1 - eta) * (1 - e), e, eta * (1 - e)]
        assert np.max(np.abs(path(ts) - exact)) < 1e-8


def test_integrator_against_scipy():
    path = mf.integrate((0.3, 0.3, 0.4), 0.6, 3.0, 4.0)
    ref = solve_ivp(lambda t, y: mf.rhs(y, 0.6, 3.0), (0, 4), [0.3, 0.3, 0.4], method="DOP853",
                    rtol=1e-12, atol=1e-14, dense_output=True)
    ts = np.linspace(0, 4, 33)
    assert np.max(np.abs(path(ts) - ref.sol(ts).T)) < 1e-8


def test_eta_half_r1_converges_to_thirds():
    assert np.max(np.abs(mf.integrate((0.4, 0.2, 0.4), 0.5, 1.0, 200.0).terminal - 1 / 3)) < 1e-6


def test_equilibrium_start_is_constant():
    path = mf.integrate((1, 0, 0), 0.4, 2.0, 10.0)
    assert np.all(path.y == np.array([1.0, 0.0, 0.0]))


def test_integrate_errors():
    with pytest.raises(ValueError):
        mf.integrate((0.5, 0.6, 0.0), 0.5, 1.0, 1.0)
    with pytest.raises(mf.StepSizeUnderflow):
        mf.integrate((0.3, 0.3, 0.4), 0.5, 1e4, 1.0, min_step=1e-3)
    with pytest.raises(ValueError):
        mf.integrate((0.3, 0.3, 0.4), 0.5, 1.0, 1.0)(2.0)


@given(v=simplex_pt, eta=etas, r=st.floats(0, 10))
def test_forward_invariance(v, eta, r):
    path = mf.integrate(v, eta, r, 5.0)
    assert path.min_component > -1e-9
    assert path.max_sum_drift < 1e-9


def test_interior_equilibrium_examples():
    assert mf.interior_equilibrium(0.5, 2.0).as_array() == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)
    u = mf.interior_equilibrium(0.6, 2.0).as_array()
    # independent oracle: root of the projected field near the closed form
    root = fsolve(projected, [0.1, 0.6], args=(0.6, 2.0), xtol=1e-12)
    assert u[[0, 2]] == pytest.approx(root, abs=1e-10)
    assert u == pytest.approx([0.065193, 0.316184, 0.618622], abs=1e-6)
    assert mf.interior_equilibrium(0.6, 1.0) is None


def test_interior_equilibrium_on_grid():
    for eta in np.linspace(0.1, 0.9, 10):
        for r in np.linspace(0.0, 10.0, 5) + mf.existence_threshold(eta) + 0.01:
            u = mf.interior_equilibrium(eta, r)
            assert u is not None
            assert np.max(np.abs(mf.rhs(u, eta, r))) < 1e-10


def test_thresholds():
    assert mf.existence_threshold(0.5) == 0.0
    assert mf.existence_threshold(0.6) == pytest.approx(25 / 24, rel=1e-14)
    assert mf.existence_threshold(0.4) == pytest.approx(25 / 24, rel=1e-14)
    assert mf.coupling_threshold(0.5) == 1.0
    assert mf.coupling_threshold(0.6) == pytest.approx(1.875, rel=1e-14)
    for eta in np.linspace(0.01, 0.99, 99):
        assert mf.coupling_threshold(eta) >= mf.existence_threshold(eta)
    with pytest.raises(ValueError):
        mf.existence_threshold(1.0)


def test_limits_in_r():
    assert mf.interior_equilibrium(0.5, 1e3).veta > 0.99
    u = mf.interior_equilibrium(0.5, 3.0)
    assert u.veta * 0.5 + u.v1 == pytest.approx(0.5, abs=1e-14)
    u = mf.interior_equilibrium(0.6, 3.0)
    assert abs(u.veta * 0.6 + u.v1 - 0.6) > 1e-3


def test_boundary_jacobian_matches_displayed_form():
    for eta, r in [(0.6, 2.0), (0.3, 0.7)]:
        J = mf.jacobian_projected(0.0, 1.0, eta, r)
        shown = np.array([[eta - 1 - 2 * r * eta, eta - 1],
                          [-eta - 2 * r * (1 - eta) * eta, -eta + 2 * r * (1 - eta) ** 2]])
        assert np.allclose(J, shown, atol=1e-14)
        _, b, c = mf.boundary_quadratic(eta, r)
        for lam in np.linalg.eigvals(J):
            assert abs(lam**2 + b * lam + c) < 1e-10


@given(seed=st.integers(0, 2**32), eta=etas, r=st.floats(0.0, 10.0))
def test_jacobian_central_differences(seed, eta, r):
    v = np.random.default_rng(seed).dirichlet(np.ones(3))
    x = v[[0, 2]]
    h = 1e-6
    num = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        num[:, j] = (projected(x + e, eta, r) - projected(x - e, eta, r)) / (2 * h)
    assert np.allclose(mf.jacobian_projected(x[0], x[1], eta, r), num, atol=1e-6)


def test_constant_term_changes_sign_at_rstar():
    c = lambda r: mf.boundary_quadratic(0.6, r)[2]
    assert c(25 / 24 - 1e-3) * c(25 / 24 + 1e-3) < 0
    assert brentq(c, 0.5, 2.0, xtol=1e-13) == pytest.approx(25 / 24, abs=1e-9)


def test_classification_examples():
    rep = mf.classify_equilibria(0.5, 1.0, check_attraction=True, n_starts=5)
    assert rep.classification == {"100": "saddle", "001": "saddle", "u": "stable"}
    assert rep.attracting
    rep = mf.classify_equilibria(0.6, 0.5)
    assert rep.classification == {"100": "saddle", "001": "stable"}
    assert rep.interior is None
    rep = mf.classify_equilibria(0.4, 0.5)
    assert rep.classification == {"100": "stable", "001": "saddle"}


def test_non_classified_at_threshold():
    rep = mf.classify_equilibria(0.6, mf.existence_threshold(0.6))
    assert "non-classified" in rep.classification.values()


def test_global_attraction_multistart():
    rng = np.random.default_rng(4)
    for eta, r in [(0.5, 2.0), (0.7, 5.0)]:
        u = mf.interior_equilibrium(eta, r).as_array()
        for _ in range(100):
            end = mf.integrate(rng.dirichlet(np.ones(3)), eta, r, 500.0, reltol=1e-9).terminal
            assert np.max(np.abs(end - u)) < 1e-6


def test_sweep_and_portrait_csv():
    rows = mf.equilibrium_sweep([0.5, 0.6], [0.5, 2.0])
    text = mf.sweep_csv(rows)
    assert text.splitlines()[0] == "eta,r,u0,ueta,u1,rstar,classification"
    assert len(text.splitlines()) == 5
    pp = mf.phase_portrait(0.5, 1.0, n=5)
    assert pp.shape == (15, 4)
    assert isinstance(mf.integrate((0.3, 0.3, 0.4), 0.5, 1.0, 1.0).weights(0.5), TernaryWeights)
