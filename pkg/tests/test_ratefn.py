import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldflow.measures import Flow, Measure
from ldflow.model import invariant_measure, stationary_flow, three_cell_model, two_cell_model
from ldflow.oracle import contraction_oracle
from ldflow.ratefn import (IntegrabilityError, MeasureFlowPair, OptConfig, RateReport,
                           donsker_varadhan, dv_objective, f_objective, flow_minimizer_measure,
                           flow_rate, integrability_check, phi_fn, psi, r_F, rate_I,
                           rate_I_variational)

from conftest import random_balanced_flow, random_model

seeds = st.integers(0, 2**32 - 1)


# --- scalar functions ------------------------------------------------------

def test_psi_values():
    assert psi(1.0) == 0.0
    assert psi(0.0) == 1.0
    assert psi(math.e) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        psi(-0.1)


def test_phi_values():
    for b in (1e-8, 0.3, 7.0):
        assert phi_fn(b, b) == pytest.approx(0.0, abs=1e-15)
    assert phi_fn(0.0, 2.5) == 2.5
    assert phi_fn(1.0, 0.0) == math.inf
    assert phi_fn(0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        phi_fn(-1.0, 1.0)
    with pytest.raises(ValueError):
        phi_fn(1.0, -1.0)


@settings(max_examples=100)
@given(st.floats(0, 50), st.floats(1e-6, 50))
def test_phi_nonnegative_and_homogeneous(a, b):
    v = phi_fn(a, b)
    assert v >= -1e-12
    assert phi_fn(3 * a, 3 * b) == pytest.approx(3 * v, rel=1e-9, abs=1e-12)


def test_psi_legendre_duality():
    lam = np.arange(-30.0, 3.0, 1e-4)
    for a in np.arange(0.0, 5.0001, 0.1):
        dual = np.max(lam * a - np.expm1(lam))
        assert abs(psi(a) - dual) <= 1e-6


# --- joint rate ------------------------------------------------------------

@pytest.mark.parametrize("factory", [two_cell_model, three_cell_model])
def test_zero_at_stationarity(factory):
    m = factory()
    pi = invariant_measure(m)
    pair = MeasureFlowPair(pi, stationary_flow(m, pi))
    assert rate_I(pair, m).value < 1e-14
    assert rate_I_variational(pair, m).value < 1e-8


def test_measure_on_absorbing_set_has_zero_rate(phonon):
    m = phonon.model
    mu = Measure.point_mass(m.n_cells, phonon.zero_cell)
    assert rate_I(MeasureFlowPair(mu, Flow.zeros(m.n_cells)), m).value == 0.0


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 6))
def test_zero_flow_costs_mu_r(seed, n):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n)
    mu = Measure(rng.dirichlet(np.ones(n)))
    assert rate_I(MeasureFlowPair(mu, Flow.zeros(n)), m).value == pytest.approx(mu(m.r))


def test_unequal_marginals_and_ac_violation():
    m = three_cell_model()
    Q = np.zeros((3, 3))
    Q[0, 1] = 1.0
    rep = rate_I(MeasureFlowPair(Measure(np.ones(3) / 3), Q), m)
    assert rep.value == math.inf and not rep.feasible
    Q = np.array([[0, 1.0, 0], [1.0, 0, 0], [0, 0, 0]])
    rep = rate_I(MeasureFlowPair(Measure([0.0, 0.5, 0.5]), Q), m)
    assert rep.value == math.inf and rep.ac_violation
    assert rate_I_variational(MeasureFlowPair(Measure([0.0, 0.5, 0.5]), Q), m).ac_violation


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        rate_I(MeasureFlowPair(Measure([0.5, 0.5]), np.zeros((2, 2))), three_cell_model())


def test_report_invariant_and_json():
    rep = RateReport(1.0, feasible=False)
    assert rep.value == math.inf
    assert '"inf"' in rep.to_json()


def test_singular_carrier_cells():
    m = three_cell_model()
    mu = Measure([0.2, 0.3, 0.5])
    Q = np.zeros((3, 3))
    Q[0, 1] = Q[1, 0] = 0.05
    base = MeasureFlowPair(mu, Q)
    marked = MeasureFlowPair(mu, Q, singular_cells=(2,))
    diff = rate_I(marked, m).value - rate_I(base, m).value
    # cell 2 leaves the Phi sum (which charged mu_2 r_2 for its absent jumps) and adds mu_2 r_2
    assert diff == pytest.approx(0.0, abs=1e-12)
    Q[2, 2] = 0.1
    assert rate_I(MeasureFlowPair(mu, Q, singular_cells=(2,)), m).ac_violation


def test_zero_level_segment(phonon):
    m = phonon.model
    pi = invariant_measure(m)
    Qpi = stationary_flow(m, pi).mass
    mu0 = np.zeros(m.n_cells)
    mu0[phonon.zero_cell] = 1.0
    for a in (0.0, 0.25, 0.5, 0.75, 1.0):
        pair = MeasureFlowPair(Measure(a * pi.weights + (1 - a) * mu0, tol=1e-9), a * Qpi)
        assert rate_I(pair, m).value < 1e-10


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 6))
def test_convexity_and_nonnegativity(seed, n):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n)
    pairs = [(rng.dirichlet(np.ones(n)), random_balanced_flow(rng, n, rng.uniform(0.1, 2)))
             for _ in range(2)]
    vals = [rate_I(MeasureFlowPair(mu, Q), m).value for mu, Q in pairs]
    assert min(vals) >= 0
    for t in (0.25, 0.5, 0.75):
        mu = t * pairs[0][0] + (1 - t) * pairs[1][0]
        Q = t * pairs[0][1] + (1 - t) * pairs[1][1]
        mix = rate_I(MeasureFlowPair(mu, Q), m).value
        assert mix <= t * vals[0] + (1 - t) * vals[1] + 1e-10


# --- variational form ------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 6), st.sampled_from(["analytic", "zero"]))
def test_variational_matches_closed_form(seed, n, init):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n)
    pair = MeasureFlowPair(rng.dirichlet(np.ones(n)),
                           random_balanced_flow(rng, n, rng.uniform(0.05, 3)))
    exact = rate_I(pair, m).value
    rep = rate_I_variational(pair, m, OptConfig(init=init))
    assert rep.optimizer["converged"]
    assert rep.value <= exact + 1e-12
    assert abs(rep.value - exact) <= 1e-6 * (1 + exact)


def test_variational_gradient_method_is_lower_bound():
    rng = np.random.default_rng(5)
    m = random_model(rng, 4)
    pair = MeasureFlowPair(rng.dirichlet(np.ones(4)), random_balanced_flow(rng, 4))
    exact = rate_I(pair, m).value
    short = rate_I_variational(pair, m, OptConfig(init="zero", method="gradient", max_iter=3))
    assert not short.optimizer["converged"]
    assert short.value <= exact
    full = rate_I_variational(pair, m, OptConfig(init="zero", method="gradient"))
    assert abs(full.value - exact) <= 1e-6 * (1 + exact)


def test_variational_skips_infeasible():
    m = three_cell_model()
    Q = np.zeros((3, 3))
    Q[0, 1] = 1.0
    rep = rate_I_variational(MeasureFlowPair(Measure(np.ones(3) / 3), Q), m)
    assert rep.value == math.inf and rep.optimizer["iterations"] == 0


def test_r_F():
    m = three_cell_model()
    np.testing.assert_allclose(r_F(m, np.zeros((3, 3))), m.r, rtol=1e-14)
    np.testing.assert_allclose(r_F(m, np.full((3, 3), 0.7)), m.r * math.exp(0.7), rtol=1e-14)
    m0 = m.replace(r=np.array([0.0, 1.0, 1.5]))
    assert r_F(m0, np.random.default_rng(0).normal(size=(3, 3)))[0] == 0.0


def _fd_check(fun, x, h=1e-6):
    _, g = fun(x)[:2]
    num = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        num.flat[i] = (fun(x + e)[0] - fun(x - e)[0]) / (2 * h)
    return np.linalg.norm(np.ravel(g) - num) / max(np.linalg.norm(num), 1e-12)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    m = random_model(rng, 4)
    for _ in range(10):
        mu = rng.dirichlet(np.ones(4))
        phi = rng.normal(size=4)
        assert _fd_check(lambda x: dv_objective(x, mu, m), phi) < 1e-5
        pair = MeasureFlowPair(mu, random_balanced_flow(rng, 4))
        F = rng.normal(scale=0.5, size=(4, 4))
        assert _fd_check(lambda x: f_objective(x.reshape(4, 4), pair, m), F.ravel()) < 1e-5


# --- contractions ----------------------------------------------------------

def test_dv_examples(phonon):
    m = three_cell_model()
    pi = invariant_measure(m)
    assert donsker_varadhan(pi, m).value < 1e-12
    _, grad = dv_objective(np.zeros(3), pi, m)
    assert np.max(np.abs(grad)) < 1e-12
    pm = phonon.model
    assert donsker_varadhan(Measure.point_mass(pm.n_cells, phonon.zero_cell), pm).value == 0.0


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(2, 5))
def test_dv_matches_oracle(seed, n):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n)
    mu = rng.dirichlet(np.ones(n))
    dv = donsker_varadhan(mu, m)
    assert dv.optimizer["converged"]
    assert abs(dv.value - contraction_oracle("measure", mu, m, candidates=False)) < 1e-4


def test_dv_with_empty_cell():
    m = three_cell_model()
    mu = np.array([0.0, 0.4, 0.6])
    assert abs(donsker_varadhan(mu, m).value
               - contraction_oracle("measure", mu, m, candidates=False)) < 1e-4


def test_flow_rate_at_stationary_flow():
    m = three_cell_model()
    rep = flow_rate(stationary_flow(m, invariant_measure(m)), m)
    assert rep.value < 1e-12
    assert abs(rep.optimizer["alpha"]) < 1e-9


@pytest.mark.parametrize("scale", [0.2, 0.7, 1.0, 2.0, 5.0])
def test_scaled_stationary_flow_matches_oracle(scale):
    m = three_cell_model()
    Q = scale * stationary_flow(m, invariant_measure(m)).mass
    assert abs(flow_rate(Q, m).value - contraction_oracle("flow", Q, m, candidates=False)) < 1e-4


def test_flow_rate_boundary_case():
    m = three_cell_model()
    Q = np.zeros((3, 3))
    Q[1, 2] = Q[2, 1] = 0.01
    rep = flow_rate(Q, m)
    assert rep.optimizer["boundary"]
    assert rep.optimizer["x0"] == 0
    assert abs(rep.value - contraction_oracle("flow", Q, m, candidates=False)) < 1e-4
    mu = flow_minimizer_measure(Q, m, rep)
    assert rate_I(MeasureFlowPair(mu, Q), m).value == pytest.approx(rep.value, abs=1e-10)


def test_flow_rate_degenerate_and_infeasible():
    m = three_cell_model()
    rep = flow_rate(np.zeros((3, 3)), m)
    assert rep.value == 0.0 and rep.optimizer["degenerate"]
    Q = np.zeros((3, 3))
    Q[0, 1] = 1.0
    assert flow_rate(Q, m).value == math.inf


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(2, 5), st.floats(0.01, 4.0))
def test_flow_rate_matches_oracle(seed, n, scale):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n)
    Q = random_balanced_flow(rng, n, scale)
    assert abs(flow_rate(Q, m).value - contraction_oracle("flow", Q, m, candidates=False)) < 1e-4


# --- integrability ---------------------------------------------------------

def test_integrability_examples():
    m = three_cell_model()
    pi = invariant_measure(m)
    v = integrability_check(MeasureFlowPair(pi, stationary_flow(m, pi)), m)
    assert v <= 1.0
    assert integrability_check(MeasureFlowPair(pi, Flow.zeros(3)), m) == 0.0


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 6))
def test_integrability_bound_random(seed, n):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n, r_lo=0.01, r_hi=10.0)
    pair = MeasureFlowPair(rng.dirichlet(np.ones(n)),
                           random_balanced_flow(rng, n, rng.uniform(0.01, 5)))
    integrability_check(pair, m)  # raises on violation


def test_integrability_requires_finite_rate():
    m = three_cell_model()
    Q = np.zeros((3, 3))
    Q[0, 1] = 1.0
    with pytest.raises(ValueError):
        integrability_check(MeasureFlowPair(Measure(np.ones(3) / 3), Q), m)
    assert issubclass(IntegrabilityError, ArithmeticError)
