import numpy as np
import pytest

from ldflow.model import invariant_measure, make_phonon_instance, stationary_flow, three_cell_model
from ldflow.oracle import contraction_oracle, event_infimum, minimize_flow, minimize_measure
from ldflow.ratefn import MeasureFlowPair, donsker_varadhan, flow_rate, rate_I

from conftest import random_balanced_flow, random_model


def test_oracle_zeros():
    m = three_cell_model()
    pi = invariant_measure(m)
    Qpi = stationary_flow(m, pi)
    assert contraction_oracle("measure", pi, m) < 1e-10
    assert contraction_oracle("flow", Qpi, m) < 1e-10
    np.testing.assert_allclose(minimize_flow(pi, m).q, Qpi.mass, atol=1e-8)
    np.testing.assert_allclose(minimize_measure(Qpi, m).mu, pi.weights, atol=1e-6)


def test_oracle_argument_checks():
    m = three_cell_model()
    with pytest.raises(ValueError):
        contraction_oracle("both", np.ones(3) / 3, m)
    with pytest.raises(ValueError):
        contraction_oracle("measure", np.ones(3) / 3, m, restarts=4)
    big = make_phonon_instance(16).model
    with pytest.raises(ValueError):
        contraction_oracle("measure", np.ones(16) / 16, big)


def test_oracle_unequal_marginals():
    Q = np.zeros((3, 3))
    Q[0, 1] = 1.0
    assert contraction_oracle("flow", Q, three_cell_model()) == np.inf


@pytest.mark.parametrize("seed", range(6))
def test_candidates_do_not_change_optimum(seed):
    rng = np.random.default_rng(seed)
    n = 2 + seed % 4
    m = random_model(rng, n)
    mu = rng.dirichlet(np.ones(n))
    Q = random_balanced_flow(rng, n, rng.uniform(0.1, 3))
    a = contraction_oracle("measure", mu, m, candidates=False)
    b = contraction_oracle("measure", mu, m, candidates=True)
    assert abs(a - b) < 1e-8
    assert abs(a - donsker_varadhan(mu, m).value) < 1e-4
    a = contraction_oracle("flow", Q, m, candidates=False)
    b = contraction_oracle("flow", Q, m, candidates=True)
    assert abs(a - b) < 1e-8
    assert abs(a - flow_rate(Q, m).value) < 1e-4


def test_measure_event_minimizer():
    m = three_cell_model()
    pi = invariant_measure(m).weights
    f = np.array([0.0, 0.0, 0.4])
    res = event_infimum(m, pi @ f + 0.2, f=f)
    assert res.converged
    assert res.mu @ f == pytest.approx(pi @ f + 0.2, abs=1e-10)
    pair = MeasureFlowPair(res.mu, res.q, marginal_tol=1e-9)
    assert rate_I(pair, m).value == pytest.approx(res.value, abs=1e-10)
    # at the minimizer the flow is the measure's optimal flow
    assert res.value == pytest.approx(donsker_varadhan(res.mu, m).value, abs=1e-8)
    # and the constrained minimum sits below nearby feasible measures
    for t in (0.02, -0.02):
        mu = res.mu + t * np.array([1.0, -1.0, 0.0])
        assert donsker_varadhan(mu, m).value > res.value


def test_flow_event_minimizer():
    m = three_cell_model()
    level = 1.5 * invariant_measure(m)(m.r)
    res = event_infimum(m, level, flow_weight=np.ones((3, 3)))
    assert res.q.sum() == pytest.approx(level, abs=1e-10)
    assert res.value == pytest.approx(flow_rate(res.q, m, marginal_tol=1e-9).value, abs=1e-8)
    # scaling the stationary flow is feasible but not optimal in general
    Qs = level / m.r.dot(invariant_measure(m).weights) * stationary_flow(m, invariant_measure(m)).mass
    assert flow_rate(Qs, m).value >= res.value - 1e-10
