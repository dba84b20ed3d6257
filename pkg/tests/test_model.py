import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldflow.measures import Measure
from ldflow.model import (DiscretizedSpace, ModelError, RateModel, StationaryError,
                          invariant_measure, load_model, make_phonon_instance, model_from_dict,
                          model_to_dict, save_model, skeleton_stationary, stationary_flow,
                          three_cell_model, two_cell_model, validate_assumptions)

from conftest import random_model


def _uniform_torus(n, r):
    space = DiscretizedSpace.uniform(n, "torus1d")
    return RateModel(space, r(space.centers), np.ones((n, n)))


# --- types -----------------------------------------------------------------

def test_space_rejects_bad_weights():
    with pytest.raises(ModelError):
        DiscretizedSpace(2, np.zeros(2), np.array([1.0, 0.0]), "interval")
    with pytest.raises(ModelError):
        DiscretizedSpace(2, np.zeros(2), np.array([0.5, 0.6]), "interval")


def test_rate_model_invariants():
    space = DiscretizedSpace.uniform(3)
    with pytest.raises(ModelError):
        RateModel(space, np.ones(3), np.full((3, 3), 2.0))
    P = np.ones((3, 3))
    P[0, 0] = 0.0
    with pytest.raises(ModelError):
        RateModel(space, np.ones(3), P)
    with pytest.raises(ModelError):
        RateModel(space, np.array([1.0, -1.0, 1.0]), np.ones((3, 3)))


def test_two_cell_stationary_objects():
    m = two_cell_model()
    np.testing.assert_allclose(skeleton_stationary(m).weights, [1 / 3, 2 / 3], atol=1e-12)
    np.testing.assert_allclose(invariant_measure(m).weights, [0.5, 0.5], atol=1e-12)


def test_uniform_kernel_has_lambda_as_skeleton_law():
    rng = np.random.default_rng(0)
    lam = rng.dirichlet(np.ones(6))
    space = DiscretizedSpace(6, np.arange(6.0), lam, "generic")
    m = RateModel(space, rng.uniform(0.5, 2, 6), np.ones((6, 6)))
    np.testing.assert_allclose(skeleton_stationary(m).weights, lam, atol=1e-12)


def test_constant_rate_invariant_equals_skeleton_law():
    rng = np.random.default_rng(1)
    m = random_model(rng, 5)
    m = m.replace(r=np.full(5, 3.7))
    np.testing.assert_allclose(invariant_measure(m).weights, skeleton_stationary(m).weights,
                               atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_doeblin_bound_and_stationarity(n, seed):
    m = random_model(np.random.default_rng(seed), n)
    pi0 = skeleton_stationary(m).weights
    assert np.all(pi0 >= m.p_density.min() * m.lam - 1e-15)
    pi = invariant_measure(m).weights
    inflow = pi @ m.rate_matrix
    np.testing.assert_allclose(inflow, pi * m.r, atol=1e-10)
    Q = stationary_flow(m, pi)
    assert Q.marginal_gap() < 1e-10
    assert Q.total == pytest.approx(float(pi @ m.r), abs=1e-12)


def test_stationary_flow_zero_rate():
    space = DiscretizedSpace.uniform(3)
    m = RateModel(space, np.zeros(3), np.ones((3, 3)))
    assert stationary_flow(m, np.full(3, 1 / 3)).total == 0.0


def test_off_stationary_flow_has_unequal_marginals():
    m = three_cell_model()
    mu = np.array([0.6, 0.3, 0.1])
    Q = stationary_flow(m, mu)
    gap = np.abs(Q.out_marginal - Q.in_marginal)
    assert gap.max() > 1e-3


def test_stationary_solver_reports_residual():
    m = three_cell_model()
    with pytest.raises(StationaryError) as info:
        skeleton_stationary(m, tol=1e-300, method="power", max_iter=3)
    assert info.value.residual > 0


def test_invariant_measure_on_absorbing_cell(phonon):
    m = phonon.model
    with pytest.raises(ModelError, match="pi undefined on absorbing cell"):
        invariant_measure(m, restrict=False)
    pi = invariant_measure(m).weights
    assert pi[phonon.zero_cell] == 0.0
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)


# --- assumptions -----------------------------------------------------------

def test_level_set_ratio_sqrt_rate():
    m = _uniform_torus(512, lambda c: np.abs(c) ** 0.5)
    rep = validate_assumptions(m, n_deltas=2)
    for _, ratio in rep.level_set_ratios:
        assert ratio == pytest.approx(4 / 3, rel=0.10)
    assert rep.all_passed


def test_constant_rate_assumptions():
    m = _uniform_torus(64, lambda c: np.ones_like(c))
    rep = validate_assumptions(m)
    assert rep.lambda_inv_r == pytest.approx(1.0, abs=1e-12)
    assert rep.passed["iii"]
    assert rep.absorbing_cells == []


def test_quadratic_rate_fails_integrability():
    sums = []
    for k in range(7, 13):
        m = _uniform_torus(2 ** k, lambda c: c ** 2)
        rep = validate_assumptions(m)
        assert not rep.passed["iii"]
        sums.append(rep.lambda_inv_r)
    assert all(b > 1.5 * a for a, b in zip(sums, sums[1:]))


def test_undefined_ratio_marker():
    space = DiscretizedSpace.uniform(4)
    m = RateModel(space, np.array([1.0, 1.0, 2.0, 2.0]), np.ones((4, 4)))
    rep = validate_assumptions(m, n_deltas=4)
    assert any(q is None for _, q in rep.level_set_ratios)
    assert "undefined" in json.dumps(rep.to_dict())


def test_phonon_instance_passes(phonon):
    rep = validate_assumptions(phonon.model)
    assert rep.all_passed, rep.to_dict()
    assert rep.absorbing_cells == [phonon.zero_cell]
    assert phonon.model.r[phonon.zero_cell] == phonon.model.r.min() == 0.0


def test_phonon_symmetric_velocity_has_zero_mean(phonon):
    pi = invariant_measure(phonon.model)
    assert abs(pi(phonon.velocity)) < 1e-12
    assert np.all(np.abs(phonon.velocity) <= 1.0)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 1.5, -0.2])
def test_phonon_gamma_range(gamma):
    with pytest.raises(ModelError):
        make_phonon_instance(16, gamma)


def test_phonon_uniform_variant(phonon_uniform):
    m = phonon_uniform.model
    assert validate_assumptions(m).passed["ii"]
    assert m.absorbing_cells == [phonon_uniform.zero_cell]


# --- configs ---------------------------------------------------------------

@pytest.mark.parametrize("factory", [two_cell_model, three_cell_model,
                                     lambda: make_phonon_instance(32).model])
def test_config_round_trip_is_exact(factory, tmp_path):
    m = factory()
    path = tmp_path / "m.json"
    save_model(m, path)
    assert load_model(path) == m
    assert model_from_dict(json.loads(json.dumps(model_to_dict(m)))) == m


def test_builtin_config():
    cfg = {"n_cells": 8, "geometry": "torus1d", "lambda": "uniform",
           "r": {"builtin": "power", "gamma": 0.5}, "p": {"builtin": "uniform"}}
    m = model_from_dict(cfg)
    assert m.n_cells == 8
    assert m.absorbing_cells == [4]
    assert model_from_dict({"kind": "phonon", "n_cells": 16}).n_cells == 16
