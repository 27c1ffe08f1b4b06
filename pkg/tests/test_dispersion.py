import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dispersim.dispersion import (DispersionError, classify_systemic, estimate_infinitesimal,
                                  integrated_birth_oracle, integrated_death_oracle, single_transition_rate)
from dispersim.fixtures import group_state, single_group_model
from dispersim.model import build_model
from dispersim.oracles import rate_by_quadrature

LN2 = math.log(2.0)


def test_equi_single_arrow_dispersion_one():
    m = single_group_model("EquiMultinomial", 1, 2.0)
    est = estimate_infinitesimal(m, group_state(m, 20), M=60_000, seed=1)
    assert est.covers("D", 1.0, 0)
    assert est.covers("mean", 40.0, 0)


def test_dirichlet_multinomial_dispersion_index():
    m = single_group_model("DirichletMultinomial", 1, 1.0, c=10.0)
    est = estimate_infinitesimal(m, group_state(m, 50), M=200_000, seed=2)
    assert est.covers("D", 1 + 49 / 11, 0)
    assert est.ci("D")[0, 0] > 1.0


def test_shared_beta_covariance_rate():
    m = single_group_model("BetaBinomialShared", 2, 1.0, c=4.0)
    est = estimate_infinitesimal(m, group_state(m, [2, 3]), M=200_000, seed=3)
    assert est.covers("cov", 1.2, 0, 1)


def test_star_covariance_is_zero():
    m = single_group_model("DirichletMultinomial", 2, [1.0, 0.5], c=5.0)
    est = estimate_infinitesimal(m, group_state(m, 10), M=200_000, seed=4)
    assert abs(est.cov_rate[0, 1]) < 3 * est.cov_se[0, 1]


def test_thread_invariance():
    m = single_group_model("DirichletMultinomial", 1, 1.0, c=10.0)
    x = group_state(m, 5)
    a = estimate_infinitesimal(m, x, M=30_000, seed=5, threads=1)
    b = estimate_infinitesimal(m, x, M=30_000, seed=5, threads=3)
    np.testing.assert_array_equal(a.D, b.D)
    np.testing.assert_array_equal(a.var_se, b.var_se)


def test_estimator_input_checks():
    m = single_group_model("EquiMultinomial", 1, 1.0)
    with pytest.raises(DispersionError):
        estimate_infinitesimal(m, group_state(m, 0), M=2000)
    with pytest.raises(DispersionError):
        estimate_infinitesimal(m, group_state(m, 3), h_grid=(1e-3,), M=2000)
    with pytest.raises(DispersionError):
        estimate_infinitesimal(m, group_state(m, 3), h_grid=(1e-3, 2e-3), M=2000)
    with pytest.raises(DispersionError):
        estimate_infinitesimal(m, group_state(m, 3), M=500)


def test_death_oracle_values():
    assert integrated_death_oracle(100, 0.0) == (0.0, 0.0, 1.0)
    mean, var, D = integrated_death_oracle(100, LN2)
    assert (mean, var, D) == pytest.approx((50.0, 25.0, 0.5), rel=1e-14)
    mean, _, D = integrated_death_oracle(100, 800.0)
    assert mean == pytest.approx(100.0) and D == pytest.approx(0.0, abs=1e-300)


def test_birth_oracle_values():
    assert integrated_birth_oracle(10, 0.0) == (0.0, 0.0, 1.0)
    assert integrated_birth_oracle(10, LN2) == pytest.approx((10.0, 20.0, 2.0), rel=1e-14)
    with pytest.raises(DispersionError):
        integrated_birth_oracle(-1, 0.5)


@settings(max_examples=100, deadline=None)
@given(x0=st.integers(0, 10_000), H=st.floats(0, 30))
def test_oracle_dispersion_bounds(x0, H):
    assert integrated_birth_oracle(x0, H)[2] >= 1.0
    assert 0.0 <= integrated_death_oracle(x0, H)[2] <= 1.0


def _seir(c=None):
    groups = [{"kind": "outgoing-star", "members": ["S->E", "S->D"],
               **({"law": "DirichletMultinomial", "c": c} if c else {"law": "EquiMultinomial"})},
              {"kind": "outgoing-star", "members": ["E->I", "E->D"]},
              {"kind": "outgoing-star", "members": ["I->R", "I->D"]}]
    return build_model({
        "graph": {"vertices": ["B", "S", "E", "I", "R", "D"],
                  "arrows": ["B->S", "S->E", "S->D", "E->I", "E->D", "I->R", "I->D", "R->D"]},
        "groups": groups,
        "rates": {"B->S": 50.0, "S->E": {"foi": {"beta": 400.0, "infectious": "I", "population": 10_000.0}},
                  "S->D": 0.02, "E->I": 45.0, "E->D": 0.02, "I->R": 36.0, "I->D": 0.02, "R->D": 0.02},
    })


SEIR_STATE = {"S": 1000, "E": 30, "I": 40, "R": 8930}


def test_classify_equi_seir():
    m = _seir()
    est = estimate_infinitesimal(m, SEIR_STATE, M=30_000, seed=6)
    assert classify_systemic(est, m.graph)["system"] == "equi"


def test_classify_over_with_one_dirichlet_star():
    m = _seir(c=5.0)
    est = estimate_infinitesimal(m, SEIR_STATE, M=60_000, seed=7)
    res = classify_systemic(est, m.graph)
    assert res["system"] == "over"
    assert res["arrows"]["S->E"] == "over"


def test_classify_errors():
    with pytest.raises(DispersionError):
        classify_systemic([])
    m = _seir()
    est = estimate_infinitesimal(m, SEIR_STATE, arrows=["S->E"], M=5000, seed=1)
    with pytest.raises(DispersionError):
        classify_systemic(est, m.graph)


def test_single_transition_rate_simple_cases():
    m = single_group_model("EquiMultinomial", 1, 0.0)
    assert single_transition_rate(m, group_state(m, 5)) == 0.0
    m = single_group_model("EquiMultinomial", 1, 1.7)
    assert single_transition_rate(m, group_state(m, 5)) == pytest.approx(8.5)


def test_single_transition_rate_beta_binomial():
    m = single_group_model("DirichletMultinomial", 1, 1.0, c=2.0)
    lam = single_transition_rate(m, group_state(m, 3))
    assert lam == pytest.approx(13 / 6, rel=1e-13)
    quad = sum(rate_by_quadrature("DirichletMultinomial", 3, [k], 2.0, [1.0]) for k in (1, 2, 3))
    assert lam == pytest.approx(quad, rel=1e-4)


def test_single_transition_rate_additive():
    m = _seir(c=5.0)
    total = single_transition_rate(m, SEIR_STATE)
    parts = 0.0
    from dispersim.kernels import group_jump_rate
    from dispersim.rates import RateContext
    x = np.zeros(m.graph.n_vertices, dtype=np.int64)
    for v, n in SEIR_STATE.items():
        x[m.graph.vertex_index(v)] = n
    ctx = RateContext(x, m.params)
    for members, count_idx, nodes, ker, kind in m._plan:
        r = np.array([float(n.ev(0.0, ctx)) for n in nodes])
        counts = np.zeros(len(members)) if count_idx is None else x[count_idx]
        parts += group_jump_rate(ker.law, counts, r, 5.0 if ker.noisy else None, kind)
    assert total == parts
