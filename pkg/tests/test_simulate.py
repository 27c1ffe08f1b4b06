import math

import numpy as np
import pytest

from dispersim.fixtures import death_model, seir_system
from dispersim.model import ModelError, build_model
from dispersim.simulate import SimulationPlan, Trajectory, simulate


def sir_model(N):
    return build_model({
        "graph": {"vertices": ["S", "I", "R"], "arrows": ["S->I", "I->R"]},
        "groups": [{"kind": "singleton", "members": ["S->I"], "law": "EquiMultinomial"}],
        "rates": {"S->I": {"foi": {"beta": 2.0, "infectious": "I", "population": float(N)}}, "I->R": 1.0},
    })


def seir_model():
    system, truth = seir_system(N=20_000)
    return system.model, system.model_params(truth.values)


def test_zero_rates_constant_trajectory():
    m = death_model(0.0)
    tr = simulate(m, {"S": 40}, SimulationPlan(0, 2, 0.1, replicates=5, seed=3))
    assert np.all(tr.vertex("S") == 40) and not tr.flows.any()


def test_death_process_mean():
    r, t, x0, R = 1.3, 1.0, 20, 10_000
    tr = simulate(death_model(r), {"S": x0}, SimulationPlan(0, t, 0.01, [t], seed=11, replicates=R))
    dead = tr.flow("S->D")[:, -1]
    mean = x0 * -math.expm1(-r * t)
    assert abs(dead.mean() - mean) < 3 * dead.std(ddof=1) / math.sqrt(R)


def test_thread_count_does_not_change_output():
    m, p = seir_model()
    x0 = {"S": 3000, "E": 20, "I": 20, "R": 16_960}
    plan = SimulationPlan(0, 0.2, 1 / 365.25, seed=5, replicates=600)
    a = simulate(m, x0, plan, p, threads=1)
    b = simulate(m, x0, plan, p, threads=4)
    assert a.to_bytes() == b.to_bytes()
    c = simulate(m, x0, SimulationPlan(0, 0.2, 1 / 365.25, seed=6, replicates=600), p, threads=1)
    assert a.to_bytes() != c.to_bytes()


def test_balance_and_monotone_flows():
    m, p = seir_model()
    tr = simulate(m, {"S": 3000, "E": 20, "I": 20, "R": 16_960}, SimulationPlan(0, 0.5, 1 / 365.25, seed=2,
                                                                                 replicates=20), p)
    assert tr.balance_ok(m.incidence)
    assert np.all(tr.increments >= 0)
    assert np.all(tr.counts[..., [m.graph.vertex_index(v) for v in "SEIR"]] >= 0)


def test_closed_subgraph_conserves_population():
    m = build_model({
        "graph": {"vertices": ["a", "b", "c"], "arrows": ["a->b", "b->c", "c->a", "a->c"]},
        "groups": [{"kind": "outgoing-star", "members": ["a->b", "a->c"], "law": "DirichletMultinomial", "c": 2.0}],
        "rates": {"a->b": 1.0, "b->c": 2.0, "c->a": 0.5, "a->c": 0.3},
    })
    tr = simulate(m, {"a": 100, "b": 50}, SimulationPlan(0, 3, 0.01, seed=1, replicates=50))
    np.testing.assert_array_equal(tr.counts.sum(axis=-1), 150)


def test_step_size_error_is_first_order():
    # final susceptible mean moves by O(dt): successive halvings shrink the change by about 2
    m = sir_model(1e8)
    means = []
    for dt in (0.05, 0.025, 0.0125):
        tr = simulate(m, {"S": 99_000_000, "I": 1_000_000}, SimulationPlan(0, 4, dt, [4.0], seed=1, replicates=32))
        means.append(tr.vertex("S")[:, -1].mean())
    d1, d2 = means[1] - means[0], means[2] - means[1]
    assert d1 > 0 and d2 > 0
    assert 1.4 < d1 / d2 < 2.8


def test_record_times_subset(tmp_path):
    m = death_model(1.0)
    plan = SimulationPlan(0, 1, 0.1, [0.0, 0.5, 1.0], seed=4, replicates=3)
    tr = simulate(m, {"S": 30}, plan)
    np.testing.assert_allclose(tr.times, [0, 0.5, 1.0])
    with pytest.raises(ModelError):
        SimulationPlan(0, 1, 0.1, [0.55])
    with pytest.raises(ModelError):
        SimulationPlan(1, 0, 0.1)
    with pytest.raises(ModelError):
        SimulationPlan(0, 1, 0.0)


def test_same_seed_same_output():
    m = death_model(0.7)
    plan = SimulationPlan(0, 1, 0.05, seed=9, replicates=300)
    assert simulate(m, {"S": 10}, plan).to_bytes() == simulate(m, {"S": 10}, plan).to_bytes()


def test_csv_and_binary_roundtrip(tmp_path):
    m, p = seir_model()
    tr = simulate(m, {"S": 3000, "E": 20, "I": 20, "R": 16_960}, SimulationPlan(0, 0.1, 1 / 365.25, seed=2,
                                                                                 replicates=3), p)
    tr.save(tmp_path / "t.csv")
    back = Trajectory.from_csv(tmp_path / "t.csv", m.graph.n_vertices)
    np.testing.assert_array_equal(back.counts, tr.counts)
    np.testing.assert_array_equal(back.flows, tr.flows)
    np.testing.assert_array_equal(back.times, tr.times)
    tr.save(tmp_path / "t.bin")
    blob = (tmp_path / "t.bin").read_bytes()
    assert blob[:8] == b"DSPTRAJ\0" and blob[8] == 1
    back = Trajectory.from_bytes(blob)
    np.testing.assert_array_equal(back.counts, tr.counts)
    assert back.arrows == tr.arrows
    with pytest.raises(ValueError):
        Trajectory.from_bytes(b"XXXXXXXX" + blob[8:])


def test_bounded_vertex_must_have_one_group():
    with pytest.raises(ModelError):
        build_model({"graph": {"vertices": ["B", "S", "E", "D"], "arrows": ["B->S", "S->E", "S->D"]},
                     "rates": {"B->S": 1.0, "S->E": 1.0, "S->D": 1.0}})


def test_poisson_needs_source():
    with pytest.raises(ModelError):
        build_model({"graph": {"vertices": ["A", "B", "C"], "arrows": ["A->B", "B->C"]},
                     "groups": [{"kind": "singleton", "members": ["B->C"], "law": "Poisson"}],
                     "rates": {"A->B": 1.0, "B->C": 1.0}})


def test_model_fingerprint_stable():
    a, _ = seir_model()
    b, _ = seir_model()
    assert a.fingerprint() == b.fingerprint()
