import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dispersim.graph import (GraphError, SystemState, apply_increments, balance_residual, build_graph,
                             incidence_matrix, partition_arrow_groups)

SEIR = {"vertices": ["B", "S", "E", "I", "R", "D"],
        "arrows": [("B", "S"), ("S", "E"), ("E", "I"), ("I", "R"), ("S", "D"), ("E", "D"), ("I", "D"), ("R", "D")]}


def test_seir_sources_and_sinks():
    g = build_graph(SEIR)
    assert g.sources == {"B"}
    assert g.sinks == {"D"}
    assert g.out_neighbors("S") == ("E", "D")
    assert set(g.in_neighbors("D")) == {"S", "E", "I", "R"}


def test_single_arrow_graph():
    g = build_graph({"vertices": ["u", "v"], "arrows": ["u->v"]})
    assert g.sources == {"u"} and g.sinks == {"v"}
    groups = partition_arrow_groups(g)
    assert len(groups) == 1 and groups[0].kind == "singleton"


@pytest.mark.parametrize("spec", [
    {"vertices": ["v"], "arrows": [("v", "v")]},
    {"vertices": ["u"], "arrows": [("u", "w")]},
    {"vertices": ["u", "v"], "arrows": [("u", "v"), ("u", "v")]},
    {"vertices": ["u", "u"], "arrows": []},
])
def test_invalid_graphs(spec):
    with pytest.raises(GraphError):
        build_graph(spec)


def test_cycles_are_allowed():
    g = build_graph({"vertices": ["a", "b"], "arrows": ["a->b", "b->a"]})
    assert g.sources == frozenset() and g.sinks == frozenset()


def test_outgoing_star_partition():
    g = build_graph(SEIR)
    groups = partition_arrow_groups(g, [{"kind": "outgoing-star", "members": ["S->E", "S->D"]}])
    assert groups[0].anchor == "S"
    assert {g.arrow_ids[i] for i in groups[0].members} == {"S->E", "S->D"}
    assert all(gr.kind == "singleton" for gr in groups[1:])
    owned = sorted(i for gr in groups for i in gr.members)
    assert owned == list(range(g.n_arrows))


def cholera_graph():
    return build_graph({
        "vertices": [{"id": "S", "color": "sus"}, {"id": "S2", "color": "sus"},
                     {"id": "I2", "color": "inf"}, {"id": "I2*", "color": "inf"}],
        "arrows": ["S2->I2*", "S->I2"],
    })


def test_color_matched_group():
    g = cholera_graph()
    groups = partition_arrow_groups(g, [{"kind": "color-matched-bounded", "members": ["S2->I2*", "S->I2"]}])
    assert len(groups) == 1
    assert groups[0].anchor == ("sus", "inf")


def test_color_matched_rejects_adjacent_arrows():
    g = build_graph({"vertices": [{"id": "a", "color": "x"}, {"id": "b", "color": "y"}, {"id": "c", "color": "y"}],
                     "arrows": ["a->b", "a->c"]})
    with pytest.raises(GraphError):
        partition_arrow_groups(g, [{"kind": "color-matched-bounded", "members": ["a->b", "a->c"]}])


def test_color_matched_rejects_color_mismatch():
    g = build_graph({"vertices": [{"id": "a", "color": "x"}, {"id": "b", "color": "y"},
                                  {"id": "c", "color": "x"}, {"id": "d", "color": "z"}],
                     "arrows": ["a->b", "c->d"]})
    with pytest.raises(GraphError):
        partition_arrow_groups(g, [{"kind": "color-matched-bounded", "members": ["a->b", "c->d"]}])


def test_arrow_in_two_groups():
    g = build_graph(SEIR)
    with pytest.raises(GraphError):
        partition_arrow_groups(g, [{"kind": "outgoing-star", "members": ["S->E", "S->D"]},
                                   {"kind": "singleton", "members": ["S->E"]}])


def test_star_members_must_share_anchor():
    g = build_graph(SEIR)
    with pytest.raises(GraphError):
        partition_arrow_groups(g, [{"kind": "outgoing-star", "members": ["S->E", "E->I"]}])
    with pytest.raises(GraphError):
        partition_arrow_groups(g, [{"kind": "incoming-star", "members": ["S->E", "E->I"]}])


def seir_state():
    g = build_graph(SEIR)
    return g, SystemState.initial(g, {"S": 10, "E": 3, "I": 2, "R": 1})


def test_apply_increments_balance():
    g, s = seir_state()
    s2 = apply_increments(g, s, {"S->E": 2, "S->D": 1}, conventional=["B"])
    assert s2.count(g, "S") == 7
    assert s2.count(g, "E") == 5
    assert s2.count(g, "D") == 1
    assert s2.flow(g, "S->E") == 2 and s2.flow(g, "S->D") == 1
    assert s2.time == s.time


def test_empty_increments_identity():
    g, s = seir_state()
    s2 = apply_increments(g, s, {}, conventional=["B"])
    np.testing.assert_array_equal(s2.counts, s.counts)
    np.testing.assert_array_equal(s2.flows, s.flows)


def test_overdraw_rejected():
    g, s = seir_state()
    with pytest.raises(GraphError):
        apply_increments(g, s, {"S->E": 11}, conventional=["B"])


def test_negative_increment_rejected():
    g, s = seir_state()
    with pytest.raises(GraphError):
        apply_increments(g, s, {"S->E": -1}, conventional=["B"])


def test_conventional_source_not_decremented():
    g, s = seir_state()
    s2 = apply_increments(g, s, {"B->S": 5}, conventional=["B"])
    assert s2.count(g, "B") == 0 and s2.count(g, "S") == 15
    assert incidence_matrix(g, ["B"])[g.arrow_index("B->S"), g.vertex_index("B")] == 0
    assert incidence_matrix(g)[g.arrow_index("B->S"), g.vertex_index("B")] == -1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.integers(0, 3), min_size=8, max_size=8), min_size=1, max_size=20))
def test_balance_identity_holds_and_flows_grow(steps):
    g = build_graph(SEIR)
    s0 = SystemState.initial(g, {"S": 100, "E": 100, "I": 100, "R": 100})
    s = s0
    for d in steps:
        prev = s.flows.copy()
        s = apply_increments(g, s, np.array(d), conventional=["B"])
        assert np.all(s.flows >= prev)
        assert not np.any(balance_residual(g, s0.counts, s, ["B"]))
        assert np.all(s.counts >= 0)


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_partition_exhaustive_and_disjoint(data):
    g = build_graph(SEIR)
    policy = []
    used = set()
    for tail in ["S", "E", "I"]:
        if data.draw(st.booleans()):
            members = [a for a in g.arrow_ids if a.startswith(tail + "->")]
            policy.append({"kind": "outgoing-star", "members": members})
            used.update(members)
    if data.draw(st.booleans()):
        members = [a for a in g.arrow_ids if a.endswith("->D") and a not in used]
        if members:
            policy.append({"kind": "incoming-star", "members": members})
    groups = partition_arrow_groups(g, policy)
    owned = [i for gr in groups for i in gr.members]
    assert sorted(owned) == list(range(g.n_arrows))
