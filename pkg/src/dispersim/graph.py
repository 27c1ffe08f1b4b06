"""Directed graphs, arrow groups and the vertex/flow bookkeeping identity.

Vertex and arrow ids are strings in user-facing specs (an arrow id is
``"tail->head"``) and dense integer indices internally.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

GROUP_KINDS = (
    "outgoing-star",
    "incoming-star",
    "color-matched-bounded",
    "color-matched-unbounded",
    "singleton",
)


class GraphError(ValueError):
    """Invalid graph, grouping policy or increment."""


def arrow_id(tail: str, head: str) -> str:
    return f"{tail}->{head}"


def parse_arrow(a) -> tuple[str, str]:
    """Accept ``"u->v"``, ``("u", "v")`` or ``{"tail": u, "head": v}``."""
    if isinstance(a, str):
        if "->" not in a:
            raise GraphError(f"arrow id {a!r} is not of the form 'tail->head'")
        tail, head = a.split("->", 1)
        return tail.strip(), head.strip()
    if isinstance(a, Mapping):
        return str(a["tail"]), str(a["head"])
    tail, head = a
    return str(tail), str(head)


@dataclass(frozen=True)
class DirectedGraph:
    """Finite directed graph G = (V, A) with a vertex coloring.

    Self-loops and repeated arrows are rejected; directed cycles are fine.
    """

    vertices: tuple[str, ...]
    arrows: tuple[tuple[str, str], ...]
    colors: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        vindex = {}
        for v in self.vertices:
            if v in vindex:
                raise GraphError(f"duplicate vertex {v!r}")
            vindex[v] = len(vindex)
        seen = set()
        for tail, head in self.arrows:
            if tail == head:
                raise GraphError(f"self-loop ({tail}, {head}) is not allowed")
            for end in (tail, head):
                if end not in vindex:
                    raise GraphError(f"arrow ({tail}, {head}) references unknown vertex {end!r}")
            if (tail, head) in seen:
                raise GraphError(f"duplicate arrow ({tail}, {head})")
            seen.add((tail, head))
        colors = {v: str(self.colors.get(v, v)) for v in self.vertices}
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "_vindex", vindex)
        object.__setattr__(
            self, "_aindex", {arrow_id(t, h): i for i, (t, h) in enumerate(self.arrows)}
        )

    # -- indexing -------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_arrows(self) -> int:
        return len(self.arrows)

    @property
    def arrow_ids(self) -> tuple[str, ...]:
        return tuple(arrow_id(t, h) for t, h in self.arrows)

    def vertex_index(self, v: str) -> int:
        try:
            return self._vindex[v]
        except KeyError:
            raise GraphError(f"unknown vertex {v!r}") from None

    def arrow_index(self, a) -> int:
        if isinstance(a, (int, np.integer)):
            if not 0 <= a < self.n_arrows:
                raise GraphError(f"arrow index {a} out of range")
            return int(a)
        key = arrow_id(*parse_arrow(a))
        try:
            return self._aindex[key]
        except KeyError:
            raise GraphError(f"unknown arrow {key!r}") from None

    # -- structure ------------------------------------------------------
    def indegree(self, v: str) -> int:
        return sum(1 for _, h in self.arrows if h == v)

    def outdegree(self, v: str) -> int:
        return sum(1 for t, _ in self.arrows if t == v)

    @property
    def sources(self) -> frozenset[str]:
        return frozenset(v for v in self.vertices if self.indegree(v) == 0)

    @property
    def sinks(self) -> frozenset[str]:
        return frozenset(v for v in self.vertices if self.outdegree(v) == 0)

    def out_neighbors(self, v: str) -> tuple[str, ...]:
        return tuple(h for t, h in self.arrows if t == v)

    def in_neighbors(self, v: str) -> tuple[str, ...]:
        return tuple(t for t, h in self.arrows if h == v)

    def tails(self) -> np.ndarray:
        return np.array([self._vindex[t] for t, _ in self.arrows], dtype=np.intp)

    def heads(self) -> np.ndarray:
        return np.array([self._vindex[h] for _, h in self.arrows], dtype=np.intp)

    def to_dict(self) -> dict:
        return {
            "vertices": [{"id": v, "color": self.colors[v]} for v in self.vertices],
            "arrows": [{"tail": t, "head": h} for t, h in self.arrows],
        }


def build_graph(spec: Mapping) -> DirectedGraph:
    """Build and validate a graph from a JSON-style description.

    ``spec["vertices"]`` holds ids or ``{"id", "color"}`` records and
    ``spec["arrows"]`` holds ``{"tail", "head"}`` records, pairs, or
    ``"tail->head"`` strings.
    """
    vertices, colors = [], {}
    for v in spec["vertices"]:
        if isinstance(v, Mapping):
            vid = str(v["id"])
            if "color" in v:
                colors[vid] = str(v["color"])
        else:
            vid = str(v)
        vertices.append(vid)
    arrows = tuple(parse_arrow(a) for a in spec["arrows"])
    return DirectedGraph(tuple(vertices), arrows, colors)


@dataclass(frozen=True)
class ArrowGroup:
    kind: str
    members: tuple[int, ...]
    anchor: object

    def __len__(self):
        return len(self.members)


def _check_group(g: DirectedGraph, kind: str, members: Sequence[int]) -> object:
    if kind not in GROUP_KINDS:
        raise GraphError(f"unknown group kind {kind!r}")
    if not members:
        raise GraphError("a group needs at least one arrow")
    arrows = [g.arrows[i] for i in members]
    if kind == "singleton":
        if len(members) != 1:
            raise GraphError("a singleton group holds exactly one arrow")
        return arrows[0]
    if kind == "outgoing-star":
        tails = {t for t, _ in arrows}
        if len(tails) != 1:
            raise GraphError(f"outgoing-star members must share a tail, got {sorted(tails)}")
        return tails.pop()
    if kind == "incoming-star":
        heads = {h for _, h in arrows}
        if len(heads) != 1:
            raise GraphError(f"incoming-star members must share a head, got {sorted(heads)}")
        return heads.pop()
    # color-matched
    ends = [v for a in arrows for v in a]
    if len(set(ends)) != len(ends):
        raise GraphError("color-matched members must be pairwise non-adjacent")
    tail_colors = {g.colors[t] for t, _ in arrows}
    head_colors = {g.colors[h] for _, h in arrows}
    if len(tail_colors) != 1 or len(head_colors) != 1:
        raise GraphError("color-matched members must share tail color and head color")
    return (tail_colors.pop(), head_colors.pop())


def partition_arrow_groups(g: DirectedGraph, policy: Iterable[Mapping] = ()) -> list[ArrowGroup]:
    """Split the arrows of ``g`` into disjoint groups.

    ``policy`` lists ``{"kind", "members"}`` records; every arrow not named
    by the policy becomes a singleton group.  Groups come back in policy
    order followed by the singletons in arrow order.
    """
    groups, owner = [], {}
    for entry in policy:
        kind = entry["kind"]
        members = tuple(g.arrow_index(a) for a in entry["members"])
        if len(set(members)) != len(members):
            raise GraphError(f"group repeats an arrow: {entry['members']}")
        for m in members:
            if m in owner:
                raise GraphError(f"arrow {g.arrow_ids[m]} is placed in two groups")
            owner[m] = len(groups)
        groups.append(ArrowGroup(kind, members, _check_group(g, kind, members)))
    for i in range(g.n_arrows):
        if i not in owner:
            groups.append(ArrowGroup("singleton", (i,), g.arrows[i]))
    return groups


@dataclass
class SystemState:
    """Counts per vertex and cumulative flows per arrow at ``time``.

    ``counts`` has shape ``(..., n_vertices)`` and ``flows`` shape
    ``(..., n_arrows)``, so one object may hold many replicates.
    """

    time: float
    counts: np.ndarray
    flows: np.ndarray

    @classmethod
    def initial(cls, g: DirectedGraph, counts: Mapping[str, int] | np.ndarray, time: float = 0.0):
        if isinstance(counts, Mapping):
            x = np.zeros(g.n_vertices, dtype=np.int64)
            for v, n in counts.items():
                x[g.vertex_index(v)] = int(n)
        else:
            x = np.asarray(counts, dtype=np.int64)
        flows = np.zeros(x.shape[:-1] + (g.n_arrows,), dtype=np.int64)
        return cls(float(time), x, flows)

    def copy(self) -> "SystemState":
        return SystemState(self.time, self.counts.copy(), self.flows.copy())

    def count(self, g: DirectedGraph, v: str):
        return self.counts[..., g.vertex_index(v)]

    def flow(self, g: DirectedGraph, a):
        return self.flows[..., g.arrow_index(a)]


def incidence_matrix(g: DirectedGraph, conventional: Iterable[str] = ()) -> np.ndarray:
    """Arrow-by-vertex matrix with -1 at the tail and +1 at the head.

    Vertices in ``conventional`` (typically a birth source) keep a nominal
    count that outflows do not deplete, so their tail entries are zero.
    """
    conventional = frozenset(conventional)
    m = np.zeros((g.n_arrows, g.n_vertices), dtype=np.int64)
    for i, (t, h) in enumerate(g.arrows):
        if t not in conventional:
            m[i, g.vertex_index(t)] -= 1
        m[i, g.vertex_index(h)] += 1
    return m


def apply_increments(
    g: DirectedGraph,
    s: SystemState,
    deltas: Mapping | np.ndarray,
    bounded: Iterable[str] | None = None,
    conventional: Iterable[str] = (),
) -> SystemState:
    """Return the state after adding ``deltas`` to the arrow flows.

    Counts follow the balance identity.  ``bounded`` names the vertices whose
    total outflow may not exceed their count; by default that is every vertex
    not listed in ``conventional``.  Time is left for the caller to advance.
    """
    if isinstance(deltas, Mapping):
        d = np.zeros(s.flows.shape, dtype=np.int64)
        for a, k in deltas.items():
            d[..., g.arrow_index(a)] = k
    else:
        d = np.asarray(deltas, dtype=np.int64)
    if np.any(d < 0):
        raise GraphError("increments must be nonnegative")
    conventional = frozenset(conventional)
    bounded = set(g.vertices) - conventional if bounded is None else set(bounded)
    tails = g.tails()
    for v in g.vertices:
        if v not in bounded:
            continue
        vi = g.vertex_index(v)
        out = d[..., tails == vi].sum(axis=-1)
        if np.any(out > s.counts[..., vi]):
            raise GraphError(f"outflow from {v!r} exceeds its count")
    counts = s.counts + d @ incidence_matrix(g, conventional)
    return SystemState(s.time, counts, s.flows + d)


def balance_residual(g: DirectedGraph, counts0: np.ndarray, s: SystemState, conventional: Iterable[str] = ()) -> np.ndarray:
    """counts - (counts0 + inflow - outflow); zero when the identity holds."""
    return s.counts - (counts0 + s.flows @ incidence_matrix(g, conventional))
