"""A compiled stochastic graphical model: graph, groups, step laws and rates.

Model files are JSON::

    {
      "graph":  {"vertices": [...], "arrows": [...]},
      "groups": [{"kind": "outgoing-star", "members": ["S->E", "S->D"],
                  "law": "DirichletMultinomial", "c": "c"}],
      "rates":  {"S->E": <rate expression>, ...},
      "params": {"c": 100.0, ...},
      "covariates": "covariates.csv" | {"time": [...], "<name>": [...]},
      "calendars": {"<name>": [{"start_doy": 7, "end_doy": 101}, ...]}
    }

``vertices``/``arrows``/``groups`` may also sit at the top level.  Arrows left
out of every group become singletons: ``Poisson`` when the tail is a source
vertex and ``EquiMultinomial`` otherwise.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .graph import ArrowGroup, DirectedGraph, GraphError, build_graph, incidence_matrix, partition_arrow_groups
from .kernels import DrawStats, KernelError, KernelSpec, sample_group
from .rates import CovariateTable, RateContext, RateError, RateSpec, integrate_node, load_term_calendar


class ModelError(ValueError):
    """Inconsistent model description."""


@dataclass
class Model:
    graph: DirectedGraph
    groups: list
    kernels: list
    rates: RateSpec
    params: dict = field(default_factory=dict)
    spec: dict | None = None

    def __post_init__(self):
        if len(self.groups) != len(self.kernels):
            raise ModelError("need exactly one kernel per group")
        self.params = {k: float(v) for k, v in self.params.items()}
        self._compile()
        self._incidence = incidence_matrix(self.graph, self.conventional)

    # -- validation and compilation -------------------------------------
    def _compile(self):
        g = self.graph
        sources = g.sources
        tails, heads = g.tails(), g.heads()
        self._plan = []
        owner = {}
        out_kind = {}
        for gi, (grp, ker) in enumerate(zip(self.groups, self.kernels)):
            ker.check_kind(grp.kind)
            members = np.array(grp.members, dtype=np.intp)
            for a in members:
                owner[int(a)] = gi
                tail = g.arrows[a][0]
                if ker.law == "Poisson":
                    if tail not in sources:
                        raise ModelError(f"Poisson law on {g.arrow_ids[a]} needs a source tail")
                    kind = "source"
                elif ker.bounded:
                    kind = "bounded"
                else:
                    kind = "unbounded"
                prev = out_kind.setdefault(tail, kind)
                if prev != kind:
                    raise ModelError(f"vertex {tail!r} mixes bounded and unbounded outgoing arrows")
            if ker.bounded:
                count_idx = tails[members]
            elif ker.unbounded:
                count_idx = heads[members]
            else:
                count_idx = None
            if grp.kind.startswith("color-matched") and ker.noisy:
                exprs = {json.dumps(self.rates.exprs[g.arrow_ids[a]], sort_keys=True) for a in members}
                if len(exprs) != 1:
                    raise ModelError("members of a shared-noise group need one common rate expression")
            nodes = [self.rates.nodes[a] for a in members]
            self._plan.append((members, count_idx, nodes, ker, grp.kind))
        # every bounded vertex: its outgoing arrows live in one group
        for v in g.vertices:
            if out_kind.get(v) != "bounded":
                continue
            gis = {owner[i] for i, (t, _) in enumerate(g.arrows) if t == v}
            if len(gis) > 1:
                raise ModelError(
                    f"outgoing arrows of bounded vertex {v!r} are split over several groups; "
                    "put them in one outgoing-star group"
                )
        # sources feeding only count-free (Poisson) or head-driven arrows keep
        # a nominal count
        self.conventional = frozenset(v for v in sources if out_kind.get(v, "source") != "bounded")
        for name in self.noise_params():
            if name not in self.params:
                raise ModelError(f"noise parameter {name!r} has no value")

    def noise_params(self) -> list[str]:
        return [k.c for k in self.kernels if isinstance(k.c, str)]

    # -- stepping ---------------------------------------------------------
    @property
    def incidence(self) -> np.ndarray:
        return self._incidence

    def merged_params(self, params: Mapping | None) -> dict:
        out = dict(self.params)
        if params:
            out.update(params)
        return out

    def hazards(self, t: float, h: float, counts: np.ndarray, params: Mapping) -> np.ndarray:
        """Integrated hazards of every arrow over ``[t, t + h]``, shape ``(..., A)``."""
        ctx = RateContext(counts, params)
        out = np.empty(counts.shape[:-1] + (self.graph.n_arrows,))
        for members, _, nodes, _, _ in self._plan:
            for a, node in zip(members, nodes):
                out[..., a] = integrate_node(node, t, h, ctx)
        if not np.all(np.isfinite(out)) or np.any(out < 0):
            bad = np.flatnonzero(~(np.isfinite(out) & (out >= 0)).reshape(-1, out.shape[-1]).all(axis=0))
            raise RateError(
                f"invalid integrated rate on {[self.graph.arrow_ids[i] for i in bad]} at t={t:.6g}"
            )
        return out

    def step(self, t: float, h: float, counts: np.ndarray, params: Mapping, rng, stats: DrawStats | None = None):
        """One Euler step from the frozen state ``counts`` (shape ``(..., V)``).

        Every group reads the same frozen state; increments are merged at the
        end.  Returns ``(new_counts, increments)``.
        """
        H = self.hazards(t, h, counts, params)
        d = np.zeros(counts.shape[:-1] + (self.graph.n_arrows,), dtype=np.int64)
        for members, count_idx, _, ker, kind in self._plan:
            c = params[ker.c] if isinstance(ker.c, str) else ker.c
            x = None if count_idx is None else counts[..., count_idx]
            d[..., members] = sample_group(ker, kind, x, H[..., members], rng, c=c, stats=stats)
        return counts + d @ self._incidence, d

    def advance(self, t0: float, t1: float, dt: float, counts, params, rng, stats=None):
        """Run whole Euler steps from ``t0`` to ``t1``; returns counts and summed increments.

        The interval is cut into ``ceil((t1 - t0) / dt)`` equal steps.
        """
        n = n_steps(t0, t1, dt)
        h = (t1 - t0) / n
        acc = np.zeros(counts.shape[:-1] + (self.graph.n_arrows,), dtype=np.int64)
        for i in range(n):
            counts, d = self.step(t0 + i * h, h, counts, params, rng, stats)
            acc += d
        return counts, acc

    # -- identity -------------------------------------------------------
    def to_dict(self) -> dict:
        g = self.graph
        return {
            "graph": g.to_dict(),
            "groups": [
                {"kind": grp.kind, "members": [g.arrow_ids[a] for a in grp.members], "law": k.law,
                 **({"c": k.c} if k.c is not None else {})}
                for grp, k in zip(self.groups, self.kernels)
            ],
            "rates": self.rates.exprs,
            "params": self.params,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float).encode()
        h = hashlib.sha256(blob)
        cov = self.rates.covariates
        if cov is not None:
            h.update(cov.grid.tobytes())
            for name in sorted(cov.series):
                h.update(name.encode())
                h.update(cov.series[name].tobytes())
        return h.hexdigest()


def n_steps(t0: float, t1: float, dt: float) -> int:
    if dt <= 0:
        raise ModelError("step size must be positive")
    span = t1 - t0
    if span <= 0:
        raise ModelError("interval must have positive length")
    return max(1, int(np.ceil(span / dt - 1e-9)))


def default_law(g: DirectedGraph, arrow_index: int) -> KernelSpec:
    tail = g.arrows[arrow_index][0]
    return KernelSpec("Poisson") if tail in g.sources else KernelSpec("EquiMultinomial")


def _load_covariates(spec, base: Path | None):
    if spec is None:
        return None
    if isinstance(spec, CovariateTable):
        return spec
    if isinstance(spec, (str, Path)):
        p = Path(spec)
        if base is not None and not p.is_absolute():
            p = base / p
        return CovariateTable.from_csv(p)
    spec = dict(spec)
    interp = spec.pop("interpolation", "linear")
    grid = spec.pop("time")
    return CovariateTable(grid, spec, interp)


def build_model(spec: Mapping, base_dir=None, covariates: CovariateTable | None = None) -> Model:
    """Assemble a :class:`Model` from a JSON-style mapping."""
    base = Path(base_dir) if base_dir is not None else None
    gspec = spec.get("graph", spec)
    try:
        graph = build_graph(gspec)
    except KeyError as e:
        raise ModelError(f"graph description lacks {e}") from None
    policy = spec.get("groups", gspec.get("groups", []))
    groups = partition_arrow_groups(graph, policy)
    kernels = []
    for i, grp in enumerate(groups):
        if i < len(policy):
            entry = policy[i]
            law = entry.get("law")
            if law is None:
                kernels.append(default_law(graph, grp.members[0]) if grp.kind == "singleton" else KernelSpec("EquiMultinomial"))
            else:
                kernels.append(KernelSpec(law, entry.get("c")))
        else:
            kernels.append(default_law(graph, grp.members[0]))
    cov = covariates if covariates is not None else _load_covariates(spec.get("covariates"), base)
    calendars = {}
    for name, cal in (spec.get("calendars") or {}).items():
        if isinstance(cal, str) and base is not None and not Path(cal).is_absolute():
            cal = base / cal
        calendars[name] = load_term_calendar(cal)
    if "rates" not in spec:
        raise ModelError("model has no 'rates' section")
    rates = RateSpec(graph, spec["rates"], cov, calendars)
    return Model(graph, groups, kernels, rates, dict(spec.get("params", {})), spec=dict(spec))


def load_model(path) -> Model:
    path = Path(path)
    with open(path) as fh:
        spec = json.load(fh)
    return build_model(spec, base_dir=path.parent)


__all__ = [
    "Model", "ModelError", "build_model", "load_model", "n_steps",
    "ArrowGroup", "GraphError", "KernelError", "RateError",
]
