"""Small ready-made models: one arrow group driven by a chosen law.

Used by the test-suite, the acceptance runner and the demos.
"""
from __future__ import annotations

import numpy as np

from .kernels import BOUNDED_LAWS, SHARED_LAWS
from .model import Model, build_model


def single_group_model(law: str, m: int = 1, rates=1.0, c=None, shared: bool | None = None) -> Model:
    """Model with one group of ``m`` arrows and constant per-capita rates.

    Bounded laws use an outgoing star ``T -> H1..Hm`` (or, for shared laws,
    ``m`` disjoint arrows ``Ti -> Hi`` with matching colors).  Unbounded laws
    use an incoming star ``U1..Um -> W`` (or disjoint ``Ui -> Wi``).  Rates
    are parameters ``r1..rm``; the noise parameter is ``c``.
    """
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (m,))
    shared = law in SHARED_LAWS if shared is None else shared
    bounded = law in BOUNDED_LAWS
    vertices, arrows = [], []
    if shared:
        for i in range(1, m + 1):
            if bounded:
                vertices += [{"id": f"T{i}", "color": "tail"}, {"id": f"H{i}", "color": "head"}]
                arrows.append(f"T{i}->H{i}")
            else:
                vertices += [{"id": f"U{i}", "color": "tail"}, {"id": f"W{i}", "color": "head"}]
                arrows.append(f"U{i}->W{i}")
        kind = "color-matched-bounded" if bounded else "color-matched-unbounded"
    elif bounded:
        vertices = ["T"] + [f"H{i}" for i in range(1, m + 1)]
        arrows = [f"T->H{i}" for i in range(1, m + 1)]
        kind = "outgoing-star"
    else:
        vertices = [f"U{i}" for i in range(1, m + 1)] + ["W"]
        arrows = [f"U{i}->W" for i in range(1, m + 1)]
        kind = "incoming-star"
    if m == 1:
        kind = "singleton"
    params = {f"r{i + 1}": float(r) for i, r in enumerate(rates)}
    if shared:
        # one common rate for the group
        rate_exprs = {a: {"param": "r1"} for a in arrows}
    else:
        rate_exprs = {a: {"param": f"r{i + 1}"} for i, a in enumerate(arrows)}
    group = {"kind": kind, "members": arrows, "law": law}
    if c is not None:
        group["c"] = "c"
        params["c"] = float(c)
    spec = {"graph": {"vertices": vertices, "arrows": arrows}, "groups": [group],
            "rates": rate_exprs, "params": params}
    return build_model(spec)


def group_state(model: Model, counts) -> np.ndarray:
    """Put ``counts`` on the vertices the group's law reads (tails or heads)."""
    g = model.graph
    counts = np.atleast_1d(np.asarray(counts, dtype=np.int64))
    x = np.zeros(g.n_vertices, dtype=np.int64)
    members, count_idx, *_ = model._plan[0]
    idx = np.asarray(count_idx)
    x[idx] = np.broadcast_to(counts, idx.shape)
    return x


def death_model(rate: float = 1.0) -> Model:
    """One bounded arrow ``S -> D`` with the noise-free law."""
    return build_model({"graph": {"vertices": ["S", "D"], "arrows": ["S->D"]},
                        "groups": [{"kind": "singleton", "members": ["S->D"], "law": "EquiMultinomial"}],
                        "rates": {"S->D": {"param": "r"}}, "params": {"r": rate}})


def birth_model(rate: float = 1.0) -> Model:
    """Linear birth process: source ``B -> X`` at per-capita rate ``r`` of X.

    Uses the noise-free unbounded law on a singleton, so each step adds a
    negative-binomial number of newcomers proportional to the current count.
    """
    return build_model({"graph": {"vertices": ["B", "X"], "arrows": ["B->X"]},
                        "groups": [{"kind": "singleton", "members": ["B->X"], "law": "EquiNegMultinomial"}],
                        "rates": {"B->X": {"param": "r"}}, "params": {"r": rate}})


SEIR_VERTICES = ["B", "S", "E", "I", "R", "D"]
SEIR_ARROWS = ["B->S", "S->E", "E->I", "I->R", "S->D", "E->D", "I->D", "R->D"]


def seir_system(N: float = 500_000, weeks: int = 104, noise_c: float | None = 100.0, dt: float = 1 / 365.25):
    """Synthetic weekly-reported SEIR with constant population and no forcing.

    Births into ``S`` are Poisson at ``mu N``; the susceptible outflow uses a
    Dirichlet-multinomial step with parameter ``c`` (plain multinomial when
    ``noise_c`` is None).  Reported cases track the ``I->R`` flow.  Returns
    ``(system, truth)`` where ``truth`` is a :class:`ParamVector` of the fit
    parameters: ``R0, r_EI, r_IR, iota, rho, psi, c`` and initial fractions.
    """
    from .inference import DiscretizedNormalReports, ObservedSystem, ParamVector

    s_law = {"law": "DirichletMultinomial", "c": "c"} if noise_c is not None else {"law": "EquiMultinomial"}
    mu = {"param": "mu"}
    spec = {
        "graph": {"vertices": SEIR_VERTICES, "arrows": ["B->S", "S->E", "S->D", "E->I", "E->D", "I->R", "I->D", "R->D"]},
        "groups": [
            {"kind": "outgoing-star", "members": ["S->E", "S->D"], **s_law},
            {"kind": "outgoing-star", "members": ["E->I", "E->D"], "law": "EquiMultinomial"},
            {"kind": "outgoing-star", "members": ["I->R", "I->D"], "law": "EquiMultinomial"},
        ],
        "rates": {
            "B->S": {"product": [mu, {"param": "N"}]},
            "S->E": {"foi": {"beta": {"param": "beta_bar"}, "infectious": "I", "iota": {"param": "iota"},
                             "population": {"param": "N"}}},
            "S->D": mu, "E->I": {"param": "r_EI"}, "E->D": mu, "I->R": {"param": "r_IR"}, "I->D": mu, "R->D": mu,
        },
        "params": {"mu": 0.02, "N": float(N), **({"c": float(noise_c)} if noise_c is not None else {})},
    }
    model = build_model(spec)
    truth = {"R0": 20.0, "r_EI": 45.6, "r_IR": 36.5, "iota": 5.0, "rho": 0.5, "psi": 0.1,
             "S_frac": 0.1, "E_frac": 1e-5, "I_frac": 1e-5, "R_frac": 0.89998}
    transforms = {"R0": "log", "r_EI": "log", "r_IR": "log", "iota": "log", "rho": "logit", "psi": "log",
                  "S_frac": "simplex", "E_frac": "simplex", "I_frac": "simplex", "R_frac": "simplex"}
    if noise_c is not None:
        truth["c"] = float(noise_c)
        transforms["c"] = "log"
    fr = ("S_frac", "E_frac", "I_frac", "R_frac")
    idx = [model.graph.vertex_index(v) for v in "SEIR"]

    def init(params, J):
        f = np.stack([np.broadcast_to(np.asarray(params[k], dtype=float), (J,)) for k in fr], axis=-1)
        f = f / f.sum(axis=-1, keepdims=True)
        x = np.zeros((J, model.graph.n_vertices), dtype=np.int64)
        x[:, idx] = np.round(f * N).astype(np.int64)
        return x

    def param_map(p):
        out = dict(p)
        out["beta_bar"] = np.asarray(p["R0"]) * np.asarray(p["r_IR"])
        return out

    times = np.arange(1, weeks + 1) * 7.0 / 365.25
    system = ObservedSystem(model, times, np.zeros(weeks), 0.0, dt, ["I->R"], init,
                            DiscretizedNormalReports(), param_map, ivps=fr)
    return system, ParamVector(truth, transforms)


def poisson_count_system(rate: float = 40.0, n_obs: int = 20, steps_per_obs: int = 4):
    """Reports of a Poisson arrival stream observed once per unit time.

    A source arrow ``B -> X`` fires as a Poisson process at ``lam`` per unit
    time; the count over each unit interval is reported through the
    discretized normal with ``rho`` and ``psi``.  Counts in different
    intervals are independent, so the exact likelihood is a product of
    one-dimensional sums (see :func:`dispersim.oracles.poisson_reports_loglik`).
    Returns ``(system, truth)``.
    """
    from .inference import DiscretizedNormalReports, ObservedSystem, ParamVector

    model = build_model({"graph": {"vertices": ["B", "X"], "arrows": ["B->X"]},
                         "rates": {"B->X": {"param": "lam"}}, "params": {"lam": float(rate)}})
    times = np.arange(1, n_obs + 1, dtype=float)
    system = ObservedSystem(model, times, np.zeros(n_obs), 0.0, 1.0 / steps_per_obs, ["B->X"],
                            np.zeros(2, dtype=np.int64), DiscretizedNormalReports())
    truth = ParamVector({"lam": float(rate), "rho": 0.6, "psi": 0.15},
                        {"lam": "log", "rho": "logit", "psi": "log"})
    return system, truth
