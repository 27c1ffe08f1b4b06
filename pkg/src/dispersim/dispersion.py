"""Monte-Carlo estimates of infinitesimal moments and the matching closed forms.

The estimator draws ``M`` independent single Euler steps from a frozen state
for each step size ``h``, divides sample moments by ``h`` and extrapolates to
``h = 0`` with a straight line in ``h`` (two-point Richardson when the grid is
``h, h/2``).  Uncertainty comes from 30 batch means; each batch has its own
random stream, so results do not depend on the thread count.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .kernels import group_jump_rate
from .model import Model
from .rates import RateContext
from .rng import parallel_map, stream

N_BATCHES = 30
CLASSIFY_TOL = 1e-6


class DispersionError(ValueError):
    pass


@dataclass
class DispersionEstimate:
    """Extrapolated infinitesimal moments for a set of arrows.

    ``mean_rate``/``var_rate``/``D`` have one entry per arrow; ``cov_rate``
    is the full matrix.  ``*_se`` are batch-means standard errors and the
    confidence intervals use Student-t with ``batches - 1`` degrees of
    freedom at ``level``.
    """

    arrows: list
    h_grid: list
    M: int
    level: float
    mean_rate: np.ndarray
    mean_se: np.ndarray
    var_rate: np.ndarray
    var_se: np.ndarray
    cov_rate: np.ndarray
    cov_se: np.ndarray
    D: np.ndarray
    D_se: np.ndarray
    batches: int = N_BATCHES
    per_h: dict = field(default_factory=dict)

    @property
    def tcrit(self) -> float:
        return float(sps.t.ppf(0.5 + self.level / 2, self.batches - 1))

    def ci(self, what: str) -> np.ndarray:
        est, se = {"mean": (self.mean_rate, self.mean_se), "var": (self.var_rate, self.var_se),
                   "cov": (self.cov_rate, self.cov_se), "D": (self.D, self.D_se)}[what]
        return np.stack([est - self.tcrit * se, est + self.tcrit * se], axis=-1)

    def covers(self, what: str, value, i=None, j=None) -> bool:
        ci = self.ci(what)
        if what == "cov":
            lo, hi = ci[i, j]
        else:
            lo, hi = ci[i]
        return bool(lo <= value <= hi)

    def to_dict(self) -> dict:
        def lst(a):
            return np.asarray(a, dtype=float).tolist()
        return {
            "arrows": list(self.arrows), "h_grid": list(self.h_grid), "M": self.M, "level": self.level,
            "batches": self.batches,
            "mean_rate": lst(self.mean_rate), "mean_se": lst(self.mean_se),
            "var_rate": lst(self.var_rate), "var_se": lst(self.var_se),
            "cov_rate": lst(self.cov_rate), "cov_se": lst(self.cov_se),
            "D": lst(self.D), "D_se": lst(self.D_se), "D_ci": lst(self.ci("D")),
            "per_h": {k: {kk: lst(vv) for kk, vv in v.items()} for k, v in self.per_h.items()},
        }


def _extrapolate(h, vals):
    """Intercept of the least-squares line through ``(h_k, vals[k])`` (axis 0)."""
    h = np.asarray(h, dtype=float)
    X = np.stack([np.ones_like(h), h], axis=1)
    coef, *_ = np.linalg.lstsq(X, vals.reshape(len(h), -1), rcond=None)
    return coef[0].reshape(vals.shape[1:])


def estimate_infinitesimal(model: Model, x, arrows=None, h_grid=(1e-3, 5e-4), M: int = 200_000,
                           seed: int = 0, t: float = 0.0, params=None, level: float = 0.99,
                           batches: int = N_BATCHES, threads: int | None = None) -> DispersionEstimate:
    """Estimate infinitesimal mean, variance, covariance and dispersion index.

    Parameters
    ----------
    model : Model
    x : array_like or mapping
        Frozen state (counts per vertex).
    arrows : sequence, optional
        Arrow ids to report; all arrows by default.
    h_grid : sequence of float
        Positive, strictly decreasing step sizes (at least two).
    M : int
        Single-step draws per step size (split into ``batches`` batches).
    """
    g = model.graph
    if isinstance(x, dict):
        xv = np.zeros(g.n_vertices, dtype=np.int64)
        for v, n in x.items():
            xv[g.vertex_index(v)] = n
    else:
        xv = np.asarray(x, dtype=np.int64)
    tracked = [g.vertex_index(v) for v in g.vertices if v not in model.conventional]
    if not np.any(xv[tracked] > 0) and not any(k.law == "Poisson" for k in model.kernels):
        raise DispersionError("degenerate state: every count is zero")
    h_grid = [float(h) for h in h_grid]
    if len(h_grid) < 2 or any(h <= 0 for h in h_grid) or any(b >= a for a, b in zip(h_grid, h_grid[1:])):
        raise DispersionError("h_grid needs at least two positive, decreasing values")
    if M < 1000:
        raise DispersionError("M must be at least 1000")
    idx = np.arange(g.n_arrows) if arrows is None else np.array([g.arrow_index(a) for a in arrows])
    names = [g.arrow_ids[i] for i in idx]
    pars = model.merged_params(params)
    per_batch = M // batches
    if per_batch < 2:
        raise DispersionError("too few draws per batch")

    def batch(job):
        hi, b = job
        h = h_grid[hi]
        rng = stream(seed, hi, b)
        counts = np.broadcast_to(xv, (per_batch, g.n_vertices)).copy()
        _, d = model.step(t, h, counts, pars, rng)
        d = d[:, idx].astype(float)
        mu = d.mean(axis=0)
        cov = np.atleast_2d(np.cov(d, rowvar=False, ddof=1))
        return mu / h, cov / h

    jobs = [(hi, b) for hi in range(len(h_grid)) for b in range(batches)]
    res = parallel_map(batch, jobs, threads)
    k = len(idx)
    mu = np.array([r[0] for r in res]).reshape(len(h_grid), batches, k)
    cv = np.array([r[1] for r in res]).reshape(len(h_grid), batches, k, k)
    mu0 = _extrapolate(h_grid, mu)            # (batches, k)
    cv0 = _extrapolate(h_grid, cv)            # (batches, k, k)
    var0 = np.diagonal(cv0, axis1=1, axis2=2)  # (batches, k)

    sq = np.sqrt(batches)
    mean_rate, mean_se = mu0.mean(0), mu0.std(0, ddof=1) / sq
    var_rate, var_se = var0.mean(0), var0.std(0, ddof=1) / sq
    cov_rate, cov_se = cv0.mean(0), cv0.std(0, ddof=1) / sq
    # ratio of means, delta-method standard error from the batch covariance
    with np.errstate(divide="ignore", invalid="ignore"):
        D = var_rate / mean_rate
        cvm = np.array([np.cov(var0[:, i], mu0[:, i], ddof=1) for i in range(k)]) / batches
        D_var = (cvm[:, 0, 0] - 2 * D * cvm[:, 0, 1] + D**2 * cvm[:, 1, 1]) / mean_rate**2
        D_se = np.sqrt(np.maximum(D_var, 0.0))
    per_h = {repr(h): {"mean": mu[i].mean(0), "var": np.diagonal(cv[i], axis1=1, axis2=2).mean(0)}
             for i, h in enumerate(h_grid)}
    return DispersionEstimate(names, h_grid, per_batch * batches, level, mean_rate, mean_se, var_rate, var_se,
                              cov_rate, cov_se, D, D_se, batches, per_h)


# ---------------------------------------------------------------------------
# integrated closed forms for noise-free death and birth processes


def integrated_death_oracle(x0, hazard_integral):
    """Mean, variance and dispersion index of deaths by time t.

    For ``x0`` individuals each dying at rate r(s), the number dead by ``t``
    is Binomial(x0, 1 - exp(-H)) with ``H = int_0^t r``, so ``D = exp(-H)``.
    """
    if np.any(np.asarray(x0) < 0) or np.any(np.asarray(hazard_integral) < 0):
        raise DispersionError("x0 and the hazard integral must be nonnegative")
    H = np.asarray(hazard_integral, dtype=float)
    p = -np.expm1(-H)
    mean = x0 * p
    var = x0 * np.exp(-H) * p
    return mean, var, np.exp(-H)


def integrated_birth_oracle(x0, hazard_integral):
    """Mean, variance and dispersion index of births by time t.

    A linear birth process started from ``x0`` has ``x0 (e^H - 1)`` expected
    births, variance ``x0 e^H (e^H - 1)`` and so ``D = e^H``.
    """
    if np.any(np.asarray(x0) < 0) or np.any(np.asarray(hazard_integral) < 0):
        raise DispersionError("x0 and the hazard integral must be nonnegative")
    H = np.asarray(hazard_integral, dtype=float)
    g = np.expm1(H)
    return x0 * g, x0 * np.exp(H) * g, np.exp(H)


# ---------------------------------------------------------------------------
# system-level diagnostics


def arrow_status(lo: float, hi: float, tol: float = CLASSIFY_TOL) -> str:
    if lo > 1.0 + tol:
        return "over"
    if hi < 1.0 - tol:
        return "under"
    return "equi"


def classify_systemic(estimates, graph=None, tol: float = CLASSIFY_TOL) -> dict:
    """Classify a system as ``equi``, ``over``, ``under`` or ``mixed``.

    Each arrow's dispersion-index interval is compared with 1: above it is
    over-dispersed, below it under-dispersed, otherwise compatible with
    equi-dispersion.  The system is over-dispersed when no arrow is under and
    at least one is over (and symmetrically for under); ``mixed`` means both
    occur.  Arrows whose estimated mean rate is zero carry no information and
    are skipped.

    Parameters
    ----------
    estimates : DispersionEstimate or list of them
    graph : DirectedGraph, optional
        When given, every arrow must have an estimate.
    """
    if isinstance(estimates, DispersionEstimate):
        estimates = [estimates]
    per = {}
    for est in estimates:
        ci = est.ci("D")
        for i, a in enumerate(est.arrows):
            if not (est.mean_rate[i] > 0) or not np.all(np.isfinite(ci[i])):
                per[a] = "degenerate"
            else:
                per[a] = arrow_status(ci[i, 0], ci[i, 1], tol)
    if not per:
        raise DispersionError("no arrows to classify")
    if graph is not None:
        missing = [a for a in graph.arrow_ids if a not in per]
        if missing:
            raise DispersionError(f"missing estimates for arrows {missing}")
    live = [s for s in per.values() if s != "degenerate"]
    if not live:
        raise DispersionError("every arrow has a zero mean rate")
    over, under = "over" in live, "under" in live
    label = "mixed" if over and under else "over" if over else "under" if under else "equi"
    return {"system": label, "arrows": per}


def single_transition_rate(model: Model, x, t: float = 0.0, params=None) -> float:
    """Leading-order rate lambda of "exactly one transition event" from state x.

    Sums, over every group, the rates of all increment patterns that one
    event can produce.  Pulses (point masses in time) are not rates and are
    left out.
    """
    g = model.graph
    if isinstance(x, dict):
        xv = np.zeros(g.n_vertices, dtype=np.int64)
        for v, n in x.items():
            xv[g.vertex_index(v)] = n
    else:
        xv = np.asarray(x, dtype=np.int64)
    pars = model.merged_params(params)
    ctx = RateContext(xv, pars)
    total = 0.0
    for members, count_idx, nodes, ker, kind in model._plan:
        r = np.array([float(np.asarray(n.ev(float(t), ctx))) for n in nodes])
        if np.any(r < 0):
            raise DispersionError("negative rate")
        c = pars[ker.c] if isinstance(ker.c, str) else ker.c
        counts = np.zeros(len(members)) if count_idx is None else xv[count_idx]
        total += group_jump_rate(ker.law, counts, r, c, kind)
    return total
