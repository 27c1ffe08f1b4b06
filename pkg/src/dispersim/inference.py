"""Likelihood-based fitting of partially observed count models.

The pieces are a discretized-normal reporting model, a bootstrap particle
filter, iterated filtering (perturbed-parameter filtering with geometric
cooling) and profile likelihood.  Everything runs on an
:class:`ObservedSystem`, which bundles the stochastic model, the data, the
initial-state map and the measurement model.

Random streams are addressed by ``(seed, pass, purpose, observation, block)``
so a filter gives the same answer for any thread count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special
from scipy import stats as sps

from .kernels import DrawStats
from .model import Model
from .rng import parallel_map, stream

PF_BLOCK = 1024
VAR_FLOOR = 1e-12
LOGIT_EPS = 1e-9

_PROPAGATE, _RESAMPLE, _PERTURB = 0, 1, 2


class FilterError(RuntimeError):
    """All particles have zero weight at some observation."""

    def __init__(self, index: int, time: float):
        super().__init__(f"filtering failure: every particle has zero likelihood at observation {index} (t={time:.6g})")
        self.index, self.time = index, time


class InferenceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# measurement


def _log_ndtr_diff(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b``, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    # reflect cells in the upper tail so both bounds sit in the accurate lower tail
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lh, ll = special.log_ndtr(hi), special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lh + np.log1p(-np.exp(ll - lh))
    return np.where(np.isneginf(lh), -np.inf, out)


def dmeasure(y, C, mm: "MeasurementModel"):
    """Log-probability of ``y`` reported cases given ``C`` true cases.

    The report is a normal with mean ``rho C`` and variance
    ``rho (1 - rho) C + (psi rho C)**2`` (floored at ``VAR_FLOOR``), rounded
    to the nearest integer; the cell of ``y = 0`` is ``(-inf, 0.5)`` so the
    masses over ``y = 0, 1, 2, ...`` sum to one.
    """
    y = np.asarray(y, dtype=float)
    C = np.asarray(C, dtype=float)
    rho, psi = np.asarray(mm.rho, dtype=float), np.asarray(mm.psi, dtype=float)
    m = rho * C
    v = np.maximum(m * (1.0 - rho) + (psi * m) ** 2, VAR_FLOOR)
    s = np.sqrt(v)
    upper = (y + 0.5 - m) / s
    lower = np.where(y > 0.5, (y - 0.5 - m) / s, -np.inf)
    out = _log_ndtr_diff(lower, upper)
    return np.where(y < 0, -np.inf, out)


@dataclass
class MeasurementModel:
    """Discretized-normal reporting with rate ``rho`` and over-dispersion ``psi``."""

    rho: object
    psi: object
    names: tuple = ("rho", "psi")

    def __post_init__(self):
        rho, psi = np.asarray(self.rho, dtype=float), np.asarray(self.psi, dtype=float)
        if np.any(~((rho > 0) & (rho < 1))):
            raise InferenceError("reporting rate rho must lie in (0, 1)")
        if np.any(~(psi >= 0)):
            raise InferenceError("over-dispersion psi must be nonnegative")

    def logpmf(self, y, C):
        return dmeasure(y, C, self)

    def simulate(self, C, rng):
        m = self.rho * np.asarray(C, dtype=float)
        v = np.maximum(m * (1.0 - self.rho) + (self.psi * m) ** 2, VAR_FLOOR)
        y = np.round(m + np.sqrt(v) * rng.standard_normal(np.shape(m)))
        return np.maximum(y, 0.0)


class DiscretizedNormalReports:
    """Measurement adaptor reading ``rho`` and ``psi`` from a parameter dict."""

    def __init__(self, rho: str = "rho", psi: str = "psi"):
        self.rho_name, self.psi_name = rho, psi

    def model(self, params) -> MeasurementModel:
        return MeasurementModel(params[self.rho_name], params[self.psi_name])

    def logpmf(self, y, C, params):
        return dmeasure(y, C, self.model(params))

    def simulate(self, C, params, rng):
        return self.model(params).simulate(C, rng)


class ExactReports:
    """Reports equal the true count (for deterministic checks)."""

    def logpmf(self, y, C, params):
        return np.where(np.asarray(C) == y, 0.0, -np.inf)

    def simulate(self, C, params, rng):
        return np.asarray(C, dtype=float)


# ---------------------------------------------------------------------------
# parameters and transforms

TRANSFORMS = ("log", "logit", "simplex", "identity")


def _parse_tag(tag):
    if isinstance(tag, str):
        return tag, (0.0, 1.0)
    name, *bounds = tag
    return name, (tuple(float(b) for b in bounds) if bounds else (0.0, 1.0))


@dataclass
class ParamVector:
    """Named parameters with a transform tag per coordinate.

    Tags: ``"log"`` (positive), ``"logit"`` (in ``[0, 1]``; a tuple
    ``("logit", lo, hi)`` rescales to ``[lo, hi]``), ``"simplex"`` (all
    coordinates with this tag form one probability vector, mapped by log
    ratios to its sum) and ``"identity"``.  Values on the ``logit`` boundary
    are pulled in by ``LOGIT_EPS`` before the transform.
    """

    values: dict
    transforms: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = {k: float(v) for k, v in self.values.items()}
        for k in self.values:
            self.transforms.setdefault(k, "identity")
        for k, tag in self.transforms.items():
            if k not in self.values:
                raise InferenceError(f"transform given for unknown parameter {k!r}")
            if _parse_tag(tag)[0] not in TRANSFORMS:
                raise InferenceError(f"unknown transform {tag!r} for {k!r}")
        self.check()

    @property
    def names(self) -> list:
        return list(self.values)

    @property
    def simplex(self) -> list:
        return [k for k in self.values if _parse_tag(self.transforms[k])[0] == "simplex"]

    def check(self) -> None:
        for k, v in self.values.items():
            kind, (lo, hi) = _parse_tag(self.transforms[k])
            if not math.isfinite(v):
                raise InferenceError(f"parameter {k!r} is not finite")
            if kind == "log" and not v > 0:
                raise InferenceError(f"parameter {k!r} must be positive")
            if kind == "logit" and not lo <= v <= hi:
                raise InferenceError(f"parameter {k!r} must lie in [{lo}, {hi}]")
            if kind == "simplex" and v < 0:
                raise InferenceError(f"simplex coordinate {k!r} must be nonnegative")
        sx = self.simplex
        if sx and not sum(self.values[k] for k in sx) > 0:
            raise InferenceError("simplex coordinates must not all be zero")

    def to_est(self, values: Mapping | None = None) -> dict:
        """Map natural values (scalars or arrays) to the unconstrained scale."""
        values = self.values if values is None else values
        out = {}
        sx = self.simplex
        if sx:
            tot = sum(np.asarray(values[k], dtype=float) for k in sx)
            for k in sx:
                with np.errstate(divide="ignore"):
                    out[k] = np.log(np.asarray(values[k], dtype=float) / tot)
        for k in self.values:
            if k in out:
                continue
            kind, (lo, hi) = _parse_tag(self.transforms[k])
            v = np.asarray(values[k], dtype=float)
            if kind == "log":
                out[k] = np.log(v)
            elif kind == "logit":
                u = np.clip((v - lo) / (hi - lo), LOGIT_EPS, 1.0 - LOGIT_EPS)
                out[k] = special.logit(u)
            else:
                out[k] = v
        return {k: (float(v) if np.ndim(v) == 0 else v) for k, v in out.items()}

    def from_est(self, est: Mapping) -> dict:
        """Inverse of :meth:`to_est`; simplex coordinates come back normalized."""
        out = {}
        sx = self.simplex
        if sx:
            stack = np.stack([np.asarray(est[k], dtype=float) for k in sx])
            w = special.softmax(stack, axis=0)
            for i, k in enumerate(sx):
                out[k] = w[i]
        for k in self.values:
            if k in out:
                continue
            kind, (lo, hi) = _parse_tag(self.transforms[k])
            e = np.asarray(est[k], dtype=float)
            if kind == "log":
                out[k] = np.exp(e)
            elif kind == "logit":
                out[k] = lo + (hi - lo) * special.expit(e)
            else:
                out[k] = e
        return {k: (float(v) if np.ndim(v) == 0 else v) for k, v in out.items()}

    def replace(self, **values) -> "ParamVector":
        new = dict(self.values)
        new.update(values)
        return ParamVector(new, dict(self.transforms))

    def to_dict(self) -> dict:
        return {"values": dict(self.values),
                "transforms": {k: (v if isinstance(v, str) else list(v)) for k, v in self.transforms.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamVector":
        if "values" in d:
            tr = {k: (v if isinstance(v, str) else tuple(v)) for k, v in d.get("transforms", {}).items()}
            return cls(dict(d["values"]), tr)
        return cls(dict(d))


# ---------------------------------------------------------------------------
# the observed system


@dataclass
class ObservedSystem:
    """A stochastic model together with data and an observation process.

    Parameters
    ----------
    model : Model
    times : array_like
        Observation times (strictly increasing, after ``t0``).
    data : array_like
        Reported counts; ``nan`` marks a missing report.
    t0 : float
        Time at which the initial state is drawn.
    dt : float
        Euler step.
    accumulate : sequence of arrow ids
        Arrows whose flow between observations is the true count ``C``.
    init : callable ``(params, J) -> (J, V)`` counts, or array ``(V,)``
    measurement : object with ``logpmf(y, C, params)``
    param_map : callable, optional
        Turns fit parameters into the model's rate parameters.
    ivps : names of parameters that only act on the initial state
    """

    model: Model
    times: np.ndarray
    data: np.ndarray
    t0: float
    dt: float
    accumulate: Sequence[str]
    init: object
    measurement: object = field(default_factory=DiscretizedNormalReports)
    param_map: Callable | None = None
    ivps: tuple = ()

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.times.shape != self.data.shape or self.times.ndim != 1 or self.times.size < 1:
            raise InferenceError("times and data must be matching 1-d arrays")
        if not np.all(np.diff(np.r_[self.t0, self.times]) > 0):
            raise InferenceError("observation times must increase and follow t0")
        self._acc = np.array([self.model.graph.arrow_index(a) for a in self.accumulate], dtype=np.intp)
        cov = self.model.rates.covariates
        if cov is not None:
            lo, hi = cov.span
            if self.t0 < lo or self.times[-1] > hi:
                raise InferenceError(f"data window [{self.t0:.6g}, {self.times[-1]:.6g}] exceeds covariate range [{lo:.6g}, {hi:.6g}]")

    def model_params(self, params: Mapping) -> dict:
        p = dict(params)
        if self.param_map is not None:
            p = self.param_map(p)
        return self.model.merged_params(p)

    def initial_state(self, params: Mapping, J: int) -> np.ndarray:
        if callable(self.init):
            x = np.asarray(self.init(params, J), dtype=np.int64)
        else:
            x = np.asarray(self.init, dtype=np.int64)
        return np.broadcast_to(x, (J, self.model.graph.n_vertices)).copy()

    def with_data(self, data) -> "ObservedSystem":
        return ObservedSystem(self.model, self.times, data, self.t0, self.dt, self.accumulate, self.init,
                              self.measurement, self.param_map, self.ivps)


def simulate_observations(system: ObservedSystem, params: Mapping, seed: int):
    """One synthetic data set from the model: ``(reports, true counts)``."""
    rng = stream(seed, 7)
    p = dict(params)
    x = system.initial_state(p, 1)
    mp = system.model_params(p)
    edges = np.r_[system.t0, system.times]
    C = np.empty(system.times.size)
    for n in range(system.times.size):
        x, acc = system.model.advance(edges[n], edges[n + 1], system.dt, x, mp, rng)
        C[n] = acc[0, system._acc].sum()
    y = np.asarray(system.measurement.simulate(C, p, rng), dtype=float).reshape(-1)
    return y, C


# ---------------------------------------------------------------------------
# particle filter


def systematic_resample(weights, rng) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform shared by all)."""
    w = np.asarray(weights, dtype=float)
    J = w.size
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(J)) / J
    return np.searchsorted(cdf, u, side="right").clip(0, J - 1)


def logmeanexp(x, se: bool = False):
    """``log(mean(exp(x)))``; with ``se=True`` also a delta-method/jackknife SE."""
    x = np.asarray(x, dtype=float)
    m = np.max(x)
    if not np.isfinite(m):
        val = float(m)
        return (val, float("nan")) if se else val
    val = float(m + np.log(np.mean(np.exp(x - m))))
    if not se:
        return val
    n = x.size
    if n < 2:
        return val, float("nan")
    jack = np.array([m + np.log(np.mean(np.exp(np.delete(x, i) - m))) for i in range(n)])
    return val, float(np.sqrt((n - 1) * np.var(jack)))


@dataclass
class FilterResult:
    """Output of one particle-filter pass.

    ``loglik`` equals the sum of ``cond_logliks``; ``ess`` is the effective
    sample size before resampling at each observation; ``filter_mean`` holds
    the weighted mean counts ``(n_obs, V)``.
    """

    loglik: float
    cond_logliks: np.ndarray
    ess: np.ndarray
    filter_mean: np.ndarray
    J: int
    seed: int
    clamped: int = 0
    swarm: dict | None = None

    def to_dict(self) -> dict:
        return {"loglik": self.loglik, "cond_logliks": self.cond_logliks.tolist(), "ess": self.ess.tolist(),
                "filter_mean": self.filter_mean.tolist(), "J": self.J, "seed": self.seed, "clamped": self.clamped}


def _slice(params, lo, hi):
    return {k: (v[lo:hi] if np.ndim(v) else v) for k, v in params.items()}


def _filter_pass(system: ObservedSystem, pv: ParamVector, est, sd: Mapping | None, J: int, seed: int,
                 pass_index: int, threads: int | None, fixed_natural: Mapping | None = None):
    """One bootstrap filter over the data, optionally with parameter random walks.

    ``est`` is the swarm on the transformed scale (``(J,)`` arrays or
    scalars); ``sd`` the random-walk scales per transformed coordinate (zero
    or absent means fixed).  Returns the filter result and the final swarm.
    """
    if J < 2:
        raise InferenceError("need at least two particles")
    names = pv.names
    est = {k: np.broadcast_to(np.asarray(est[k], dtype=float), (J,)).copy() for k in names}
    sd = {k: float(v) for k, v in (sd or {}).items() if float(v) > 0}
    unknown = set(sd) - set(names)
    if unknown:
        raise InferenceError(f"random-walk scale for unknown parameters {sorted(unknown)}")
    moving = bool(sd)
    blocks = [(b, lo, min(lo + PF_BLOCK, J)) for b, lo in enumerate(range(0, J, PF_BLOCK))]
    edges = np.r_[system.t0, system.times]
    N = system.times.size
    cond = np.empty(N)
    ess = np.empty(N)
    fmean = np.empty((N, system.model.graph.n_vertices))
    clamped = 0
    x = None

    def natural(e):
        nat = pv.from_est(e)
        if fixed_natural:
            nat.update(fixed_natural)
        return nat

    nat = natural(est)
    for n in range(N):
        if moving:
            rng = stream(seed, pass_index, _PERTURB, n)
            for k in names:
                s = sd.get(k, 0.0)
                if s > 0 and (n == 0 or k not in system.ivps):
                    est[k] = est[k] + s * rng.standard_normal(J)
            nat = natural(est)
        if n == 0:
            x = system.initial_state(nat, J)
        mp = system.model_params(nat)

        def run(block, n=n, x=x, mp=mp):
            b, lo, hi = block
            rng = stream(seed, pass_index, _PROPAGATE, n, b)
            st = DrawStats()
            xb, acc = system.model.advance(edges[n], edges[n + 1], system.dt, x[lo:hi], _slice(mp, lo, hi), rng, st)
            return xb, acc[:, system._acc].sum(axis=1), st.clamped

        parts = parallel_map(run, blocks, threads)
        x = np.concatenate([p[0] for p in parts])
        C = np.concatenate([p[1] for p in parts])
        clamped += sum(p[2] for p in parts)
        y = system.data[n]
        if np.isnan(y):
            logw = np.zeros(J)
        else:
            logw = np.asarray(system.measurement.logpmf(y, C, nat), dtype=float)
            logw = np.broadcast_to(np.where(np.isnan(logw), -np.inf, logw), (J,))
        top = logw.max()
        if not np.isfinite(top):
            raise FilterError(n, float(system.times[n]))
        w = np.exp(logw - top)
        cond[n] = top + math.log(w.mean())
        wn = w / w.sum()
        ess[n] = 1.0 / np.sum(wn**2)
        fmean[n] = wn @ x
        idx = systematic_resample(wn, stream(seed, pass_index, _RESAMPLE, n))
        x = x[idx]
        if moving:
            est = {k: v[idx] for k, v in est.items()}
    res = FilterResult(float(cond.sum()), cond, ess, fmean, J, seed, clamped)
    return res, est


def _as_pv(params) -> ParamVector:
    if isinstance(params, ParamVector):
        return params
    return ParamVector(dict(params))


def particle_filter(system: ObservedSystem, params, J: int, seed: int, threads: int | None = None,
                    replicate: int = 0, sd: Mapping | None = None) -> FilterResult:
    """Bootstrap particle filter estimate of the log-likelihood.

    Parameters
    ----------
    system : ObservedSystem
    params : ParamVector or mapping
    J : int
        Number of particles (at least 2).
    seed : int
    replicate : int
        Selects an independent stream family for the same seed.
    sd : mapping, optional
        Random-walk scales on the transformed scale.  When given, this is
        the perturbed filter used inside :func:`iterated_filtering`.
    """
    pv = _as_pv(params)
    res, est = _filter_pass(system, pv, pv.to_est(), sd, J, seed, replicate, threads)
    if sd:
        res.swarm = pv.from_est(est)
    return res


def replicated_loglik(system: ObservedSystem, params, J: int, seed: int, reps: int = 10,
                      threads: int | None = None) -> dict:
    """Independent filter replicates, combined on the likelihood scale.

    Returns the replicate logliks, their log-mean-exp and its jackknife
    standard error.
    """
    lls = np.array([particle_filter(system, params, J, seed, threads, replicate=r).loglik for r in range(reps)])
    val, se = logmeanexp(lls, se=True)
    return {"logliks": lls.tolist(), "loglik": val, "se": se, "J": J, "reps": reps, "seed": seed}


# ---------------------------------------------------------------------------
# iterated filtering


@dataclass
class IF2Result:
    """Final parameter estimate and per-iteration diagnostics."""

    params: ParamVector
    loglik_trace: np.ndarray
    param_trace: list
    settings: dict

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "loglik_trace": self.loglik_trace.tolist(),
                "param_trace": self.param_trace, "settings": self.settings}


def iterated_filtering(system: ObservedSystem, start, sd: Mapping, cooling: float = 0.95, Niter: int = 50,
                       J: int = 2000, seed: int = 0, threads: int | None = None) -> IF2Result:
    """Maximize the likelihood by repeated perturbed-parameter filtering.

    Every estimated coordinate takes a Gaussian random-walk step (on the
    transformed scale) at each observation time; coordinates listed in
    ``system.ivps`` move only at the first one.  At iteration ``m`` the
    scales are ``sd * cooling**(m - 1)``.  The swarm carries over between
    iterations and the estimate is its mean on the transformed scale.

    Parameters
    ----------
    sd : mapping of name to random-walk scale (zero fixes a coordinate)
    cooling : float in (0, 1]
    Niter : int
    """
    pv = _as_pv(start)
    if not 0.0 < cooling <= 1.0:
        raise InferenceError("cooling must lie in (0, 1]")
    if Niter < 1:
        raise InferenceError("Niter must be at least 1")
    if any(float(v) < 0 for v in sd.values()):
        raise InferenceError("random-walk scales must be nonnegative")
    est0 = pv.to_est()
    if not all(np.isfinite(v) for v in est0.values()):
        raise InferenceError("starting parameters are not finite on the transformed scale")
    est = {k: np.full(J, v) for k, v in est0.items()}
    trace, ptrace = [], []
    for m in range(1, Niter + 1):
        scale = cooling ** (m - 1)
        res, est = _filter_pass(system, pv, est, {k: v * scale for k, v in sd.items()}, J, seed, m - 1, threads)
        if m == 1 and not np.isfinite(res.loglik):
            raise InferenceError("log-likelihood at the starting parameters is not finite")
        trace.append(res.loglik)
        centre = pv.from_est({k: float(np.mean(v)) for k, v in est.items()})
        ptrace.append(centre)
    final = ParamVector(centre, dict(pv.transforms))
    settings = {"sd": dict(sd), "cooling": cooling, "Niter": Niter, "J": J, "seed": seed}
    return IF2Result(final, np.array(trace), ptrace, settings)


# ---------------------------------------------------------------------------
# profile likelihood


def chi2_cutoff(level: float = 0.95) -> float:
    """Log-likelihood drop for a one-parameter interval (1.92 at 95%)."""
    return float(sps.chi2.ppf(level, 1) / 2.0)


def smooth_profile(grid, loglik, span: float | None = None, at=None):
    """Quadratic smoother of a profile.

    With ``span=None`` one global quadratic is fitted; otherwise a local
    quadratic with tricube weights over the nearest ``span`` fraction of
    the points.  Returns the smoothed values at ``at`` (default: a fine grid).
    """
    x = np.asarray(grid, dtype=float)
    y = np.asarray(loglik, dtype=float)
    ok = np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 3:
        raise InferenceError("need at least three finite profile points")
    at = np.linspace(x.min(), x.max(), 2001) if at is None else np.asarray(at, dtype=float)
    if span is None:
        coef = np.polyfit(x, y, 2)
        return at, np.polyval(coef, at)
    k = max(3, int(math.ceil(span * x.size)))
    out = np.empty(at.size)
    for i, a in enumerate(at):
        d = np.abs(x - a)
        near = np.argsort(d, kind="stable")[:k]
        dmax = d[near].max() * 1.0001 or 1.0
        w = (1 - (d[near] / dmax) ** 3) ** 3
        X = np.stack([np.ones(k), x[near] - a, (x[near] - a) ** 2], axis=1)
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(X * sw[:, None], y[near] * sw, rcond=None)
        out[i] = coef[0]
    return at, out


def profile_ci(grid, loglik, level: float = 0.95, span: float | None = None) -> dict:
    """Confidence interval from the drop rule on a smoothed profile.

    The interval is the set where the smoothed profile lies within
    ``chi2_cutoff(level)`` of its maximum.  Ends that reach the edge of the
    grid are flagged as open.
    """
    at, sm = smooth_profile(grid, loglik, span)
    cut = chi2_cutoff(level)
    top = int(np.argmax(sm))
    inside = sm >= sm[top] - cut
    lo = top
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = top
    while hi < at.size - 1 and inside[hi + 1]:
        hi += 1

    def edge(i, j):
        # linear interpolation of the crossing between at[i] (inside) and at[j]
        a, b = sm[i] - (sm[top] - cut), sm[j] - (sm[top] - cut)
        return float(at[i] + (at[j] - at[i]) * a / (a - b)) if a != b else float(at[i])

    lower = edge(lo, lo - 1) if lo > 0 else float(at[0])
    upper = edge(hi, hi + 1) if hi < at.size - 1 else float(at[-1])
    return {"mle": float(at[top]), "max": float(sm[top]), "lower": lower, "upper": upper,
            "open_lower": lo == 0, "open_upper": hi == at.size - 1, "level": level, "cutoff": cut}


@dataclass
class ProfileSettings:
    Niter: int = 50
    J: int = 2000
    cooling: float = 0.95
    sd: dict = field(default_factory=dict)
    eval_J: int | None = None
    reps: int = 10
    level: float = 0.95
    span: float | None = None


def profile_likelihood(system: ObservedSystem, start, param_name: str, grid, settings: ProfileSettings,
                       seed: int, threads: int | None = None) -> dict:
    """Profile log-likelihood over ``grid`` for one coordinate.

    At each grid value the coordinate is fixed, the rest are maximized by
    :func:`iterated_filtering` (skipped when no scale is positive) and the
    result is evaluated by replicated filtering.  A grid point whose filter
    fails is marked and left out of the interval.
    """
    pv = _as_pv(start)
    grid = [float(g) for g in grid]
    if len(grid) < 3:
        raise InferenceError("profile grid needs at least three points")
    if param_name not in pv.values:
        raise InferenceError(f"unknown parameter {param_name!r}")
    sd = {k: v for k, v in settings.sd.items() if k != param_name}
    search = any(float(v) > 0 for v in sd.values())

    def point(item):
        i, g = item
        p0 = pv.replace(**{param_name: g})
        try:
            if search:
                fit = iterated_filtering(system, p0, sd, settings.cooling, settings.Niter, settings.J,
                                         int(stream(seed, i).integers(2**31)), threads=1)
                p1 = fit.params.replace(**{param_name: g})
            else:
                p1 = p0
            ev = replicated_loglik(system, p1, settings.eval_J or settings.J, seed + 1_000_003 * (i + 1),
                                   settings.reps, threads=1)
            return {"value": g, "loglik": ev["loglik"], "se": ev["se"], "params": p1.values, "failed": False}
        except (FilterError, InferenceError) as err:
            return {"value": g, "loglik": float("nan"), "se": float("nan"), "params": p0.values,
                    "failed": True, "error": str(err)}

    points = parallel_map(point, list(enumerate(grid)), threads)
    ll = np.array([p["loglik"] for p in points])
    try:
        ci = profile_ci(grid, ll, settings.level, settings.span)
    except InferenceError as err:
        ci = {"error": str(err)}
    return {"param": param_name, "grid": grid, "points": points, "ci": ci}


__all__ = [
    "FilterError", "InferenceError", "MeasurementModel", "DiscretizedNormalReports", "ExactReports",
    "dmeasure", "ParamVector", "ObservedSystem", "simulate_observations", "systematic_resample",
    "logmeanexp", "FilterResult", "particle_filter", "replicated_loglik", "IF2Result",
    "iterated_filtering", "chi2_cutoff", "smooth_profile", "profile_ci", "ProfileSettings",
    "profile_likelihood",
]
