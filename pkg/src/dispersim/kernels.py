"""Step laws for arrow groups: samplers plus closed-form moments and rates.

Every sampler is vectorised over a leading batch axis (particles or
replicates) and takes an explicit ``numpy.random.Generator``.  Shapes:
counts ``(...,)`` or ``(..., m)``, hazards ``(..., m)``, ``c`` scalar or
``(...,)``.

Bounded laws move individuals out of a tail (binomial family); unbounded laws
add individuals at a head (negative-binomial family); ``Poisson`` is for an
arrow leaving a source vertex, whose count is not tracked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma, gammaln

BOUNDED_LAWS = ("EquiMultinomial", "DirichletMultinomial", "BetaBinomialShared")
UNBOUNDED_LAWS = ("EquiNegMultinomial", "DirichletNegMultinomial", "BetaNegBinomialShared")
LAWS = BOUNDED_LAWS + UNBOUNDED_LAWS + ("Poisson",)
NOISY_LAWS = ("DirichletMultinomial", "BetaBinomialShared", "DirichletNegMultinomial", "BetaNegBinomialShared")
SHARED_LAWS = ("BetaBinomialShared", "BetaNegBinomialShared")

COMPATIBLE_KINDS = {
    "EquiMultinomial": ("outgoing-star", "singleton", "color-matched-bounded"),
    "DirichletMultinomial": ("outgoing-star", "singleton"),
    "BetaBinomialShared": ("color-matched-bounded", "singleton"),
    "EquiNegMultinomial": ("incoming-star", "singleton", "color-matched-unbounded"),
    "DirichletNegMultinomial": ("incoming-star", "singleton"),
    "BetaNegBinomialShared": ("color-matched-unbounded", "singleton"),
    "Poisson": ("singleton",),
}

PI0_FLOOR = 1e-12


class KernelError(ValueError):
    """Invalid law, noise parameter or increment pattern."""


@dataclass(frozen=True)
class KernelSpec:
    """Step law of one arrow group; ``c`` is the inverse noise parameter.

    ``c`` may name a model parameter (a string) so it can be estimated; it is
    resolved to a number by the simulator.
    """

    law: str
    c: object = None

    def __post_init__(self):
        if self.law not in LAWS:
            raise KernelError(f"unknown law {self.law!r}; expected one of {LAWS}")
        if self.law in NOISY_LAWS:
            if self.c is None:
                raise KernelError(f"law {self.law} needs an inverse noise parameter c")
            if not isinstance(self.c, str):
                check_c(self.c)
        elif self.c is not None:
            raise KernelError(f"law {self.law} takes no noise parameter")

    @property
    def bounded(self) -> bool:
        return self.law in BOUNDED_LAWS

    @property
    def unbounded(self) -> bool:
        return self.law in UNBOUNDED_LAWS

    @property
    def noisy(self) -> bool:
        return self.law in NOISY_LAWS

    def check_kind(self, kind: str) -> None:
        if kind not in COMPATIBLE_KINDS[self.law]:
            raise KernelError(f"law {self.law} cannot drive a {kind} group")


def check_c(c):
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 0)):
        raise KernelError("inverse noise parameter c must be positive")
    return c


class DrawStats:
    """Counts unbounded-law draws whose stopping probability hit the floor."""

    def __init__(self):
        self.clamped = 0


@dataclass
class StepProbabilities:
    """``pi[..., 0]`` is the stay/stop slot, ``pi[..., 1:]`` the arrows."""

    pi: np.ndarray

    def alpha(self, c) -> np.ndarray:
        return np.asarray(c, dtype=float)[..., None] * self.pi

    @property
    def pi0(self):
        return self.pi[..., 0]

    @property
    def moving(self):
        return self.pi[..., 1:]


def step_probs(hazards) -> StepProbabilities:
    """Turn integrated hazards ``H_i`` into step probabilities.

    ``pi_i = (1 - exp(-sum H)) * H_i / sum H`` and ``pi_0 = exp(-sum H)``.
    The split uses the integrated hazards so it stays exact when a rate
    changes inside the step.
    """
    H = np.asarray(hazards, dtype=float)
    if H.ndim == 0:
        H = H[None]
    if np.any(H < 0) or not np.all(np.isfinite(H)):
        raise KernelError("hazards must be finite and nonnegative")
    tot = H.sum(axis=-1)
    p_any = -np.expm1(-tot)
    safe = np.where(tot > 0, tot, 1.0)
    moving = p_any[..., None] * (H / safe[..., None])
    pi = np.concatenate([np.exp(-tot)[..., None], moving], axis=-1)
    return StepProbabilities(pi)


# ---------------------------------------------------------------------------
# primitive draws


def sample_dirichlet(alpha, rng) -> np.ndarray:
    """Dirichlet draws along the last axis, stable for tiny shapes.

    Each gamma variate is drawn as ``Gamma(a + 1) * U**(1/a)`` in log space,
    so shapes far below machine epsilon still give correctly ordered
    components.  Zero shapes give exact zeros.
    """
    alpha = np.asarray(alpha, dtype=float)
    g = rng.standard_gamma(alpha + 1.0)
    u = rng.random(alpha.shape)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logg = np.log(g) + np.where(alpha > 0, np.log(u) / np.where(alpha > 0, alpha, 1.0), -np.inf)
    top = np.max(logg, axis=-1, keepdims=True)
    w = np.exp(logg - top)
    return w / w.sum(axis=-1, keepdims=True)


def _seq_binomial(n, probs, rng) -> np.ndarray:
    """Multinomial split of ``n`` over the columns of ``probs`` (rows sum to 1)."""
    probs = np.asarray(probs, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=np.int64), probs.shape[:-1]).copy()
    k_cols = probs.shape[-1]
    out = np.zeros(probs.shape, dtype=np.int64)
    tail = np.cumsum(probs[..., ::-1], axis=-1)[..., ::-1]
    for i in range(k_cols - 1):
        denom = tail[..., i]
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(denom > 0, probs[..., i] / np.where(denom > 0, denom, 1.0), 0.0)
        k = rng.binomial(n, np.clip(p, 0.0, 1.0))
        out[..., i] = k
        n = n - k
    out[..., -1] = n
    return out


def sample_multinomial(x, P, rng) -> np.ndarray:
    """Multinomial(x, P) with slot 0 last in the sequential order (retention)."""
    P = np.asarray(P, dtype=float)
    order = np.r_[1:P.shape[-1], 0]
    draws = _seq_binomial(x, P[..., order], rng)
    out = np.empty_like(draws)
    out[..., order] = draws
    return out


def _dirichlet_floored(alpha, rng, stats) -> np.ndarray:
    """Dirichlet draw whose slot 0 (stop probability) stays above the floor.

    Rows at or below ``PI0_FLOOR`` are redrawn once, then clamped; each such
    row is counted in ``stats``.
    """
    alpha = np.asarray(alpha, dtype=float)
    flat = alpha.reshape(-1, alpha.shape[-1])
    P = sample_dirichlet(flat, rng)
    bad = P[:, 0] <= PI0_FLOOR
    if np.any(bad):
        if stats is not None:
            stats.clamped += int(np.count_nonzero(bad))
        P[bad] = sample_dirichlet(flat[bad], rng)
        bad = P[:, 0] <= PI0_FLOOR
        if np.any(bad):
            rest = P[bad, 1:]
            rest = rest * ((1.0 - PI0_FLOOR) / rest.sum(axis=-1, keepdims=True))
            P[bad, 0] = PI0_FLOOR
            P[bad, 1:] = rest
    return P.reshape(alpha.shape)


def sample_negative_multinomial(x, P, rng) -> np.ndarray:
    """Negative multinomial increments given stop probability ``P[..., 0]``.

    The total is NB(x, P0) failures before ``x`` successes; it is then split
    over the arrows in proportion to ``P[..., 1:]``.  Rows with ``x == 0``
    give zeros.
    """
    P = np.asarray(P, dtype=float)
    x = np.broadcast_to(np.asarray(x), P.shape[:-1])
    live = x > 0
    p0 = np.clip(P[..., 0], PI0_FLOOR, 1.0)
    total = rng.negative_binomial(np.where(live, x, 1), p0)
    total = np.where(live, total, 0).astype(np.int64)
    moving = P[..., 1:]
    if moving.shape[-1] == 1:
        return total[..., None]
    share = moving / np.where(moving.sum(axis=-1, keepdims=True) > 0, moving.sum(axis=-1, keepdims=True), 1.0)
    share = np.where(moving.sum(axis=-1, keepdims=True) > 0, share, 1.0 / moving.shape[-1])
    return _seq_binomial(total, share, rng)


# ---------------------------------------------------------------------------
# named samplers


def sample_bounded_star(x_tail, sp: StepProbabilities, c, rng) -> np.ndarray:
    """Dirichlet-multinomial step of an outgoing star.

    Returns ``(..., m + 1)`` counts; column 0 holds the individuals that stay,
    so each row sums to ``x_tail``.
    """
    check_c(c)
    x = np.asarray(x_tail)
    if x.ndim == 0 and x == 0:
        return np.zeros(sp.pi.shape, dtype=np.int64)
    Pi = sample_dirichlet(sp.alpha(c), rng)
    return sample_multinomial(x, Pi, rng)


def sample_beta_binomial(x_tail, hazard, c, rng):
    """Single arrow: Pi ~ Beta(c pi, c (1 - pi)), increment ~ Binomial(x, Pi)."""
    sp = step_probs(np.asarray(hazard, dtype=float)[..., None])
    return sample_bounded_star(x_tail, sp, c, rng)[..., 1]


def sample_shared_beta_bounded(x_tails, hazard, c, rng) -> np.ndarray:
    """One beta-distributed Pi shared by all members, then independent binomials."""
    check_c(c)
    x = np.asarray(x_tails, dtype=np.int64)
    sp = step_probs(np.asarray(hazard, dtype=float)[..., None])
    Pi = sample_dirichlet(sp.alpha(c), rng)[..., 1]
    return rng.binomial(x, np.clip(Pi, 0.0, 1.0)[..., None])


def sample_unbounded_star(x_head, sp: StepProbabilities, c, rng, stats: DrawStats | None = None) -> np.ndarray:
    """Dirichlet-negative-multinomial step of an incoming star, ``(..., m)``."""
    c = check_c(c)
    Pi = _dirichlet_floored(sp.alpha(c), rng, stats)
    return sample_negative_multinomial(x_head, Pi, rng)


def sample_shared_beta_unbounded(x_heads, hazard, c, rng, stats: DrawStats | None = None) -> np.ndarray:
    """Shared Pi ~ Beta(c pi, c (1 - pi)); member i gets NB(x_i, 1 - Pi) jumps."""
    c = check_c(c)
    x = np.asarray(x_heads)
    sp = step_probs(np.asarray(hazard, dtype=float)[..., None])
    P = _dirichlet_floored(sp.alpha(c), rng, stats)
    live = x > 0
    stop = np.broadcast_to(P[..., 0][..., None], x.shape)
    k = rng.negative_binomial(np.where(live, x, 1), stop)
    return np.where(live, k, 0).astype(np.int64)


def sample_equi_step(law: str, counts, sp: StepProbabilities, rng) -> np.ndarray:
    """Noise-free step: multinomial (bounded, with slot 0) or negative multinomial."""
    if law in BOUNDED_LAWS:
        return sample_multinomial(counts, sp.pi, rng)
    if law in UNBOUNDED_LAWS:
        return sample_negative_multinomial(counts, sp.pi, rng)
    raise KernelError(f"no equi step for law {law!r}")


# ---------------------------------------------------------------------------
# group dispatch used by the simulator


def sample_group(kernel: KernelSpec, kind: str, counts, hazards, rng, c=None, stats=None) -> np.ndarray:
    """Arrow increments ``(..., m)`` for one group.

    ``counts`` holds, per member, the count the law acts on: the tail for
    bounded laws and the head for unbounded ones (identical across members of
    a star).  ``hazards`` are the integrated rates over the step.
    """
    H = np.asarray(hazards, dtype=float)
    law = kernel.law
    if law == "Poisson":
        return rng.poisson(H)
    counts = np.asarray(counts, dtype=np.int64)
    c = kernel.c if c is None else c
    shared = kind.startswith("color-matched") or law in SHARED_LAWS
    if shared and kind != "singleton":
        if law == "EquiMultinomial":
            return rng.binomial(counts, -np.expm1(-H))
        if law == "EquiNegMultinomial":
            live = counts > 0
            return np.where(live, rng.negative_binomial(np.where(live, counts, 1), np.exp(-H)), 0)
        if law == "BetaBinomialShared":
            return sample_shared_beta_bounded(counts, H[..., 0], c, rng)
        return sample_shared_beta_unbounded(counts, H[..., 0], c, rng, stats)
    if law in SHARED_LAWS:  # singleton shared law: same as the one-arrow Dirichlet law
        law = "DirichletMultinomial" if law == "BetaBinomialShared" else "DirichletNegMultinomial"
    x = counts[..., 0]
    sp = step_probs(H)
    if law == "EquiMultinomial":
        return sample_multinomial(x, sp.pi, rng)[..., 1:]
    if law == "DirichletMultinomial":
        Pi = sample_dirichlet(sp.alpha(c), rng)
        return sample_multinomial(x, Pi, rng)[..., 1:]
    if law == "EquiNegMultinomial":
        return sample_negative_multinomial(x, sp.pi, rng)
    return sample_unbounded_star(x, sp, c, rng, stats)


# ---------------------------------------------------------------------------
# closed-form oracles


def infinitesimal_moments(law: str, counts, rates, c=None, kind: str | None = None) -> dict:
    """Infinitesimal mean, variance and covariance rates of a group.

    Parameters
    ----------
    law : str
    counts : array_like
        Tail (bounded) or head (unbounded) count per member; a scalar for a
        star is broadcast.
    rates : array_like
        Per-member rate; shared laws use one common rate.
    c : float, optional
    kind : str, optional
        Group kind; shared laws default to color-matched, others to star.

    Returns
    -------
    dict with ``mean`` (m,), ``var`` (m,) and ``cov`` (m, m) whose diagonal
    equals ``var``.
    """
    r = np.atleast_1d(np.asarray(rates, dtype=float))
    x = np.broadcast_to(np.asarray(counts, dtype=float), r.shape).astype(float)
    m = r.size
    cov = np.zeros((m, m))
    shared = law in SHARED_LAWS or (kind or "").startswith("color-matched")
    if law == "Poisson":
        mean, var = r.copy(), r.copy()
    elif law in ("EquiMultinomial", "EquiNegMultinomial"):
        mean, var = x * r, x * r
    elif law in ("DirichletMultinomial", "BetaBinomialShared"):
        c = float(c)
        mean = x * r
        var = (1.0 + (x - 1.0) / (c + 1.0)) * x * r
        if shared:
            cov = np.outer(x, x) * r[0] / (c + 1.0)
    elif law in ("DirichletNegMultinomial", "BetaNegBinomialShared"):
        c = float(c)
        if c <= 2:
            raise KernelError("unbounded-law moments exist only for c > 2")
        mean = x * r * c / (c - 1.0)
        var = x**2 * r * c / ((c - 1.0) * (c - 2.0)) + x * r * c / (c - 2.0)
        if shared:
            # head counts, as in the derivation
            cov = np.outer(x, x) * c * r[0] / ((c - 1.0) * (c - 2.0))
    else:
        raise KernelError(f"unknown law {law!r}")
    np.fill_diagonal(cov, var)
    return {"mean": mean, "var": var, "cov": cov, "D": np.divide(var, mean, out=np.ones_like(var), where=mean > 0)}


def _log_choose(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def _digamma_diff(x: float, c: float) -> float:
    """``psi(x + c) - psi(c)``; a finite sum for integer ``x`` (no cancellation)."""
    if float(x).is_integer() and x <= 1e6:
        return float(np.sum(1.0 / (c + np.arange(int(x), dtype=float))))
    return float(digamma(x + c) - digamma(c))


def _rate_bounded_single(x, k, c, r):
    # Gamma(k) Gamma(x - k + c) / Gamma(x + c) is a beta function; betaln keeps
    # its accuracy when c is huge
    return c * np.exp(_log_choose(x, k) + betaln(k, x - k + c)) * r


def _rate_unbounded_single(x, k, c, r):
    lc = gammaln(x + k) - gammaln(k + 1.0) - gammaln(x)
    return c * np.exp(lc + betaln(k, x + c)) * r


def exact_transition_rate(law: str, counts, k, c=None, r=None, kind: str | None = None) -> float:
    """Leading-order rate ``q`` of the increment pattern ``k`` over one group.

    ``P(increments == k) = q h + o(h)``.  Star patterns with two or more
    active arrows, and multi-individual jumps of the noise-free laws, have
    probability ``o(h)`` and return 0.

    Parameters
    ----------
    law : str
    counts : int or array_like
        Tail count of a bounded star, head count of an unbounded star, or
        per-member counts for a color-matched group.
    k : array_like of int
        Increment per member; at least one entry must be positive.
    c : float
        Inverse noise parameter (noisy laws only).
    r : float or array_like
        Per-arrow rates (stars) or the shared rate.
    """
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    if np.any(k < 0) or k.sum() < 1:
        raise KernelError("increment pattern must be nonnegative with at least one jump")
    r = np.broadcast_to(np.asarray(r, dtype=float), k.shape)
    shared = law in SHARED_LAWS or (kind or "").startswith("color-matched")
    x = np.broadcast_to(np.asarray(counts, dtype=float), k.shape)
    if law in BOUNDED_LAWS and shared:
        if np.any(k > x):
            raise KernelError("increment exceeds a member's tail count")
    elif law in BOUNDED_LAWS and k.sum() > x[0]:
        raise KernelError("star increments exceed the tail count")
    if law in UNBOUNDED_LAWS and np.any(x <= 0):
        raise KernelError("unbounded laws need a positive head count")
    if law == "Poisson":
        return float(r[0]) if k[0] == 1 else 0.0
    active = np.flatnonzero(k)
    if law in ("EquiMultinomial", "EquiNegMultinomial"):
        if active.size != 1 or k[active[0]] != 1:
            return 0.0
        i = active[0]
        return float(x[i] * r[i])
    check_c(c)
    c = float(c)
    if shared and law in SHARED_LAWS:
        X, K = x.sum(), float(k.sum())
        if law == "BetaBinomialShared":
            logc = _log_choose(x, k).sum()
            return float(c * np.exp(logc + betaln(K, X - K + c)) * r[0])
        logc = (gammaln(x + k) - gammaln(k + 1.0) - gammaln(x)).sum()
        return float(c * np.exp(logc + betaln(K, X + c)) * r[0])
    if active.size != 1:
        return 0.0
    i = active[0]
    if law in ("DirichletMultinomial", "BetaBinomialShared"):
        return float(_rate_bounded_single(x[i], float(k[i]), c, r[i]))
    return float(_rate_unbounded_single(x[i], float(k[i]), c, r[i]))


def group_jump_rate(law: str, counts, rates, c=None, kind: str | None = None) -> float:
    """Rate of "some transition happens in this group" (sum of all q).

    Bounded patterns are summed term by term.  The unbounded sums are
    infinite; they use ``sum_k q(k) = c r (psi(x + c) - psi(c))``, which the
    test-suite checks against truncated direct sums.
    """
    r = np.atleast_1d(np.asarray(rates, dtype=float))
    x = np.broadcast_to(np.asarray(counts, dtype=float), r.shape)
    shared = law in SHARED_LAWS or (kind or "").startswith("color-matched")
    if law == "Poisson":
        return float(r.sum())
    if law in ("EquiMultinomial", "EquiNegMultinomial"):
        return float((x * r).sum())
    c = float(check_c(c))
    if shared and law in SHARED_LAWS:
        # Vandermonde collapses the member patterns onto the pooled count
        X = float(x.sum())
        if X <= 0:
            return 0.0
        if law == "BetaBinomialShared":
            ks = np.arange(1, int(X) + 1, dtype=float)
            return float(_rate_bounded_single(X, ks, c, r[0]).sum())
        return float(c * r[0] * _digamma_diff(X, c))
    if law in ("DirichletMultinomial", "BetaBinomialShared"):
        xt = float(x[0])
        if xt <= 0:
            return 0.0
        ks = np.arange(1, int(xt) + 1, dtype=float)
        per = _rate_bounded_single(xt, ks[None, :], c, r[:, None]).sum(axis=1)
        return float(per.sum())
    xh = float(x[0])
    if xh <= 0:
        return 0.0
    return float((c * r * _digamma_diff(xh, c)).sum())
