"""Brute-force reference values computed by numerical quadrature.

These routines take a different road from the closed forms in
:mod:`dispersim.kernels`: the one-step probability of an increment pattern is
obtained by integrating the conditional (multinomial or negative multinomial)
pmf against the Dirichlet/beta mixing density, one stick-breaking coordinate
at a time, with QUADPACK's algebraic-singularity rule.  ``P(h) / h`` is then
extrapolated to ``h = 0``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.special import beta as beta_fn

from .kernels import SHARED_LAWS, step_probs


def beta_moment_quad(a: float, b: float, e1: float, e2: float) -> float:
    """``E[U**e1 * (1 - U)**e2]`` for ``U ~ Beta(a, b)`` by quadrature."""
    val, _ = integrate.quad(lambda u: u**e1 * (1.0 - u) ** e2, 0.0, 1.0, weight="alg",
                            wvar=(a - 1.0, b - 1.0), epsabs=0.0, epsrel=1e-12, limit=200)
    return val / beta_fn(a, b)


def dirichlet_moment_quad(alpha, exps) -> float:
    """``E[prod_j P_j**e_j]`` for ``P ~ Dir(alpha)`` via stick breaking.

    With ``U_j ~ Beta(alpha_j, sum_{l > j} alpha_l)`` independent,
    ``P_j = U_j prod_{l < j} (1 - U_l)``; the expectation factorises into one
    beta integral per stick.
    """
    alpha = np.asarray(alpha, dtype=float)
    exps = np.asarray(exps, dtype=float)
    out = 1.0
    for j in range(alpha.size - 1):
        rest_a = alpha[j + 1:].sum()
        rest_e = exps[j + 1:].sum()
        if alpha[j] == 0.0:
            if exps[j] > 0:
                return 0.0
            continue
        out *= beta_moment_quad(alpha[j], rest_a, exps[j], rest_e)
    return out


def _log_multinom(n, ks):
    return math.lgamma(n + 1) - sum(math.lgamma(k + 1) for k in ks)


def step_pmf_quad(law: str, counts, k, c: float, hazards) -> float:
    """One-step probability of the increment pattern ``k``.

    ``counts`` is the tail count (bounded star), head count (unbounded star)
    or per-member counts (shared laws); ``hazards`` the per-arrow integrated
    rates (one common value for shared laws).
    """
    k = [int(v) for v in np.atleast_1d(k)]
    H = np.atleast_1d(np.asarray(hazards, dtype=float))
    if law in SHARED_LAWS:
        x = [float(v) for v in np.broadcast_to(np.asarray(counts, dtype=float), (len(k),))]
        pi = -math.expm1(-float(H[0]))
        a, b = c * pi, c * (1.0 - pi)
        K, X = sum(k), sum(x)
        if law == "BetaBinomialShared":
            comb = math.prod(math.comb(int(xi), ki) for xi, ki in zip(x, k))
            return comb * beta_moment_quad(a, b, K, X - K)
        comb = math.exp(sum(math.lgamma(xi + ki) - math.lgamma(ki + 1) - math.lgamma(xi) for xi, ki in zip(x, k)))
        return comb * beta_moment_quad(a, b, K, X)
    x = float(np.asarray(counts).reshape(-1)[0])
    sp = step_probs(H)
    alpha = c * sp.pi
    if law == "DirichletMultinomial":
        stay = x - sum(k)
        if stay < 0:
            return 0.0
        coef = math.exp(_log_multinom(x, k + [stay]))
        return coef * dirichlet_moment_quad(alpha, [stay] + k)
    if law == "DirichletNegMultinomial":
        coef = math.exp(math.lgamma(x + sum(k)) - math.lgamma(x) - sum(math.lgamma(v + 1) for v in k))
        return coef * dirichlet_moment_quad(alpha, [x] + k)
    raise ValueError(f"no quadrature oracle for law {law!r}")


def rate_by_quadrature(law: str, counts, k, c: float, rates, h_grid=(4e-3, 2e-3, 1e-3, 5e-4)) -> float:
    """Extrapolate ``P(increment == k at step h) / h`` to ``h = 0``.

    Uses repeated Richardson elimination on a grid with ratio 2, which removes
    the ``O(h)`` and higher-order terms of the expansion in turn.
    """
    r = np.atleast_1d(np.asarray(rates, dtype=float))
    f = [step_pmf_quad(law, counts, k, c, r * h) / h for h in h_grid]
    table = [f]
    for level in range(1, len(h_grid)):
        prev = table[-1]
        fac = 2.0**level
        table.append([(fac * prev[i + 1] - prev[i]) / (fac - 1.0) for i in range(len(prev) - 1)])
    return float(table[-1][0])


def poisson_reports_loglik(y, mean: float, rho: float, psi: float, interval: float = 1.0) -> float:
    """Exact log-likelihood of reports of independent Poisson counts.

    Each report is ``round(N(rho C, rho (1 - rho) C + (psi rho C)**2))``
    floored at 0, with ``C ~ Poisson(mean * interval)``; the hidden count is
    summed out directly over ``0 .. lam + 40 sqrt(lam) + 100``, far past any
    tail mass that float64 can register.
    """
    from scipy import stats as sps

    lam = mean * interval
    cmax = int(lam + 40.0 * math.sqrt(lam) + 100.0)
    C = np.arange(cmax + 1, dtype=float)
    logp = sps.poisson.logpmf(C, lam)
    m = rho * C
    s = np.sqrt(np.maximum(m * (1 - rho) + (psi * m) ** 2, 1e-12))
    total = 0.0
    for yn in np.asarray(y, dtype=float):
        upper = sps.norm.cdf((yn + 0.5 - m) / s)
        lower = sps.norm.cdf((yn - 0.5 - m) / s) if yn > 0.5 else 0.0
        mass = np.clip(upper - lower, 0.0, None)
        with np.errstate(divide="ignore"):
            terms = logp + np.log(mass)
        top = terms.max()
        total += float(top + np.log(np.exp(terms - top).sum()))
    return total
