"""Per-capita transition rates r(t, x) and their integrals over one Euler step.

Rates are declared as small JSON expression trees and compiled once into
node objects.  Inside a step the state is frozen at the left endpoint, so only
covariates and seasonal forcing vary with time; the step integral is split at
every discontinuity (term boundaries, covariate knots) and each piece uses
three-point Gauss-Legendre, which is exact for piecewise-constant and
piecewise-linear integrands.

Expression forms
----------------
``2.5``                                    constant
``{"param": "r_EI"}``                      parameter (scalar or per-particle array)
``{"covariate": "pop", "lag": 0}``         covariate value at t - lag
``{"state": "I"}``                         frozen count of a vertex
``{"product": [e, ...]}``                  product
``{"sum": [e, ...]}``                      sum
``{"power": [base, exponent]}``            power
``{"ratio": [num, den]}``                  quotient
``{"foi": {...}}``                         beta(t) (x_I + iota)^alpha / N(t)
``{"term_forcing": {...}}``                school-term modulated transmission
``{"pulse": {"amount": e, "doy": d}}``     point mass once a year
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

DAYS_PER_YEAR = 365.0

# three-point Gauss-Legendre on [0, 1]
_GL_X = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL_W = 0.5 * np.array([5.0, 8.0, 5.0]) / 9.0


class RateError(ValueError):
    """Bad rate expression, out-of-range covariate lookup or invalid rate value."""


# ---------------------------------------------------------------------------
# covariates and forcing


class CovariateTable:
    """Named real series on a shared, strictly increasing time grid.

    Parameters
    ----------
    grid : array_like
        Knot times.
    series : mapping of name to array_like
        One value per knot for every column.
    interpolation : str or mapping, optional
        ``"linear"`` (default) or ``"step"``, globally or per column.
    """

    def __init__(self, grid, series: Mapping[str, Sequence[float]], interpolation="linear"):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise RateError("covariate grid needs at least two times")
        if not np.all(np.diff(grid) > 0):
            raise RateError("covariate grid must be strictly increasing")
        self.grid = grid
        self.series = {}
        for name, vals in series.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != grid.shape:
                raise RateError(f"covariate {name!r} has {vals.size} values for {grid.size} knots")
            if not np.all(np.isfinite(vals)):
                raise RateError(f"covariate {name!r} has non-finite values")
            self.series[name] = vals
        if isinstance(interpolation, str):
            interpolation = {name: interpolation for name in self.series}
        self.interpolation = {name: interpolation.get(name, "linear") for name in self.series}
        for name, how in self.interpolation.items():
            if how not in ("linear", "step"):
                raise RateError(f"unknown interpolation {how!r} for {name!r}")

    @classmethod
    def from_csv(cls, path, interpolation="linear") -> "CovariateTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0].strip() != "time":
            raise RateError(f"{path}: first column must be 'time'")
        data = np.array([[float(v) for v in r] for r in body])
        names = [h.strip() for h in header[1:]]
        return cls(data[:, 0], {n: data[:, i + 1] for i, n in enumerate(names)}, interpolation)

    def to_csv(self, path) -> None:
        names = list(self.series)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", *names])
            for i, t in enumerate(self.grid):
                w.writerow([repr(float(t))] + [repr(float(self.series[n][i])) for n in names])

    @property
    def names(self):
        return tuple(self.series)

    @property
    def span(self):
        return float(self.grid[0]), float(self.grid[-1])

    def __call__(self, name: str, t):
        try:
            vals = self.series[name]
        except KeyError:
            raise RateError(f"unknown covariate {name!r}") from None
        t = np.asarray(t, dtype=float)
        lo, hi = self.span
        eps = 1e-9 * max(1.0, abs(hi))
        if np.any(t < lo - eps) or np.any(t > hi + eps):
            raise RateError(
                f"covariate {name!r} requested at t in [{t.min():.6g}, {t.max():.6g}] "
                f"outside its grid [{lo:.6g}, {hi:.6g}]"
            )
        if self.interpolation[name] == "linear":
            return np.interp(t, self.grid, vals)
        idx = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, self.grid.size - 1)
        return vals[idx]

    def knots_between(self, t0: float, t1: float, shift: float = 0.0) -> np.ndarray:
        g = self.grid + shift
        i0, i1 = np.searchsorted(g, [t0, t1], side="right")
        return g[i0:i1][g[i0:i1] < t1]


DEFAULT_TERM_CALENDAR = ((7, 101), (115, 200), (252, 301), (308, 357))


def load_term_calendar(path_or_list) -> tuple[tuple[float, float], ...]:
    """Read ``[{"start_doy": a, "end_doy": b}, ...]`` from JSON (path or list)."""
    if isinstance(path_or_list, (str, Path)):
        with open(path_or_list) as fh:
            entries = json.load(fh)
    else:
        entries = path_or_list
    cal = []
    for e in entries:
        if isinstance(e, Mapping):
            cal.append((float(e["start_doy"]), float(e["end_doy"])))
        else:
            cal.append((float(e[0]), float(e[1])))
    return validate_calendar(cal)


def validate_calendar(cal, days_per_year: float = DAYS_PER_YEAR):
    cal = tuple(sorted((float(a), float(b)) for a, b in cal))
    prev = 0.0
    for a, b in cal:
        if not (0.0 <= a < b <= days_per_year):
            raise RateError(f"term interval [{a}, {b}) is not inside one year")
        if a < prev:
            raise RateError("term intervals overlap")
        prev = b
    return cal


def day_of_year(t, days_per_year: float = DAYS_PER_YEAR):
    t = np.asarray(t, dtype=float)
    return (t - np.floor(t)) * days_per_year


@dataclass(frozen=True)
class SeasonalForcing:
    """Two-level school-term transmission rate.

    ``beta(t)`` is ``(1 + 2(1-p) theta_a) beta_bar`` on term days and
    ``(1 - 2 p theta_a) beta_bar`` otherwise.  Time is in years and the day of
    year is ``frac(t) * 365``.
    """

    term_calendar: tuple = DEFAULT_TERM_CALENDAR
    p: float = 0.7589
    theta_a: float = 0.0
    beta_bar: float = 1.0
    days_per_year: float = DAYS_PER_YEAR

    def __post_init__(self):
        object.__setattr__(self, "term_calendar", validate_calendar(self.term_calendar, self.days_per_year))
        if not 0.0 < self.p < 1.0:
            raise RateError("term fraction p must lie in (0, 1)")
        if np.any(np.asarray(self.theta_a) < 0):
            raise RateError("theta_a must be nonnegative")
        if np.any(1.0 - 2.0 * self.p * np.asarray(self.theta_a) <= 0):
            raise RateError("vacation transmission 1 - 2 p theta_a must stay positive")
        if np.any(np.asarray(self.beta_bar) <= 0):
            raise RateError("beta_bar must be positive")

    def term_fraction(self) -> float:
        return sum(b - a for a, b in self.term_calendar) / self.days_per_year

    def in_term(self, t):
        return in_term(t, self.term_calendar, self.days_per_year)

    def beta(self, t):
        return forcing_value(t, self.beta_bar, self.theta_a, self.p, self.term_calendar, self.days_per_year)

    def breakpoints(self, t0: float, t1: float) -> np.ndarray:
        return calendar_breaks(t0, t1, self.term_calendar, self.days_per_year)


def in_term(t, calendar, days_per_year=DAYS_PER_YEAR):
    d = day_of_year(t, days_per_year)
    mask = np.zeros(d.shape, dtype=bool)
    for a, b in calendar:
        mask |= (d >= a) & (d < b)
    return mask


def forcing_value(t, beta_bar, theta_a, p, calendar, days_per_year=DAYS_PER_YEAR):
    term = in_term(t, calendar, days_per_year)
    shift = np.where(term, 2.0 * (1.0 - p), -2.0 * p)
    return beta_bar * (1.0 + shift * theta_a)


def calendar_breaks(t0, t1, calendar, days_per_year=DAYS_PER_YEAR) -> np.ndarray:
    out = []
    for year in range(math.floor(t0), math.floor(t1) + 1):
        for a, b in calendar:
            for d in (a, b):
                s = year + d / days_per_year
                if t0 < s < t1:
                    out.append(s)
    return np.array(sorted(set(out)))


# ---------------------------------------------------------------------------
# expression nodes


@dataclass
class RateContext:
    """Frozen state and parameter values for one evaluation.

    ``counts`` has shape ``(V,)`` or ``(J, V)``; params map names to scalars
    or ``(J,)`` arrays.
    """

    counts: np.ndarray
    params: Mapping[str, object] = field(default_factory=dict)

    @property
    def batch_shape(self):
        return np.shape(self.counts)[:-1]


class Node:
    time_dep = False
    has_pulse = False

    def ev(self, t, ctx):  # pragma: no cover - abstract
        raise NotImplementedError

    def breaks(self, t0, t1, ctx):
        return ()

    def children(self):
        return ()

    def pulses(self, t, h, ctx):
        return 0.0

    def integ(self, t, h, ctx, pieces):
        if not self.time_dep:
            return h * self.ev(t, ctx)
        return _gl(self.ev, pieces, ctx)


def _gl(fn, pieces, ctx):
    # pieces: (a, b) arrays of subinterval ends
    a, b = pieces
    nodes = (a[:, None] + (b - a)[:, None] * _GL_X[None, :]).reshape(-1)
    w = ((b - a)[:, None] * _GL_W[None, :]).reshape(-1)
    ts = nodes.reshape((-1,) + (1,) * len(ctx.batch_shape))
    vals = np.asarray(fn(ts, ctx), dtype=float)
    vals = np.broadcast_to(vals, (nodes.size,) + tuple(np.broadcast_shapes(vals.shape[1:], ctx.batch_shape)))
    return np.tensordot(w, vals, axes=(0, 0))


class Const(Node):
    def __init__(self, value):
        self.value = float(value)

    def ev(self, t, ctx):
        return self.value


class Param(Node):
    def __init__(self, name):
        self.name = name

    def ev(self, t, ctx):
        try:
            return ctx.params[self.name]
        except KeyError:
            raise RateError(f"parameter {self.name!r} is not set") from None


class State(Node):
    def __init__(self, vertex, index):
        self.vertex, self.index = vertex, index

    def ev(self, t, ctx):
        return np.asarray(ctx.counts[..., self.index], dtype=float)


class Covariate(Node):
    time_dep = True

    def __init__(self, name, table: CovariateTable, lag=0.0):
        if table is None or name not in table.series:
            raise RateError(f"rate refers to unknown covariate {name!r}")
        self.name, self.table, self.lag = name, table, float(lag)

    def ev(self, t, ctx):
        return self.table(self.name, np.asarray(t) - self.lag)

    def breaks(self, t0, t1, ctx):
        return self.table.knots_between(t0, t1, shift=self.lag)


class _Composite(Node):
    def __init__(self, kids):
        self.kids = list(kids)
        self.time_dep = any(k.time_dep for k in self.kids)

    def children(self):
        return self.kids


class Product(_Composite):
    def ev(self, t, ctx):
        out = 1.0
        for k in self.kids:
            out = out * k.ev(t, ctx)
        return out

    def integ(self, t, h, ctx, pieces):
        fixed = 1.0
        varying = []
        for k in self.kids:
            if k.time_dep:
                varying.append(k)
            else:
                fixed = fixed * k.ev(t, ctx)
        if not varying:
            return h * fixed
        if len(varying) == 1:
            return fixed * varying[0].integ(t, h, ctx, pieces)
        return fixed * _gl(Product(varying).ev, pieces, ctx)


class Sum(_Composite):
    def __init__(self, kids):
        super().__init__(kids)
        self.has_pulse = any(k.has_pulse for k in self.kids)

    def ev(self, t, ctx):
        out = 0.0
        for k in self.kids:
            out = out + k.ev(t, ctx)
        return out

    def integ(self, t, h, ctx, pieces):
        out = 0.0
        for k in self.kids:
            out = out + k.integ(t, h, ctx, pieces)
        return out

    def pulses(self, t, h, ctx):
        out = 0.0
        for k in self.kids:
            if k.has_pulse:
                out = out + k.pulses(t, h, ctx)
        return out


class Power(_Composite):
    def ev(self, t, ctx):
        base, expo = self.kids
        return np.power(base.ev(t, ctx), expo.ev(t, ctx))


class Ratio(_Composite):
    def ev(self, t, ctx):
        num, den = self.kids
        return num.ev(t, ctx) / den.ev(t, ctx)


class TermForcing(_Composite):
    time_dep = True

    def __init__(self, beta_bar, theta_a, p, calendar, days_per_year=DAYS_PER_YEAR):
        super().__init__([beta_bar, theta_a, p])
        self.time_dep = True
        self.calendar = validate_calendar(calendar, days_per_year)
        self.days_per_year = days_per_year

    def ev(self, t, ctx):
        bb, th, p = (k.ev(t, ctx) for k in self.kids)
        return forcing_value(t, bb, th, p, self.calendar, self.days_per_year)

    def breaks(self, t0, t1, ctx):
        return calendar_breaks(t0, t1, self.calendar, self.days_per_year)


class Pulse(_Composite):
    """Point mass of size ``amount`` at day ``doy`` of every year."""

    has_pulse = True

    def __init__(self, amount, doy, days_per_year=DAYS_PER_YEAR):
        super().__init__([amount])
        self.time_dep = False
        self.doy, self.days_per_year = float(doy), days_per_year

    def ev(self, t, ctx):
        return 0.0

    def integ(self, t, h, ctx, pieces):
        return 0.0

    def instants(self, t, h):
        out = []
        for year in range(math.floor(t) - 1, math.floor(t + h) + 1):
            s = year + self.doy / self.days_per_year
            if t <= s < t + h:
                out.append(s)
        return out

    def pulses(self, t, h, ctx):
        out = 0.0
        for s in self.instants(t, h):
            out = out + self.kids[0].ev(s, ctx)
        return out


# ---------------------------------------------------------------------------
# compiler


def compile_expr(expr, vertex_index: Mapping[str, int], covariates: CovariateTable | None = None,
                 calendars: Mapping[str, Sequence] | None = None, *, _top=True) -> Node:
    """Compile a JSON rate expression into a node tree."""
    calendars = calendars or {}

    def rec(e, top=False):
        return compile_expr(e, vertex_index, covariates, calendars, _top=top)

    if isinstance(expr, bool):
        raise RateError("booleans are not rate expressions")
    if isinstance(expr, (int, float)):
        return Const(expr)
    if isinstance(expr, str):
        return Param(expr)
    if isinstance(expr, Mapping) and "covariate" in expr and set(expr) <= {"covariate", "lag"}:
        return Covariate(expr["covariate"], covariates, expr.get("lag", 0.0))
    if not isinstance(expr, Mapping) or len(expr) != 1:
        raise RateError(f"cannot parse rate expression {expr!r}")
    (key, arg), = expr.items()
    if key in ("const", "constant"):
        return Const(arg)
    if key == "param":
        return Param(str(arg))
    if key == "state":
        if arg not in vertex_index:
            raise RateError(f"rate reads unknown vertex {arg!r}")
        return State(arg, vertex_index[arg])
    if key == "covariate":
        if isinstance(arg, Mapping):
            return Covariate(arg["name"], covariates, arg.get("lag", 0.0))
        return Covariate(arg, covariates)
    if key in ("product", "sum", "power", "ratio"):
        kids = [rec(k, top=_top and key == "sum") for k in arg]
        if any(k.has_pulse for k in kids) and key != "sum":
            raise RateError("pulse terms may only appear at top level or inside a sum")
        if key == "product":
            return Product(kids)
        if key == "sum":
            return Sum(kids)
        if len(kids) != 2:
            raise RateError(f"{key} takes exactly two operands")
        return Power(kids) if key == "power" else Ratio(kids)
    if key == "foi":
        beta = rec(arg["beta"])
        infectious = rec({"state": arg["infectious"]})
        iota = rec(arg.get("iota", 0.0))
        alpha = rec(arg.get("alpha", 1.0))
        pop = rec(arg["population"])
        return Product([beta, Power([Sum([infectious, iota]), alpha]), Ratio([Const(1.0), pop])])
    if key == "term_forcing":
        cal = arg.get("calendar", "default")
        if isinstance(cal, str):
            if cal == "default" and cal not in calendars:
                cal = DEFAULT_TERM_CALENDAR
            else:
                try:
                    cal = calendars[cal]
                except KeyError:
                    raise RateError(f"unknown term calendar {cal!r}") from None
        else:
            cal = load_term_calendar(cal)
        return TermForcing(rec(arg["beta_bar"]), rec(arg.get("theta_a", 0.0)), rec(arg.get("p", 0.7589)), cal)
    if key == "pulse":
        if not _top:
            raise RateError("pulse terms may only appear at top level or inside a top-level sum")
        return Pulse(rec(arg["amount"]), arg["doy"])
    raise RateError(f"unknown rate form {key!r}")


def _collect_breaks(node: Node, t0, t1, ctx, acc):
    if not node.time_dep:
        return
    acc.extend(np.atleast_1d(node.breaks(t0, t1, ctx)).tolist())
    for k in node.children():
        _collect_breaks(k, t0, t1, ctx, acc)


def _pieces(node, t, h, ctx):
    acc = []
    _collect_breaks(node, t, t + h, ctx, acc)
    pts = np.unique(np.concatenate(([t], [b for b in acc if t < b < t + h], [t + h])))
    return pts[:-1], pts[1:]


class RateSpec:
    """Compiled per-arrow rate expressions.

    Parameters
    ----------
    graph : DirectedGraph
    exprs : mapping of arrow id to JSON expression
        Every arrow needs an entry.
    covariates : CovariateTable, optional
    calendars : mapping of calendar name to interval list, optional
    """

    def __init__(self, graph, exprs: Mapping, covariates: CovariateTable | None = None,
                 calendars: Mapping | None = None):
        self.graph = graph
        self.covariates = covariates
        vindex = {v: graph.vertex_index(v) for v in graph.vertices}
        self.exprs = {}
        self.nodes = [None] * graph.n_arrows
        for a, e in exprs.items():
            i = graph.arrow_index(a)
            self.exprs[graph.arrow_ids[i]] = e
            self.nodes[i] = compile_expr(e, vindex, covariates, calendars)
        missing = [graph.arrow_ids[i] for i, n in enumerate(self.nodes) if n is None]
        if missing:
            raise RateError(f"no rate given for arrows {missing}")

    def node(self, arrow) -> Node:
        return self.nodes[self.graph.arrow_index(arrow)]


def _ctx(x, params):
    if isinstance(x, RateContext):
        return x
    counts = getattr(x, "counts", x)
    return RateContext(np.asarray(counts), params or {})


def _check(value, arrow, what):
    v = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(v)):
        raise RateError(f"{what} of arrow {arrow} is not finite")
    if np.any(v < 0):
        raise RateError(f"{what} of arrow {arrow} is negative")
    return value


def eval_rate(rs: RateSpec, arrow, t: float, x, params=None):
    """Rate of ``arrow`` at time ``t`` for the frozen state ``x``.

    Point masses from pulse terms are not part of the pointwise value; they
    only enter :func:`integrate_rate`.
    """
    ctx = _ctx(x, params)
    node = rs.node(arrow)
    val = np.broadcast_to(np.asarray(node.ev(float(t), ctx), dtype=float), ctx.batch_shape)
    return _check(val if val.ndim else float(val), arrow, "rate")


def integrate_node(node: Node, t: float, h: float, ctx: RateContext):
    if h < 0:
        raise RateError("step h must be nonnegative")
    if h == 0:
        return np.zeros(ctx.batch_shape) if ctx.batch_shape else 0.0
    pieces = _pieces(node, t, h, ctx) if node.time_dep else None
    val = node.integ(t, h, ctx, pieces)
    if node.has_pulse:
        val = val + node.pulses(t, h, ctx)
    val = np.broadcast_to(np.asarray(val, dtype=float), ctx.batch_shape)
    return val if val.ndim else float(val)


def integrate_rate(rs: RateSpec, arrow, t: float, h: float, x, params=None):
    """Integral of the rate over ``[t, t + h]`` with the state frozen at ``t``.

    Exact for piecewise-constant or piecewise-linear integrands; pulses whose
    instant falls in ``[t, t + h)`` add their full amount.
    """
    ctx = _ctx(x, params)
    return _check(integrate_node(rs.node(arrow), float(t), float(h), ctx), arrow, "integrated rate")
