"""Command-line entry point: ``dispersim <command> ...``.

Commands
--------
simulate   Euler simulation of a model JSON; trajectories as CSV or binary.
diagnose   Monte-Carlo infinitesimal moments and the systemic classification.
filter     Particle-filter log-likelihood (replicated, with standard error).
mif        Iterated filtering search.
profile    Profile likelihood over one parameter.
measles    London measles reproduction (desk or full mode).
replay     Re-run the command recorded in a run manifest.

Every run writes ``<out>.manifest.json`` next to its primary output.  Exit
codes: 0 success, 1 engine error, 2 usage error; failures print a JSON error
object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dispersion import DispersionError, classify_systemic, estimate_infinitesimal
from .graph import GraphError
from .inference import (FilterError, InferenceError, ObservedSystem, ParamVector, ProfileSettings,
                        DiscretizedNormalReports, iterated_filtering, particle_filter, profile_likelihood,
                        replicated_loglik)
from .kernels import KernelError, infinitesimal_moments
from .measles import StudyConfig, StudyError, build_study, likelihood_report, year_fraction
from .model import ModelError, load_model
from .rates import RateError
from .simulate import SimulationPlan, simulate

log = logging.getLogger("dispersim")

ENGINE_ERRORS = (ModelError, GraphError, KernelError, RateError, DispersionError, FilterError, InferenceError,
                 StudyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from None


def _require(path):
    if path is None or not Path(path).exists():
        raise UsageError(f"file not found: {path}")
    return Path(path)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (tuple, set, frozenset)):
        return list(o)
    return str(o)


def _hash_files(paths):
    h = hashlib.sha256()
    for p in paths:
        if p is None:
            continue
        h.update(str(Path(p).name).encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _versions():
    import scipy
    return {"dispersim": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_manifest(out, command, argv, inputs, seed, outputs, wall):
    """Run manifest written next to the primary output."""
    man = {"command": command, "argv": list(argv), "inputs": {str(p): _hash_files([p]) for p in inputs if p},
           "config_hash": _hash_files(inputs), "seed": seed, "versions": _versions(),
           "wall_time_s": round(wall, 3), "outputs": [str(o) for o in outputs],
           "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    path = Path(str(out) + ".manifest.json")
    _dump(man, path)
    return path


# ---------------------------------------------------------------------------
# observed systems from files


def load_cases_csv(path):
    """``date,cases`` (ISO dates) or ``time,cases`` (years) -> times, values."""
    with open(_require(path), newline="") as fh:
        rd = csv.DictReader(fh)
        fields = rd.fieldnames or []
        rows = list(rd)
    if "cases" not in fields or not ({"date", "time"} & set(fields)):
        raise UsageError(f"{path}: expected columns date,cases or time,cases")
    vals = np.array([float("nan") if r["cases"].strip() in ("", "NA") else float(r["cases"]) for r in rows])
    if "time" in fields:
        return np.array([float(r["time"]) for r in rows]), vals
    dates = [_dt.date.fromisoformat(r["date"].strip()) for r in rows]
    return np.array([year_fraction(d, dates[0].year) for d in dates]), vals


def load_params(path, base: ParamVector | None = None) -> ParamVector:
    if path is None:
        if base is None:
            raise UsageError("--params is required")
        return base
    d = _read_json(path)
    pv = ParamVector.from_dict(d)
    if base is None:
        return pv
    tr = dict(base.transforms)
    tr.update({k: v for k, v in pv.transforms.items() if v != "identity" or k not in tr})
    vals = dict(base.values)
    vals.update(pv.values)
    return ParamVector(vals, {k: tr.get(k, "identity") for k in vals})


def load_system(model_path, data_path):
    """Observed system and default parameters from a study TOML or a model JSON.

    A model JSON needs an ``observation`` section::

        "observation": {"accumulate": ["I->R"], "dt": 0.01,
                        "init": {"S": 990, "I": "I0"},     # counts or parameter names
                        "t0": 0.0,                          # optional
                        "measurement": {"rho": "rho", "psi": "psi"}}
    """
    model_path = _require(model_path)
    if model_path.suffix == ".toml":
        cfg = StudyConfig.from_toml(model_path)
        if data_path is not None:
            cfg.cases = str(Path(data_path).resolve())
        st = build_study(cfg)
        return st.system, st.params
    spec = _read_json(model_path)
    obs = spec.get("observation")
    if obs is None:
        raise UsageError(f"{model_path}: model JSON needs an 'observation' section for likelihood commands")
    if data_path is None:
        raise UsageError("--data is required")
    model = load_model(model_path)
    times, y = load_cases_csv(data_path)
    t0 = obs.get("t0")
    if t0 is None:
        t0 = times[0] - (times[1] - times[0]) if times.size > 1 else times[0] - 1.0
    init_spec = obs.get("init", {})
    g = model.graph

    def init(params, J):
        x = np.zeros((J, g.n_vertices), dtype=np.int64)
        for v, n in init_spec.items():
            val = params[n] if isinstance(n, str) else n
            x[:, g.vertex_index(v)] = np.round(np.broadcast_to(np.asarray(val, dtype=float), (J,))).astype(np.int64)
        return x

    meas = obs.get("measurement", {})
    system = ObservedSystem(model, times, y, float(t0), float(obs.get("dt", 1.0 / 365.25)),
                            obs["accumulate"], init,
                            DiscretizedNormalReports(meas.get("rho", "rho"), meas.get("psi", "psi")),
                            ivps=tuple(v for v in init_spec.values() if isinstance(v, str)))
    pv = ParamVector(dict(model.params), {}) if model.params else None
    return system, pv


def _rw_sd(args, pv: ParamVector, system, skip=()):
    names = args.estimate.split(",") if args.estimate else list(pv.values)
    unknown = [n for n in names if n not in pv.values]
    if unknown:
        raise UsageError(f"--estimate names unknown parameters {unknown}")
    return {n: (args.ivp_sd if n in system.ivps else args.rw_sd) for n in names if n not in skip}


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    model = load_model(_require(args.model))
    plan_d = _read_json(args.plan)
    if args.seed is not None:
        plan_d["seed"] = args.seed
    if args.replicates is not None:
        plan_d["replicates"] = args.replicates
    init = plan_d.get("init", (model.spec or {}).get("init"))
    if init is None:
        raise UsageError("initial state missing: give 'init' in the plan or the model")
    plan = SimulationPlan.from_dict(plan_d)
    traj = simulate(model, init, plan, threads=args.threads)
    traj.save(args.out)
    log.info("simulated %d replicates, %d clamped draws", plan.replicates, traj.clamped)
    return [args.model, args.plan], plan.seed, [args.out]


def cmd_diagnose(args):
    model = load_model(_require(args.model))
    state = _read_json(args.state)
    x = state.get("state", state)
    t = float(state.get("time", args.time))
    est = estimate_infinitesimal(model, x, h_grid=_floats(args.h), M=args.M, seed=args.seed, t=t,
                                 level=args.level, threads=args.threads)
    report = {"estimate": est.to_dict(), "classification": classify_systemic(est, model.graph),
              "state": x, "time": t, "seed": args.seed}
    # closed forms where a group's law has them
    g = model.graph
    xv = np.zeros(g.n_vertices, dtype=np.int64)
    for v, n in x.items():
        xv[g.vertex_index(v)] = n
    pars = model.merged_params(None)
    from .rates import RateContext
    ctx = RateContext(xv, pars)
    closed = {}
    for members, count_idx, nodes, ker, kind in model._plan:
        if count_idx is None:
            continue
        r = np.array([float(np.asarray(nd.ev(t, ctx))) for nd in nodes])
        c = pars[ker.c] if isinstance(ker.c, str) else ker.c
        try:
            mom = infinitesimal_moments(ker.law, xv[count_idx] if kind.startswith("color") else xv[count_idx][0],
                                        r, c, kind)
        except KernelError:
            continue
        for i, a in enumerate(members):
            closed[g.arrow_ids[a]] = {"mean": float(mom["mean"][i]), "var": float(mom["var"][i]),
                                      "D": float(mom["D"][i])}
    report["closed_form"] = closed
    _dump(report, args.out)
    csv_path = str(Path(args.out).with_suffix(".csv"))
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arrow", "mean", "mean_se", "var", "var_se", "D", "D_lo", "D_hi", "status"])
        ci = est.ci("D")
        for i, a in enumerate(est.arrows):
            w.writerow([a, repr(float(est.mean_rate[i])), repr(float(est.mean_se[i])), repr(float(est.var_rate[i])),
                        repr(float(est.var_se[i])), repr(float(est.D[i])), repr(float(ci[i, 0])),
                        repr(float(ci[i, 1])), report["classification"]["arrows"][a]])
    return [args.model, args.state], args.seed, [args.out, csv_path]


def cmd_filter(args):
    system, pv = load_system(args.model, args.data)
    pv = load_params(args.params, pv)
    first = particle_filter(system, pv, args.J, args.seed, args.threads, replicate=0)
    rep = replicated_loglik(system, pv, args.J, args.seed, args.reps, args.threads) if args.reps > 1 else None
    out = {"loglik": rep["loglik"] if rep else first.loglik, "se": rep["se"] if rep else None,
           "replicate_logliks": rep["logliks"] if rep else [first.loglik], "J": args.J, "seed": args.seed,
           "params": pv.to_dict(), "first_replicate": first.to_dict()}
    _dump(out, args.out)
    csv_path = str(Path(args.out).with_suffix(".csv"))
    verts = system.model.graph.vertices
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "cases", "cond_loglik", "ess", *[f"mean_{v}" for v in verts]])
        for n, t in enumerate(system.times):
            w.writerow([repr(float(t)), repr(float(system.data[n])), repr(float(first.cond_logliks[n])),
                        repr(float(first.ess[n])), *[repr(float(v)) for v in first.filter_mean[n]]])
    return [args.model, args.data, args.params], args.seed, [args.out, csv_path]


def cmd_mif(args):
    system, pv = load_system(args.model, args.data)
    pv = load_params(args.params, pv)
    sd = _rw_sd(args, pv, system)
    fit = iterated_filtering(system, pv, sd, args.cooling, args.Niter, args.J, args.seed, args.threads)
    out = fit.to_dict()
    if args.reps > 0:
        out["final_eval"] = replicated_loglik(system, fit.params, args.J, args.seed + 1, args.reps, args.threads)
    _dump(out, args.out)
    csv_path = str(Path(args.out).with_suffix(".csv"))
    names = list(fit.params.values)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loglik", *names])
        for m, (ll, p) in enumerate(zip(fit.loglik_trace, fit.param_trace), start=1):
            w.writerow([m, repr(float(ll)), *[repr(float(p[k])) for k in names]])
    return [args.model, args.data, args.params], args.seed, [args.out, csv_path]


def _grid(text):
    if ":" in text:
        try:
            lo, hi, n = text.split(":")
            return list(np.linspace(float(lo), float(hi), int(n)))
        except ValueError:
            raise UsageError(f"grid must be lo:hi:n or a comma list, got {text!r}") from None
    return _floats(text)


def cmd_profile(args):
    system, pv = load_system(args.model, args.data)
    pv = load_params(args.params, pv)
    if args.param not in pv.values:
        raise UsageError(f"unknown parameter {args.param!r}")
    fixed = set(args.fix.split(",")) if args.fix else set()
    for item in fixed:
        if "=" in item:
            k, v = item.split("=")
            pv = pv.replace(**{k: float(v)})
    fixed_names = {i.split("=")[0] for i in fixed}
    sd = _rw_sd(args, pv, system, skip={args.param} | fixed_names)
    ps = ProfileSettings(Niter=args.Niter, J=args.J, cooling=args.cooling, sd=sd, reps=args.reps, level=args.level)
    res = profile_likelihood(system, pv, args.param, _grid(args.grid), ps, args.seed, args.threads)
    _dump(res, args.out)
    csv_path = str(Path(args.out).with_suffix(".csv"))
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.param, "loglik", "se", "failed"])
        for p in res["points"]:
            w.writerow([repr(float(p["value"])), repr(float(p["loglik"])), repr(float(p["se"])), int(p["failed"])])
    return [args.model, args.data, args.params], args.seed, [args.out, csv_path]


def cmd_measles(args):
    cfg = StudyConfig.from_toml(_require(args.config))
    for key in ("J", "reps"):
        v = getattr(args, key)
        if v is not None:
            getattr(cfg, args.mode)[key] = v
    if args.last_year is not None:
        cfg.last_year = args.last_year
    report = likelihood_report(cfg, args.mode, args.seed, args.threads)
    _dump(report, args.out)
    csv_path = str(Path(args.out).with_suffix(".csv"))
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "dirichlet", "equi"])
        m = report["models"]
        w.writerow(["loglik", repr(m["dirichlet"]["loglik"]), repr(m["equi"]["loglik"])])
        w.writerow(["loglik_se", repr(m["dirichlet"]["loglik_se"]), repr(m["equi"]["loglik_se"])])
        for k in m["dirichlet"]["params"]:
            w.writerow([k, m["dirichlet"]["params"][k], m["equi"]["params"][k]])
    return [args.config], args.seed, [args.out, csv_path]


def cmd_replay(args):
    man = _read_json(args.manifest)
    argv = list(man["argv"])
    if args.out:
        i = argv.index("--out")
        argv[i + 1] = args.out
    return main(argv)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dispersim", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed_required=False):
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: available cores)")
        sp.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0,
                        help="master random seed" + (" (required)" if seed_required else " (default 0)"))
        sp.add_argument("--out", required=True, help="primary output path")
        sp.add_argument("--log-level", default="WARNING", help="logging level on stderr")

    s = sub.add_parser("simulate", help="simulate trajectories")
    s.add_argument("--model", required=True, help="model JSON")
    s.add_argument("--plan", required=True, help="plan JSON: t0, t1, dt, record_times, replicates, init")
    s.add_argument("--replicates", type=int, default=None)
    common(s)
    s.set_defaults(seed=None, func=cmd_simulate)

    d = sub.add_parser("diagnose", help="infinitesimal dispersion diagnostics")
    d.add_argument("--model", required=True)
    d.add_argument("--state", required=True, help='JSON {"state": {vertex: count}, "time": t}')
    d.add_argument("--h", default="1e-3,5e-4", help="decreasing step sizes, comma separated")
    d.add_argument("--M", type=int, default=200_000, help="draws per step size")
    d.add_argument("--level", type=float, default=0.99)
    d.add_argument("--time", type=float, default=0.0)
    common(d)
    d.set_defaults(func=cmd_diagnose)

    def likelihood(sp):
        sp.add_argument("--model", required=True, help="model JSON with an observation section, or study TOML")
        sp.add_argument("--data", default=None, help="CSV date,cases (or time,cases)")
        sp.add_argument("--params", default=None, help="parameter JSON (flat or {values, transforms})")
        sp.add_argument("--J", type=int, default=2000, help="particles")
        common(sp, seed_required=True)

    def search(sp):
        sp.add_argument("--Niter", type=int, default=50)
        sp.add_argument("--cooling", type=float, default=0.95)
        sp.add_argument("--rw-sd", type=float, default=0.02, help="random-walk sd on the transformed scale")
        sp.add_argument("--ivp-sd", type=float, default=0.1, help="sd for initial-value parameters")
        sp.add_argument("--estimate", default=None, help="comma list of estimated parameters (default: all)")

    f = sub.add_parser("filter", help="particle-filter log-likelihood")
    likelihood(f)
    f.add_argument("--reps", type=int, default=1)
    f.set_defaults(func=cmd_filter)

    m = sub.add_parser("mif", help="iterated filtering")
    likelihood(m)
    search(m)
    m.add_argument("--reps", type=int, default=0, help="replicated filters at the final estimate")
    m.set_defaults(func=cmd_mif)

    pr = sub.add_parser("profile", help="profile likelihood")
    likelihood(pr)
    search(pr)
    pr.add_argument("--param", required=True)
    pr.add_argument("--grid", required=True, help="lo:hi:n or comma list")
    pr.add_argument("--fix", default=None, help="comma list name=value of further fixed parameters")
    pr.add_argument("--reps", type=int, default=10)
    pr.add_argument("--level", type=float, default=0.95)
    pr.set_defaults(func=cmd_profile)

    me = sub.add_parser("measles", help="London measles reproduction")
    me.add_argument("--config", required=True, help="study TOML")
    me.add_argument("--mode", choices=["desk", "full"], default="desk")
    me.add_argument("--J", type=int, default=None)
    me.add_argument("--reps", type=int, default=None)
    me.add_argument("--last-year", type=int, default=None)
    common(me, seed_required=True)
    me.set_defaults(func=cmd_measles)

    r = sub.add_parser("replay", help="re-run a recorded command")
    r.add_argument("manifest")
    r.add_argument("--out", default=None, help="write to a different output path")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given; see --help")
        if args.command == "replay":
            return args.func(args)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be positive")
        t0 = time.perf_counter()
        inputs, seed, outputs = args.func(args)
        write_manifest(args.out, args.command, argv, inputs, seed, outputs, time.perf_counter() - t0)
        return 0
    except UsageError as e:
        print(json.dumps({"error": str(e), "kind": "usage"}), file=sys.stderr)
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except ENGINE_ERRORS as e:
        print(json.dumps({"error": str(e), "kind": type(e).__name__}), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        print(json.dumps({"error": f"{type(e).__name__}: {e}", "kind": "engine"}), file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
