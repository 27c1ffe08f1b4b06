import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dispersim.fixtures import poisson_count_system
from dispersim.inference import (ExactReports, FilterError, InferenceError, MeasurementModel, ObservedSystem,
                                 ParamVector, ProfileSettings, chi2_cutoff, dmeasure, iterated_filtering,
                                 logmeanexp, particle_filter, profile_ci, profile_likelihood, replicated_loglik,
                                 simulate_observations, systematic_resample)
from dispersim.model import build_model
from dispersim.oracles import poisson_reports_loglik


# -- measurement ----------------------------------------------------------------

def test_zero_cases_put_all_mass_at_zero():
    assert dmeasure(0, 0, MeasurementModel(0.5, 0.1)) == pytest.approx(0.0, abs=1e-12)
    assert dmeasure(3, 0, MeasurementModel(0.5, 0.1)) < -1e6


def test_reporting_is_modal_at_mean():
    mm = MeasurementModel(0.492, 0.118)
    ys = np.arange(300, 700)
    lp = dmeasure(ys, 1000, mm)
    assert ys[np.argmax(lp)] == 492
    assert -6.0 < lp.max() < -3.0


@pytest.mark.parametrize("C,rho,psi", [(0, 0.5, 0.1), (3, 0.2, 0.0), (1000, 0.492, 0.118),
                                       (25_000, 0.7, 0.3), (17, 0.99, 2.0)])
def test_measurement_normalizes(C, rho, psi):
    ys = np.arange(0, int(C * 4 + 200))
    total = np.exp(dmeasure(ys, C, MeasurementModel(rho, psi))).sum()
    assert total == pytest.approx(1.0, abs=1e-6)


def test_measurement_edge_cases():
    assert dmeasure(-1, 10, MeasurementModel(0.5, 0.1)) == -np.inf
    # far upper tail is still finite and ordered
    a, b = dmeasure([900, 950], 1000, MeasurementModel(0.3, 0.01))
    assert np.isfinite(a) and np.isfinite(b) and b < a
    with pytest.raises(InferenceError):
        MeasurementModel(1.0, 0.1)
    with pytest.raises(InferenceError):
        MeasurementModel(0.5, -0.1)


# -- parameter transforms ---------------------------------------------------------

TRANSFORMS = {"a": "log", "b": "logit", "c": ("logit", 0.0, 0.65), "d": "identity",
              "s1": "simplex", "s2": "simplex", "s3": "simplex"}


@settings(max_examples=150, deadline=None)
@given(a=st.floats(1e-6, 1e6), b=st.floats(1e-6, 1 - 1e-6), c=st.floats(1e-6, 0.64), d=st.floats(-1e3, 1e3),
       s=st.lists(st.floats(1e-6, 1.0), min_size=3, max_size=3))
def test_transform_roundtrip(a, b, c, d, s):
    tot = sum(s)
    vals = {"a": a, "b": b, "c": c, "d": d, "s1": s[0] / tot, "s2": s[1] / tot, "s3": s[2] / tot}
    pv = ParamVector(vals, dict(TRANSFORMS))
    back = pv.from_est(pv.to_est())
    for k, v in vals.items():
        assert back[k] == pytest.approx(v, rel=1e-12, abs=1e-15)


def test_logit_boundary_is_clamped():
    pv = ParamVector({"theta_c": 1.0}, {"theta_c": "logit"})
    e = pv.to_est()["theta_c"]
    assert np.isfinite(e)
    assert pv.from_est({"theta_c": e})["theta_c"] == pytest.approx(1.0, abs=1e-8)


def test_param_vector_validation():
    with pytest.raises(InferenceError):
        ParamVector({"a": -1.0}, {"a": "log"})
    with pytest.raises(InferenceError):
        ParamVector({"a": 1.5}, {"a": "logit"})
    with pytest.raises(InferenceError):
        ParamVector({"a": 1.0}, {"b": "log"})
    pv = ParamVector({"a": 2.0, "b": 0.3}, {"a": "log", "b": "logit"})
    assert ParamVector.from_dict(pv.to_dict()) == pv


# -- resampling and helpers ------------------------------------------------------

class FixedUniform:
    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12).filter(lambda w: sum(w) > 1e-3))
def test_systematic_resampling_expected_counts(w):
    w = np.asarray(w) / np.sum(w)
    J = w.size
    us = (np.arange(4000) + 0.5) / 4000
    counts = np.array([np.bincount(systematic_resample(w, FixedUniform(u)), minlength=J) for u in us])
    # every draw gives floor or ceil of J w, and the average over the shared uniform is J w
    assert np.all(counts >= np.floor(J * w - 1e-9)) and np.all(counts <= np.ceil(J * w + 1e-9))
    np.testing.assert_allclose(counts.mean(axis=0), J * w, atol=J / 4000 + 1e-9)


def test_logmeanexp():
    assert logmeanexp([0.0, 0.0]) == 0.0
    assert logmeanexp([math.log(1), math.log(3)]) == pytest.approx(math.log(2))
    val, se = logmeanexp(np.array([-1.0, -1.2, -0.8, -1.1]), se=True)
    assert se > 0


# -- particle filter -----------------------------------------------------------------

def deterministic_system(data, x0=50, measurement=None):
    model = build_model({"graph": {"vertices": ["S", "D"], "arrows": ["S->D"]},
                         "groups": [{"kind": "singleton", "members": ["S->D"], "law": "EquiMultinomial"}],
                         "rates": {"S->D": {"param": "r"}}, "params": {"r": 1e5}})
    times = np.arange(1, len(data) + 1, dtype=float)
    return ObservedSystem(model, times, data, 0.0, 0.25, ["S->D"], np.array([x0, 0]),
                          measurement or ExactReports().__class__())


def test_deterministic_filter_is_exact():
    from dispersim.inference import DiscretizedNormalReports
    data = np.array([24.0, 1.0, 0.0, 2.0])
    system = deterministic_system(data, measurement=DiscretizedNormalReports())
    params = ParamVector({"rho": 0.5, "psi": 0.1})
    res = particle_filter(system, params, J=10, seed=4)
    mm = MeasurementModel(0.5, 0.1)
    expected = float(dmeasure(24.0, 50, mm) + dmeasure(1.0, 0, mm) + dmeasure(0.0, 0, mm) + dmeasure(2.0, 0, mm))
    assert res.loglik == expected
    assert res.loglik == pytest.approx(res.cond_logliks.sum(), abs=0)
    np.testing.assert_allclose(res.ess, 10.0, rtol=1e-12)


def test_filter_failure_reports_index():
    system = deterministic_system(np.array([50.0, 3.0]), measurement=ExactReports())
    with pytest.raises(FilterError) as err:
        particle_filter(system, {"rho": 0.5}, J=8, seed=1)
    assert err.value.index == 1


def test_missing_data_contribute_nothing():
    from dispersim.inference import DiscretizedNormalReports
    system = deterministic_system(np.array([24.0, np.nan]), measurement=DiscretizedNormalReports())
    res = particle_filter(system, {"rho": 0.5, "psi": 0.1}, J=5, seed=1)
    assert res.cond_logliks[1] == 0.0


@pytest.fixture(scope="module")
def toy():
    system, truth = poisson_count_system()
    y, _ = simulate_observations(system, truth.values, 3)
    return system.with_data(y), truth


def test_toy_filter_matches_exact_likelihood(toy):
    system, truth = toy
    exact = poisson_reports_loglik(system.data, 40.0, 0.6, 0.15)
    ll = np.array([particle_filter(system, truth, 200, 11, replicate=r).loglik for r in range(50)])
    # the filter is unbiased for the likelihood: compare on the likelihood-ratio scale
    ratio = np.exp(ll - exact)
    assert abs(ratio.mean() - 1.0) < 3 * ratio.std(ddof=1) / math.sqrt(ratio.size)


def test_toy_filter_variance_scales_inversely_with_J(toy):
    system, truth = toy
    Js = np.array([100, 400, 1600])
    var = [np.var([particle_filter(system, truth, int(J), 12, replicate=r).loglik for r in range(40)], ddof=1)
           for J in Js]
    slope = np.polyfit(np.log(Js), np.log(var), 1)[0]
    assert -1.3 < slope < -0.7


def test_filter_thread_invariance(toy):
    system, truth = toy
    a = particle_filter(system, truth, 2500, 5, threads=1)
    b = particle_filter(system, truth, 2500, 5, threads=3)
    assert a.loglik == b.loglik
    np.testing.assert_array_equal(a.filter_mean, b.filter_mean)


def test_replicated_loglik(toy):
    system, truth = toy
    res = replicated_loglik(system, truth, 100, 3, reps=4)
    assert len(res["logliks"]) == 4
    assert res["loglik"] == pytest.approx(logmeanexp(res["logliks"]))


def test_observed_system_validation():
    model = build_model({"graph": {"vertices": ["B", "X"], "arrows": ["B->X"]}, "rates": {"B->X": 1.0}})
    with pytest.raises(InferenceError):
        ObservedSystem(model, [1.0, 0.5], [0, 0], 0.0, 0.1, ["B->X"], np.zeros(2))
    with pytest.raises(InferenceError):
        ObservedSystem(model, [1.0, 2.0], [0], 0.0, 0.1, ["B->X"], np.zeros(2))
    with pytest.raises(InferenceError):
        particle_filter(ObservedSystem(model, [1.0], [0], 0.0, 0.1, ["B->X"], np.zeros(2), ExactReports()),
                        {"x": 1.0}, J=1, seed=0)


# -- iterated filtering ------------------------------------------------------------

def test_if2_single_pass_equals_perturbed_filter(toy):
    system, truth = toy
    sd = {"lam": 0.05, "rho": 0.02}
    fit = iterated_filtering(system, truth, sd, cooling=1.0, Niter=1, J=300, seed=8)
    pf = particle_filter(system, truth, 300, 8, replicate=0, sd=sd)
    assert fit.loglik_trace[0] == pf.loglik


def test_if2_without_perturbation_repeats_filter(toy):
    system, truth = toy
    fit = iterated_filtering(system, truth, {"lam": 0.0}, Niter=3, J=200, seed=9)
    for m in range(3):
        assert fit.loglik_trace[m] == particle_filter(system, truth, 200, 9, replicate=m).loglik
    assert fit.params.values == pytest.approx(truth.values, rel=1e-14)


def test_if2_moves_towards_truth(toy):
    system, truth = toy
    start = truth.replace(lam=25.0)
    fit = iterated_filtering(system, start, {"lam": 0.05}, cooling=0.9, Niter=15, J=300, seed=2)
    assert abs(math.log(fit.params.values["lam"] / 40.0)) < abs(math.log(25.0 / 40.0)) / 2


def test_if2_argument_checks(toy):
    system, truth = toy
    with pytest.raises(InferenceError):
        iterated_filtering(system, truth, {"lam": 0.1}, cooling=0.0, Niter=1, J=10)
    with pytest.raises(InferenceError):
        iterated_filtering(system, truth, {"lam": 0.1}, Niter=0, J=10)
    with pytest.raises(InferenceError):
        iterated_filtering(system, truth, {"lam": -0.1}, Niter=1, J=10)
    with pytest.raises(InferenceError):
        iterated_filtering(system, truth, {"zeta": 0.1}, Niter=1, J=10)


# -- profile likelihood -----------------------------------------------------------

def test_quadratic_profile_interval():
    grid = np.linspace(1.0, 5.0, 21)
    ll = -100.0 - (grid - 3.2) ** 2 / (2 * 0.25)
    half = math.sqrt(2 * chi2_cutoff(0.95) * 0.25)
    ci = profile_ci(grid, ll)
    assert ci["mle"] == pytest.approx(3.2, abs=0.002)
    assert ci["lower"] == pytest.approx(3.2 - half, abs=0.002)
    assert ci["upper"] == pytest.approx(3.2 + half, abs=0.002)
    assert not ci["open_lower"] and not ci["open_upper"]
    local = profile_ci(grid, ll, span=0.5)
    assert local["lower"] == pytest.approx(3.2 - half, abs=0.01)
    assert chi2_cutoff(0.95) == pytest.approx(1.92, abs=0.001)


def test_profile_flags_open_ends():
    grid = np.linspace(0.0, 1.0, 6)
    ci = profile_ci(grid, -grid**2)
    assert ci["open_lower"]


def test_profile_without_search_is_a_slice(toy):
    system, truth = toy
    grid = [30.0, 40.0, 50.0]
    res = profile_likelihood(system, truth, "lam", grid, ProfileSettings(J=100, reps=2), seed=4)
    for i, (g, pt) in enumerate(zip(grid, res["points"])):
        ref = replicated_loglik(system, truth.replace(lam=g), 100, 4 + 1_000_003 * (i + 1), 2)
        assert pt["loglik"] == ref["loglik"] and not pt["failed"]
    with pytest.raises(InferenceError):
        profile_likelihood(system, truth, "lam", [1.0, 2.0], ProfileSettings(), seed=1)


def test_profile_marks_failures():
    system = deterministic_system(np.array([50.0, 0.0, 0.0]), measurement=ExactReports())
    pv = ParamVector({"r": 1e5}, {"r": "log"})
    res = profile_likelihood(system, pv, "r", [1e-9, 1e5, 2e5], ProfileSettings(J=4, reps=1), seed=2)
    flags = [p["failed"] for p in res["points"]]
    assert flags == [True, False, False]
