import datetime as dt
import json

import numpy as np
import pytest

from dispersim.measles import (DATA_DIR, StudyConfig, StudyError, build_covariates, build_study, data_manifest,
                               equi_variant, file_sha256, load_cases, make_param_map, model_spec, likelihood_report,
                               study_params)
from dispersim.model import build_model
from dispersim.rates import CovariateTable, eval_rate
from dispersim.simulate import SimulationPlan, simulate

STUDY = str(DATA_DIR / "london_study.toml")
FIXTURE = str(DATA_DIR / "london_cases_1950_1951.csv")


def fixture_config(**kw):
    cfg = StudyConfig.from_toml(STUDY)
    cfg.cases = FIXTURE
    cfg.last_year = None
    cfg.corrections = {}
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def test_shipped_config_constants():
    cfg = StudyConfig.from_toml(STUDY)
    assert cfg.p == 0.7589 and cfg.mortality == 0.02 and cfg.birth_delay == 4.0
    spec = model_spec(cfg)
    star = spec["groups"][0]
    assert star["members"] == ["S->E", "S->D"] and star["law"] == "DirichletMultinomial"
    assert all(g["law"] == "EquiMultinomial" for g in spec["groups"][1:])
    for a in ("S->D", "E->D", "I->D", "R->D"):
        assert spec["rates"][a] == {"param": "mu"}


def test_london_series_and_checksum():
    dates, cases = load_cases(str(DATA_DIR / "london_cases.csv"))
    assert len(cases) == 782
    assert {d.year for d in dates} == set(range(1950, 1965))
    assert dates[0] == dt.date(1950, 1, 6) and dates[-1] == dt.date(1964, 12, 25)
    man = data_manifest()["files"]
    for name in ("london_cases.csv", "london_births.csv", "london_population.csv", "london_cases_1950_1951.csv"):
        assert file_sha256(str(DATA_DIR / name)) == man[name]["sha256"]


def test_fixture_is_prefix_of_full_series():
    d1, c1 = load_cases(FIXTURE)
    d2, c2 = load_cases(str(DATA_DIR / "london_cases.csv"), last_year=1951)
    assert d1 == d2
    np.testing.assert_array_equal(c1, c2)


def test_non_weekly_cadence_rejected(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("date,cases\n1950-01-06,3\n1950-01-13,4\n1950-01-27,5\n")
    with pytest.raises(StudyError):
        load_cases(p)


def test_build_study_is_deterministic():
    a = build_study(StudyConfig.from_toml(STUDY))
    b = build_study(StudyConfig.from_toml(STUDY))
    assert a.fingerprint == b.fingerprint
    assert a.system.times.size == 730
    # the correction is applied
    iso = [d.isoformat() for d in a.dates]
    assert a.system.data[iso.index("1955-08-26")] == 76


def test_corrections_outside_window():
    with pytest.raises(StudyError):
        build_study(fixture_config(corrections={"1960-01-01": 5}))


def test_covariate_coverage_checked():
    with pytest.raises(StudyError):
        build_study(fixture_config(birth_delay=20.0))


def test_initial_state_from_fractions():
    st = build_study(fixture_config())
    x = st.system.initial_state(st.params.values, 2)
    N = float(st.covariates("pop", st.system.t0))
    g = st.model.graph
    fr = np.array([st.params.values[k] for k in ("S_frac", "E_frac", "I_frac", "R_frac")])
    fr = fr / fr.sum()
    np.testing.assert_array_equal(x[0, [g.vertex_index(v) for v in "SEIR"]], np.round(fr * N))


def test_force_of_infection_reduction():
    cfg = fixture_config()
    cov = CovariateTable([1940.0, 1970.0], {"pop": [3e6, 3e6], "births": [7e4, 7e4]})
    spec = model_spec(cfg)
    spec["params"]["c"] = 652.8
    model = build_model(spec, covariates=cov)
    p = dict(study_params(cfg).values, theta_a=0.0, iota=0.0, alpha=0.97)
    mp = model.merged_params(make_param_map(cfg)(p))
    x = np.zeros(6, dtype=np.int64)
    x[model.graph.vertex_index("I")] = 420
    for t in (1950.01, 1950.2, 1950.5, 1950.9):
        assert eval_rate(model.rates, "S->E", t, x, mp) == pytest.approx(mp["beta_bar"] * 420**0.97 / 3e6, rel=1e-13)


def test_seasonality_conventions():
    for form, term, vac in (("amplitude", 1 + 0.48 * (1 - 0.7589) / 0.7589, 1 - 0.48),
                            ("mean", 1 + 2 * (1 - 0.7589) * 0.48, 1 - 2 * 0.7589 * 0.48)):
        cfg = fixture_config(seasonality=form)
        st = build_study(cfg)
        mp = st.system.model_params(st.params.values)
        x = np.zeros(6, dtype=np.int64)
        x[st.model.graph.vertex_index("I")] = 100
        # day 50 is term, day 105 holiday; strip the non-seasonal factor
        base = mp["beta_bar"] * (100 + mp["iota"]) ** mp["alpha"]
        t_term, t_vac = 1951 + 50 / 365, 1951 + 105 / 365
        r_term = eval_rate(st.model.rates, "S->E", t_term, x, mp) * float(st.covariates("pop", t_term)) / base
        r_vac = eval_rate(st.model.rates, "S->E", t_vac, x, mp) * float(st.covariates("pop", t_vac)) / base
        assert r_term == pytest.approx(term, rel=1e-12)
        assert r_vac == pytest.approx(vac, rel=1e-12)


def test_published_parameters_simulate():
    st = build_study(fixture_config())
    mp = st.system.model_params(st.params.values)
    x0 = st.system.initial_state(st.params.values, 4)
    t0 = st.system.t0
    tr = simulate(st.model, x0, SimulationPlan(t0, t0 + 1.0, st.config.dt, seed=3, replicates=4), mp)
    assert tr.balance_ok(st.model.incidence)
    weekly = np.diff(tr.flow("I->R")[:, ::7], axis=1)
    assert weekly.sum() > 0 and np.all(weekly >= 0)


def test_equi_variant_drops_noise():
    cfg = fixture_config()
    eq = build_study(equi_variant(cfg))
    assert "c" not in eq.params.values
    assert eq.model.kernels[0].law == "EquiMultinomial"
    assert cfg.noise == "dirichlet"


def test_unknown_settings_rejected():
    with pytest.raises(StudyError):
        StudyConfig.from_dict({"model": {"noise": "gamma"}})
    with pytest.raises(StudyError):
        StudyConfig.from_dict({"model": {"colour": "red"}})


def test_desk_report_on_fixture():
    cfg = fixture_config(desk={"J": 40, "reps": 2})
    rep = likelihood_report(cfg, "desk", seed=5, threads=1)
    assert set(rep["models"]) == {"dirichlet", "equi"}
    assert rep["models"]["dirichlet"]["params"]["R0"] == 34.09
    assert rep["models"]["equi"]["params"]["c"] is None
    assert rep["published"]["loglik"]["dirichlet"] == -3803.2
    assert np.isfinite(rep["models"]["dirichlet"]["loglik"])
    assert rep["data"]["n_obs"] == 104
    json.dumps(rep)
