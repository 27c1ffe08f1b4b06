"""London measles: likelihood of the published estimates, with and without extra noise.

By default uses the bundled 1950-1951 slice and a small particle count so it
finishes in about a minute.  Pass ``--full`` for the 1950-1963 series at
10^4 particles and 10 replicates (several hours on one core).
Run: python3 demos/04_london_measles.py [--full]
"""
import sys

from dispersim.measles import DATA_DIR, StudyConfig, likelihood_report

cfg = StudyConfig.from_toml(DATA_DIR / "london_study.toml")
if "--full" in sys.argv:
    cfg.desk = {"J": 10_000, "reps": 10}
else:
    cfg.cases = str(DATA_DIR / "london_cases_1950_1951.csv")
    cfg.last_year, cfg.corrections = None, {}
    cfg.desk = {"J": 1000, "reps": 3}

rep = likelihood_report(cfg, "desk", seed=1)
d = rep["data"]
print(f"weeks {d['first']} .. {d['last']} ({d['n_obs']} reports)")
for name in ("dirichlet", "equi"):
    m = rep["models"][name]
    print(f"{name:10s} loglik {m['loglik']:9.1f}  (se {m['loglik_se']:.1f})")
print(f"published full-series value for the Dirichlet model: {rep['published']['loglik']['dirichlet']}")
