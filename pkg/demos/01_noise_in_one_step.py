"""How much extra noise does a Dirichlet step add, and where does it go?

Compares Monte-Carlo infinitesimal moments of three step laws with their
closed forms, then looks at the rate of single jumps of size k.
Run: python3 demos/01_noise_in_one_step.py
"""
from dispersim.dispersion import estimate_infinitesimal
from dispersim.fixtures import group_state, single_group_model
from dispersim.kernels import exact_transition_rate, infinitesimal_moments

x, rate, c = 50, 1.0, 10.0
print(f"{x} individuals leave at rate {rate}; inverse noise c = {c}\n")
print(f"{'law':26s} {'mean MC (se)':>15s} {'mean':>7s} {'var MC (se)':>15s} {'var':>8s} {'D':>6s}")
for law, cc in (("EquiMultinomial", None), ("DirichletMultinomial", c), ("DirichletNegMultinomial", c)):
    model = single_group_model(law, 1, rate, cc)
    est = estimate_infinitesimal(model, group_state(model, x), M=400_000, seed=1)
    mom = infinitesimal_moments(law, x, [rate], cc)
    print(f"{law:26s} {est.mean_rate[0]:8.2f} ({est.mean_se[0]:4.2f}) {mom['mean'][0]:7.2f} "
          f"{est.var_rate[0]:8.1f} ({est.var_se[0]:4.1f}) "
          f"{mom['var'][0]:8.1f} {mom['D'][0]:6.2f}")

print("\nA noisy step moves individuals in clumps.  Rate of a jump of exactly k:")
for k in (1, 2, 5, 10, 50):
    q = exact_transition_rate("DirichletMultinomial", x, [k], c, rate)
    print(f"  k={k:2d}: {q:8.4f}")
print("The plain multinomial step only ever moves one individual at a time in the limit.")
