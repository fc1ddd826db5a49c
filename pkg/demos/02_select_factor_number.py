"""
Choosing the number of factors
==============================

Two data-driven rules: counting eigenvalues of the loading second moment
above a vanishing threshold, and minimizing a penalized objective. The
principal-components criterion PC_p1 is shown for comparison.
"""

from modalfactor import DgpSpec, EstimationConfig, generate, select_factors
from modalfactor.baselines import pcp1_select

sim = generate(DgpSpec("S1", N=100, T=100, nu=3, seed=7))

# "both" fits r = 1..r_max once and reuses the r_max fit for the eigenvalue rule.
rep = select_factors(sim.panel, r_max=6, cfg=EstimationConfig(), method="both")

print(f"{'r':>2} {'sigma':>10} {'IC':>10}")
for r, sigma, threshold, ic, penalty in rep.table():
    print(f"{r:>2} {sigma:>10.4f} {ic:>10.5f}")
print(f"threshold {rep.threshold:.4f}, penalty {rep.penalty:.5f}")
print("eigenvalue rule:", rep.r_rank, " information criterion:", rep.r_ic,
      " PC_p1:", pcp1_select(sim.panel, 6), " truth: 3")
# At this size the weakest factor's eigenvalue sits close to the threshold; both
# rules become reliable as N and T grow (try N = T = 200).
