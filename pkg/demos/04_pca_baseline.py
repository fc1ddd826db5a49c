"""
Principal components baseline
=============================

PCA factors with the F'F/T = I normalization, the PC_p1 factor-number
criterion and the trace-ratio accuracy measure, across error laws.
"""

from modalfactor import DgpSpec, generate, pca_fit
from modalfactor.baselines import pcp1_select, trace_ratio

for nu in (30, 3, 1):
    sim = generate(DgpSpec("S1", N=100, T=100, nu=nu, seed=11))
    model = pca_fit(sim.panel, 3)
    print(f"t({nu:>2}) errors: trace ratio {trace_ratio(model.factors, sim.true_factors):.3f}, "
          f"PC_p1 picks {pcp1_select(sim.panel, 8)}")
