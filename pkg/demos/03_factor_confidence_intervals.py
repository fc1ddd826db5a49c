"""
Confidence intervals for the factors
====================================

Fit with the slower inference bandwidth c * T^(-1/12) and build sandwich
intervals for selected periods of a single Gaussian factor.
"""

from modalfactor import DgpSpec, EstimationConfig, factor_intervals, fit, generate, inference_bandwidth
from modalfactor.core import align_sign, normalize

sim = generate(DgpSpec("SFG", N=100, T=100, seed=3))
h = inference_bandwidth(100, 5.0)
res = fit(sim.panel, EstimationConfig(n_factors=1), h=h)

# The truth in the same normalization and sign as the estimate.
truth, _ = normalize(sim.truth)
S = align_sign(res.model.factors, truth.factors)
f0 = truth.factors @ S

rows = factor_intervals(sim.panel, res, h, level=0.95, periods=[10, 50, 90])
for row in rows:
    t = row["t"]
    inside = row["lower"] <= f0[t, 0] <= row["upper"]
    print(f"t={t:>2}  estimate {row['estimate']:+.3f}  [{row['lower']:+.3f}, {row['upper']:+.3f}]"
          f"  truth {f0[t, 0]:+.3f}  covered={inside}")
