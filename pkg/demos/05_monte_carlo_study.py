"""
A seeded Monte Carlo study
==========================

Every replication derives its own seed from (study seed, index), so results
do not depend on the number of worker processes. Larger studies are
configured in JSON (see configs/) and run with ``modalfactor simulate``.
"""

from modalfactor import DgpSpec, EstimationConfig, run_study
from modalfactor.simulate import summary_rows

specs = [DgpSpec("S1", 60, 60, nu=3, seed=0), DgpSpec("S3", 60, 60, sigma=3.0, seed=0)]
results = run_study(specs, {"MFA", "PCA"}, {"trace"}, EstimationConfig(n_starts=1), S=10)

for res in results:
    print(f"{res.label:>14}: MFA {res.trace_ratio['MFA']:.3f}  PCA {res.trace_ratio['PCA']:.3f}"
          f"  failures {res.n_failures}")

# The same rows the CLI writes to CSV (17 significant digits).
print(summary_rows(results)[0][:7])
