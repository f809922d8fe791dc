"""
Splitting orders on a non-commuting pair
========================================

Sequential, Strang and weighted splitting on the 2x2 shift pair, whose
commutator is diag(1, -1). Errors are measured against the dense matrix
exponential of A + B.
"""

import numpy as np

from splitkit import SEQUENTIAL, STRANG, EvolveSpec, Scheme, fit_order, split_evolve, stability_scan
from splitkit.problems import build_matrix_problem

spec = build_matrix_problem("nilpotent-pair")
ref = spec.reference(1.0)
ns = [4, 8, 16, 32, 64, 128, 256]

# error table, one column per scheme
schemes = [SEQUENTIAL, STRANG, Scheme.weighted(0.5), Scheme.weighted(0.25)]
print("n     " + "".join(f"{s.label:>16}" for s in schemes))
errors = {s.label: [] for s in schemes}
for n in ns:
    row = []
    for s in schemes:
        e = np.linalg.norm(split_evolve(s, spec.T, spec.S, EvolveSpec(1.0, n), spec.x0) - ref)
        errors[s.label].append((n, e))
        row.append(e)
    print(f"{n:<6}" + "".join(f"{e:16.3e}" for e in row))

# least-squares slopes in log-log
for label, errs in errors.items():
    p, res = fit_order(errs)
    print(f"{label:>16}: order {p:.3f}  (rms log residual {res:.1e})")

# the step is not a contraction here; the scan still finds a finite envelope
est = stability_scan(SEQUENTIAL, spec.T, spec.S, 1.0, 16)
print(f"sequential envelope: M_hat = {est.M_hat:.4f}, omega_hat = {est.omega_hat:.2e}, "
      f"max observed {est.max_norm_observed:.4f}")
