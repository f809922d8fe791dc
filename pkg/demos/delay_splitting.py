"""
Splitting a delay equation
==========================

u'(t) = -u(t) + 0.3 * int_{-1}^0 u(t + s) ds, split into the head flow with
history transport and the affine delay kick. The reference is an upwind
discretisation of the full generator, Richardson-extrapolated in q.
"""

import numpy as np

from splitkit import SEQUENTIAL, STRANG, EvolveSpec, fit_order
from splitkit.delay import delay_split_evolve, init_state, richardson_oracle, sample_history
from splitkit.problems import build_scalar_delay, delay_exponential_solution

coarse = build_scalar_delay(q=64)
history, _ = delay_exponential_solution(coarse, quadrature=False)
ref, oracle_err, raw = richardson_oracle(coarse, 1.0, history, [64, 128, 256, 512])
print("oracle heads by q:", [f"{r[0]:.10f}" for r in raw])
print(f"extrapolated {ref[0]:.12f}, estimated error {oracle_err:.1e}")

# a fine history grid keeps the O(1/q) junction error below the Strang error
q = 2**17
problem = build_scalar_delay(q=q)
state0 = init_state(history(0.0), sample_history(history, q, 1))
for scheme in (SEQUENTIAL, STRANG):
    errs = [(n, abs(delay_split_evolve(scheme, problem, EvolveSpec(1.0, n), state0).head[0] - ref[0]))
            for n in (4, 8, 16, 32, 64, 128)]
    p, _ = fit_order(errs)
    print(f"{scheme.label:>10}: " + " ".join(f"{e:.2e}" for _, e in errs) + f"   order {p:.3f}")
