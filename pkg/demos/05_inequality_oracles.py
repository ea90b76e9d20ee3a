"""Exercise the quadrature oracles behind the constraint assembly.

The three integral inequalities and the trajectory-level bound are checked
on randomly drawn polynomial data; the extremal cases land on the
inequality boundary.
"""

import numpy as np

from rrlmi.oracles import (
    SampledFunction,
    check_wirtinger_inequality,
    check_extended_jensen_inequality,
    check_reciprocally_convex_inequality,
    check_discounted_window_bound,
    random_psd,
    random_rc_pair,
)

rng = np.random.default_rng(0)

extremal = SampledFunction.quarter_sine(0.0, 1.0, npts=801)
print(f"vanishing-endpoint bound at its extremal shape: slack = "
      f"{check_wirtinger_inequality(extremal, np.eye(1)):.2e} (zero up to quadrature)")

affine = SampledFunction.polynomial(rng.standard_normal((2, 2)), 0.0, 1.0, npts=801)
print(f"two-term bound on an affine function: slack = "
      f"{check_extended_jensen_inequality(affine, random_psd(2, rng)):.2e} (exactly tight)")

worst = np.inf
for _ in range(500):
    n = int(rng.integers(1, 3))
    z = SampledFunction.random_polynomial(rng, n, 0.0, 1.5, vanish_at_a=True)
    worst = min(worst, check_wirtinger_inequality(z, random_psd(n, rng)))
print(f"500 random draws of the vanishing-endpoint bound: worst slack {worst:.3e}")

worst = np.inf
for d in (1, 2, 3):
    for _ in range(500):
        n = int(rng.integers(1, 3))
        R, rhat, G = random_rc_pair(n, rng)
        deltas = [rng.standard_normal(2 * n) for _ in range(d + 1)]
        raw = rng.uniform(0.1, 1.0, size=d + 1)
        worst = min(worst, check_reciprocally_convex_inequality(deltas, rhat, G, raw / raw.sum()))
print(f"500 draws x three segment counts of the combination bound: worst slack {worst:.3e}")

x = SampledFunction.random_polynomial(rng, 2, 0.0, 2.0, degree=5, npts=801)
R, rhat, G = random_rc_pair(2, rng)
resid = check_discounted_window_bound(x, R, G, alpha=0.4, d=2, delta=0.05, k=6, t=0.33)
print(f"trajectory-level discounted bound residual: {resid:.3e} (must be <= 0)")
