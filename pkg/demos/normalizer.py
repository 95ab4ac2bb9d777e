"""Exact vs quadratic log-normalizer of the vMF density.

The quadratic surrogate is fitted on kappa in [10, 50]; inside that window it
is accurate to a few parts in 1e8, outside it drifts quickly.
"""

import numpy as np

from probdml import specfn

grid = specfn.DEFAULT_FIT_GRID
for m in (16, 128, 512):
    fit = specfn.fit_log_c_quadratic(m, grid)
    print(f"M={m:4d}  a={fit.a:10.4f} b={fit.b:+.6f} c={fit.c:+.7f}  relative MSE {fit.mse_rel:.2e}")

for name in sorted(specfn.PUBLISHED_PRESETS):
    p = specfn.published_preset(name)
    ex = specfn.log_c_exact(p.dim, grid)
    err = np.max(np.abs(p.log_c(grid) - ex) / np.abs(ex))
    print(f"{name}: largest pointwise relative error on [10, 50] {err:.2e}")

fit = specfn.fit_log_c_quadratic(16, grid)
print("\nM=16 outside the fit window:")
for k in (1.0, 5.0, 10.0, 50.0, 100.0, 200.0):
    val, outside = specfn.log_c_approx(fit, k, with_flag=True)
    print(f"  kappa={k:6.1f}  exact {float(specfn.log_c_exact(16, k)):9.3f}  quadratic {val:9.3f}{'  (extrapolated)' if outside else ''}")

print("\nmean resultant length A_M(kappa):")
for m, k in ((3, 5.0), (8, 20.0), (64, 50.0)):
    print(f"  M={m:3d} kappa={k:5.1f}  A={float(specfn.mean_resultant_length(m, k)):.6f}")
