"""Sampling on the sphere: vMF via Wood's rejection scheme, nivMF by a change of variables."""

import numpy as np

from probdml import specfn
from probdml.directional import NivmfParams, VmfParams, sample_nivmf_approx, sample_vmf

for m, k in ((3, 5.0), (8, 20.0), (64, 50.0)):
    mu = np.zeros(m)
    mu[0] = 1.0
    x = sample_vmf(VmfParams(mu, k), 100_000, seed=0)
    r = np.linalg.norm(x.mean(axis=0))
    print(f"vMF M={m:3d} kappa={k:5.1f}: mean resultant {r:.4f}, expected {float(specfn.mean_resultant_length(m, k)):.4f}")

# anisotropy: the spread along each axis follows 1/kappa_m
kd = np.array([1.0, 4.0, 40.0, 4.0])
mu = np.array([1.0, 0.0, 0.0, 0.0])
x = sample_nivmf_approx(NivmfParams(mu, kd), 50_000, np.random.default_rng(1))
print("\nnivMF with per-axis kappa", kd)
print("  per-axis std of samples:", np.round(x.std(axis=0), 3))
