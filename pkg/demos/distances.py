"""How the seven proxy-to-sample distances react to angle and sample norm.

Cosine ignores the norm. The probabilistic distances treat the norm as a
concentration: confident (long) samples are pulled hard towards their proxy and
pushed hard away from others, while short samples get flatter distances.
"""

import numpy as np

from probdml.metrics import Metric, distance_surface

angles = np.deg2rad([0, 30, 60, 90, 135, 180])
norms = [2.0, 10.0, 40.0]
for metric in Metric:
    rows = distance_surface(metric, 10.0, norms, angles, dim=3, mc_samples=2000, seed=0)
    table = np.array([r[2] for r in rows]).reshape(len(angles), len(norms))
    print(f"\n{metric.value}  (proxy kappa 10, columns kappa_z = {norms})")
    for a, row in zip(np.rad2deg(angles), table):
        print(f"  {a:5.0f} deg  " + "  ".join(f"{v:10.3f}" for v in row))
