"""Complex Jacobi fields, their Riccati companions and conjugate points.

Run:  python3 demos/02_jacobi_and_riccati.py
"""

import numpy as np

from beamlab.geometry import make_chart, trace_geodesic
from beamlab.jacobi import (conjugate_scan, curvature_along, epsilon_family,
                            real_pair, riccati_path, wronskian)

print("=" * 64)
print("admissible families on the sphere cap")
print("=" * 64)
chart = make_chart("sphere_cap", n=3, params={"cap_radius": 1.25})
path = trace_geodesic(chart, [0.0, 0.0], [0.5, 0.0])
K = curvature_along(path)
print(f"curvature along the geodesic: K in "
      f"[{K.K.min():.6f}, {K.K.max():.6f}] (round model: exactly 1)")

for eps in (1e-1, 1e-2, 1e-3):
    Y = epsilon_family(K, eps)
    H = riccati_path(Y)
    print(f"eps={eps:g}: conserved det(Im H)|det Y|^2 = {H.constant():.6g} "
          f"(drift {H.conservation_drift():.1e}), "
          f"min eig Im H = {H.min_im_eig():.3e}")

X, Z = real_pair(K, "entry")
W = wronskian(Z, X)
print(f"entry-anchored scalar Wronskian: {W[0]:+.9f} ... {W[-1]:+.9f} "
      f"(constant -1)")

print()
print("conjugate points: a long cap shows the first zero at arc length pi")
long_path = trace_geodesic(
    make_chart("sphere_cap", n=3, params={"cap_radius": 1.75}),
    [0.0, 0.0], [0.5, 0.0])
Klong = curvature_along(long_path)
hits = conjugate_scan(Klong, anchor=long_path.tau_minus,
                      window=(long_path.tau_minus, long_path.tau_plus))
for t in hits:
    print(f"det X vanishes at arc length {t - long_path.tau_minus:.8f} "
          f"from the entry (pi = {np.pi:.8f})")
