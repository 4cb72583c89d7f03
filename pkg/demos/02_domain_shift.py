"""Two-moons under rotation, and how sample weighting rescales imbalanced domains."""

import numpy as np

from dwlab import make_two_moons_shift, mmd, weight_samples

for degrees in (0, 15, 30, 45):
    ds = make_two_moons_shift(400, 400, rotation=degrees, seed=0)
    print(f"rotation {degrees:2d} deg: input-space MMD {mmd(ds.source_x, ds.target_x):.4f}")

ds = make_two_moons_shift(200, 800, seed=0)
for a in (0.25, 0.5, 1.0):
    ws, wt = weight_samples(ds.n_source, ds.n_target, a)
    mass = ws * ds.n_source / (ws * ds.n_source + wt * ds.n_target)
    print(f"a={a}: w_s={ws:.3f} w_t={wt:.3f} weighted source mass {mass:.3f} "
          f"(unweighted {ds.n_source / (ds.n_source + ds.n_target):.3f})")

# Input scaling changes the feature scale of each domain, which is itself a shift.
ws, wt = weight_samples(200, 800)
print("mean input norm, source vs target after scaling:",
      np.linalg.norm(ds.source_x * ws, axis=1).mean().round(3),
      np.linalg.norm(ds.target_x * wt, axis=1).mean().round(3))
