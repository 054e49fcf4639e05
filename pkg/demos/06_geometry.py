"""Hyperspherical energy and the one-sided Procrustes gap."""
# %%
import numpy as np

from hoft.cwy import Mode, build_factors, exact_q
from hoft.densemat import Rng, gaussian_matrix
from hoft.metrics import energy_difference_experiment, procrustes_bound_check

rng = Rng(3)
for r in (1, 2, 8, 32):
    rep = energy_difference_experiment(128, r, 5, rng.child(r))
    print(f"r={r:2d}  mean |HE diff| / HE {rep.mean_rel_diff:.2e}  "
          f"left-only {rep.left_only_max_rel:.1e}")

# %% how far a two-sided transform is from the best one-sided one
m0 = gaussian_matrix(rng, 32, 32)
q_u = exact_q(build_factors(gaussian_matrix(rng, 32, 4), Mode.EXACT))
q_v = exact_q(build_factors(gaussian_matrix(rng, 32, 4), Mode.EXACT))
res = procrustes_bound_check(m0, q_u, q_v)
print(f"gap {res.gap:.3f}  bound {res.bound:.1f}  holds {res.holds}")
print("one-sided control gap:", procrustes_bound_check(m0, q_u, np.eye(32)).gap)
