"""Products of Householder reflections, built three ways."""
# %%
import numpy as np

from hoft.cwy import (Mode, approx_q, build_factors, exact_q, orthogonality_error,
                      sequential_chain_q)
from hoft.densemat import Rng, gaussian_matrix

rng = Rng(0)
u = gaussian_matrix(rng, 512, 8)

# %% one reflection at a time vs the compact form
q_seq = sequential_chain_q(u)
q_cwy = exact_q(build_factors(u, Mode.EXACT))
print("sequential vs compact:", np.linalg.norm(q_seq - q_cwy))
print("exact orthogonality error:", orthogonality_error(q_cwy))

# %% the two-term inverse trades exactness for speed as rank grows
for r in (1, 2, 4, 8, 16, 32):
    f = build_factors(gaussian_matrix(rng.child(r), 512, r), Mode.NEUMANN2)
    print(f"r={r:2d}  two-term orthogonality error {orthogonality_error(approx_q(f)):.2e}")

# %% orthonormal vectors make the truncation exact at any rank
basis, _ = np.linalg.qr(gaussian_matrix(rng, 512, 16))
f = build_factors(basis, Mode.NEUMANN2)
print("orthonormal U, r=16:", orthogonality_error(approx_q(f)))
