"""Adapting a frozen weight: HOFT, SHOFT, LoRA and block Cayley OFT side by side."""
# %%
import numpy as np

from hoft.adapters import (forward, init_identity, init_lora, init_oft, init_shoft, merge,
                           param_count)
from hoft.densemat import Rng, gaussian_matrix

rng = Rng(1)
m, n, r = 64, 48, 4
w0 = gaussian_matrix(rng, m, n)
x = gaussian_matrix(rng, n, 5)

adapters = {
    "hoft": init_identity(m, n, r, rng),
    "shoft": init_shoft(m, n, r, rng),
    "lora": init_lora(m, n, r, rng),
    "oft": init_oft(m, n, 4),
}

# %% every method starts at the frozen model
for name, ad in adapters.items():
    gap = np.max(np.abs(forward(ad, w0, x) - w0 @ x))
    print(f"{name:5s} params={param_count(ad):5d}  |forward - W0 x| = {gap:.1e}")

# %% a perturbed HOFT adapter still preserves singular values
hoft = adapters["hoft"].with_parameters(u=gaussian_matrix(rng, m, r),
                                        v=gaussian_matrix(rng, n, r), mode="exact")
sv0 = np.linalg.svd(w0, compute_uv=False)
sv1 = np.linalg.svd(merge(hoft, w0), compute_uv=False)
print("max singular value change:", np.max(np.abs(sv0 - sv1)))

# %% SHOFT's magnitude vector is what lets the spectrum move
shoft = adapters["shoft"].with_parameters(m=np.linspace(0.5, 2.0, m))
sv2 = np.linalg.svd(merge(shoft, w0), compute_uv=False)
print("SHOFT top singular values:", sv2[:3].round(3), "vs", sv0[:3].round(3))
