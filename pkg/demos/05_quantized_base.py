"""Training on top of a 4-bit NormalFloat base that never changes."""
# %%
import numpy as np

from hoft.densemat import Rng, gaussian_matrix
from hoft.quant import dequantize, nf4_levels, quantize
from hoft.train import make_task, train

print("NF4 levels:", nf4_levels().round(4))

w = gaussian_matrix(Rng(0), 256, 256)
for dq in (False, True):
    q = quantize(w, 64, dq)
    err = np.sqrt(np.mean((dequantize(q) - w) ** 2) / np.mean(w * w))
    print(f"double quant {dq}: relative rms error {err:.4f}")

# %% the teacher is defined on the dequantized base the adapter sees
task = make_task("rotation", 32, 32, 4, 0.0, Rng(7))
qbase = quantize(task.w0, 64)
codes = qbase.codes.tobytes()
trace = train("hoft", task.rebase(dequantize(qbase)), 4, 3000, 1e-2, 32, Rng(8), qbase=qbase)
print("final loss:", trace.final_loss, " codes unchanged:", codes == qbase.codes.tobytes())
