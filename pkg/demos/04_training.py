"""Fitting adapters to teachers they can and cannot represent."""
# %%
from hoft.densemat import Rng
from hoft.train import make_task, smoothed, train

rotation = make_task("rotation", 32, 32, 4, 0.0, Rng(7))
scaled = make_task("scaled-rotation", 32, 32, 4, 0.0, Rng(7))

runs = [
    ("hoft", rotation), ("shoft", scaled), ("hoft", scaled), ("lora", rotation),
    ("oft", rotation),
]
for method, task in runs:
    trace = train(method, task, 4, 3000, 1e-2, 32, Rng(8))
    curve = smoothed(trace.losses)
    print(f"{method:5s} on {task.kind.value:15s} start {curve[99]:.2e}  "
          f"final {trace.final_loss:.2e}  ({trace.wall_time:.1f}s)")
