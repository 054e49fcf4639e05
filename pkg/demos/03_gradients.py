"""Checking the hand-derived gradients against central differences."""
# %%
from hoft.densemat import Rng
from hoft.experiments import GRADCHECK_CASES, gradcheck_case

for i, case in enumerate(GRADCHECK_CASES):
    row = gradcheck_case(case, Rng(0).child(i))
    print(f"{case.kind:5s} {case.m:3d}x{case.n:<3d} r={case.rank} {case.mode:8s} "
          f"rel err {row['max_rel_err']:.1e}  radial {row['radial']:.1e}")
