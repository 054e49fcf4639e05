"""Householder orthogonal fine-tuning adapters built on the compact WY transform."""

__version__ = "0.1.0"

from .adapters import (HoftAdapter, LoraAdapter, OftCayleyAdapter, ShoftAdapter, adapted_weight,
                       forward, init_identity, init_lora, init_oft, init_shoft, merge,
                       param_count)
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .cwy import (CwyFactors, Mode, apply_q, approx_q, build_factors, exact_q,
                  factored_orthogonality_error, materialize_q, orthogonality_error,
                  sequential_chain_q)
from .densemat import DimensionError, Rng, SingularMatrixError
from .grad import GradBundle, finite_diff_grads, loss_and_grads
from .metrics import hyperspherical_energy, polar_orthogonal_factor, procrustes_bound_check
from .quant import Nf4Tensor, dequantize, nf4_levels, qforward, quantize
from .train import Task, TaskKind, make_task, train

__all__ = [
    "__version__",
    "CheckpointError", "CwyFactors", "DimensionError", "GradBundle", "HoftAdapter",
    "LoraAdapter", "Mode", "Nf4Tensor", "OftCayleyAdapter", "Rng", "ShoftAdapter",
    "SingularMatrixError", "Task", "TaskKind",
    "adapted_weight", "apply_q", "approx_q", "build_factors", "dequantize", "exact_q",
    "factored_orthogonality_error", "finite_diff_grads", "forward", "hyperspherical_energy",
    "init_identity", "init_lora", "init_oft", "init_shoft", "load_checkpoint", "loss_and_grads",
    "make_task", "materialize_q", "merge", "nf4_levels", "orthogonality_error", "param_count",
    "polar_orthogonal_factor", "procrustes_bound_check", "qforward", "quantize",
    "read_checkpoint", "save_checkpoint", "sequential_chain_q", "train",
]
