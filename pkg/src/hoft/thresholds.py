"""Pass/fail thresholds shared by the test-suite and the command-line drivers.

Bump ``THRESHOLDS_VERSION`` whenever a value changes.
"""

THRESHOLDS_VERSION = 1

# CWY construction
EXACT_ORTHO_TOL = 1e-12
RANK1_APPROX_TOL = 1e-12
LOW_RANK_EXACTNESS_TOL = 1e-12
NEUMANN_FULL_TOL = 1e-10
SEQUENTIAL_MATCH_TOL = 1e-10
# Differences below this are rounding noise when checking monotone curves.
MONOTONE_SLACK = 1e-12

# Regression baseline: orthogonality error of the two-term approximation for
# gaussian U of shape 1024 x 8 drawn from Rng(0); held to +-10%.
APPROX_ERROR_1024_R8 = 0.005654806120053655
APPROX_ERROR_REL_TOL = 0.10

# Adapters
IDENTITY_INIT_TOL = 1e-11
WEIGHT_DECAY_TOL = 1e-12
SPECTRUM_REL_TOL = 1e-8
FROBENIUS_REL_TOL = 1e-10
FACTORED_FORWARD_TOL = 1e-10

# Procrustes
PROCRUSTES_ONE_SIDED_TOL = 1e-10
POLAR_ORTHO_TOL = 1e-10

# Gradients
GRAD_REL_TOL = 1e-5
LORA_GRAD_REL_TOL = 1e-7
RADIAL_TOL = 1e-6
ZERO_RESIDUAL_GRAD_TOL = 1e-12

# Hyperspherical energy
ENERGY_LOW_RANK_REL_TOL = 1e-3
ENERGY_LEFT_ONLY_REL_TOL = 1e-8

# Training
TRAIN_LOSS_TOL = 1e-4
WITNESS_LOSS_TOL = 1e-10
QUANT_TRAIN_FACTOR = 10.0

# NF4: RMS(dequant(quant(W)) - W) / RMS(W) for a gaussian 256 x 256 matrix
# drawn from Rng(0), block 64, single-level scales; held to +-20%.
NF4_RMS_REL_ERROR = 0.09193862614117006
NF4_RMS_REL_TOL = 0.20
# Max |dequant(double quant) - dequant(single)| for the same matrix.
NF4_DOUBLE_QUANT_MAX_DIFF = 0.006038953550159931

# Benchmark
BENCH_MIN_SPEEDUP = 1.0
