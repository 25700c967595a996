import os

# Pin BLAS to one thread before numpy is first imported anywhere in the test
# process: single-threaded mode is the bit-determinism contract the
# reproducibility checks rely on.
for _var in (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
):
    os.environ.setdefault(_var, "1")
