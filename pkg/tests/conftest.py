import os

# Must happen before numpy is first imported anywhere in the test process:
# a fixed single BLAS thread keeps training byte-reproducible and is faster
# at these matrix sizes anyway.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
