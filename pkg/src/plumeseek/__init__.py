"""Gas source localization from sparse airborne measurements.

One enlarged fluid simulation predicts the readings of every candidate
source location at once (the field under constant wind is a translation of
the source), so the search over candidates costs a single simulation plus
array reads. Baselines (GP regression, kernel DM+V/W, Bayesian
optimization over per-candidate simulations), an active-sensing loop, a
synthetic-environment experiment harness, and a CLI sit on top.
"""

import os as _os

# Single-threaded BLAS keeps CLI outputs byte-identical across runs and
# costs nothing at this package's matrix sizes. Respect explicit settings.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("OMP_NUM_THREADS", "1")

from .kernels import BACKEND_NAME  # noqa: E402

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]
