"""Simulation and classification of the random difference equation X_n = M_n X_{n-1} + Q_n."""
from .affine import AffineMap, compose, enumerate_semigroup, fixed_point, inverse, iterate
from .model import (DistributionSpec, FiniteSupportSpec, LogExponential, LogStableHeavy, LogTail,
                    PointMass, Truncated, TwoPoint, Discrete, check_nondegeneracy, compute_im,
                    compute_iq, estimate_tail_profile, j_minus, tail_profile)

__all__ = [
    "AffineMap", "compose", "enumerate_semigroup", "fixed_point", "inverse", "iterate",
    "DistributionSpec", "FiniteSupportSpec", "LogExponential", "LogStableHeavy", "LogTail",
    "PointMass", "Truncated", "TwoPoint", "Discrete", "check_nondegeneracy", "compute_im",
    "compute_iq", "estimate_tail_profile", "j_minus", "tail_profile",
]
