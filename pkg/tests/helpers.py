import math

import numpy as np

from data.channel import UserGeometry, complex_normal, synth_covariance


def random_hermitian(rng, dim):
    X = complex_normal(rng, (dim, dim))
    return 0.5 * (X + X.conj().T)


def random_psd(rng, dim, rank=None):
    X = complex_normal(rng, (dim, rank or dim))
    return X @ X.conj().T


def steering_covariance(rng, M, mean_deg, L=10, spread_deg=10.0):
    return synth_covariance(UserGeometry(math.radians(mean_deg), math.radians(spread_deg), L), M, rng)


def separated_types_covariances(rng, M, N, L=10):
    """Type-S covariances with disjoint AOA windows spread over (0, pi)."""
    offset = rng.uniform(20.0, 40.0)
    step = (140.0 / N) if N else 0.0
    return [steering_covariance(rng, M, offset + step * n, L) for n in range(N)]
