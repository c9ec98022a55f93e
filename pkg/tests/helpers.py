"""Shared random generators for the tests."""

import numpy as np


def random_polyline(rng, m=10, scale=5.0):
    steps = rng.normal(size=(m - 1, 3)) * scale
    return np.cumsum(np.vstack([rng.normal(size=(1, 3)) * 10, steps]), axis=0)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
