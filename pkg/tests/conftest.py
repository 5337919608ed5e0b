import numpy as np


def smooth_positive(domain, seed, amplitude=0.3, modes=3, floor=0.3):
    """Random smooth density on a box with unit mass, bounded below by ``floor`` before scaling."""
    rng = np.random.default_rng(seed)
    X = domain.mesh()
    f = np.ones(domain.cells)
    for k in range(1, modes + 1):
        for a in range(domain.dim):
            f = f + amplitude * rng.uniform(-1, 1) * np.cos(k * np.pi * X[a] / domain.lengths[a])
    f = np.maximum(f, floor)
    return f / domain.mass(f)
