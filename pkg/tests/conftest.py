import numpy as np
import pytest

from gpgmc.emulator import DesignSet


def spread_points(rng, n, dim, spread=2.0, min_sep=0.35):
    """Random points with a minimum pairwise separation (like a filtered pool)."""
    pts = []
    while len(pts) < n:
        cand = rng.uniform(-spread, spread, size=dim)
        if all(np.linalg.norm(cand - p) > min_sep for p in pts):
            pts.append(cand)
    return np.array(pts)


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar or vector function."""
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        out.append((np.asarray(f(x + step)) - np.asarray(f(x - step))) / (2 * h))
    return np.stack(out)


class SmoothTestFunction:
    """Smooth multi-datum function with analytic gradients for emulator tests."""

    def __init__(self, rng, dim, n_data=7):
        self.dim = dim
        self.n_data = n_data
        self.freqs = rng.normal(scale=0.8, size=(n_data, dim))
        self.weights = rng.normal(size=n_data)

    def per_datum_values(self, theta):
        return self.weights * np.sin(self.freqs @ theta)

    def per_datum_grads(self, theta):
        # (dim, n_data)
        return (self.weights * np.cos(self.freqs @ theta)) * self.freqs.T

    def value(self, theta):
        return float(self.per_datum_values(theta).sum())

    def grad(self, theta):
        return self.per_datum_grads(theta).sum(axis=1)

    def design(self, points, gradients=True, per_datum=True):
        pots = np.array([self.value(p) for p in points])
        grads = np.stack([self.grad(p) for p in points]) if gradients else None
        pd = np.stack([self.per_datum_values(p) for p in points]) if per_datum else None
        pdg = np.stack([self.per_datum_grads(p) for p in points]) \
            if (gradients and per_datum) else None
        return DesignSet(points=points, potentials=pots, gradients=grads,
                         per_datum=pd, per_datum_grads=pdg)


@pytest.fixture
def smooth_fn():
    return SmoothTestFunction(np.random.default_rng(99), dim=2)
