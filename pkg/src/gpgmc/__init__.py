"""Geometric MCMC with Gaussian-process-emulated derivatives and metrics.

Samplers (random walk, Hamiltonian, Riemannian-manifold, Lagrangian) draw
their gradients, metric tensors and connection coefficients either from exact
target models or from a derivative-aware GP emulator that can be refined
online at regeneration times via greedy mutual-information design selection.
"""

__version__ = "0.1.0"

from .emulator import DesignSet, Emulator, Hyperparameters, build_emulator
from .geometry import EmulatedGeometry, ExactGeometry
from .samplers import ChainState, IntegratorConfig, init_state
from .targets import BBDTarget, GaussianTarget, banana_target

__all__ = ["DesignSet", "Emulator", "Hyperparameters", "build_emulator",
           "EmulatedGeometry", "ExactGeometry", "ChainState",
           "IntegratorConfig", "init_state", "BBDTarget", "GaussianTarget",
           "banana_target", "__version__"]
