"""Derivative-aware Gaussian-process emulator of a potential surface.

Conditions on a design of points with potential values, optional gradients and
optional per-datum potential decompositions.  Every prediction (value,
gradient, Hessian, empirical Fisher matrix, metric-derivative tensor) is a
linear map of the stacked design data, so the heavy factorizations are done
once per design.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import kernels
from .errors import IllConditioned, MissingPerDatum, ShapeMismatch, TooFewPoints

__all__ = ["Hyperparameters", "DesignSet", "Prediction", "Emulator",
           "build_emulator", "save_design", "load_design"]

NUGGET_DEFAULT = 1e-8
NUGGET_MAX = 1e-4
VARIANCE_CLAMP = -1e-10


@dataclass
class Hyperparameters:
    """Kernel inverse-squared lengthscales and diagonal jitter."""

    rho: np.ndarray
    nugget: float = NUGGET_DEFAULT

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if np.any(self.rho <= 0):
            raise ValueError("rho must be positive componentwise")
        if self.nugget < 0:
            raise ValueError("nugget must be non-negative")

    @property
    def tau(self) -> np.ndarray:
        """Unconstrained parameterization rho = exp(-tau)."""
        return -np.log(self.rho)


@dataclass
class DesignSet:
    """Evaluated configurations the emulator conditions on.

    ``gradients`` holds per-point potential gradients (n, D).  ``per_datum``
    holds per-point, per-datum potential contributions (n, N) and, when
    gradients are present, ``per_datum_grads`` their per-datum gradients
    (n, D, N); both are required together so that the stacked per-datum matrix
    conforms to the derivative-augmented linear maps.
    """

    points: np.ndarray
    potentials: np.ndarray
    gradients: np.ndarray | None = None
    per_datum: np.ndarray | None = None
    per_datum_grads: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.potentials = np.asarray(self.potentials, dtype=float)
        n, dim = self.points.shape
        if self.potentials.shape != (n,):
            raise ShapeMismatch(f"potentials shape {self.potentials.shape}, expected ({n},)")
        if self.gradients is not None:
            self.gradients = np.asarray(self.gradients, dtype=float)
            if self.gradients.shape != (n, dim):
                raise ShapeMismatch("gradients must be (n, D)")
        if self.per_datum is not None:
            self.per_datum = np.asarray(self.per_datum, dtype=float)
            if self.per_datum.ndim != 2 or self.per_datum.shape[0] != n:
                raise ShapeMismatch("per_datum must be (n, N)")
            if self.gradients is not None:
                if self.per_datum_grads is None:
                    raise ShapeMismatch(
                        "per_datum_grads required when design has gradients and per-datum data")
                self.per_datum_grads = np.asarray(self.per_datum_grads, dtype=float)
                if self.per_datum_grads.shape != (n, dim, self.per_datum.shape[1]):
                    raise ShapeMismatch("per_datum_grads must be (n, D, N)")
        if n > 1:
            d2 = np.sum((self.points[:, None, :] - self.points[None, :, :])**2, axis=-1)
            np.fill_diagonal(d2, np.inf)
            if d2.min() <= 0.0:
                raise ValueError("design points must be pairwise distinct")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def has_gradients(self) -> bool:
        return self.gradients is not None

    @property
    def n_tilde(self) -> int:
        return self.n * (1 + self.dim) if self.has_gradients else self.n

    @property
    def data_count(self) -> int | None:
        return None if self.per_datum is None else self.per_datum.shape[1]

    def data_vector(self) -> np.ndarray:
        """Stacked observation vector [u; grad rows], coordinate-major."""
        if not self.has_gradients:
            return self.potentials.copy()
        return np.concatenate([self.potentials, self.gradients.T.reshape(-1)])

    def per_datum_matrix(self) -> np.ndarray:
        """Stacked per-datum matrix (n~, N) conforming to data_vector layout."""
        if self.per_datum is None:
            raise MissingPerDatum("design carries no per-datum potentials")
        if not self.has_gradients:
            return self.per_datum.copy()
        n, dim, ndata = self.per_datum_grads.shape
        grad_rows = self.per_datum_grads.transpose(1, 0, 2).reshape(dim * n, ndata)
        return np.vstack([self.per_datum, grad_rows])

    def subset(self, idx) -> "DesignSet":
        idx = np.asarray(idx)
        return DesignSet(
            points=self.points[idx],
            potentials=self.potentials[idx],
            gradients=None if self.gradients is None else self.gradients[idx],
            per_datum=None if self.per_datum is None else self.per_datum[idx],
            per_datum_grads=None if self.per_datum_grads is None else self.per_datum_grads[idx],
        )

    def appended(self, point, potential, gradient=None, per_datum_row=None,
                 per_datum_grad=None) -> "DesignSet":
        """New design with one extra point (insertion order preserved)."""
        return DesignSet(
            points=np.vstack([self.points, np.asarray(point, dtype=float)[None, :]]),
            potentials=np.append(self.potentials, float(potential)),
            gradients=None if self.gradients is None
            else np.vstack([self.gradients, np.asarray(gradient, dtype=float)[None, :]]),
            per_datum=None if self.per_datum is None
            else np.vstack([self.per_datum, np.asarray(per_datum_row, dtype=float)[None, :]]),
            per_datum_grads=None if self.per_datum_grads is None
            else np.concatenate([self.per_datum_grads,
                                 np.asarray(per_datum_grad, dtype=float)[None]], axis=0),
        )


@dataclass
class Prediction:
    """Posterior-mean prediction with optional scaled covariance.

    ``mean`` is in natural shape ((m,), (m, D) or (m, D, D) by order); ``cov``
    stays in the flat coordinate-major layout when present.
    """

    mean: np.ndarray
    cov: np.ndarray | None = None
    dof: int = 0


class Emulator:
    """Factorized GP conditioned on a design set.

    Immutable after construction; predictions are read-only.  Adaptation
    builds a fresh instance and swaps it in between transitions.
    """

    def __init__(self, design: DesignSet, hyper: Hyperparameters):
        self.design = design
        self.hyper = hyper
        n_tilde = design.n_tilde
        q = 1 + 2 * design.dim
        if n_tilde <= q + 2:
            raise TooFewPoints(
                f"need n~ > q+2 = {q + 2} stacked observations, have {n_tilde}")

        C = kernels.tilde_corr(design.points, hyper.rho, design.has_gradients)
        C[np.diag_indices_from(C)] += hyper.nugget
        try:
            self._chol = cho_factor(C, lower=True)
        except LinAlgError as exc:
            raise IllConditioned(f"design correlation factorization failed: {exc}") from exc

        self.H = kernels.tilde_basis(design.points, design.has_gradients)
        Ci_H = cho_solve(self._chol, self.H)
        self.B = self.H.T @ Ci_H
        try:
            self._chol_B = cho_factor(self.B, lower=True)
        except LinAlgError as exc:
            raise IllConditioned(f"basis Gram factorization failed: {exc}") from exc
        self.P = cho_solve(self._chol_B, Ci_H.T)
        self.Q = cho_solve(self._chol, np.eye(n_tilde)) - Ci_H @ self.P
        self.Q = 0.5 * (self.Q + self.Q.T)

        u = design.data_vector()
        self.beta_hat = self.P @ u
        quad = float(u @ self.Q @ u)
        self.sigma2_hat = max(quad, 0.0) / (n_tilde - q - 2)
        self.degenerate_sigma2 = self.sigma2_hat <= 1e-12 * max(1.0, float(u @ u))
        self.dof = n_tilde - q
        self.q = q
        self._u = u

        self.gfi = None
        if design.per_datum is not None:
            ndata = design.per_datum.shape[1]
            U = design.per_datum_matrix()
            centered = U - U.mean(axis=1, keepdims=True)
            gfi = centered @ centered.T  # U J_N U' with J_N = I - 11'/N
            self.gfi = 0.5 * (gfi + gfi.T)
            self._ndata = ndata

    # -- linear maps -----------------------------------------------------

    def linear_map(self, points: np.ndarray, order: int) -> np.ndarray:
        """Prediction operator L so that mean = L @ data_vector (flat layout)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        H_e = kernels.basis(points, order)
        C_ed = kernels.cross_corr(points, order, self.design.points,
                                  self.hyper.rho, self.design.has_gradients)
        L = H_e @ self.P + C_ed @ self.Q
        if order == 2:
            # enforce exact (k,l) row symmetry of the second-derivative map
            dim = self.design.dim
            m = points.shape[0]
            L4 = L.reshape(dim, dim, m, -1)
            L4 = 0.5 * (L4 + L4.transpose(1, 0, 2, 3))
            L = L4.reshape(dim * dim * m, -1)
        return L

    # -- predictions -----------------------------------------------------

    def predict(self, points: np.ndarray, order: int = 0,
                with_cov: bool = False) -> Prediction:
        """Predict potentials (order 0), gradients (1) or Hessians (2).

        Covariance is available for orders 0 and 1; the order-2 auto-block
        would need fourth kernel derivatives which are never formed.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m, dim = points.shape
        L = self.linear_map(points, order)
        flat = L @ self._u
        if order == 0:
            mean = flat
        elif order == 1:
            mean = flat.reshape(dim, m).T
        else:
            mean = flat.reshape(dim, dim, m).transpose(2, 0, 1)
        cov = None
        if with_cov:
            if order not in (0, 1):
                raise ValueError("covariance only available for orders 0 and 1")
            cov = self.sigma2_hat * self._corr_cov(points, order)
        return Prediction(mean=mean, cov=cov, dof=self.dof)

    def _corr_cov(self, points, order):
        """Unscaled predictive covariance C** in flat layout."""
        H_e = kernels.basis(points, order)
        C_ed = kernels.cross_corr(points, order, self.design.points,
                                  self.hyper.rho, self.design.has_gradients)
        C_ee = kernels.corr_block(points, points, order, min(order, 1),
                                  self.hyper.rho) if order <= 1 else None
        HPC = H_e @ self.P @ C_ed.T
        cov = C_ee - C_ed @ self.Q @ C_ed.T \
            + H_e @ cho_solve(self._chol_B, H_e.T) - HPC - HPC.T
        cov = 0.5 * (cov + cov.T)
        diag = np.diagonal(cov)
        if diag.min() < VARIANCE_CLAMP:
            raise IllConditioned(
                f"predictive variance {diag.min():.3e} below clamp threshold")
        d = np.arange(cov.shape[0])
        cov[d, d] = np.maximum(diag, 0.0)
        return cov

    def predictive_variance(self, points: np.ndarray, order: int = 0,
                            scaled: bool = True) -> np.ndarray:
        """Pointwise predictive variances (flat layout for order 1)."""
        var = np.diagonal(self._corr_cov(np.atleast_2d(points), order)).copy()
        if scaled:
            var *= self.sigma2_hat
        return var

    def predict_per_datum_grads(self, points: np.ndarray) -> np.ndarray:
        """Emulated per-datum gradient matrices, (m, D, N)."""
        if self.gfi is None:
            raise MissingPerDatum("design carries no per-datum potentials")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m, dim = points.shape
        du = self.linear_map(points, 1) @ self.design.per_datum_matrix()
        return du.reshape(dim, m, -1).transpose(1, 0, 2)

    def predict_efi(self, points: np.ndarray) -> np.ndarray:
        """Emulated empirical Fisher matrices, (m, D, D), symmetric PSD."""
        if self.gfi is None:
            raise MissingPerDatum("design carries no per-datum potentials")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m, dim = points.shape
        A1 = self.linear_map(points, 1)
        M = A1 @ self.gfi @ A1.T
        M = 0.5 * (M + M.T)
        M4 = M.reshape(dim, m, dim, m)
        return np.einsum("kili->ikl", M4)

    def predict_christoffel(self, points: np.ndarray) -> np.ndarray:
        """Emulated first-kind connection tensors Gamma[i][a,b,c], (m, D, D, D)."""
        G, T3 = self.predict_metric_bundle(points)
        return T3

    def predict_metric_bundle(self, points: np.ndarray):
        """Emulated metric and its raw derivative tensor in one pass.

        Returns ``(G, T3)`` with ``G`` the (m, D, D) empirical Fisher matrices
        and ``T3`` the (m, D, D, D) tensors ``T3[i][a,b,c]`` equal to the
        first-kind connection Gamma_{ab,c}; the metric derivative follows as
        dG_c[a,b] = T3[a,c,b] + T3[b,c,a].
        """
        if self.gfi is None:
            raise MissingPerDatum("design carries no per-datum potentials")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m, dim = points.shape
        A1 = self.linear_map(points, 1)
        A2 = self.linear_map(points, 2)
        gA1 = self.gfi @ A1.T
        M = A1 @ gA1
        M = 0.5 * (M + M.T)
        G = np.einsum("kili->ikl", M.reshape(dim, m, dim, m))
        T = A2 @ gA1
        T5 = T.reshape(dim, dim, m, dim, m)
        T3 = np.einsum("abici->iabc", T5)
        return G, T3


def build_emulator(design: DesignSet, hyper: Hyperparameters,
                   auto_nugget: bool = True) -> Emulator:
    """Build the factorization, escalating the nugget on failure.

    The nugget is raised by decades up to 1e-4; if factorization still fails
    the last IllConditioned error propagates.
    """
    nugget = hyper.nugget
    while True:
        try:
            return Emulator(design, Hyperparameters(rho=hyper.rho, nugget=nugget))
        except IllConditioned:
            if not auto_nugget:
                raise
            nugget = 1e-10 if nugget == 0.0 else nugget * 10.0
            if nugget > NUGGET_MAX:
                raise


# -- persistence ---------------------------------------------------------

def save_design(path, design: DesignSet, hyper: Hyperparameters) -> None:
    """Write a design plus fitted hyperparameters as JSON (+ per-datum CSV)."""
    path = Path(path)
    per_datum_path = None
    if design.per_datum is not None:
        per_datum_path = path.with_suffix(".per_datum.csv").name
        rows = design.per_datum_matrix()
        with open(path.parent / per_datum_path, "w") as fh:
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    doc = {
        "points": [[repr(float(v)) for v in row] for row in design.points],
        "potentials": [repr(float(v)) for v in design.potentials],
        "gradients": None if design.gradients is None
        else [[repr(float(v)) for v in row] for row in design.gradients],
        "per_datum_path": per_datum_path,
        "rho": [repr(float(v)) for v in hyper.rho],
        "nugget": repr(float(hyper.nugget)),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_design(path) -> tuple[DesignSet, Hyperparameters]:
    """Round-trip counterpart of :func:`save_design` (bit-stable)."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    points = np.array([[float(v) for v in row] for row in doc["points"]])
    potentials = np.array([float(v) for v in doc["potentials"]])
    gradients = None
    if doc.get("gradients") is not None:
        gradients = np.array([[float(v) for v in row] for row in doc["gradients"]])
    per_datum = per_datum_grads = None
    if doc.get("per_datum_path"):
        rows = []
        with open(path.parent / doc["per_datum_path"]) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append([float(v) for v in line.split(",")])
        stacked = np.array(rows)
        n, dim = points.shape
        per_datum = stacked[:n]
        if gradients is not None:
            per_datum_grads = stacked[n:].reshape(dim, n, -1).transpose(1, 0, 2)
    design = DesignSet(points=points, potentials=potentials, gradients=gradients,
                       per_datum=per_datum, per_datum_grads=per_datum_grads)
    hyper = Hyperparameters(rho=np.array([float(v) for v in doc["rho"]]),
                            nugget=float(doc["nugget"]))
    return design, hyper
