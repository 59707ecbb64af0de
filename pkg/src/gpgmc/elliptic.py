"""Steady-state diffusion inverse problem on the unit square.

The forward model solves ``div(c grad u) = 0`` with Dirichlet data ``u = x1``
on the bottom edge, ``u = 1 - x1`` on the top edge and zero-flux sides.  The
log-diffusivity is a truncated Karhunen-Loeve expansion of a Gaussian-kernel
random field, so the unknowns are the D expansion coefficients.

Discretization is vertex-centred finite volumes on a regular mesh with
harmonic averaging of the diffusivity at cell faces; parameter sensitivities
reuse the factorized stiffness matrix (one extra solve per coefficient).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DegenerateKernel, SolverFailure

__all__ = ["KLExpansion", "EllipticTarget"]


class KLExpansion:
    """Nystrom eigenpairs of a Gaussian-kernel integral operator on [0,1]^2.

    Eigenfunctions are normalized to unit discrete L2 norm on the quadrature
    mesh and extendable to arbitrary points via the Nystrom formula.
    """

    def __init__(self, n_modes: int, mesh_size: int = 20,
                 lengthscale: float = 0.5, variance: float = 1.0):
        self.n_modes = n_modes
        self.lengthscale = float(lengthscale)
        self.variance = float(variance)
        m = mesh_size
        xs = np.linspace(0.0, 1.0, m + 1)
        X1, X2 = np.meshgrid(xs, xs, indexing="xy")
        self.nodes = np.column_stack([X1.ravel(), X2.ravel()])
        # trapezoid weights on the tensor grid
        w1 = np.full(m + 1, 1.0 / m)
        w1[0] = w1[-1] = 0.5 / m
        self.weights = np.outer(w1, w1).ravel()

        K = self._kernel(self.nodes, self.nodes)
        sw = np.sqrt(self.weights)
        sym = sw[:, None] * K * sw[None, :]
        sym = 0.5 * (sym + sym.T)
        vals, vecs = np.linalg.eigh(sym)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        if n_modes > vals.size or vals[n_modes - 1] <= 1e-12 * max(vals[0], 1.0):
            raise DegenerateKernel(
                f"requested {n_modes} modes but spectrum is numerically "
                f"degenerate beyond {int(np.sum(vals > 1e-12 * vals[0]))}")
        self.eigenvalues = vals[:n_modes]
        # phi = W^(-1/2) psi has unit discrete L2 norm: phi' W phi = 1
        self.eigenfunctions = (vecs[:, :n_modes] / sw[:, None]).T  # (D, nodes)
        self._all_eigenvalues = vals

    def _kernel(self, A, B):
        d2 = ((A[:, None, :] - B[None, :, :])**2).sum(-1)
        return self.variance * np.exp(-0.5 * d2 / self.lengthscale**2)

    def eigenfunction_values(self, points: np.ndarray) -> np.ndarray:
        """Eigenfunctions at arbitrary points via Nystrom extension, (D, P)."""
        K = self._kernel(np.atleast_2d(points), self.nodes)
        return (self.eigenfunctions * self.weights) @ K.T / self.eigenvalues[:, None]

    def log_field(self, theta: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Sum of theta_d sqrt(lambda_d) phi_d at the given points."""
        phi = self.eigenfunction_values(points)
        return (np.asarray(theta, dtype=float) * np.sqrt(self.eigenvalues)) @ phi


class _Grid:
    """Vertex-centred mesh bookkeeping for one resolution."""

    def __init__(self, m: int):
        self.m = m
        self.h = 1.0 / m
        xs = np.linspace(0.0, 1.0, m + 1)
        X1, X2 = np.meshgrid(xs, xs, indexing="xy")
        self.x1 = X1.ravel()
        self.x2 = X2.ravel()
        self.nodes = np.column_stack([self.x1, self.x2])
        self.n_nodes = (m + 1) * (m + 1)
        idx = np.arange(self.n_nodes).reshape(m + 1, m + 1)  # [row j][col i]
        self.idx = idx
        self.dirichlet = np.concatenate([idx[0, :], idx[-1, :]])
        free = np.ones(self.n_nodes, dtype=bool)
        free[self.dirichlet] = False
        self.free = free
        # horizontal faces (i,j)-(i+1,j) and vertical faces (i,j)-(i,j+1)
        jj, ii = np.meshgrid(np.arange(m + 1), np.arange(m), indexing="ij")
        self.h_lo = idx[jj, ii].ravel()
        self.h_hi = idx[jj, ii + 1].ravel()
        self.h_w = np.ones(self.h_lo.size)
        jj, ii = np.meshgrid(np.arange(m), np.arange(m + 1), indexing="ij")
        self.v_lo = idx[jj, ii].ravel()
        self.v_hi = idx[jj + 1, ii].ravel()
        # vertical faces in the boundary columns carry half a control volume
        self.v_w = np.where((ii.ravel() == 0) | (ii.ravel() == m), 0.5, 1.0)


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


class EllipticTarget:
    """Bayesian inversion of the diffusion field from noisy interior heads.

    Observations live on the regular 11x11 grid (co-located with solver nodes,
    so the mesh size must be a multiple of 10).  The prior on the expansion
    coefficients is standard normal.
    """

    def __init__(self, kl: KLExpansion, obs: np.ndarray, noise_sd: float = 0.1,
                 mesh_size: int = 20, name: str = "elliptic"):
        if mesh_size % 10 != 0:
            raise ValueError("mesh_size must be a multiple of 10 to host the "
                             "11x11 observation grid")
        self.kl = kl
        self.obs = np.asarray(obs, dtype=float)
        self.noise_sd = float(noise_sd)
        self.mesh_size = mesh_size
        self.dim = kl.n_modes
        self.name = name
        self.grid = _Grid(mesh_size)
        step = mesh_size // 10
        self.obs_idx = self.grid.idx[::step, ::step].ravel()
        if self.obs.shape != (121,):
            raise ValueError(f"expected 121 observations, got {self.obs.shape}")
        # sqrt(lambda_d) phi_d at solver nodes, precomputed once
        self._modes = (np.sqrt(kl.eigenvalues)[:, None]
                       * kl.eigenfunction_values(self.grid.nodes))

    @property
    def data_count(self) -> int:
        return self.obs.size

    @classmethod
    def simulate(cls, rng: np.random.Generator, theta_true: np.ndarray,
                 kl: KLExpansion | None = None, noise_sd: float = 0.1,
                 mesh_size: int = 20, name: str = "elliptic"):
        """Build a target with synthetic noisy observations at theta_true."""
        theta_true = np.asarray(theta_true, dtype=float)
        if kl is None:
            kl = KLExpansion(n_modes=theta_true.size, mesh_size=mesh_size)
        clean = cls(kl=kl, obs=np.zeros(121), noise_sd=noise_sd,
                    mesh_size=mesh_size, name=name)
        _, pred, _ = clean.solve(theta_true, want_sens=False)
        obs = pred + noise_sd * rng.standard_normal(121)
        return cls(kl=kl, obs=obs, noise_sd=noise_sd, mesh_size=mesh_size,
                   name=name)

    # -- forward solve -----------------------------------------------------

    def diffusivity(self, theta, grid: _Grid | None = None):
        grid = grid or self.grid
        if grid is self.grid:
            logc = np.asarray(theta, dtype=float) @ self._modes
        else:
            logc = self.kl.log_field(theta, grid.nodes)
        # clip keeps the stiffness matrix finite for absurd proposals; the
        # prior term already makes such points all but certain rejections
        return np.exp(np.clip(logc, -150.0, 150.0))

    def _assemble(self, c, grid, bc_bottom, bc_top):
        g = grid
        c_h = _harmonic(c[g.h_lo], c[g.h_hi]) * g.h_w
        c_v = _harmonic(c[g.v_lo], c[g.v_hi]) * g.v_w
        rows = np.concatenate([g.h_lo, g.h_lo, g.h_hi, g.h_hi,
                               g.v_lo, g.v_lo, g.v_hi, g.v_hi])
        cols = np.concatenate([g.h_lo, g.h_hi, g.h_hi, g.h_lo,
                               g.v_lo, g.v_hi, g.v_hi, g.v_lo])
        vals = np.concatenate([-c_h, c_h, -c_h, c_h, -c_v, c_v, -c_v, c_v])
        keep = g.free[rows]
        A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                          shape=(g.n_nodes, g.n_nodes)).tocsr()
        d = g.dirichlet
        A += sp.coo_matrix((np.ones(d.size), (d, d)),
                           shape=(g.n_nodes, g.n_nodes)).tocsr()
        b = np.zeros(g.n_nodes)
        b[g.idx[0, :]] = bc_bottom
        b[g.idx[-1, :]] = bc_top
        return A, b, c_h, c_v

    def solve(self, theta, mesh_size: int | None = None, want_sens: bool = True,
              bc_bottom=None, bc_top=None):
        """Solve the PDE; return (field, obs_pred, sens).

        ``sens`` is the (D, 121) sensitivity of predicted observations, or
        None when ``want_sens`` is false.  Custom Dirichlet data may be passed
        as arrays over the edge nodes.
        """
        grid = self.grid if mesh_size in (None, self.mesh_size) else _Grid(mesh_size)
        xs = grid.x1[grid.idx[0, :]]
        bb = xs if bc_bottom is None else np.asarray(bc_bottom, dtype=float)
        bt = 1.0 - xs if bc_top is None else np.asarray(bc_top, dtype=float)
        c = self.diffusivity(theta, grid)
        A, b, c_h, c_v = self._assemble(c, grid, bb, bt)
        try:
            lu = splu(A.tocsc())
            u = lu.solve(b)
        except (RuntimeError, ValueError) as exc:
            raise SolverFailure(f"stiffness solve failed: {exc}") from exc
        if not np.all(np.isfinite(u)):
            raise SolverFailure("solution contains non-finite values")
        step = grid.m // 10
        obs_idx = grid.idx[::step, ::step].ravel() if grid is not self.grid else self.obs_idx
        pred = u[obs_idx]
        if not want_sens:
            return u, pred, None
        sens = np.empty((self.dim, 121))
        if grid is self.grid:
            dlogc = self._modes
        else:
            dlogc = (np.sqrt(self.kl.eigenvalues)[:, None]
                     * self.kl.eigenfunction_values(grid.nodes))
        du_h = u[grid.h_hi] - u[grid.h_lo]
        du_v = u[grid.v_hi] - u[grid.v_lo]
        for d in range(self.dim):
            dc = dlogc[d] * c
            r = self._dA_u(dc, c, grid, du_h, du_v)
            s = lu.solve(-r)
            sens[d] = s[obs_idx]
        return u, pred, sens

    def _dA_u(self, dc, c, grid, du_h, du_v):
        """(dA/dtheta_d) u assembled facewise without forming dA."""
        g = grid
        a, bq = c[g.h_lo], c[g.h_hi]
        dch = 2.0 * (dc[g.h_lo] * bq**2 + dc[g.h_hi] * a**2) / (a + bq)**2 * g.h_w
        a, bq = c[g.v_lo], c[g.v_hi]
        dcv = 2.0 * (dc[g.v_lo] * bq**2 + dc[g.v_hi] * a**2) / (a + bq)**2 * g.v_w
        r = np.zeros(g.n_nodes)
        # row P of A@u gets +c_face*(u_Q - u_P), so its theta-derivative is
        # +dc_face*(u_Q - u_P); row Q the negative
        np.add.at(r, g.h_lo, dch * du_h)
        np.add.at(r, g.h_hi, -dch * du_h)
        np.add.at(r, g.v_lo, dcv * du_v)
        np.add.at(r, g.v_hi, -dcv * du_v)
        r[g.dirichlet] = 0.0
        return r

    # -- potential interface ------------------------------------------------

    def potential(self, theta) -> float:
        _, pred, _ = self.solve(theta, want_sens=False)
        theta = np.asarray(theta, dtype=float)
        resid = self.obs - pred
        return float((resid**2).sum() / (2 * self.noise_sd**2)
                     + 0.5 * (theta**2).sum())

    def potential_per_datum(self, theta):
        _, pred, _ = self.solve(theta, want_sens=False)
        theta = np.asarray(theta, dtype=float)
        values = (self.obs - pred)**2 / (2 * self.noise_sd**2)
        return float(values.sum() + 0.5 * (theta**2).sum()), values

    def potential_grad(self, theta):
        u, grad, _, _ = self.per_datum(theta)
        return u, grad

    def per_datum(self, theta):
        theta = np.asarray(theta, dtype=float)
        _, pred, sens = self.solve(theta)
        resid = self.obs - pred
        values = resid**2 / (2 * self.noise_sd**2)
        DU = sens * (-resid)[None, :] / self.noise_sd**2
        grad = DU.sum(axis=1) + theta
        u = float(values.sum() + 0.5 * (theta**2).sum())
        return u, grad, values, DU

    def fisher(self, theta) -> np.ndarray:
        """Gauss-Newton Fisher information plus the unit prior precision."""
        _, _, sens = self.solve(theta)
        fi = sens @ sens.T / self.noise_sd**2
        fi[np.diag_indices_from(fi)] += 1.0
        return fi

    def prior_precision(self) -> np.ndarray:
        return np.eye(self.dim)
