import numpy as np
import pytest

from gpgmc import kernels
from gpgmc.errors import ShapeMismatch


def test_basis_order0_at_origin():
    h = kernels.basis(np.zeros((1, 2)), 0)
    assert h.shape == (1, 5)
    np.testing.assert_array_equal(h[0], [1, 0, 0, 0, 0])


def test_basis_order1_rows():
    dh = kernels.basis(np.array([[1.0, 2.0]]), 1)
    # row for d/dtheta_1 at (1, 2)
    np.testing.assert_array_equal(dh[0], [0, 1, 0, 2, 0])
    np.testing.assert_array_equal(dh[1], [0, 0, 1, 0, 4])


def test_basis_order2_constant():
    d2h = kernels.basis(np.array([[3.0, -1.0]]), 2)
    assert d2h.shape == (4, 5)
    np.testing.assert_array_equal(d2h[0], [0, 0, 0, 2, 0])   # d2/dt1 dt1
    np.testing.assert_array_equal(d2h[1], [0, 0, 0, 0, 0])   # cross term
    np.testing.assert_array_equal(d2h[3], [0, 0, 0, 0, 2])   # d2/dt2 dt2


def test_basis_order1_is_derivative_of_order0():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(3, 4))
    h = 1e-6
    dh = kernels.basis(pts, 1)
    for k in range(4):
        shifted_p = pts.copy()
        shifted_m = pts.copy()
        shifted_p[:, k] += h
        shifted_m[:, k] -= h
        fd = (kernels.basis(shifted_p, 0) - kernels.basis(shifted_m, 0)) / (2 * h)
        np.testing.assert_allclose(dh[k * 3:(k + 1) * 3], fd, atol=1e-8)


def test_kernel_identical_points():
    rho = np.array([0.7, 1.3])
    th = np.array([[0.5, -0.2]])
    assert kernels.corr_block(th, th, 0, 0, rho)[0, 0] == 1.0
    np.testing.assert_array_equal(kernels.corr_block(th, th, 1, 0, rho), 0.0)


@pytest.mark.parametrize("dim", [2, 4])
def test_all_blocks_match_finite_differences(dim):
    """Every derivative block is the coordinate derivative of a lower block."""
    rng = np.random.default_rng(dim)
    rho = rng.uniform(0.3, 1.5, dim)
    A = rng.normal(size=(2, dim))
    B = rng.normal(size=(3, dim))
    m, n = 2, 3
    h = 1e-5

    def fd_A(block_fn, k):
        out = []
        for i in range(m):
            Ap, Am = A.copy(), A.copy()
            Ap[i, k] += h
            Am[i, k] -= h
            out.append((block_fn(Ap)[_rows(i)] - block_fn(Am)[_rows(i)]) / (2 * h))
        return out

    # (1,0) rows are d/dA_k of (0,0)
    K10 = kernels.corr_block(A, B, 1, 0, rho)
    for k in range(dim):
        for i in range(m):
            Ap, Am = A.copy(), A.copy()
            Ap[i, k] += h
            Am[i, k] -= h
            fd = (kernels.corr_block(Ap, B, 0, 0, rho)[i]
                  - kernels.corr_block(Am, B, 0, 0, rho)[i]) / (2 * h)
            np.testing.assert_allclose(K10[k * m + i], fd, rtol=1e-5, atol=1e-8)

    # (1,1) columns are d/dB_l of (1,0)
    K11 = kernels.corr_block(A, B, 1, 1, rho)
    for l in range(dim):
        for j in range(n):
            Bp, Bm = B.copy(), B.copy()
            Bp[j, l] += h
            Bm[j, l] -= h
            fd = (kernels.corr_block(A, Bp, 1, 0, rho)[:, j]
                  - kernels.corr_block(A, Bm, 1, 0, rho)[:, j]) / (2 * h)
            np.testing.assert_allclose(K11[:, l * n + j], fd, rtol=1e-5, atol=1e-8)

    # (2,0) rows are d/dA_k of (1,0)
    K20 = kernels.corr_block(A, B, 2, 0, rho)
    for k in range(dim):
        for l in range(dim):
            for i in range(m):
                Ap, Am = A.copy(), A.copy()
                Ap[i, k] += h
                Am[i, k] -= h
                fd = (kernels.corr_block(Ap, B, 1, 0, rho)[l * m + i]
                      - kernels.corr_block(Am, B, 1, 0, rho)[l * m + i]) / (2 * h)
                np.testing.assert_allclose(K20[(k * dim + l) * m + i], fd,
                                           rtol=1e-5, atol=1e-8)

    # (2,1) rows are d/dA_k of (1,1), the third-order block
    K21 = kernels.corr_block(A, B, 2, 1, rho)
    for k in range(dim):
        for l in range(dim):
            for i in range(m):
                Ap, Am = A.copy(), A.copy()
                Ap[i, k] += h
                Am[i, k] -= h
                fd = (kernels.corr_block(Ap, B, 1, 1, rho)[l * m + i]
                      - kernels.corr_block(Am, B, 1, 1, rho)[l * m + i]) / (2 * h)
                np.testing.assert_allclose(K21[(k * dim + l) * m + i], fd,
                                           rtol=1e-5, atol=1e-7)


def _rows(i):
    return i


def test_transpose_duality():
    rng = np.random.default_rng(3)
    rho = rng.uniform(0.5, 1.2, 3)
    A = rng.normal(size=(2, 3))
    B = rng.normal(size=(4, 3))
    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        left = kernels.corr_block(A, B, a, b, rho)
        right = kernels.corr_block(B, A, b, a, rho).T
        np.testing.assert_allclose(left, right, atol=1e-14)


@pytest.mark.parametrize("orders", [(0, 0), (1, 0), (0, 1), (1, 1)])
def test_rho_gradient_matches_fd(orders):
    rng = np.random.default_rng(7)
    dim = 3
    rho = rng.uniform(0.4, 1.4, dim)
    A = rng.normal(size=(2, dim))
    B = rng.normal(size=(3, dim))
    grad = kernels.corr_block_rho_grad(A, B, *orders, rho)
    h = 1e-6
    for d in range(dim):
        rp, rm = rho.copy(), rho.copy()
        rp[d] += h
        rm[d] -= h
        fd = (kernels.corr_block(A, B, *orders, rp)
              - kernels.corr_block(A, B, *orders, rm)) / (2 * h)
        np.testing.assert_allclose(grad[d], fd, atol=1e-8)


@pytest.mark.parametrize("orders", [(0, 0), (1, 0), (1, 1)])
def test_rho_hessian_matches_fd(orders):
    rng = np.random.default_rng(8)
    dim = 2
    rho = rng.uniform(0.4, 1.4, dim)
    A = rng.normal(size=(3, dim))
    h = 1e-5
    for d in range(dim):
        for e in range(dim):
            hess = kernels.corr_block_rho_hess(A, A, *orders, rho, d, e)
            rp, rm = rho.copy(), rho.copy()
            rp[e] += h
            rm[e] -= h
            fd = (kernels.corr_block_rho_grad(A, A, *orders, rp)[d]
                  - kernels.corr_block_rho_grad(A, A, *orders, rm)[d]) / (2 * h)
            np.testing.assert_allclose(hess, fd, atol=1e-7)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        kernels.corr_block(np.zeros((2, 2)), np.zeros((2, 3)), 0, 0, np.ones(2))
    with pytest.raises(ShapeMismatch):
        kernels.corr_block(np.zeros((2, 2)), np.zeros((2, 2)), 0, 0, np.ones(3))
