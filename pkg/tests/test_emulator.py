import numpy as np
import pytest

from conftest import SmoothTestFunction, spread_points
from gpgmc import kernels
from gpgmc.emulator import (DesignSet, Emulator, Hyperparameters, build_emulator,
                            load_design, save_design)
from gpgmc.errors import IllConditioned, MissingPerDatum, TooFewPoints


def make_emulator(seed=0, dim=2, n=12, gradients=True, per_datum=True,
                  nugget=1e-8):
    rng = np.random.default_rng(seed)
    fn = SmoothTestFunction(rng, dim)
    pts = spread_points(rng, n, dim)
    design = fn.design(pts, gradients=gradients, per_datum=per_datum)
    hyper = Hyperparameters(rho=rng.uniform(0.5, 1.2, dim), nugget=nugget)
    return fn, Emulator(design, hyper)


@pytest.mark.parametrize("gradients", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_projection_identities(seed, gradients):
    _, em = make_emulator(seed=seed, gradients=gradients)
    q = em.q
    assert np.abs(em.P @ em.H - np.eye(q)).max() < 1e-8
    assert np.abs(em.Q @ em.H).max() < 1e-8
    assert np.abs(em.Q - em.Q.T).max() < 1e-10
    assert np.linalg.eigvalsh(em.Q).min() > -1e-10


@pytest.mark.parametrize("gradients", [False, True])
def test_coefficients_match_gls_oracle(gradients):
    _, em = make_emulator(seed=4, gradients=gradients)
    design, hyper = em.design, em.hyper
    C = kernels.tilde_corr(design.points, hyper.rho, gradients)
    C[np.diag_indices_from(C)] += hyper.nugget
    H = kernels.tilde_basis(design.points, gradients)
    u = design.data_vector()
    Ci = np.linalg.inv(C)
    beta = np.linalg.solve(H.T @ Ci @ H, H.T @ Ci @ u)
    np.testing.assert_allclose(em.beta_hat, beta, rtol=1e-8, atol=1e-10)


def test_interpolates_design_points():
    fn, em = make_emulator(seed=1, nugget=0.0)
    pred = em.predict(em.design.points[:4], 0, with_cov=True)
    np.testing.assert_allclose(pred.mean, em.design.potentials[:4], atol=1e-8)
    assert np.diagonal(pred.cov).max() <= 1e-10


def test_quadratic_data_is_reproduced_exactly():
    rng = np.random.default_rng(5)
    a, b, c = 0.3, np.array([0.5, -1.0]), np.array([1.5, 0.7])
    pts = rng.normal(size=(10, 2)) * 2
    pots = a + pts @ b + pts**2 @ c
    grads = b + 2 * c * pts
    design = DesignSet(points=pts, potentials=pots, gradients=grads)
    em = Emulator(design, Hyperparameters(rho=np.array([0.5, 0.5]), nugget=0.0))
    assert em.degenerate_sigma2
    far = np.array([[6.0, -8.0]])
    assert abs(em.predict(far, 0).mean[0] - (a + far[0] @ b + far[0]**2 @ c)) < 1e-8
    np.testing.assert_allclose(em.predict(far, 1).mean[0], b + 2 * c * far[0],
                               atol=1e-8)
    np.testing.assert_allclose(em.predict(far, 2).mean[0], np.diag(2 * c),
                               atol=1e-8)


@pytest.mark.parametrize("gradients", [False, True])
def test_gradient_prediction_consistent_with_value_surface(gradients):
    _, em = make_emulator(seed=2, gradients=gradients)
    rng = np.random.default_rng(11)
    th = rng.normal(size=(1, 2)) * 0.6
    g = em.predict(th, 1).mean[0]
    h = 1e-6
    fd = np.array([
        (em.predict(th + h * np.eye(2)[k], 0).mean[0]
         - em.predict(th - h * np.eye(2)[k], 0).mean[0]) / (2 * h)
        for k in range(2)])
    scale = max(1.0, np.abs(fd).max())
    assert np.abs(g - fd).max() / scale < 1e-4


def test_hessian_prediction_consistent_with_gradient_surface():
    _, em = make_emulator(seed=3, gradients=False)
    th = np.array([[0.4, -0.3]])
    hess = em.predict(th, 2).mean[0]
    h = 1e-6
    fd = np.stack([
        (em.predict(th + h * np.eye(2)[k], 1).mean[0]
         - em.predict(th - h * np.eye(2)[k], 1).mean[0]) / (2 * h)
        for k in range(2)])
    scale = max(1.0, np.abs(fd).max())
    assert np.abs(hess - fd).max() / scale < 1e-4


def test_derivative_information_reduces_predictive_variance():
    """Conditioning on gradients can only shrink the pointwise variance."""
    rng = np.random.default_rng(6)
    fn = SmoothTestFunction(rng, 2)
    pts = spread_points(rng, 12, 2)
    hyper = Hyperparameters(rho=np.array([0.8, 1.2]), nugget=1e-10)
    em0 = Emulator(fn.design(pts, gradients=False), hyper)
    em1 = Emulator(fn.design(pts, gradients=True), hyper)
    test = rng.normal(size=(50, 2))
    v0 = em0.predictive_variance(test, 0, scaled=False)
    v1 = em1.predictive_variance(test, 0, scaled=False)
    assert (v0 - v1).min() > -1e-10


@pytest.mark.parametrize("order", [0, 1])
def test_design_nesting_reduces_predictive_variance(order):
    rng = np.random.default_rng(7)
    fn = SmoothTestFunction(rng, 2)
    pts = spread_points(rng, 14, 2)
    hyper = Hyperparameters(rho=np.array([0.8, 1.2]), nugget=1e-10)
    big = Emulator(fn.design(pts, gradients=False), hyper)
    small = Emulator(fn.design(pts, gradients=False).subset(np.arange(9)), hyper)
    test = rng.normal(size=(50, 2))
    v_small = small.predictive_variance(test, order, scaled=False)
    v_big = big.predictive_variance(test, order, scaled=False)
    assert (v_small - v_big).min() > -1e-10


def test_prediction_mean_is_linear_in_data():
    _, em = make_emulator(seed=8)
    doubled = DesignSet(points=em.design.points,
                        potentials=2.0 * em.design.potentials,
                        gradients=2.0 * em.design.gradients,
                        per_datum=em.design.per_datum,
                        per_datum_grads=em.design.per_datum_grads)
    em2 = Emulator(doubled, em.hyper)
    th = np.array([[0.3, 0.1], [-0.5, 0.9]])
    np.testing.assert_allclose(em2.predict(th, 0).mean,
                               2.0 * em.predict(th, 0).mean, rtol=1e-12)
    np.testing.assert_allclose(em2.predict(th, 1).mean,
                               2.0 * em.predict(th, 1).mean, rtol=1e-12)


class TestEmpiricalFisher:
    def test_matches_columnwise_oracle(self, smooth_fn):
        rng = np.random.default_rng(9)
        pts = spread_points(rng, 12, 2)
        design = smooth_fn.design(pts)
        em = Emulator(design, Hyperparameters(rho=np.array([0.9, 1.1])))
        th = np.array([[0.25, -0.4]])
        got = em.predict_efi(th)[0]
        # oracle: predict each per-datum column's gradient, then assemble
        pd = design.per_datum_matrix()
        DU = em.linear_map(th, 1) @ pd
        centered = DU - DU.mean(axis=1, keepdims=True)
        oracle = centered @ centered.T
        np.testing.assert_allclose(got, oracle, rtol=1e-8, atol=1e-12)

    def test_symmetric(self, smooth_fn):
        rng = np.random.default_rng(10)
        pts = spread_points(rng, 10, 2)
        em = Emulator(smooth_fn.design(pts), Hyperparameters(rho=np.ones(2)))
        efi = em.predict_efi(rng.normal(size=(5, 2)))
        assert np.abs(efi - efi.transpose(0, 2, 1)).max() < 1e-12

    def test_single_datum_gives_zero(self):
        rng = np.random.default_rng(12)
        pts = spread_points(rng, 10, 2)
        pots = np.sin(pts[:, 0]) + pts[:, 1]**2
        design = DesignSet(points=pts, potentials=pots,
                           per_datum=pots[:, None])
        em = Emulator(design, Hyperparameters(rho=np.ones(2)))
        efi = em.predict_efi(np.zeros((1, 2)))
        np.testing.assert_allclose(efi, 0.0, atol=1e-20)

    def test_missing_per_datum(self):
        _, em = make_emulator(seed=13, per_datum=False)
        with pytest.raises(MissingPerDatum):
            em.predict_efi(np.zeros((1, 2)))


class TestConnection:
    def test_exact_symmetry_in_first_pair(self, smooth_fn):
        rng = np.random.default_rng(14)
        pts = spread_points(rng, 12, 2)
        em = Emulator(smooth_fn.design(pts), Hyperparameters(rho=np.ones(2)))
        gamma = em.predict_christoffel(rng.normal(size=(4, 2)))
        assert np.abs(gamma - gamma.transpose(0, 2, 1, 3)).max() == 0.0

    def test_matches_columnwise_oracle(self, smooth_fn):
        rng = np.random.default_rng(15)
        pts = spread_points(rng, 12, 2)
        design = smooth_fn.design(pts)
        em = Emulator(design, Hyperparameters(rho=np.array([0.7, 1.3])))
        th = np.array([[0.2, 0.5]])
        got = em.predict_christoffel(th)[0]
        pd = design.per_datum_matrix()
        ndata = pd.shape[1]
        DU = em.linear_map(th, 1) @ pd
        D2U = (em.linear_map(th, 2) @ pd).reshape(2, 2, ndata)
        J = np.eye(ndata) - np.ones((ndata, ndata)) / ndata
        oracle = np.einsum("abn,nm,cm->abc", D2U, J, DU)
        np.testing.assert_allclose(got, oracle, rtol=1e-8, atol=1e-12)

    def test_single_datum_gives_zero(self):
        rng = np.random.default_rng(16)
        pts = spread_points(rng, 10, 2)
        pots = np.cos(pts[:, 0] + pts[:, 1])
        design = DesignSet(points=pts, potentials=pots, per_datum=pots[:, None])
        em = Emulator(design, Hyperparameters(rho=np.ones(2)))
        np.testing.assert_allclose(em.predict_christoffel(np.zeros((1, 2))),
                                   0.0, atol=1e-20)


def test_too_few_points():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    design = DesignSet(points=pts, potentials=np.zeros(3))
    with pytest.raises(TooFewPoints):
        Emulator(design, Hyperparameters(rho=np.ones(2)))


def test_nugget_escalation_on_near_duplicate_points():
    rng = np.random.default_rng(17)
    base = spread_points(rng, 10, 2)
    # a pair of nearly coincident points makes the kernel matrix singular
    pts = np.vstack([base, base[0] + 1e-13])
    design = DesignSet(points=pts, potentials=rng.normal(size=11))
    hyper = Hyperparameters(rho=np.ones(2), nugget=0.0)
    with pytest.raises(IllConditioned):
        build_emulator(design, hyper, auto_nugget=False)
    em = build_emulator(design, hyper, auto_nugget=True)
    assert em.hyper.nugget > 0


def test_design_json_roundtrip_is_bit_stable(tmp_path, smooth_fn):
    rng = np.random.default_rng(18)
    pts = spread_points(rng, 8, 2)
    design = smooth_fn.design(pts)
    hyper = Hyperparameters(rho=np.array([0.123456789012345, 1.9876543210987]),
                            nugget=1e-8)
    path = tmp_path / "design.json"
    save_design(path, design, hyper)
    loaded, hyper2 = load_design(path)
    assert np.array_equal(loaded.points, design.points)
    assert np.array_equal(loaded.potentials, design.potentials)
    assert np.array_equal(loaded.gradients, design.gradients)
    assert np.array_equal(loaded.per_datum_matrix(), design.per_datum_matrix())
    assert np.array_equal(hyper2.rho, hyper.rho)
    assert hyper2.nugget == hyper.nugget
    # second save is byte-identical
    path2 = tmp_path / "design2.json"
    save_design(path2, loaded, hyper2)
    assert path.read_bytes() == path2.read_bytes().replace(
        b"design2.per_datum.csv", b"design.per_datum.csv")
