"""Fourier feature identities: unit diagonal, kernel convergence, Woodbury, logdet."""

import numpy as np
import pytest

from dgm import autodiff as ad
from dgm import datasets, nets, rff, smoother, systems
from dgm.nets import Model


def _phi_numpy(spec, z):
    proj = z @ spec.frequencies.T
    return np.sqrt(2.0 / spec.count) * np.concatenate([np.cos(proj), np.sin(proj)], axis=1).T


def test_feature_diagonal_is_exactly_one():
    spec = rff.sample_fourier_features(np.ones(3), 16, seed=0)
    rng = np.random.default_rng(1)
    z = rng.normal(size=(10, 3))
    phi = _phi_numpy(spec, z)
    assert np.allclose(np.sum(phi * phi, axis=0), 1.0, atol=1e-14)


def test_feature_gram_converges_to_kernel():
    ls = np.ones(3)
    spec = rff.sample_fourier_features(ls, 2048, seed=4)
    rng = np.random.default_rng(3)
    z = rng.normal(size=(20, 3))
    phi = _phi_numpy(spec, z)
    approx = phi.T @ phi
    exact = smoother.kernel_matrix(z, z, ls)
    assert np.max(np.abs(approx - exact)) < 0.05
    # quadrupling the feature count roughly halves the Monte-Carlo error
    big = rff.sample_fourier_features(ls, 8192, seed=4)
    phi_big = _phi_numpy(big, z)
    assert np.max(np.abs(phi_big.T @ phi_big - exact)) < np.max(np.abs(approx - exact))


def test_feature_sampling_deterministic():
    a = rff.sample_fourier_features(np.ones(3), 8, seed=5)
    b = rff.sample_fourier_features(np.ones(3), 8, seed=5)
    assert np.array_equal(a.frequencies, b.frequencies)
    c = rff.sample_fourier_features(np.ones(3), 8, seed=6)
    assert not np.array_equal(c.frequencies, a.frequencies)


def test_feature_spec_validation():
    with pytest.raises(ValueError):
        rff.sample_fourier_features(np.ones(3), 7, seed=0)
    with pytest.raises(ValueError):
        rff.sample_fourier_features(np.array([1.0, -1.0, 1.0]), 8, seed=0)


def test_feature_matrix_time_derivative():
    model = Model.default(2)
    params = nets.init_model_params(model, seed=0)
    spec = rff.sample_fourier_features(np.ones(3), 32, seed=1)
    x0 = np.array([[1.0, 2.0]] * 3)
    t = np.array([0.2, 0.9, 1.7])
    phi, phi_dot = rff.feature_matrices(spec, model, params, (x0, t), dim=0)
    assert phi.shape == (32, 3) and phi_dot.shape == (32, 3)
    eps = 1e-5
    up, _ = rff.feature_matrices(spec, model, params, (x0, t + eps), dim=0)
    dn, _ = rff.feature_matrices(spec, model, params, (x0, t - eps), dim=0)
    fd = (up - dn) / (2 * eps)
    assert np.max(np.abs(phi_dot - fd) / np.maximum(1.0, np.abs(fd))) < 1e-5
    # second Gram form is positive semidefinite on the diagonal
    assert np.all(np.einsum("fi,fi->i", phi_dot, phi_dot) >= 0.0)


def test_feature_matrix_constant_features_zero_derivative():
    model = Model.default(2)
    params = nets.init_model_params(model, seed=2)
    named = ad.unflatten_params(params)
    named["smoother/core/W0"] = np.zeros_like(named["smoother/core/W0"])
    frozen = ad.flatten_params(named)
    spec = rff.sample_fourier_features(np.ones(3), 8, seed=3)
    _, phi_dot = rff.feature_matrices(spec, model, frozen, (np.ones((4, 2)), np.linspace(0, 1, 4)), dim=1)
    assert np.array_equal(phi_dot, np.zeros((8, 4)))


def test_woodbury_zero_features():
    v = np.array([1.0, -2.0, 3.0])
    out = rff.woodbury_solve(np.zeros((2, 3)), 0.5, v)
    assert np.allclose(out, v / 0.5)


def test_woodbury_matches_dense():
    rng = np.random.default_rng(4)
    phi = rng.normal(size=(3, 5))
    v = rng.normal(size=5)
    sigma_sq = 0.3
    dense = np.linalg.solve(phi.T @ phi + sigma_sq * np.eye(5), v)
    out = rff.woodbury_solve(phi, sigma_sq, v)
    assert np.max(np.abs(out - dense)) / np.max(np.abs(dense)) < 1e-10
    # residual check
    recon = (phi.T @ phi + sigma_sq * np.eye(5)) @ out
    assert np.max(np.abs(recon - v)) < 1e-8


def test_woodbury_rejects_bad_sigma():
    with pytest.raises(ValueError):
        rff.woodbury_solve(np.zeros((2, 3)), 0.0, np.zeros(3))


def test_logdet_zero_features():
    val = rff.approx_logdet(np.zeros((2, 6)), 0.7)
    assert val == pytest.approx(6 * np.log(0.7))


def test_logdet_matches_dense():
    rng = np.random.default_rng(5)
    phi = rng.normal(size=(3, 6))
    sigma_sq = 0.9
    dense = np.linalg.slogdet(phi.T @ phi + sigma_sq * np.eye(6))[1]
    assert abs(rff.approx_logdet(phi, sigma_sq) - dense) / abs(dense) < 1e-10


def test_logdet_orthonormal_rows():
    c = 1.7
    q, _ = np.linalg.qr(np.random.default_rng(6).normal(size=(6, 3)))
    phi = c * q.T  # (3, 6), rows orthonormal scaled by c
    val = rff.approx_logdet(phi, 1.0)
    assert val == pytest.approx(3 * np.log(1.0 + c**2))


def test_exact_low_rank_factorization_matches_dense_conditional():
    """When K really is Phi^T Phi, the Woodbury path equals the dense path."""
    rng = np.random.default_rng(7)
    f, n = 4, 9
    phi = rng.normal(size=(f, n)) * 0.5
    phidot = rng.normal(size=(f, n)) * 0.3
    sigma_sq = 0.2
    resid = rng.normal(size=n)
    kmat = phi.T @ phi
    kdot = phidot.T @ phi
    kddot_diag = np.einsum("fi,fi->i", phidot, phidot)
    exact_mean, exact_var = smoother.derivative_conditional(
        kmat, kdot, kddot_diag, sigma_sq, resid, np.zeros(n)
    )
    sol = rff.woodbury_solve(phi, sigma_sq, resid)
    approx_mean = kdot @ sol
    g = phi @ phi.T + sigma_sq * np.eye(f)
    approx_var = sigma_sq * np.einsum("fi,fi->i", phidot, np.linalg.solve(g, phidot))
    assert np.max(np.abs(approx_mean - exact_mean)) < 1e-8
    assert np.max(np.abs(approx_var - exact_var)) < 1e-8

    # the factorized logdet identity on the same system
    dense_logdet = np.linalg.slogdet(kmat + sigma_sq * np.eye(n))[1]
    assert abs(rff.approx_logdet(phi, sigma_sq) - dense_logdet) < 1e-8


def test_exact_factorization_data_nll_agreement():
    """Woodbury quad + logdet identity reproduce the dense NLL to < 1e-6
    when the kernel is exactly Phi^T Phi."""
    rng = np.random.default_rng(8)
    f, n = 5, 12
    phi = rng.normal(size=(f, n)) * 0.6
    sigma_sq = 0.25
    resid = rng.normal(size=n)
    a = phi.T @ phi + sigma_sq * np.eye(n)
    dense_nll = 0.5 * resid @ np.linalg.solve(a, resid) + 0.5 * np.linalg.slogdet(a)[1]
    approx_nll = 0.5 * resid @ rff.woodbury_solve(phi, sigma_sq, resid) + 0.5 * rff.approx_logdet(
        phi, sigma_sq
    )
    assert abs(approx_nll - dense_nll) < 1e-6


def _lv_instance(n_obs=20):
    times = tuple(np.linspace(0.0, 4.0, n_obs))
    spec = datasets.DatasetSpec(systems.lotka_volterra(), ((1.0, 2.0),), (times,), seed=0)
    ds = datasets.generate_dataset(spec)
    model = Model.default(2)
    params = nets.init_model_params(model, seed=0)
    return model, params, ds


def test_posterior_error_decreases_with_more_features():
    model, params, ds = _lv_instance()
    data = smoother.prepare_data(ds)
    queries = (data.x0_rows, data.t_rows + 0.07)
    exact = smoother.derivative_posterior(model, params, ds, queries)
    errors = []
    for count in (128, 1024):
        # bundles are sampled at unit lengthscale; the model's learned
        # lengthscales are applied inside the graph
        bundle = [rff.sample_fourier_features(np.ones(3), count, [9, dim]) for dim in range(2)]
        approx = rff.approx_derivative_posterior(model, params, ds, queries, bundle)
        errors.append(np.median(np.abs(approx.means - exact.means)))
    assert errors[1] < errors[0]


def test_rff_nll_gradient_fd():
    model, params, ds = _lv_instance(n_obs=5)
    data = smoother.prepare_data(ds)
    bundle = rff.sample_feature_bundle(2, 8, seed=11)
    from dgm import matching

    def loss(view):
        return matching.build_objective(
            model, view, data, (data.x0_rows, data.t_rows), lam=0.8, rff_spec=bundle
        )["total"]

    assert ad.finite_diff_check(loss, params, eps=1e-5) < 1e-4


def test_rff_state_posterior_prior_reversion():
    model, params, ds = _lv_instance(n_obs=6)
    bundle = rff.sample_feature_bundle(2, 64, seed=13)
    named = ad.unflatten_params(params)
    named["smoother/log_noise"] = np.log(np.array([0.1, 0.1]))
    frozen = ad.flatten_params(named)
    post = rff.approx_state_posterior(model, frozen, ds, (ds.x0s[:1], np.array([0.5])), bundle)
    assert post.variances.shape == (1, 2)
    assert np.all(post.variances >= 0.0)
    assert np.all(post.variances <= 1.0 + 1e-8)
