"""Linear-time GP path via random Fourier features.

The unit-variance RBF kernel over features z is factorized as
K ~ Phi^T Phi with paired cos/sin rows,

    phi(z) = sqrt(2/F) [cos(w_1.z), sin(w_1.z), ..., cos(w_{F/2}.z), sin(w_{F/2}.z)],

frequencies w_j ~ N(0, diag(1/ls^2)).  The pairing makes phi(z).phi(z) = 1
exactly, matching the fixed unit signal variance.  All solves and the logdet
go through the F x F matrix G = Phi Phi^T + sigma^2 I (Woodbury and the
matching eigenvalue identity), giving O(N F^2 + F^3) posteriors.  Frequencies
are sampled once per run and held fixed; lengthscales are fixed to one and
absorbed by the feature heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rng
from . import autodiff as ad
from . import nets, smoother
from .autodiff import ConditioningError, ParamVector, Tensor
from .datasets import Dataset
from .nets import Model
from .smoother import BASE_JITTER, DerivativePosterior, PreparedData, StatePosterior

__all__ = [
    "FourierFeatureSpec",
    "sample_fourier_features",
    "sample_feature_bundle",
    "feature_matrices",
    "woodbury_solve",
    "approx_logdet",
    "approx_data_nll",
    "approx_derivative_posterior",
    "approx_state_posterior",
    "RffGraph",
]


@dataclass(frozen=True)
class FourierFeatureSpec:
    frequencies: np.ndarray  # (F/2, d), already scaled by 1 / lengthscale
    count: int               # F, even

    def __post_init__(self):
        if self.count < 2 or self.count % 2 != 0:
            raise ValueError("feature count must be even and >= 2")
        if self.frequencies.shape[0] != self.count // 2:
            raise ValueError("need F/2 frequency vectors")


def sample_fourier_features(lengthscales: np.ndarray, count: int, seed) -> FourierFeatureSpec:
    """Standard-normal frequencies scaled per coordinate by 1/lengthscale."""
    ls = np.asarray(lengthscales, dtype=np.float64)
    if np.any(ls <= 0):
        raise ValueError("lengthscales must be positive")
    if count < 2 or count % 2 != 0:
        raise ValueError("feature count must be even and >= 2")
    words = (seed,) if np.isscalar(seed) else tuple(seed)
    rng = _rng.stream(*words)
    freqs = rng.standard_normal((count // 2, ls.size)) / ls
    return FourierFeatureSpec(freqs, count)


def sample_feature_bundle(state_dim: int, count: int, seed: int) -> list:
    """One independent frequency draw per state dimension (lengthscales = 1)."""
    return [
        sample_fourier_features(np.ones(nets.FEATURE_DIM), count, [seed, 0xF0F0 + dim])
        for dim in range(state_dim)
    ]


def _phi_graph(spec: FourierFeatureSpec, z: Tensor, z_dot: Tensor | None) -> tuple:
    """Row-major feature matrices: Phi rows are phi(z_i); optionally dPhi/dt."""
    omega_t = ad.constant(spec.frequencies.T)  # (d, F/2)
    scale = np.sqrt(2.0 / spec.count)
    proj = z @ omega_t
    phi = scale * ad.concatenate([ad.cos(proj), ad.sin(proj)], axis=1)
    if z_dot is None:
        return phi, None
    proj_dot = z_dot @ omega_t
    phi_dot = scale * ad.concatenate(
        [-ad.sin(proj) * proj_dot, ad.cos(proj) * proj_dot], axis=1
    )
    return phi, phi_dot


def feature_matrices(spec: FourierFeatureSpec, model: Model, params: ParamVector, points, dim: int):
    """(Phi, Phi_dot) as (F, N) arrays for one state dimension's features."""
    weights = {name: ad.constant(params.get(name)) for name in params.names}
    x0_rows, t_rows = smoother._support_arrays(points)
    fwd = nets.smoother_forward(model, weights, x0_rows, t_rows)
    phi, phi_dot = _phi_graph(spec, fwd.feats[dim], fwd.feats_dot[dim])
    return phi.value.T, phi_dot.value.T


# ---------------------------------------------------------------------------
# numpy identities (dense-oracle testable)
# ---------------------------------------------------------------------------

def _factor_small(phi_fn: np.ndarray, sigma_sq: float) -> np.ndarray:
    g = phi_fn @ phi_fn.T + sigma_sq * np.eye(phi_fn.shape[0])
    try:
        return np.linalg.cholesky(g)
    except np.linalg.LinAlgError as err:
        raise ConditioningError("F x F system not positive definite") from err


def woodbury_solve(phi: np.ndarray, sigma_sq: float, v: np.ndarray) -> np.ndarray:
    """(Phi^T Phi + sigma^2 I)^-1 v without forming the N x N matrix."""
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    lo = _factor_small(phi, sigma_sq)
    pv = phi @ v
    inner = np.linalg.solve(lo.T, np.linalg.solve(lo, pv))
    return (v - phi.T @ inner) / sigma_sq


def approx_logdet(phi: np.ndarray, sigma_sq: float, n: int | None = None) -> float:
    """logdet(Phi^T Phi + sigma^2 I) via the F x F system: the nonzero
    eigenvalues of Phi^T Phi and Phi Phi^T coincide."""
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    f, n_pts = phi.shape
    if n is None:
        n = n_pts
    lo = _factor_small(phi, sigma_sq)
    return 2.0 * float(np.log(np.diagonal(lo)).sum()) + (n - f) * float(np.log(sigma_sq))


# ---------------------------------------------------------------------------
# tensor graph, drop-in for SmootherGraph
# ---------------------------------------------------------------------------

class RffGraph:
    """Fourier-feature counterpart of :class:`smoother.SmootherGraph`.

    Presents the same interface (nll / block / derivative_terms /
    state_mean_from_cross / state_terms) so the objective builder can swap it
    in; every solve happens on the F x F matrix G = Phi Phi^T + s^2 I.

    The bundle's frequencies are expected to be sampled at unit lengthscale;
    the model's learned lengthscales enter differentiably by scaling the
    features before projection (equivalent to frequencies ~ N(0, 1/ls^2)).
    """

    def __init__(self, model: Model, weights, data: PreparedData, bundle):
        self.model = model
        self.weights = weights
        self.data = data
        self.bundle = bundle
        self.k = model.state_dim
        self.n = data.t_rows.size
        self.fwd = nets.smoother_forward(model, weights, data.x0_rows, data.t_rows)
        self.out_scale = model.output_scale_array
        self._y_norm = data.y / self.out_scale
        log_noise = weights["smoother/log_noise"]
        if not isinstance(log_noise, Tensor):
            log_noise = ad.constant(log_noise)
        ls = weights["smoother/log_lengthscales"]
        if not isinstance(ls, Tensor):
            ls = ad.constant(ls)
        self.inv_ls = [ad.exp(-ls[dim]) for dim in range(self.k)]
        self.noise_var = [ad.exp(2.0 * log_noise[dim]) + BASE_JITTER for dim in range(self.k)]
        self._phi: dict = {}
        self._chol: dict = {}
        self._beta: dict = {}

    def _features(self, blk: nets.SmootherForward, dim: int, with_dot: bool):
        z = blk.feats[dim] * self.inv_ls[dim]
        z_dot = blk.feats_dot[dim] * self.inv_ls[dim] if with_dot else None
        return _phi_graph(self.bundle[dim], z, z_dot)

    def phi(self, dim: int) -> Tensor:
        if dim not in self._phi:
            self._phi[dim] = self._features(self.fwd, dim, False)[0]
        return self._phi[dim]

    def chol(self, dim: int) -> Tensor:
        if dim not in self._chol:
            phi = self.phi(dim)
            f = self.bundle[dim].count
            g = phi.T @ phi + self.noise_var[dim] * ad.constant(np.eye(f))
            self._chol[dim] = ad.cholesky(g)
        return self._chol[dim]

    def resid(self, dim: int) -> Tensor:
        return ad.constant(self._y_norm[:, dim]) - self.fwd.mean[:, dim]

    def beta(self, dim: int) -> Tensor:
        """G^-1 Phi^T r; the posterior weight vector in feature space."""
        if dim not in self._beta:
            lo = self.chol(dim)
            b = self.phi(dim).T @ self.resid(dim)
            half = ad.solve_triangular(lo, b, trans="N")
            self._beta[dim] = (half, ad.solve_triangular(lo, half, trans="T"))
        return self._beta[dim][1]

    def nll(self) -> Tensor:
        total = None
        for dim in range(self.k):
            r = self.resid(dim)
            self.beta(dim)
            half = self._beta[dim][0]
            quad = ((r**2).sum() - (half**2).sum()) / self.noise_var[dim]
            logdet = 2.0 * ad.log(ad.diag_part(self.chol(dim))).sum() + (
                float(self.n - self.bundle[dim].count) * ad.log(self.noise_var[dim])
            )
            term = 0.5 * quad + 0.5 * logdet
            total = term if total is None else total + term
        return total

    def block(self, x0_rows: np.ndarray, t_rows: np.ndarray) -> nets.SmootherForward:
        return nets.smoother_forward(self.model, self.weights, x0_rows, t_rows)

    def derivative_terms(self, sup: nets.SmootherForward, dim: int) -> tuple:
        phi_s, phidot_s = self._features(sup, dim, True)
        mu = sup.mean_dot[:, dim] + phidot_s @ self.beta(dim)
        w = ad.solve_triangular(self.chol(dim), phidot_s.T, trans="N")
        var = self.noise_var[dim] * (w**2).sum(axis=0)
        s = self.out_scale[dim]
        return s * mu, (s * s) * var, phi_s

    def state_mean_from_cross(self, sup: nets.SmootherForward, phi_s: Tensor, dim: int) -> Tensor:
        return self.out_scale[dim] * (sup.mean[:, dim] + phi_s @ self.beta(dim))

    def state_terms(self, blk: nets.SmootherForward, dim: int) -> tuple:
        phi_q, _ = self._features(blk, dim, False)
        mu = blk.mean[:, dim] + phi_q @ self.beta(dim)
        w = ad.solve_triangular(self.chol(dim), phi_q.T, trans="N")
        var = self.noise_var[dim] * (w**2).sum(axis=0)
        s = self.out_scale[dim]
        return s * mu, (s * s) * var


# ---------------------------------------------------------------------------
# public approximate posteriors
# ---------------------------------------------------------------------------

def _graph(model: Model, params: ParamVector, dataset: Dataset, bundle) -> RffGraph:
    weights = {name: ad.constant(params.get(name)) for name in params.names}
    return RffGraph(model, weights, smoother.prepare_data(dataset), bundle)


def approx_data_nll(model: Model, params: ParamVector, dataset: Dataset, bundle) -> float:
    return _graph(model, params, dataset, bundle).nll().item()


def approx_derivative_posterior(model, params, dataset, support, bundle) -> DerivativePosterior:
    graph = _graph(model, params, dataset, bundle)
    x0_rows, t_rows = smoother._support_arrays(support)
    sup = graph.block(x0_rows, t_rows)
    means = np.empty((graph.k, t_rows.size))
    variances = np.empty_like(means)
    for dim in range(graph.k):
        mu, var, _ = graph.derivative_terms(sup, dim)
        means[dim] = mu.value
        variances[dim] = np.maximum(var.value, 0.0)
    return DerivativePosterior(means, variances)


def approx_state_posterior(model, params, dataset, queries, bundle) -> StatePosterior:
    graph = _graph(model, params, dataset, bundle)
    x0_rows, t_rows = smoother._support_arrays(queries)
    blk = graph.block(x0_rows, t_rows)
    means = np.empty((t_rows.size, graph.k))
    variances = np.empty_like(means)
    for dim in range(graph.k):
        mu, var = graph.state_terms(blk, dim)
        means[:, dim] = mu.value
        variances[:, dim] = np.maximum(var.value, 0.0)
    return StatePosterior(means, variances)
