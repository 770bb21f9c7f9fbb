"""Deep-kernel Gaussian process smoother.

Per state dimension an independent GP over the learned 3-d feature space:
ARD-RBF kernel with unit signal variance, learned lengthscales, learned
observation noise, and a shared deep mean.  Because the features are a
differentiable function of time, the kernel's time derivatives are exact
chain-rule expressions, which gives closed-form Gaussian conditionals for
both states and state derivatives.

With u = z1 - z2 in lengthscale-scaled feature space:

    k           = exp(-|u|^2 / 2)
    dk/dt1      = k * (z2 - z1) . z1'
    d2k/dt1 dt2 = k * (z1' . z2' - (u . z1')(u . z2'))

The module exposes a numpy "conditioning core" (plain Gaussian linear
algebra on supplied matrices, used as a test oracle) and tensor-graph
builders shared by the training objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import ParamVector, Tensor
from .datasets import Dataset
from .nets import Model

logger = logging.getLogger(__name__)

__all__ = [
    "BASE_JITTER",
    "PreparedData",
    "DerivativePosterior",
    "StatePosterior",
    "prepare_data",
    "kernel_matrix",
    "kernel_time_derivs",
    "data_nll",
    "derivative_posterior",
    "state_posterior",
    "derivative_conditional",
    "state_conditional",
    "SmootherGraph",
]

BASE_JITTER = 1e-8
VAR_FLOOR = 1e-10        # sqrt-safety floor inside the differentiable graph
VAR_WARN_LEVEL = -1e-8   # posterior variances below this trigger a warning


@dataclass
class PreparedData:
    x0_rows: np.ndarray  # (N, K) initial condition of each observation's trajectory
    t_rows: np.ndarray   # (N,)
    y: np.ndarray        # (N, K)


def prepare_data(dataset: Dataset) -> PreparedData:
    x0_rows = np.concatenate(
        [np.repeat(dataset.x0s[m][None, :], dataset.times[m].size, axis=0)
         for m in range(dataset.n_trajectories)]
    )
    t_rows = np.concatenate(dataset.times)
    y = np.concatenate(dataset.observations)
    return PreparedData(x0_rows, t_rows, y)


@dataclass
class DerivativePosterior:
    means: np.ndarray     # (K, Ns)
    variances: np.ndarray # (K, Ns), clamped at zero

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)


@dataclass
class StatePosterior:
    means: np.ndarray     # (Nq, K)
    variances: np.ndarray # (Nq, K)

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)


# ---------------------------------------------------------------------------
# numpy conditioning core (oracle-friendly, no feature maps involved)
# ---------------------------------------------------------------------------

def derivative_conditional(kmat, kdot, kddot_diag, noise_var, resid, mu_dot):
    """Gaussian conditional of derivatives given observations.

    mean = mu_dot + Kdot (K + s^2 I)^-1 resid
    var  = diag(Kddot) - diag(Kdot (K + s^2 I)^-1 Kdot^T)
    """
    a = np.asarray(kmat) + noise_var * np.eye(len(resid))
    sol = np.linalg.solve(a, np.asarray(resid))
    mean = np.asarray(mu_dot) + np.asarray(kdot) @ sol
    cross = np.linalg.solve(a, np.asarray(kdot).T)
    var = np.asarray(kddot_diag) - np.einsum("ij,ji->i", np.asarray(kdot), cross)
    return mean, var


def state_conditional(kq, kqq_diag, kmat, noise_var, resid, mu_q):
    """Gaussian conditional of states at query points given observations."""
    a = np.asarray(kmat) + noise_var * np.eye(len(resid))
    sol = np.linalg.solve(a, np.asarray(resid))
    mean = np.asarray(mu_q) + np.asarray(kq) @ sol
    cross = np.linalg.solve(a, np.asarray(kq).T)
    var = np.asarray(kqq_diag) - np.einsum("ij,ji->i", np.asarray(kq), cross)
    return mean, var


# ---------------------------------------------------------------------------
# kernel graphs
# ---------------------------------------------------------------------------

def _rbf(za: Tensor, zb: Tensor, inv_ls: Tensor) -> Tensor:
    a = za * inv_ls
    b = zb * inv_ls
    sq_a = (a**2).sum(axis=1)
    sq_b = (b**2).sum(axis=1)
    sq = ad.expand_dims(sq_a, 1) + ad.expand_dims(sq_b, 0) - 2.0 * (a @ b.T)
    return ad.exp(-0.5 * sq)


def _rbf_dt1(kab: Tensor, za, za_dot, zb, inv_ls) -> Tensor:
    """d/dt of the first argument: kab * ((zb - za) . Lambda^-1 za_dot)."""
    inv_sq = inv_ls**2
    cross = (za_dot * inv_sq) @ zb.T                  # (A, B)
    own = ((za * inv_sq) * za_dot).sum(axis=1)        # (A,)
    return kab * (cross - ad.expand_dims(own, 1))


def _rbf_dt1dt2(kab: Tensor, za, za_dot, zb, zb_dot, inv_ls) -> Tensor:
    inv_sq = inv_ls**2
    d = (za_dot * inv_sq) @ zb_dot.T
    e = ad.expand_dims(((za * inv_sq) * za_dot).sum(axis=1), 1) - (za_dot * inv_sq) @ zb.T
    f = (za * inv_sq) @ zb_dot.T - ad.expand_dims((zb * inv_sq * zb_dot).sum(axis=1), 0)
    return kab * (d - e * f)


def kernel_matrix(features_a: np.ndarray, features_b: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """ARD-RBF Gram matrix over explicit feature vectors (unit signal variance)."""
    ls = np.asarray(lengthscales, dtype=np.float64)
    if np.any(ls <= 0):
        raise ValueError("lengthscales must be positive")
    out = _rbf(ad.constant(features_a), ad.constant(features_b), ad.constant(1.0 / ls))
    return out.value


# ---------------------------------------------------------------------------
# per-dataset smoother graph
# ---------------------------------------------------------------------------

class SmootherGraph:
    """Tensor graph for the GP terms of one dataset within a single trace.

    Builds the deep features once for the data block (plus optional support
    and query blocks) and caches the per-dimension Cholesky factors, so the
    marginal likelihood, derivative posterior and state posterior all share
    one factorization per dimension.
    """

    def __init__(self, model: Model, weights, data: PreparedData, jitter: float = BASE_JITTER):
        self.model = model
        self.weights = weights
        self.data = data
        self.jitter = jitter
        self.k = model.state_dim
        self.n = data.t_rows.size
        self.fwd = nets.smoother_forward(model, weights, data.x0_rows, data.t_rows)
        self.out_scale = model.output_scale_array
        self._y_norm = data.y / self.out_scale
        ls = weights["smoother/log_lengthscales"]
        log_noise = weights["smoother/log_noise"]
        if not isinstance(ls, Tensor):
            ls = ad.constant(ls)
        if not isinstance(log_noise, Tensor):
            log_noise = ad.constant(log_noise)
        self.inv_ls = [ad.exp(-ls[dim]) for dim in range(self.k)]
        self.noise_var = [ad.exp(2.0 * log_noise[dim]) for dim in range(self.k)]
        self._eye = ad.constant(np.eye(self.n))
        self._chol: dict = {}
        self._alpha: dict = {}

    def chol(self, dim: int) -> Tensor:
        if dim not in self._chol:
            z = self.fwd.feats[dim]
            gram = _rbf(z, z, self.inv_ls[dim])
            a = gram + (self.noise_var[dim] + self.jitter) * self._eye
            self._chol[dim] = ad.cholesky(a)
        return self._chol[dim]

    def resid(self, dim: int) -> Tensor:
        return ad.constant(self._y_norm[:, dim]) - self.fwd.mean[:, dim]

    def alpha(self, dim: int) -> Tensor:
        """(K + sigma^2 I)^-1 (y - mu) via two triangular solves."""
        if dim not in self._alpha:
            lo = self.chol(dim)
            half = ad.solve_triangular(lo, self.resid(dim), trans="N")
            self._alpha[dim] = (half, ad.solve_triangular(lo, half, trans="T"))
        return self._alpha[dim][1]

    def nll(self) -> Tensor:
        """Sum over dimensions of the negative marginal log likelihood
        (additive constants dropped)."""
        total = None
        for dim in range(self.k):
            lo = self.chol(dim)
            half = self._half_solve(dim)
            term = 0.5 * (half**2).sum() + ad.log(ad.diag_part(lo)).sum()
            total = term if total is None else total + term
        return total

    def _half_solve(self, dim: int) -> Tensor:
        self.alpha(dim)
        return self._alpha[dim][0]

    def block(self, x0_rows: np.ndarray, t_rows: np.ndarray) -> nets.SmootherForward:
        return nets.smoother_forward(self.model, self.weights, x0_rows, t_rows)

    def derivative_terms(self, sup: nets.SmootherForward, dim: int) -> tuple:
        """(mu_S, var_S) tensors at the support block for one dimension."""
        zs, zs_dot = sup.feats[dim], sup.feats_dot[dim]
        zd = self.fwd.feats[dim]
        ksd = _rbf(zs, zd, self.inv_ls[dim])
        kdot = _rbf_dt1(ksd, zs, zs_dot, zd, self.inv_ls[dim])
        mu = sup.mean_dot[:, dim] + kdot @ self.alpha(dim)
        v = ad.solve_triangular(self.chol(dim), kdot.T, trans="N")
        kddot_diag = ((zs_dot * self.inv_ls[dim]) ** 2).sum(axis=1)
        var = kddot_diag - (v**2).sum(axis=0)
        s = self.out_scale[dim]
        return s * mu, (s * s) * var, ksd

    def state_mean_from_cross(self, sup: nets.SmootherForward, ksd: Tensor, dim: int) -> Tensor:
        return self.out_scale[dim] * (sup.mean[:, dim] + ksd @ self.alpha(dim))

    def state_terms(self, blk: nets.SmootherForward, dim: int) -> tuple:
        """(mu_post, var_post) tensors at a query block for one dimension."""
        zq = blk.feats[dim]
        kqd = _rbf(zq, self.fwd.feats[dim], self.inv_ls[dim])
        mu = blk.mean[:, dim] + kqd @ self.alpha(dim)
        w = ad.solve_triangular(self.chol(dim), kqd.T, trans="N")
        var = 1.0 - (w**2).sum(axis=0)
        s = self.out_scale[dim]
        return s * mu, (s * s) * var


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _const_weights(params: ParamVector) -> dict:
    return {name: ad.constant(params.get(name)) for name in params.names}


def _support_arrays(support) -> tuple:
    if isinstance(support, tuple):
        x0_rows, t_rows = support
    else:
        x0_rows, t_rows = support.x0_rows, support.t_rows
    return np.asarray(x0_rows, dtype=np.float64), np.asarray(t_rows, dtype=np.float64)


def kernel_time_derivs(model: Model, params: ParamVector, points_a, points_b, dim: int):
    """Exact time derivatives of the composed kernel between two point sets.

    Points are (x0_rows, t_rows) pairs.  Returns (kdot, kddot): the
    derivative with respect to the first set's times, and the mixed second
    derivative between the two sets.
    """
    weights = _const_weights(params)
    xa, ta = _support_arrays(points_a)
    xb, tb = _support_arrays(points_b)
    fa = nets.smoother_forward(model, weights, xa, ta)
    fb = nets.smoother_forward(model, weights, xb, tb)
    inv_ls = ad.exp(-ad.constant(params.get("smoother/log_lengthscales"))[dim])
    kab = _rbf(fa.feats[dim], fb.feats[dim], inv_ls)
    kdot = _rbf_dt1(kab, fa.feats[dim], fa.feats_dot[dim], fb.feats[dim], inv_ls)
    kddot = _rbf_dt1dt2(
        kab, fa.feats[dim], fa.feats_dot[dim], fb.feats[dim], fb.feats_dot[dim], inv_ls
    )
    return kdot.value, kddot.value


def data_nll(model: Model, params: ParamVector, dataset: Dataset) -> float:
    """Per-dimension GP negative marginal log likelihood of the observations."""
    if dataset.n_observations == 0:
        raise ValueError("dataset is empty")
    graph = SmootherGraph(model, _const_weights(params), prepare_data(dataset))
    return graph.nll().item()


def _clamped_variance(raw: np.ndarray, what: str) -> np.ndarray:
    low = raw.min() if raw.size else 0.0
    if low < VAR_WARN_LEVEL:
        logger.warning("%s variance fell to %.3e; clamping at zero", what, low)
    return np.maximum(raw, 0.0)


def derivative_posterior(model: Model, params: ParamVector, dataset: Dataset, support) -> DerivativePosterior:
    """Posterior over state derivatives at the support points."""
    graph = SmootherGraph(model, _const_weights(params), prepare_data(dataset))
    x0_rows, t_rows = _support_arrays(support)
    sup = graph.block(x0_rows, t_rows)
    means = np.empty((graph.k, t_rows.size))
    variances = np.empty_like(means)
    for dim in range(graph.k):
        mu, var, _ = graph.derivative_terms(sup, dim)
        means[dim] = mu.value
        variances[dim] = _clamped_variance(var.value, "derivative posterior")
    return DerivativePosterior(means, variances)


def state_posterior(model: Model, params: ParamVector, dataset: Dataset, queries) -> StatePosterior:
    """Predictive posterior of the state at (x0, t) query points."""
    graph = SmootherGraph(model, _const_weights(params), prepare_data(dataset))
    x0_rows, t_rows = _support_arrays(queries)
    blk = graph.block(x0_rows, t_rows)
    means = np.empty((t_rows.size, graph.k))
    variances = np.empty_like(means)
    for dim in range(graph.k):
        mu, var = graph.state_terms(blk, dim)
        means[:, dim] = mu.value
        variances[:, dim] = _clamped_variance(var.value, "state posterior")
    return StatePosterior(means, variances)
