"""Dynamics-side gradient marginals under certainty equivalence.

The dynamics model is evaluated at the smoother's posterior state means, one
vector per supporting point; each state coordinate's derivative then has an
independent Gaussian marginal N(f_k(mu), Sigma_D,kk(mu)).  No sampling takes
place: the per-rollout noise of the dynamics model enters only through the
diagonal covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .autodiff import ParamVector
from .nets import Model

__all__ = ["SupportSet", "GaussianMarginalSet", "dynamics_marginals"]


@dataclass(frozen=True)
class SupportSet:
    """Support (time, initial condition) pairs where gradients are matched."""

    t_rows: np.ndarray   # (Ns,)
    x0_rows: np.ndarray  # (Ns, K)
    source: str = "observation_times"  # or "equidistant_30"

    def __post_init__(self):
        if self.t_rows.size == 0:
            raise ValueError("support set must be nonempty")
        if self.t_rows.size != self.x0_rows.shape[0]:
            raise ValueError("one initial condition per support time required")

    def __len__(self) -> int:
        return self.t_rows.size


@dataclass
class GaussianMarginalSet:
    """Per dimension, per support index scalar Gaussians (mean, std)."""

    means: np.ndarray  # (K, Ns)
    stds: np.ndarray   # (K, Ns)

    def __post_init__(self):
        if self.means.shape != self.stds.shape:
            raise ValueError("means and stds must share a shape")
        if np.any(self.stds < 0):
            raise ValueError("standard deviations must be nonnegative")

    @property
    def count(self) -> int:
        return self.means.size


def dynamics_marginals(model: Model, params: ParamVector, state_means: np.ndarray) -> GaussianMarginalSet:
    """Evaluate the dynamics model at one posterior state mean per support point.

    `state_means` has shape (Ns, K); the result holds Ns * K marginals.
    """
    state_means = np.asarray(state_means, dtype=np.float64)
    mean, var = nets.dynamics_forward(model, params, state_means)
    return GaussianMarginalSet(mean.T.copy(), np.sqrt(var).T.copy())
