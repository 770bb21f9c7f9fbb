"""Ground-truth log-likelihood metric.

The model predicts mean and standard deviation at 100 equidistant times per
trajectory; the metric is the mean over dimensions, times and trajectories
of the pointwise Gaussian log density of the noise-free ground truth under
those predictions.  Train mode scores the training trajectories,
generalization mode scores freshly sampled initial conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import datasets as datasets_mod
from . import rff, smoother, systems
from .datasets import Dataset
from .training import Checkpoint

__all__ = ["EvalReport", "pointwise_gaussian_ll", "ground_truth_ll", "evaluate_checkpoint"]

EVAL_GRID_SIZE = 100


@dataclass
class EvalReport:
    mean_ll: float
    per_trajectory: np.ndarray
    per_dimension: np.ndarray
    grid_size: int
    mode: str

    def to_json(self) -> dict:
        return {
            "mean_ll": self.mean_ll,
            "per_trajectory": self.per_trajectory.tolist(),
            "per_dimension": self.per_dimension.tolist(),
            "grid_size": self.grid_size,
            "mode": self.mode,
        }

    def summary(self) -> str:
        return (
            f"mode={self.mode} mean_ll={self.mean_ll:.4f} "
            f"trajectories={self.per_trajectory.size} grid={self.grid_size}"
        )


def pointwise_gaussian_ll(truth: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """log N(truth | mean, var) elementwise; a zero variance with any error
    gives -inf (overconfidence is not clipped away)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = -0.5 * np.log(2.0 * np.pi * var) - (truth - mean) ** 2 / (2.0 * var)
        return np.where(var > 0.0, dens, np.where(truth == mean, np.inf, -np.inf))


def _restore_bundle(ckpt: Checkpoint):
    if ckpt.config.fourier_features is None:
        return None
    return rff.sample_feature_bundle(
        ckpt.model.state_dim, ckpt.config.fourier_features, ckpt.config.seed
    )


def ground_truth_ll(
    ckpt: Checkpoint,
    x0_list: np.ndarray,
    horizon: float,
    mode: str = "train",
    dataset: Dataset | None = None,
    grid_size: int = EVAL_GRID_SIZE,
) -> EvalReport:
    """Evaluate the checkpoint's predictive posterior against integrated truth.

    The posterior conditions on the checkpoint's training dataset
    (regenerated from its spec when not supplied).
    """
    spec = datasets_mod._spec_from_json(ckpt.dataset_spec)
    if dataset is None:
        dataset = datasets_mod.generate_from_spec(spec)
    if dataset.state_dim != ckpt.model.state_dim:
        raise ValueError("checkpoint and dataset dimensions disagree")
    x0_list = np.atleast_2d(np.asarray(x0_list, dtype=np.float64))
    grid = np.linspace(0.0, horizon, grid_size)
    m = x0_list.shape[0]
    k = ckpt.model.state_dim

    truth = np.empty((m, grid_size, k))
    positive = grid > 0
    states = systems.integrate_batch(spec.system, x0_list, grid[positive])
    truth[:, positive, :] = np.swapaxes(states, 0, 1)
    truth[:, ~positive, :] = x0_list[:, None, :]

    x0_rows = np.repeat(x0_list, grid_size, axis=0)
    t_rows = np.tile(grid, m)
    bundle = _restore_bundle(ckpt)
    if bundle is None:
        post = smoother.state_posterior(ckpt.model, ckpt.params, dataset, (x0_rows, t_rows))
    else:
        post = rff.approx_state_posterior(ckpt.model, ckpt.params, dataset, (x0_rows, t_rows), bundle)
    mean = post.means.reshape(m, grid_size, k)
    var = post.variances.reshape(m, grid_size, k)

    ll = pointwise_gaussian_ll(truth, mean, var)
    return EvalReport(
        mean_ll=float(ll.mean()),
        per_trajectory=ll.mean(axis=(1, 2)),
        per_dimension=ll.mean(axis=(0, 1)),
        grid_size=grid_size,
        mode=mode,
    )


def repeat_protocol(
    preset: str,
    config: "training.TrainConfig",
    seeds,
    mode: str = "train",
    count: int = 10,
) -> dict:
    """Regenerate, retrain and re-evaluate across noise-realization seeds.

    Each seed controls both the dataset noise and the initialization; the
    returned dict carries mean and standard deviation of the metric across
    seeds plus the per-seed scores.
    """
    from dataclasses import replace

    from . import training

    scores = []
    for seed in seeds:
        dataset = datasets_mod.generate_dataset(preset, seed=seed)
        ckpt, _ = training.train(dataset, replace(config, seed=seed))
        report = evaluate_checkpoint(ckpt, mode=mode, seed=1000 + seed, count=count, dataset=dataset)
        scores.append(report.mean_ll)
    return {
        "mean": float(np.mean(scores)),
        "std": float(np.std(scores)),
        "per_seed": scores,
        "mode": mode,
    }


def evaluate_checkpoint(
    ckpt: Checkpoint,
    mode: str = "train",
    seed: int = 0,
    count: int = 10,
    dataset: Dataset | None = None,
) -> EvalReport:
    """Train-mode metric on the training trajectories, or generalization on
    `count` fresh initial conditions sampled from the preset's test box."""
    spec = datasets_mod._spec_from_json(ckpt.dataset_spec)
    if dataset is None:
        dataset = datasets_mod.generate_from_spec(spec)
    horizon = dataset.horizon
    if mode == "train":
        x0_list = dataset.x0s
    elif mode == "generalization":
        preset = spec.preset if spec.preset != "custom" else spec.system.name
        family = {"LV": "LV", "Lorenz": "LO", "DoublePendulum": "DP", "Quadrocopter": "QU"}.get(
            preset, preset
        )
        x0_list = datasets_mod.sample_test_initial_conditions(family, count, seed)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ground_truth_ll(ckpt, x0_list, horizon, mode=mode, dataset=dataset)
