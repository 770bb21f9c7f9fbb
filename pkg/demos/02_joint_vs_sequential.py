"""Why gradient matching helps: joint training vs pure smoothing.

On a sparse multi-trajectory dataset (25 initial conditions, 5 observations
each) the smoother alone has nothing tying the trajectories together between
observation times.  Setting lambda to zero recovers that sequential-smoothing
baseline; the default lambda couples the smoother to the dynamics model and
markedly improves generalization to unseen initial conditions.
"""

from dataclasses import replace

import numpy as np

from dgm import datasets, evaluation, systems, training

grid_points = [0.5 + 0.25 * i for i in range(5)]
spec = datasets.DatasetSpec(
    systems.lotka_volterra(),
    initial_conditions=tuple((a, b) for a in grid_points for b in grid_points),
    obs_times_per_traj=(tuple(np.linspace(0.0, 10.0, 5)),) * 25,
    seed=0,
)
dataset = datasets.generate_dataset(spec)
print(f"dataset: {dataset.n_trajectories} trajectories x 5 observations")

config = training.TrainConfig(
    transition_steps=600, training_steps=0, finetune_steps=400,
    lr_main=0.05, wd_smoother=0.1, seed=0,
)

scores = {}
for label, lam in (("joint (default lambda)", None), ("sequential (lambda = 0)", 0.0)):
    checkpoint, _ = training.train(dataset, replace(config, lambda_final=lam))
    report = evaluation.evaluate_checkpoint(
        checkpoint, mode="generalization", seed=500, dataset=dataset
    )
    scores[label] = report.mean_ll
    print(f"{label}: generalization mean_ll = {report.mean_ll:.3f}")

margin = scores["joint (default lambda)"] - scores["sequential (lambda = 0)"]
print(f"\njoint beats sequential by {margin:+.3f} nats on 10 unseen initial conditions")
