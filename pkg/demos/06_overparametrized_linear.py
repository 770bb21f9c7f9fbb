"""Overparametrization robustness on a random linear system.

The ground truth is x' = A x with one stable and two marginally stable
modes.  The dynamics ansatz is a factorized linear map B = B1 B2 ... BJ --
a linear network whose parameter count grows with the factorization depth
while its expressiveness stays fixed.  Training quality should be largely
insensitive to the depth.
"""

import numpy as np

from dgm import datasets, evaluation, systems, training

system = systems.make_random_linear_system(seed=7)
print("ground-truth matrix:")
print(np.round(systems.linear_matrix(system), 3))

rng = np.random.default_rng(0)
x0 = rng.normal(size=3)
x0 /= np.linalg.norm(x0)
spec = datasets.DatasetSpec(
    system,
    initial_conditions=(tuple(x0),),
    obs_times_per_traj=(tuple(np.linspace(0.0, 10.0, 60)),),
    seed=0,
)
dataset = datasets.generate_dataset(spec)

for factor_dims in ((), (6,), (6, 6)):
    shape = "(3," + ",".join(str(d) for d in factor_dims) + ("," if factor_dims else "") + "3)"
    config = training.TrainConfig(
        transition_steps=600, training_steps=0, finetune_steps=400,
        lr_main=0.05, wd_smoother=0.1, seed=0,
        dynamics_mode="factorized", factor_dims=factor_dims,
    )
    checkpoint, _ = training.train(dataset, config)
    report = evaluation.evaluate_checkpoint(checkpoint, mode="train", dataset=dataset)
    factors = [checkpoint.params.get(f"dynamics/B{j}")
               for j in range(len(factor_dims) + 1)]
    product = factors[0]
    for factor in factors[1:]:
        product = product @ factor
    err = np.abs(product - systems.linear_matrix(system)).max()
    print(f"factorization {shape:12s}: mean_ll = {report.mean_ll:6.3f}, "
          f"max |B - A| = {err:.3f}")
