"""The two derivative distributions that the training objective matches.

The smoother yields a Gaussian over state derivatives at every supporting
point (closed form, since derivatives of a GP are again a GP).  The dynamics
model, evaluated at the smoother's posterior state means, yields a second
set of Gaussians.  Their per-coordinate squared Wasserstein-2 distances --
(mu_a - mu_b)^2 + (sd_a - sd_b)^2 in closed form -- make up the matching
term.  This demo prints both marginal sets before and after training.
"""

import numpy as np

from dgm import (
    datasets, dynamics, matching, nets, smoother, systems, training,
)

spec = datasets.DatasetSpec(
    systems.lotka_volterra(),
    initial_conditions=((1.0, 2.0),),
    obs_times_per_traj=(tuple(np.linspace(0.0, 6.0, 30)),),
    seed=0,
)
dataset = datasets.generate_dataset(spec)
support = training.choose_supporting_points(dataset)
sup = (support.x0_rows, support.t_rows)


def marginal_sets(model, params):
    deriv = smoother.derivative_posterior(model, params, dataset, sup)
    state = smoother.state_posterior(model, params, dataset, sup)
    p_s = dynamics.GaussianMarginalSet(deriv.means, deriv.stds)
    p_d = dynamics.dynamics_marginals(model, params, state.means)
    return p_s, p_d


config = training.TrainConfig(transition_steps=500, training_steps=0, finetune_steps=300,
                              lr_main=0.05, wd_smoother=0.1, seed=0)
model = training.build_model(dataset, config)
init_params = nets.init_model_params(model, config.seed)

for stage, params in (("before training", init_params),):
    p_s, p_d = marginal_sets(model, params)
    print(f"{stage}: W2^2 sum = {matching.dynamics_loss(p_s, p_d):.2f}")

checkpoint, _ = training.train(dataset, config)
p_s, p_d = marginal_sets(checkpoint.model, checkpoint.params)
print(f"after training:  W2^2 sum = {matching.dynamics_loss(p_s, p_d):.4f}")

truth_field = systems.vector_field(spec.system, support.x0_rows[:1])
print("\nfirst support points, prey dimension (smoother vs dynamics):")
print("  t     mu_S +- sd_S        mu_D +- sd_D     true xdot")
states = systems.integrate(spec.system, dataset.x0s[0], support.t_rows[1:6])
for i in range(1, 6):
    true_dot = systems.eval_vector_field(spec.system, states[i - 1])[0]
    print(
        f"{support.t_rows[i]:5.2f}  {p_s.means[0, i]:7.3f} +- {p_s.stds[0, i]:.3f}"
        f"   {p_d.means[0, i]:7.3f} +- {p_d.stds[0, i]:.3f}   {true_dot:8.3f}"
    )

print("\nclosed-form W2^2 examples:")
print(f"  identical Gaussians: {matching.w2_gaussian_1d(0.0, 1.0, 0.0, 1.0)}")
print(f"  N(1,2) vs N(0,1):    {matching.w2_gaussian_1d(1.0, 2.0, 0.0, 1.0)}")
