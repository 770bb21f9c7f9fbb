"""Joint GP smoother + probabilistic dynamics model trained by matching
gradient distributions with a Wasserstein loss, avoiding numerical
integration at both train and predict time."""

from . import autodiff, datasets, dynamics, evaluation, matching, nets, rff, smoother, systems, training
from .autodiff import ParamVector, finite_diff_check, flatten_params, unflatten_params, value_and_grad
from .datasets import Dataset, DatasetSpec, generate_dataset, load_dataset, save_dataset
from .dynamics import GaussianMarginalSet, SupportSet, dynamics_marginals
from .evaluation import EvalReport, evaluate_checkpoint, ground_truth_ll
from .matching import LossBreakdown, dynamics_loss, total_loss, w2_gaussian_1d
from .nets import Model
from .smoother import DerivativePosterior, StatePosterior, data_nll, derivative_posterior, state_posterior
from .systems import SystemSpec, eval_vector_field, integrate, make_random_linear_system
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
