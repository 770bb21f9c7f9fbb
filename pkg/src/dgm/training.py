"""Three-phase training: transition (lambda and dynamics decay ramp up under
a power-0.8 polynomial schedule), constant training, and a fine-tune phase at
learning rate 0.01.  The optimizer is Adam with decoupled weight decay
applied to network-weight segments only; kernel lengthscales, noise scales
and parametric vector-field coefficients are never decayed.

Everything is deterministic in (dataset, config): initialization, support
selection and the full-batch gradient loop share one seeded stream.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import datasets as datasets_mod
from . import matching, nets, smoother
from .autodiff import ParamVector, Segment
from .datasets import Dataset
from .dynamics import SupportSet
from .nets import Model

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "TrainHistory",
    "Checkpoint",
    "TrainingAborted",
    "DEFAULT_PHASES",
    "LR_SWEEP",
    "WD_SWEEP",
    "choose_supporting_points",
    "default_lambda",
    "schedule",
    "adam_step",
    "decay_rate_vector",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_SCHEMA_VERSION = "dgm-ckpt-v1"

# (transition, training, fine-tune) step counts per preset
DEFAULT_PHASES = {
    "LV1": (1000, 0, 1000),
    "LO1": (1000, 0, 1000),
    "DP1": (1000, 1000, 1000),
    "QU1": (1000, 2000, 1000),
    "LV100": (1000, 0, 1000),
    "LO125": (1000, 0, 1000),
    "DP100": (5000, 4000, 1000),
    "QU64": (6000, 3000, 1000),
}

LR_SWEEP = (0.02, 0.05, 0.1)
WD_SWEEP = (0.1, 0.5, 1.0)

SUPPORT_PER_TRAJECTORY = 30


class TrainingAborted(RuntimeError):
    """Raised when the loss or gradient turns non-finite mid-run."""

    def __init__(self, step: int, breakdown: dict | None):
        super().__init__(f"training aborted at step {step}: non-finite loss")
        self.step = step
        self.breakdown = breakdown


@dataclass(frozen=True)
class TrainConfig:
    transition_steps: int = 1000
    training_steps: int = 0
    finetune_steps: int = 1000
    lr_main: float = 0.05
    lr_finetune: float = 0.01
    wd_smoother: float = 0.1
    wd_dynamics_final: float | None = None  # defaults to wd_smoother
    lambda_final: float | None = None       # defaults to |D| / |Xdot|
    schedule_power: float = 0.8
    seed: int = 0
    dynamics_mode: str = "neural"
    factor_dims: tuple = ()
    divergence: str = "w2"
    fourier_features: int | None = None
    support_rule: str = "auto"  # auto | observation_times | equidistant_30
    input_scale: tuple | None = None
    dynamics_input_scale: float | None = None
    output_scale: tuple | None = None
    dynamics_output_scale: tuple | None = None

    def __post_init__(self):
        if min(self.transition_steps, self.training_steps, self.finetune_steps) < 0:
            raise ValueError("phase lengths must be nonnegative")
        if self.lambda_final is not None and self.lambda_final < 0:
            raise ValueError("lambda must be nonnegative")

    @property
    def total_steps(self) -> int:
        return self.transition_steps + self.training_steps + self.finetune_steps

    @property
    def wd_dynamics(self) -> float:
        return self.wd_smoother if self.wd_dynamics_final is None else self.wd_dynamics_final

    @classmethod
    def for_preset(cls, preset: str, **overrides) -> "TrainConfig":
        phases = DEFAULT_PHASES[preset.upper()]
        base = dict(transition_steps=phases[0], training_steps=phases[1], finetune_steps=phases[2])
        base.update(overrides)
        return cls(**base)


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class TrainHistory:
    total: np.ndarray
    data_term: np.ndarray
    wasserstein_term: np.ndarray
    lr: np.ndarray
    lambda_effective: np.ndarray
    wd_dynamics_effective: np.ndarray
    phase_seconds: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.total.size

    def to_json(self) -> dict:
        return {
            "total": self.total.tolist(),
            "data_term": self.data_term.tolist(),
            "wasserstein_term": self.wasserstein_term.tolist(),
            "lr": self.lr.tolist(),
            "lambda_effective": self.lambda_effective.tolist(),
            "wd_dynamics_effective": self.wd_dynamics_effective.tolist(),
            "phase_seconds": self.phase_seconds,
        }


# ---------------------------------------------------------------------------
# supporting points and schedules
# ---------------------------------------------------------------------------

def choose_supporting_points(dataset: Dataset, rule: str = "auto") -> SupportSet:
    """Observation times for a single trajectory, otherwise 30 equidistant
    times per trajectory over its observed horizon."""
    if dataset.n_trajectories == 0:
        raise ValueError("dataset is empty")
    if rule == "auto":
        rule = "observation_times" if dataset.n_trajectories == 1 else "equidistant_30"
    if rule == "observation_times":
        t_rows = np.concatenate(dataset.times)
        x0_rows = np.concatenate(
            [np.repeat(dataset.x0s[m][None, :], dataset.times[m].size, axis=0)
             for m in range(dataset.n_trajectories)]
        )
        return SupportSet(t_rows, x0_rows, "observation_times")
    if rule == "equidistant_30":
        t_parts, x0_parts = [], []
        for m in range(dataset.n_trajectories):
            horizon = float(dataset.times[m][-1])
            t_parts.append(np.linspace(0.0, horizon, SUPPORT_PER_TRAJECTORY))
            x0_parts.append(np.repeat(dataset.x0s[m][None, :], SUPPORT_PER_TRAJECTORY, axis=0))
        return SupportSet(np.concatenate(t_parts), np.concatenate(x0_parts), "equidistant_30")
    raise ValueError(f"unknown support rule {rule!r}")


def default_lambda(dataset: Dataset, support: SupportSet) -> float:
    """Trade-off default: number of observations over number of support points."""
    return dataset.n_observations / len(support)


def schedule(config: TrainConfig, step: int) -> tuple:
    """(lr, lambda_eff, wd_dynamics_eff) at a 0-based step.

    During the transition phase the ramp value(s) = final * (s / S)^power;
    both stay at their final values afterwards; the fine-tune phase only
    lowers the learning rate.
    """
    if config.lambda_final is None:
        raise ValueError("schedule needs a resolved lambda_final")
    if not 0 <= step <= config.total_steps:
        raise ValueError("step outside the configured range")
    if config.transition_steps > 0 and step < config.transition_steps:
        ramp = (step / config.transition_steps) ** config.schedule_power
    else:
        ramp = 1.0
    lr = config.lr_main
    if step >= config.transition_steps + config.training_steps:
        lr = config.lr_finetune
    return lr, config.lambda_final * ramp, config.wd_dynamics * ramp


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def decay_rate_vector(params: ParamVector, wd_smoother: float, wd_dynamics: float) -> np.ndarray:
    """Per-coordinate decay rates; zero on excluded (hyperparameter) segments."""
    rates = np.zeros(len(params))
    for seg in params.segments:
        group = matching.decay_group(seg.name)
        if group == "smoother":
            rates[seg.offset : seg.offset + seg.size] = wd_smoother
        elif group == "dynamics":
            rates[seg.offset : seg.offset + seg.size] = wd_dynamics
    return rates


def adam_step(
    state: OptimizerState,
    params: ParamVector,
    grads: np.ndarray,
    lr: float,
    decay: np.ndarray | float = 0.0,
) -> tuple:
    """One Adam update with decoupled decay p <- p - lr * wd * p."""
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grads**2
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    values = params.values - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    values = values - lr * np.asarray(decay) * values
    return OptimizerState(m, v, t), params.replace_values(values)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: Model
    params: ParamVector
    config: TrainConfig
    dataset_spec: dict
    metrics: dict

    @property
    def hyper(self) -> dict:
        return {
            "lengthscales": np.exp(self.params.get("smoother/log_lengthscales")).tolist(),
            "noise_std": np.exp(self.params.get("smoother/log_noise")).tolist(),
        }


def _model_to_json(model: Model) -> dict:
    return {
        "state_dim": model.state_dim,
        "core_widths": list(model.smoother.core_widths),
        "dynamics_mode": model.dynamics.mode,
        "trunk_widths": list(model.dynamics.trunk_widths),
        "cov_widths": list(model.dynamics.cov_widths),
        "system_name": model.dynamics.system_name,
        "factor_dims": list(model.dynamics.factor_dims),
        "input_scale": list(model.input_scale),
        "dynamics_input_scale": model.dynamics_input_scale,
        "output_scale": list(model.output_scale_array),
        "dynamics_output_scale": list(model.dynamics_output_scale_array),
    }


def _model_from_json(doc: dict) -> Model:
    return Model(
        doc["state_dim"],
        nets.SmootherArch(doc["state_dim"], tuple(doc["core_widths"])),
        nets.DynamicsArch(
            doc["state_dim"],
            mode=doc["dynamics_mode"],
            trunk_widths=tuple(doc["trunk_widths"]),
            cov_widths=tuple(doc["cov_widths"]),
            system_name=doc["system_name"],
            factor_dims=tuple(doc["factor_dims"]),
        ),
        tuple(doc["input_scale"]),
        doc["dynamics_input_scale"],
        tuple(doc.get("output_scale") or (1.0,) * doc["state_dim"]),
        tuple(doc.get("dynamics_output_scale") or (1.0,) * doc["state_dim"]),
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    doc = {
        "version": CHECKPOINT_SCHEMA_VERSION,
        "spec": {"dataset": ckpt.dataset_spec, "model": _model_to_json(ckpt.model)},
        "layout": [[seg.name, seg.offset, list(seg.shape)] for seg in ckpt.params.segments],
        "flat_params": ckpt.params.values.tolist(),
        "hyper": ckpt.hyper,
        "config": {**ckpt.config.__dict__, "factor_dims": list(ckpt.config.factor_dims),
                   "input_scale": list(ckpt.config.input_scale) if ckpt.config.input_scale else None,
                   "output_scale": list(ckpt.config.output_scale) if ckpt.config.output_scale else None,
                   "dynamics_output_scale": list(ckpt.config.dynamics_output_scale)
                   if ckpt.config.dynamics_output_scale else None},
        "metrics": ckpt.metrics,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema: {doc.get('version')!r}")
    segments = tuple(Segment(name, offset, tuple(shape)) for name, offset, shape in doc["layout"])
    params = ParamVector(np.asarray(doc["flat_params"], dtype=np.float64), segments)
    cfg = dict(doc["config"])
    cfg["factor_dims"] = tuple(cfg.get("factor_dims") or ())
    if cfg.get("input_scale"):
        cfg["input_scale"] = tuple(cfg["input_scale"])
    if cfg.get("output_scale"):
        cfg["output_scale"] = tuple(cfg["output_scale"])
    if cfg.get("dynamics_output_scale"):
        cfg["dynamics_output_scale"] = tuple(cfg["dynamics_output_scale"])
    config = TrainConfig(**cfg)
    return Checkpoint(_model_from_json(doc["spec"]["model"]), params, config, doc["spec"]["dataset"], doc["metrics"])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def default_input_scale(dataset: Dataset) -> tuple:
    """Scale [x0; t] so core inputs stay within the sigmoids' active range."""
    spans = np.maximum(1.0, np.abs(dataset.x0s).max(axis=0))
    return tuple(1.0 / spans) + (1.0 / max(dataset.horizon, 1e-12),)


def default_dynamics_input_scale(dataset: Dataset) -> float:
    span = max(1.0, max(float(np.abs(obs).max()) for obs in dataset.observations))
    return 1.0 / span


def default_output_scale(dataset: Dataset) -> tuple:
    """Per-dimension standard deviation of the observations, floored at 1e-3."""
    y = np.concatenate(dataset.observations)
    return tuple(np.maximum(y.std(axis=0), 1e-3))


def default_dynamics_output_scale(dataset: Dataset) -> tuple:
    """Derivative magnitude per dimension, estimated from observation
    finite differences (noisy but the right order of magnitude)."""
    diffs = []
    for m in range(dataset.n_trajectories):
        t = dataset.times[m]
        if t.size < 2:
            continue
        dt = np.diff(t)[:, None]
        diffs.append(np.diff(dataset.observations[m], axis=0) / dt)
    if not diffs:
        return (1.0,) * dataset.state_dim
    d = np.concatenate(diffs)
    return tuple(np.maximum(d.std(axis=0), 1.0))


def build_model(dataset: Dataset, config: TrainConfig) -> Model:
    scale = config.input_scale or default_input_scale(dataset)
    dyn_scale = config.dynamics_input_scale or default_dynamics_input_scale(dataset)
    out_scale = config.output_scale or default_output_scale(dataset)
    dyn_out_scale = config.dynamics_output_scale or default_dynamics_output_scale(dataset)
    return Model.default(
        dataset.state_dim,
        dynamics_mode=config.dynamics_mode,
        system_name=dataset.spec.system.name if config.dynamics_mode == "parametric" else "",
        factor_dims=config.factor_dims,
        input_scale=scale,
        dynamics_input_scale=dyn_scale,
        output_scale=out_scale,
        dynamics_output_scale=dyn_out_scale,
    )


def _initial_noise_std(dataset: Dataset, model: Model) -> np.ndarray:
    # noise lives in the GP's normalized target units
    y = np.concatenate(dataset.observations) / model.output_scale_array
    return np.maximum(0.1 * y.std(axis=0), 1e-3)


def train(dataset: Dataset, config: TrainConfig) -> tuple:
    """Run the three-phase loop; returns (Checkpoint, TrainHistory)."""
    support = choose_supporting_points(dataset, config.support_rule)
    lam_final = config.lambda_final
    if lam_final is None:
        lam_final = default_lambda(dataset, support)
    config = replace(config, lambda_final=lam_final)

    model = build_model(dataset, config)
    config = replace(
        config,
        input_scale=model.input_scale,
        dynamics_input_scale=model.dynamics_input_scale,
        output_scale=model.output_scale,
        dynamics_output_scale=model.dynamics_output_scale,
    )
    params = nets.init_model_params(model, config.seed, _initial_noise_std(dataset, model))
    data = smoother.prepare_data(dataset)
    support_arrays = (support.x0_rows, support.t_rows)

    rff_spec = None
    if config.fourier_features is not None:
        from . import rff

        rff_spec = rff.sample_feature_bundle(model.state_dim, config.fourier_features, config.seed)

    smoother_decay = decay_rate_vector(params, 1.0, 0.0)
    dynamics_decay = decay_rate_vector(params, 0.0, 1.0)

    captured: dict = {}

    def make_loss(lam_eff: float):
        def loss(view):
            terms = matching.build_objective(
                model, view, data, support_arrays, lam_eff,
                divergence=config.divergence, rff_spec=rff_spec,
            )
            captured["data"] = terms["data"].item()
            captured["w2"] = terms["w2"].item()
            return terms["total"]

        return loss

    n_steps = config.total_steps
    history = {key: np.zeros(n_steps) for key in
               ("total", "data", "w2", "lr", "lam", "wd_dyn")}
    phase_seconds = {"transition": 0.0, "training": 0.0, "finetune": 0.0}
    opt = OptimizerState.zeros(len(params))

    for step in range(n_steps):
        tic = time.perf_counter()
        lr, lam_eff, wd_dyn_eff = schedule(config, step)
        try:
            res = ad.value_and_grad(make_loss(lam_eff), params)
        except ad.NonFiniteLossError as err:
            logger.error("non-finite loss at step %d: %s", step, err)
            raise TrainingAborted(step, dict(captured)) from err
        decay = config.wd_smoother * smoother_decay + wd_dyn_eff * dynamics_decay
        opt, params = adam_step(opt, params, res.gradient, lr, decay)
        history["total"][step] = res.value
        history["data"][step] = captured["data"]
        history["w2"][step] = captured["w2"]
        history["lr"][step] = lr
        history["lam"][step] = lam_eff
        history["wd_dyn"][step] = wd_dyn_eff
        if step < config.transition_steps:
            phase = "transition"
        elif step < config.transition_steps + config.training_steps:
            phase = "training"
        else:
            phase = "finetune"
        phase_seconds[phase] += time.perf_counter() - tic

    final = matching.total_loss(
        model, params, dataset, support_arrays,
        config.lambda_final, config.wd_smoother, config.wd_dynamics,
        divergence=config.divergence, rff_spec=rff_spec,
    )
    metrics = {
        "final_total": final.total,
        "final_data_term": final.data_term,
        "final_wasserstein_term": final.wasserstein_term,
        "n_observations": dataset.n_observations,
        "n_support": len(support),
    }
    ckpt = Checkpoint(model, params, config, datasets_mod._spec_to_json(dataset.spec), metrics)
    hist = TrainHistory(
        history["total"], history["data"], history["w2"],
        history["lr"], history["lam"], history["wd_dyn"],
        phase_seconds,
    )
    return ckpt, hist
