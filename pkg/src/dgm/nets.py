"""Feed-forward building blocks and the model container.

The smoother is a small shared core (sigmoid layers of width 10 and 5) with a
linear mean head producing all K state dimensions and K separate linear
feature heads of output length 3.  The dynamics model is either a neural
trunk (20, 20, 2K; first K outputs are the drift mean, the last K pass
through softplus-squared to give a positive diagonal covariance), the known
parametric vector field with learnable coefficients plus a (10, 10, K)
covariance net, or a factorized linear map with the same covariance net.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _rng
from . import autodiff as ad
from . import systems
from .autodiff import ParamVector, Tensor

__all__ = [
    "MlpSpec",
    "SmootherArch",
    "DynamicsArch",
    "Model",
    "init_mlp",
    "mlp_forward",
    "init_model_params",
    "feature_map",
    "smoother_mean",
    "dynamics_forward",
]

FEATURE_DIM = 3


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    layer_widths: tuple
    output_activation: str = "identity"  # or "softplus_square"

    def __post_init__(self):
        if not self.layer_widths or any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if self.output_activation not in ("identity", "softplus_square"):
            raise ValueError(f"unknown output activation {self.output_activation!r}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(spec: MlpSpec, rng: np.random.Generator, prefix: str) -> dict:
    """Glorot-uniform weights, zero biases; keys '<prefix>/W<i>' and '<prefix>/b<i>'."""
    params = {}
    fan_in = spec.in_dim
    for i, width in enumerate(spec.layer_widths):
        params[f"{prefix}/W{i}"] = _glorot(rng, fan_in, width)
        params[f"{prefix}/b{i}"] = np.zeros(width)
        fan_in = width
    return params


def mlp_forward(spec: MlpSpec, weights: Mapping, x, prefix: str = "") -> Tensor:
    """Sigmoid hidden layers; the last layer applies the spec's output activation."""
    h = x if isinstance(x, Tensor) else ad.constant(x)
    n = len(spec.layer_widths)
    for i in range(n):
        w, b = weights[f"{prefix}/W{i}"], weights[f"{prefix}/b{i}"]
        h = h @ (w if isinstance(w, Tensor) else ad.constant(w)) + (b if isinstance(b, Tensor) else ad.constant(b))
        if i < n - 1:
            h = ad.sigmoid(h)
    if spec.output_activation == "softplus_square":
        h = ad.softplus(h) ** 2
    return h


@dataclass(frozen=True)
class SmootherArch:
    state_dim: int
    core_widths: tuple = (10, 5)

    @property
    def core_spec(self) -> MlpSpec:
        # all core layers are sigmoid-activated, so treat the last as hidden
        return MlpSpec(self.state_dim + 1, self.core_widths)


@dataclass(frozen=True)
class DynamicsArch:
    state_dim: int
    mode: str = "neural"                      # neural | parametric | factorized
    trunk_widths: tuple = (20, 20)
    cov_widths: tuple = (10, 10)
    system_name: str = ""                     # parametric mode
    factor_dims: tuple = ()                   # inner dims of the factorization

    def __post_init__(self):
        if self.mode not in ("neural", "parametric", "factorized"):
            raise ValueError(f"unknown dynamics mode {self.mode!r}")
        if self.mode == "parametric" and self.system_name not in systems.LEARNABLE_PARAMS:
            raise ValueError(f"no parametric form registered for {self.system_name!r}")


@dataclass(frozen=True)
class Model:
    """Architecture bundle plus the fixed affine scalings recorded in checkpoints.

    `input_scale` multiplies [x0; t] before the core; `output_scale` is the
    per-dimension standardization of the targets the GP works on, so the
    kernel keeps unit signal variance in normalized space and every posterior
    is mapped back to raw units on the way out.
    """

    state_dim: int
    smoother: SmootherArch
    dynamics: DynamicsArch
    input_scale: tuple        # length K+1, applied to [x0; t] before the core
    dynamics_input_scale: float = 1.0
    output_scale: tuple | None = None          # length K; None means all ones
    dynamics_output_scale: tuple | None = None # length K; derivative magnitude per dim

    @classmethod
    def default(
        cls,
        state_dim: int,
        dynamics_mode: str = "neural",
        system_name: str = "",
        factor_dims: Sequence[int] = (),
        input_scale: Sequence[float] | None = None,
        dynamics_input_scale: float = 1.0,
        output_scale: Sequence[float] | None = None,
        dynamics_output_scale: Sequence[float] | None = None,
    ) -> "Model":
        if input_scale is None:
            input_scale = (1.0,) * (state_dim + 1)
        if output_scale is None:
            output_scale = (1.0,) * state_dim
        if dynamics_output_scale is None:
            dynamics_output_scale = (1.0,) * state_dim
        return cls(
            state_dim,
            SmootherArch(state_dim),
            DynamicsArch(
                state_dim,
                mode=dynamics_mode,
                system_name=system_name,
                factor_dims=tuple(factor_dims),
            ),
            tuple(float(s) for s in input_scale),
            float(dynamics_input_scale),
            tuple(float(s) for s in output_scale),
            tuple(float(s) for s in dynamics_output_scale),
        )

    @property
    def output_scale_array(self) -> np.ndarray:
        if self.output_scale is None:
            return np.ones(self.state_dim)
        return np.asarray(self.output_scale)

    @property
    def dynamics_output_scale_array(self) -> np.ndarray:
        if self.dynamics_output_scale is None:
            return np.ones(self.state_dim)
        return np.asarray(self.dynamics_output_scale)


def _tensor(weights: Mapping, name: str) -> Tensor:
    w = weights[name]
    return w if isinstance(w, Tensor) else ad.constant(w)


def init_model_params(
    model: Model,
    seed: int,
    noise_std_init: np.ndarray | None = None,
    system: systems.SystemSpec | None = None,
) -> ParamVector:
    """Deterministic parameter initialization into a flat vector.

    `noise_std_init` seeds the per-dimension observation-noise scales
    (defaults to 0.1); `system` supplies the parametric vector field.
    """
    rng = _rng.stream(seed, 0x1417)
    k = model.state_dim
    named: dict = {}
    named.update(init_mlp(model.smoother.core_spec, rng, "smoother/core"))
    core_out = model.smoother.core_widths[-1]
    named["smoother/mean/W"] = _glorot(rng, core_out, k)
    named["smoother/mean/b"] = np.zeros(k)
    for dim in range(k):
        named[f"smoother/feat{dim}/W"] = _glorot(rng, core_out, FEATURE_DIM)
        named[f"smoother/feat{dim}/b"] = np.zeros(FEATURE_DIM)
    named["smoother/log_lengthscales"] = np.zeros((k, FEATURE_DIM))
    if noise_std_init is None:
        noise_std_init = np.full(k, 0.1)
    named["smoother/log_noise"] = np.log(np.asarray(noise_std_init, dtype=np.float64))

    dyn = model.dynamics
    if dyn.mode == "neural":
        named.update(init_mlp(MlpSpec(k, dyn.trunk_widths + (2 * k,)), rng, "dynamics/net"))
        last = len(dyn.trunk_widths)
        named[f"dynamics/net/W{last}"][:, :k] = 0.0  # drift mean starts at zero
    else:
        if dyn.mode == "parametric":
            names = systems.LEARNABLE_PARAMS[dyn.system_name]
            named["dynamics/theta"] = rng.uniform(0.5, 1.5, size=len(names))
        else:
            dims = (k,) + tuple(dyn.factor_dims) + (k,)
            for j in range(len(dims) - 1):
                named[f"dynamics/B{j}"] = _glorot(rng, dims[j + 1], dims[j]).T
        named.update(init_mlp(MlpSpec(k, dyn.cov_widths + (k,)), rng, "dynamics/cov"))
    return ad.flatten_params(named)


# ---------------------------------------------------------------------------
# smoother forward passes (value + time tangent in one sweep)
# ---------------------------------------------------------------------------

@dataclass
class SmootherForward:
    mean: Tensor       # (N, K)
    mean_dot: Tensor   # (N, K), d/dt of the mean
    feats: list        # K tensors (N, 3)
    feats_dot: list    # K tensors (N, 3)


def smoother_forward(model: Model, weights: Mapping, x0_rows: np.ndarray, t_rows: np.ndarray) -> SmootherForward:
    """Evaluate mean and per-dimension features with exact time derivatives.

    The tangent is propagated forward alongside the value: for a sigmoid
    layer h = sigma(a), dh/dt = h (1 - h) (W^T dx/dt).  The derivative is with
    respect to physical time, so the seed carries the time input's scale.
    """
    k = model.state_dim
    scale = np.asarray(model.input_scale)
    inp = np.concatenate([np.asarray(x0_rows), np.asarray(t_rows)[:, None]], axis=1) * scale
    n = inp.shape[0]
    seed = np.zeros((n, k + 1))
    seed[:, k] = scale[k]

    h = ad.constant(inp)
    hd = ad.constant(seed)
    spec = model.smoother.core_spec
    for i in range(len(spec.layer_widths)):
        w = _tensor(weights, f"smoother/core/W{i}")
        b = _tensor(weights, f"smoother/core/b{i}")
        s = ad.sigmoid(h @ w + b)
        hd = s * (1.0 - s) * (hd @ w)
        h = s

    mean_w = _tensor(weights, "smoother/mean/W")
    mean = h @ mean_w + _tensor(weights, "smoother/mean/b")
    mean_dot = hd @ mean_w
    feats, feats_dot = [], []
    for dim in range(k):
        fw = _tensor(weights, f"smoother/feat{dim}/W")
        feats.append(h @ fw + _tensor(weights, f"smoother/feat{dim}/b"))
        feats_dot.append(hd @ fw)
    return SmootherForward(mean, mean_dot, feats, feats_dot)


def feature_map(model: Model, params: ParamVector, x0: np.ndarray, t: float, dim: int) -> np.ndarray:
    """Length-3 feature vector of one (x0, t) point for state dimension `dim`."""
    weights = {name: ad.constant(params.get(name)) for name in params.names}
    fwd = smoother_forward(model, weights, np.asarray(x0)[None, :], np.array([t]))
    return fwd.feats[dim].value[0]


def smoother_mean(model: Model, params: ParamVector, x0: np.ndarray, t: float) -> np.ndarray:
    """Prior mean in raw state units (head output times the target scaling)."""
    weights = {name: ad.constant(params.get(name)) for name in params.names}
    fwd = smoother_forward(model, weights, np.asarray(x0)[None, :], np.array([t]))
    return fwd.mean.value[0] * model.output_scale_array


# ---------------------------------------------------------------------------
# dynamics forward pass
# ---------------------------------------------------------------------------

def dynamics_heads(model: Model, weights: Mapping, x_rows) -> tuple:
    """Drift mean, covariance diagonal and its square root at each state row.

    Returns (mean, var_diag, std_diag) tensors of shape (N, K).  The standard
    deviation is the softplus pre-square output, so it is exact and positive.
    """
    k = model.state_dim
    x = x_rows if isinstance(x_rows, Tensor) else ad.constant(x_rows)
    x_scaled = x * model.dynamics_input_scale
    out_scale = ad.constant(model.dynamics_output_scale_array)
    dyn = model.dynamics
    if dyn.mode == "neural":
        spec = MlpSpec(k, dyn.trunk_widths + (2 * k,))
        out = mlp_forward(spec, weights, x_scaled, prefix="dynamics/net")
        mean = out[:, :k] * out_scale
        std = ad.clip_min(ad.softplus(out[:, k:]), 1e-154)
    else:
        # parametric and factorized means are already in physical units
        if dyn.mode == "parametric":
            system = _SYSTEM_FACTORIES[dyn.system_name]()
            names = systems.LEARNABLE_PARAMS[dyn.system_name]
            theta = _tensor(weights, "dynamics/theta")
            overrides = {name: theta[i] for i, name in enumerate(names)}
            mean = systems.vector_field(system, x, params=overrides, ops=ad)
        else:
            prod = _tensor(weights, "dynamics/B0")
            j = 1
            while f"dynamics/B{j}" in weights:
                prod = prod @ _tensor(weights, f"dynamics/B{j}")
                j += 1
            mean = x @ prod.T
        spec = MlpSpec(k, dyn.cov_widths + (k,))
        std = ad.clip_min(ad.softplus(mlp_forward(spec, weights, x_scaled, prefix="dynamics/cov")), 1e-154)
    return mean, std**2, std


_SYSTEM_FACTORIES = {
    "LV": systems.lotka_volterra,
    "Lorenz": systems.lorenz,
    "DoublePendulum": systems.double_pendulum,
    "Quadrocopter": systems.quadrocopter,
}


def dynamics_forward(model: Model, params: ParamVector, x: np.ndarray) -> tuple:
    """Numpy evaluation of the dynamics model at states `x` (rows or single)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    weights = {name: ad.constant(params.get(name)) for name in params.names}
    mean, var, _ = dynamics_heads(model, weights, x[None, :] if single else x)
    if single:
        return mean.value[0], var.value[0]
    return mean.value, var.value
