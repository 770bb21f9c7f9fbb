"""Ground-truth dynamical systems and a fixed-step RK4 integrator.

Four benchmark systems (Lotka-Volterra, Lorenz, double pendulum,
quadrocopter) plus a seeded random 3x3 linear system with one stable and two
marginally stable modes.  Vector fields are written against an `ops`
namespace so the same code runs on plain numpy arrays (integration, dataset
generation) and on autodiff tensors (parametric dynamics models).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _rng

__all__ = [
    "SystemSpec",
    "DomainError",
    "DivergenceError",
    "lotka_volterra",
    "lorenz",
    "double_pendulum",
    "quadrocopter",
    "make_random_linear_system",
    "eval_vector_field",
    "vector_field",
    "integrate",
    "integrate_batch",
    "double_pendulum_energy",
    "default_substep",
]


class DomainError(ValueError):
    """State outside the vector field's domain (e.g. sec(theta) singularity)."""


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, time: float):
        super().__init__(f"integration diverged at t={time:.6g}")
        self.time = time


@dataclass(frozen=True)
class SystemSpec:
    """A named dynamical system with parameters and observation-noise variances."""

    name: str
    params: Mapping[str, float]
    noise_cov_diag: tuple
    state_dim: int

    def __post_init__(self):
        if any(v <= 0 for v in self.noise_cov_diag):
            raise ValueError("noise variances must be positive")
        if len(self.noise_cov_diag) != self.state_dim:
            raise ValueError("noise_cov_diag length must equal state_dim")


def lotka_volterra() -> SystemSpec:
    params = {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "delta": 1.0}
    return SystemSpec("LV", params, (0.1**2, 0.1**2), 2)


def lorenz(text_form: bool = False) -> SystemSpec:
    """Lorenz system; `text_form` switches the last equation's damping from
    the standard -tau*z to -tau*y."""
    params = {"sigma": 10.0, "rho": 28.0, "tau": 8.0 / 3.0, "text_form": 1.0 if text_form else 0.0}
    return SystemSpec("Lorenz", params, (1.0, 1.0, 1.0), 3)


def double_pendulum() -> SystemSpec:
    params = {"g": 9.81, "m": 1.0, "l": 1.0}
    return SystemSpec("DoublePendulum", params, (0.1**2,) * 4, 4)


def quadrocopter() -> SystemSpec:
    params = {
        "F1": 0.496, "F2": 0.495, "F3": 0.4955, "F4": 0.4955,
        "m": 0.1, "Ixx": 0.62, "Iyy": 1.13, "Izz": 0.9,
        "dx": 0.114, "dy": 0.0825, "g": 9.85,
    }
    noise = (1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 1.0, 0.1, 0.1, 5.0, 5.0, 5.0)
    return SystemSpec("Quadrocopter", params, noise, 12)


def make_random_linear_system(seed: int) -> SystemSpec:
    """Random 3x3 linear system: one stable eigenvalue drawn from
    U[-0.5, -0.1] and a skew 2x2 block normalized to spectral radius pi/2."""
    rng = _rng.stream(seed)
    lam = rng.uniform(-0.5, -0.1)
    while True:
        c = rng.uniform(0.0, 1.0, size=(2, 2))
        skew = c - c.T
        radius = abs(skew[0, 1])
        if radius > 0.0:
            break
    block = (math.pi / (2.0 * radius)) * skew
    a = np.zeros((3, 3))
    a[0, 0] = lam
    a[1:, 1:] = block
    params = {f"a{i}{j}": float(a[i, j]) for i in range(3) for j in range(3)}
    return SystemSpec("RandomLinear", params, (0.1**2,) * 3, 3)


def linear_matrix(system: SystemSpec) -> np.ndarray:
    k = system.state_dim
    return np.array([[system.params[f"a{i}{j}"] for j in range(k)] for i in range(k)])


# ---------------------------------------------------------------------------
# vector fields, vectorized over rows of X (shape (M, K))
# ---------------------------------------------------------------------------

def _rhs_lv(x, p, ops):
    prey, pred = x[:, 0], x[:, 1]
    return ops.stack(
        [p["alpha"] * prey - p["beta"] * prey * pred,
         p["delta"] * prey * pred - p["gamma"] * pred],
        axis=1,
    )


def _rhs_lorenz(x, p, ops):
    xx, yy, zz = x[:, 0], x[:, 1], x[:, 2]
    damped = yy if _param_value(p, "text_form") > 0.5 else zz
    return ops.stack(
        [p["sigma"] * (yy - xx),
         xx * (p["rho"] - zz) - yy,
         xx * yy - p["tau"] * damped],
        axis=1,
    )


def _rhs_double_pendulum(x, p, ops):
    th1, th2, p1, p2 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    m, l, g = p["m"], p["l"], p["g"]
    c = ops.cos(th1 - th2)
    s = ops.sin(th1 - th2)
    denom = 16.0 - 9.0 * c * c
    pref = 6.0 / (m * l * l)
    dth1 = pref * (2.0 * p1 - 3.0 * c * p2) / denom
    dth2 = pref * (8.0 * p2 - 3.0 * c * p1) / denom
    dp1 = -0.5 * m * l * l * (dth1 * dth2 * s + 3.0 * (g / l) * ops.sin(th1))
    dp2 = -0.5 * m * l * l * (-dth1 * dth2 * s + (g / l) * ops.sin(th2))
    return ops.stack([dth1, dth2, dp1, dp2], axis=1)


def _rhs_quadrocopter(x, p, ops):
    u, v, w = x[:, 0], x[:, 1], x[:, 2]
    pp, qq, rr = x[:, 3], x[:, 4], x[:, 5]
    phi, th, psi = x[:, 6], x[:, 7], x[:, 8]
    fz = p["F1"] + p["F2"] + p["F3"] + p["F4"]
    ll = (p["F2"] + p["F3"]) * p["dy"] - (p["F1"] + p["F4"]) * p["dx"]
    mm = (p["F1"] + p["F3"]) * p["dx"] - (p["F2"] + p["F4"]) * p["dx"]
    g, m = p["g"], p["m"]
    sphi, cphi = ops.sin(phi), ops.cos(phi)
    sth, cth = ops.sin(th), ops.cos(th)
    spsi, cpsi = ops.sin(psi), ops.cos(psi)
    du = -g * sth + rr * v - qq * w
    dv = g * sphi * cth - rr * u + pp * w
    dw = -fz / m + g * cphi * cth + qq * u - pp * v
    dp = (ll + (p["Iyy"] - p["Izz"]) * qq * rr) / p["Ixx"]
    dq = (mm + (p["Izz"] - p["Ixx"]) * pp * rr) / p["Iyy"]
    dr = (p["Ixx"] - p["Iyy"]) * pp * qq / p["Izz"]
    tth = sth / cth
    dphi = pp + (qq * sphi + rr * cphi) * tth
    dth = qq * cphi - rr * sphi
    dpsi = (qq * sphi + rr * cphi) / cth
    dx = cth * cpsi * u + (-cphi * spsi + sphi * sth * cpsi) * v + (sphi * spsi + cphi * sth * cphi) * w
    dy = cth * spsi * u + (cphi * cpsi + sphi * sth * spsi) * v + (-sphi * cpsi + cphi * sth * sphi) * w
    dz = sth * u - sphi * cth * v - cphi * cth * w
    return ops.stack([du, dv, dw, dp, dq, dr, dphi, dth, dpsi, dx, dy, dz], axis=1)


def _rhs_linear(x, p, ops):
    k = 3
    cols = []
    for i in range(k):
        acc = p[f"a{i}0"] * x[:, 0]
        for j in range(1, k):
            acc = acc + p[f"a{i}{j}"] * x[:, j]
        cols.append(acc)
    return ops.stack(cols, axis=1)


_RHS = {
    "LV": _rhs_lv,
    "Lorenz": _rhs_lorenz,
    "DoublePendulum": _rhs_double_pendulum,
    "Quadrocopter": _rhs_quadrocopter,
    "RandomLinear": _rhs_linear,
}

# parameters inferred in parametric dynamics mode (control forces and the
# Lorenz text-form flag stay fixed)
LEARNABLE_PARAMS = {
    "LV": ("alpha", "beta", "gamma", "delta"),
    "Lorenz": ("sigma", "rho", "tau"),
    "DoublePendulum": ("g", "m", "l"),
    "Quadrocopter": ("m", "Ixx", "Iyy", "Izz", "dx", "dy", "g"),
}


def _param_value(p: Mapping, name: str) -> float:
    v = p.get(name, 0.0)
    return float(v.value) if hasattr(v, "value") else float(v)


def vector_field(system: SystemSpec, x_rows, params: Mapping | None = None, ops=np):
    """Evaluate the system's right-hand side on rows of states.

    `params` overrides entries of `system.params` (used for parametric
    dynamics with learnable coefficients); `ops` selects the array backend.
    """
    merged = dict(system.params)
    if params:
        merged.update(params)
    if system.name == "Quadrocopter" and ops is np:
        cth = np.cos(np.asarray(x_rows)[:, 7])
        if np.any(np.abs(cth) < 1e-12):
            raise DomainError("quadrocopter pitch at +-pi/2: sec(theta) singular")
    return _RHS[system.name](x_rows, merged, ops)


def eval_vector_field(system: SystemSpec, x: np.ndarray) -> np.ndarray:
    """Vector field at a single state."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("state contains non-finite entries")
    return vector_field(system, x[None, :])[0]


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def default_substep(system: SystemSpec, horizon: float) -> float:
    """Fixed RK4 substep: 1e-3 * horizon, refined 10x for the stiff systems."""
    base = 1e-3 * horizon
    if system.name in ("Lorenz", "DoublePendulum"):
        base *= 0.1
    return base


def _rk4_span(f: Callable, x: np.ndarray, t0: float, t1: float, h: float) -> np.ndarray:
    n = max(1, int(math.ceil((t1 - t0) / h - 1e-12)))
    dt = (t1 - t0) / n
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def integrate_batch(
    system_or_field,
    x0_rows: np.ndarray,
    query_times: Sequence[float],
    substep: float | None = None,
) -> np.ndarray:
    """Integrate a batch of initial conditions from t=0 through sorted query
    times with classical RK4 at a fixed substep.  Returns (n_times, M, K)."""
    if isinstance(system_or_field, SystemSpec):
        f = lambda x: vector_field(system_or_field, x)
        if substep is None:
            horizon = max(float(query_times[-1]), 1e-9)
            substep = default_substep(system_or_field, horizon)
    else:
        f = system_or_field
        if substep is None:
            raise ValueError("substep required for a bare callable field")
    times = np.asarray(query_times, dtype=np.float64)
    if times.ndim != 1 or np.any(np.diff(times) <= 0):
        raise ValueError("query times must be strictly increasing")
    if not np.all(np.isfinite(times)):
        raise ValueError("query times must be finite")
    x = np.asarray(x0_rows, dtype=np.float64).copy()
    out = np.empty((times.size,) + x.shape)
    t_prev = 0.0
    for i, t in enumerate(times):
        if t > t_prev:
            x = _rk4_span(f, x, t_prev, float(t), substep)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(float(t))
        out[i] = x
        t_prev = float(t)
    return out


def integrate(
    system_or_field,
    x0: np.ndarray,
    query_times: Sequence[float],
    substep: float | None = None,
) -> np.ndarray:
    """Single-trajectory integration; returns states of shape (n_times, K)."""
    x0 = np.asarray(x0, dtype=np.float64)
    return integrate_batch(system_or_field, x0[None, :], query_times, substep)[:, 0, :]


def double_pendulum_energy(state: np.ndarray, g: float = 9.81, m: float = 1.0, l: float = 1.0) -> float:
    """Total energy of the compound double pendulum, conserved along the flow.

    Momenta are converted to angular velocities through the same linear map
    the equations of motion use, then E = T + V with
    T = m l^2/6 * (4 th1'^2 + th2'^2 + 3 th1' th2' cos(th1 - th2)) and
    V = -m g l/2 * (3 cos th1 + cos th2).
    """
    th1, th2, p1, p2 = np.asarray(state, dtype=np.float64)
    c = math.cos(th1 - th2)
    denom = 16.0 - 9.0 * c * c
    pref = 6.0 / (m * l * l)
    dth1 = pref * (2.0 * p1 - 3.0 * c * p2) / denom
    dth2 = pref * (8.0 * p2 - 3.0 * c * p1) / denom
    kinetic = m * l * l / 6.0 * (4.0 * dth1**2 + dth2**2 + 3.0 * dth1 * dth2 * c)
    potential = -0.5 * m * g * l * (3.0 * math.cos(th1) + math.cos(th2))
    return kinetic + potential
