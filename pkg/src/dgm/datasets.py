"""Dataset generation: preset trajectory grids, observation noise, JSON I/O.

Presets reproduce the benchmark datasets exactly: initial-condition grids,
equidistant observation times, horizons and noise variances.  Noise is drawn
from a Philox stream keyed by (seed, trajectory index) so regeneration is
bit-identical and independent of generation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from . import _rng, systems
from .systems import SystemSpec

__all__ = [
    "DatasetSpec",
    "Dataset",
    "PRESETS",
    "generate_dataset",
    "generate_from_spec",
    "preset_spec",
    "sample_test_initial_conditions",
    "save_dataset",
    "load_dataset",
    "test_horizon",
]

DATASET_SCHEMA_VERSION = "dgm-dataset-v1"


@dataclass(frozen=True)
class DatasetSpec:
    system: SystemSpec
    initial_conditions: tuple  # of K-tuples
    obs_times_per_traj: tuple  # of time tuples, strictly increasing
    seed: int
    preset: str = "custom"

    def __post_init__(self):
        for times in self.obs_times_per_traj:
            t = np.asarray(times)
            if np.any(np.diff(t) <= 0):
                raise ValueError("observation times must be strictly increasing")
        if len(self.initial_conditions) != len(self.obs_times_per_traj):
            raise ValueError("one time grid per initial condition required")


@dataclass
class Dataset:
    spec: DatasetSpec
    x0s: np.ndarray          # (M, K)
    times: list              # M arrays of shape (N_m,)
    observations: list       # M arrays of shape (N_m, K)

    @property
    def n_trajectories(self) -> int:
        return self.x0s.shape[0]

    @property
    def state_dim(self) -> int:
        return self.x0s.shape[1]

    @property
    def n_observations(self) -> int:
        return sum(t.size for t in self.times)

    @property
    def horizon(self) -> float:
        return max(float(t[-1]) for t in self.times)


def _grid_times(horizon: float, n: int) -> tuple:
    return tuple(np.linspace(0.0, horizon, n))


def _lv_grid() -> list:
    return [(0.5 + i / 9.0, 0.5 + j / 9.0) for i in range(10) for j in range(10)]


def _lorenz_grid() -> list:
    pts = [-5.0 + 2.5 * i for i in range(5)]
    return [(a, b, c) for a in pts for b in pts for c in pts]


def _dp_grid() -> list:
    pts = [-np.pi / 6.0 + np.pi * i / 27.0 for i in range(10)]
    return [(a, b, 0.0, 0.0) for a in pts for b in pts]


def _qu_grid() -> list:
    # 4 points span [-pi/18, pi/18] at spacing pi/27, giving 4^3 = 64 trajectories
    pts = [-np.pi / 18.0 + np.pi * i / 27.0 for i in range(4)]
    return [
        (0.0,) * 6 + (a, b, c) + (0.0,) * 3
        for a in pts for b in pts for c in pts
    ]


def preset_spec(preset: str, seed: int) -> DatasetSpec:
    name = preset.upper()
    if name == "LV1":
        return DatasetSpec(systems.lotka_volterra(), ((1.0, 2.0),), (_grid_times(10.0, 100),), seed, name)
    if name == "LV100":
        ics = tuple(_lv_grid())
        return DatasetSpec(systems.lotka_volterra(), ics, (_grid_times(10.0, 5),) * len(ics), seed, name)
    if name == "LO1":
        return DatasetSpec(systems.lorenz(), ((-2.5, 2.5, 2.5),), (_grid_times(1.0, 100),), seed, name)
    if name == "LO125":
        ics = tuple(_lorenz_grid())
        return DatasetSpec(systems.lorenz(), ics, (_grid_times(1.0, 10),) * len(ics), seed, name)
    if name == "DP1":
        return DatasetSpec(
            systems.double_pendulum(), ((-np.pi / 6.0, -np.pi / 6.0, 0.0, 0.0),),
            (_grid_times(1.0, 100),), seed, name,
        )
    if name == "DP100":
        ics = tuple(_dp_grid())
        return DatasetSpec(systems.double_pendulum(), ics, (_grid_times(1.0, 5),) * len(ics), seed, name)
    if name == "QU1":
        return DatasetSpec(systems.quadrocopter(), ((0.0,) * 12,), (_grid_times(10.0, 100),), seed, name)
    if name == "QU64":
        ics = tuple(_qu_grid())
        return DatasetSpec(systems.quadrocopter(), ics, (_grid_times(10.0, 15),) * len(ics), seed, name)
    raise ValueError(f"unknown preset {preset!r}")


PRESETS = ("LV1", "LV100", "LO1", "LO125", "DP1", "DP100", "QU1", "QU64")


def _noise_for_trajectory(spec: DatasetSpec, traj_index: int, n_times: int) -> np.ndarray:
    rng = _rng.stream(spec.seed, traj_index)
    std = np.sqrt(np.asarray(spec.system.noise_cov_diag))
    return rng.standard_normal((n_times, spec.system.state_dim)) * std


def generate_from_spec(spec: DatasetSpec) -> Dataset:
    x0s = np.asarray(spec.initial_conditions, dtype=np.float64)
    times_list = []
    obs_list = []
    # trajectories sharing a time grid are integrated in one batch
    grids: dict = {}
    for m, times in enumerate(spec.obs_times_per_traj):
        grids.setdefault(tuple(times), []).append(m)
    truth = {}
    for grid, members in grids.items():
        t = np.asarray(grid, dtype=np.float64)
        positive = t > 0
        states = np.empty((t.size, len(members), spec.system.state_dim))
        if positive.any():
            states[positive] = systems.integrate_batch(spec.system, x0s[members], t[positive])
        states[~positive] = x0s[members]
        for col, m in enumerate(members):
            truth[m] = (t, states[:, col, :])
    for m in range(len(spec.initial_conditions)):
        t, clean = truth[m]
        times_list.append(t.copy())
        obs_list.append(clean + _noise_for_trajectory(spec, m, t.size))
    return Dataset(spec, x0s, times_list, obs_list)


def generate_dataset(preset: str | DatasetSpec, seed: int | None = None) -> Dataset:
    """Build a Dataset from a named preset (with `seed`) or a full DatasetSpec."""
    if isinstance(preset, DatasetSpec):
        return generate_from_spec(preset)
    if seed is None:
        raise ValueError("seed required for a named preset")
    return generate_from_spec(preset_spec(preset, seed))


_TEST_BOXES = {
    "LV": ([0.5, 0.5], [1.5, 1.5]),
    "LO": ([-5.0] * 3, [5.0] * 3),
    "DP": ([-np.pi / 6.0, -np.pi / 6.0, 0.0, 0.0], [np.pi / 6.0, np.pi / 6.0, 0.0, 0.0]),
    # the sampled box covers the first two angle coordinates only
    "QU": (
        [0.0] * 6 + [-np.pi / 18.0] * 2 + [0.0] * 4,
        [0.0] * 6 + [np.pi / 18.0] * 2 + [0.0] * 4,
    ),
}

_TEST_HORIZONS = {"LV": 10.0, "LO": 1.0, "DP": 1.0, "QU": 10.0}


def _family(preset: str) -> str:
    return preset.upper()[:2]


def test_horizon(preset: str) -> float:
    return _TEST_HORIZONS[_family(preset)]


def sample_test_initial_conditions(preset: str, count: int, seed: int) -> np.ndarray:
    """Uniform samples from the preset family's test box, deterministic in seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = _TEST_BOXES[_family(preset)]
    lo = np.asarray(lo)
    hi = np.asarray(hi)
    rng = _rng.stream(seed, 0x7E57)
    u = rng.uniform(0.0, 1.0, size=(count, lo.size))
    return lo + u * (hi - lo)


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------

def _spec_to_json(spec: DatasetSpec) -> dict:
    return {
        "preset": spec.preset,
        "seed": spec.seed,
        "system": {
            "name": spec.system.name,
            "params": dict(spec.system.params),
            "noise_cov_diag": list(spec.system.noise_cov_diag),
            "state_dim": spec.system.state_dim,
        },
        "initial_conditions": [list(ic) for ic in spec.initial_conditions],
        "obs_times_per_traj": [list(t) for t in spec.obs_times_per_traj],
    }


def _spec_from_json(doc: dict) -> DatasetSpec:
    sys_doc = doc["system"]
    system = SystemSpec(
        sys_doc["name"],
        {k: float(v) for k, v in sys_doc["params"].items()},
        tuple(sys_doc["noise_cov_diag"]),
        int(sys_doc["state_dim"]),
    )
    return DatasetSpec(
        system,
        tuple(tuple(ic) for ic in doc["initial_conditions"]),
        tuple(tuple(t) for t in doc["obs_times_per_traj"]),
        int(doc["seed"]),
        doc.get("preset", "custom"),
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    doc = {
        "version": DATASET_SCHEMA_VERSION,
        "spec": _spec_to_json(dataset.spec),
        "trajectories": [
            {
                "x0": dataset.x0s[m].tolist(),
                "times": dataset.times[m].tolist(),
                "observations": dataset.observations[m].tolist(),
            }
            for m in range(dataset.n_trajectories)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_dataset(path: str | Path) -> Dataset:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != DATASET_SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema: {doc.get('version')!r}")
    spec = _spec_from_json(doc["spec"])
    x0s = np.array([traj["x0"] for traj in doc["trajectories"]])
    times = [np.asarray(traj["times"], dtype=np.float64) for traj in doc["trajectories"]]
    obs = [np.asarray(traj["observations"], dtype=np.float64) for traj in doc["trajectories"]]
    return Dataset(spec, x0s, times, obs)
