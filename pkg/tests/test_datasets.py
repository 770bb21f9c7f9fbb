"""Preset grids, counts, noise statistics, determinism, JSON round trips."""

import numpy as np
import pytest

from dgm import datasets, systems


def test_lv1_preset():
    ds = datasets.generate_dataset("LV1", seed=0)
    assert ds.n_trajectories == 1
    assert np.allclose(ds.x0s[0], [1.0, 2.0])
    assert ds.times[0].size == 100
    assert ds.times[0][0] == 0.0 and ds.times[0][-1] == 10.0
    steps = np.diff(ds.times[0])
    assert np.allclose(steps, steps[0])


def test_lv100_preset():
    ds = datasets.generate_dataset("LV100", seed=0)
    assert ds.n_trajectories == 100
    assert np.allclose(ds.x0s[0], [0.5, 0.5])
    assert np.allclose(ds.x0s[-1], [1.5, 1.5])
    assert all(t.size == 5 for t in ds.times)
    assert ds.n_observations == 500


def test_lo125_preset():
    ds = datasets.generate_dataset("LO125", seed=3)
    assert ds.n_trajectories == 125
    assert np.allclose(ds.x0s[0], [-5.0, -5.0, -5.0])
    diffs = np.unique(np.diff(np.unique(ds.x0s[:, 0])))
    assert np.allclose(diffs, 2.5)
    assert all(t.size == 10 for t in ds.times)
    assert ds.n_observations == 1250


def test_dp100_and_qu64_counts():
    dp = datasets.generate_dataset("DP100", seed=1)
    assert dp.n_trajectories == 100
    assert np.allclose(dp.x0s[:, 2:], 0.0)
    assert dp.x0s[:, 0].min() == pytest.approx(-np.pi / 6) and dp.x0s[:, 0].max() == pytest.approx(np.pi / 6)
    qu = datasets.generate_dataset("QU64", seed=1)
    assert qu.n_trajectories == 64
    assert qu.n_observations == 960
    assert np.allclose(qu.x0s[:, :6], 0.0) and np.allclose(qu.x0s[:, 9:], 0.0)
    assert qu.x0s[:, 6].min() == pytest.approx(-np.pi / 18) and qu.x0s[:, 6].max() == pytest.approx(np.pi / 18)


def test_unknown_preset():
    with pytest.raises(ValueError):
        datasets.generate_dataset("LV7", seed=0)


def test_regeneration_is_bit_identical():
    a = datasets.generate_dataset("LV100", seed=11)
    b = datasets.generate_dataset("LV100", seed=11)
    assert np.array_equal(a.x0s, b.x0s)
    for ta, tb in zip(a.observations, b.observations):
        assert np.array_equal(ta, tb)
    c = datasets.generate_dataset("LV100", seed=12)
    assert not np.array_equal(a.observations[0], c.observations[0])


def test_noise_variance_matches_spec():
    ds = datasets.generate_dataset("LO125", seed=5)
    clean = {}
    spec = ds.spec
    residuals = []
    grid = ds.times[0]
    states = systems.integrate_batch(spec.system, ds.x0s, grid[grid > 0])
    full = np.concatenate([ds.x0s[None, :, :], states], axis=0) if grid[0] == 0 else states
    for m in range(ds.n_trajectories):
        residuals.append(ds.observations[m] - full[:, m, :])
    res = np.concatenate(residuals, axis=0)
    emp_var = res.var(axis=0)
    target = np.asarray(spec.system.noise_cov_diag)
    assert np.all(np.abs(emp_var - target) / target < 0.05)


def test_sample_test_initial_conditions():
    pts = datasets.sample_test_initial_conditions("LV100", 10, seed=0)
    assert pts.shape == (10, 2)
    assert np.all(pts >= 0.5) and np.all(pts <= 1.5)
    dp = datasets.sample_test_initial_conditions("DP100", 7, seed=0)
    assert np.array_equal(dp[:, 2:], np.zeros((7, 2)))
    qu = datasets.sample_test_initial_conditions("QU64", 4, seed=2)
    assert np.allclose(qu[:, :6], 0.0) and np.allclose(qu[:, 8:], 0.0)
    assert np.all(np.abs(qu[:, 6:8]) <= np.pi / 18)
    again = datasets.sample_test_initial_conditions("LV100", 10, seed=0)
    assert np.array_equal(pts, again)


def test_dataset_json_roundtrip(tmp_path):
    ds = datasets.generate_dataset("LV100", seed=2)
    path = tmp_path / "d.json"
    datasets.save_dataset(ds, path)
    doc = path.read_text()
    assert "dgm-dataset-v1" in doc
    back = datasets.load_dataset(path)
    assert back.spec.preset == "LV100"
    assert np.array_equal(back.x0s, ds.x0s)
    for a, b in zip(ds.observations, back.observations):
        assert np.array_equal(a, b)


def test_custom_spec_roundtrip(tmp_path):
    spec = datasets.DatasetSpec(
        systems.lotka_volterra(),
        ((1.0, 2.0), (0.8, 1.1)),
        ((0.5, 1.0, 2.0), (0.25, 0.75)),
        seed=4,
    )
    ds = datasets.generate_dataset(spec)
    assert ds.n_observations == 5
    path = tmp_path / "c.json"
    datasets.save_dataset(ds, path)
    back = datasets.load_dataset(path)
    regen = datasets.generate_dataset(back.spec)
    for a, b in zip(ds.observations, regen.observations):
        assert np.array_equal(a, b)
