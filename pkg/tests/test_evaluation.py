"""Metric definition tests: pointwise densities, averaging, orderings."""

import numpy as np
import pytest

from dgm import datasets, evaluation, systems, training


def test_perfect_prediction_unit_variance():
    truth = np.zeros((2, 5, 3))
    ll = evaluation.pointwise_gaussian_ll(truth, truth.copy(), np.ones_like(truth))
    assert np.allclose(ll, -0.5 * np.log(2 * np.pi))
    assert ll.mean() == pytest.approx(-0.9189385, abs=1e-6)


def test_overconfidence_is_punished():
    truth = np.array([1.0])
    mean = np.array([1.3])
    lls = [evaluation.pointwise_gaussian_ll(truth, mean, np.array([v]))[0]
           for v in (1.0, 1e-2, 1e-6)]
    assert lls[0] > lls[1] > lls[2]
    assert evaluation.pointwise_gaussian_ll(truth, mean, np.array([0.0]))[0] == -np.inf


def _quick_checkpoint(seed=0):
    ics = tuple((0.7 + 0.2 * i, 1.0 + 0.1 * i) for i in range(3))
    times = tuple(np.linspace(0.0, 2.0, 5))
    spec = datasets.DatasetSpec(systems.lotka_volterra(), ics, (times,) * 3, seed)
    ds = datasets.generate_dataset(spec)
    cfg = training.TrainConfig(transition_steps=10, training_steps=0, finetune_steps=5, seed=seed)
    ckpt, _ = training.train(ds, cfg)
    return ckpt, ds


def test_report_shapes_and_modes():
    ckpt, ds = _quick_checkpoint()
    report = evaluation.evaluate_checkpoint(ckpt, mode="train", dataset=ds)
    assert report.mode == "train"
    assert report.per_trajectory.shape == (3,)
    assert report.per_dimension.shape == (2,)
    assert report.grid_size == 100
    assert report.mean_ll == pytest.approx(report.per_trajectory.mean())
    assert report.mean_ll == pytest.approx(report.per_dimension.mean())
    gen = evaluation.evaluate_checkpoint(ckpt, mode="generalization", seed=3, count=4, dataset=ds)
    assert gen.per_trajectory.shape == (4,)
    with pytest.raises(ValueError):
        evaluation.evaluate_checkpoint(ckpt, mode="test")


def test_metric_invariant_under_trajectory_order():
    ckpt, ds = _quick_checkpoint()
    x0s = datasets.sample_test_initial_conditions("LV1", 4, seed=7)
    fwd = evaluation.ground_truth_ll(ckpt, x0s, horizon=2.0, dataset=ds)
    rev = evaluation.ground_truth_ll(ckpt, x0s[::-1], horizon=2.0, dataset=ds)
    assert fwd.mean_ll == pytest.approx(rev.mean_ll, rel=1e-12)
    assert np.allclose(fwd.per_trajectory[::-1], rev.per_trajectory)


def test_report_json_summary():
    ckpt, ds = _quick_checkpoint()
    report = evaluation.evaluate_checkpoint(ckpt, mode="train", dataset=ds)
    doc = report.to_json()
    assert set(doc) == {"mean_ll", "per_trajectory", "per_dimension", "grid_size", "mode"}
    assert "mean_ll=" in report.summary()


def test_dynamics_std_floor_under_extreme_preactivations():
    from dgm import autodiff as ad
    from dgm import nets

    model = nets.Model.default(2)
    params = nets.init_model_params(model, seed=0)
    named = ad.unflatten_params(params)
    named["dynamics/net/b2"] = np.full(4, -1e4)  # softplus underflows to zero
    _, var = nets.dynamics_forward(model, ad.flatten_params(named), np.array([0.0, 0.0]))
    assert np.all(var > 0.0)


def test_repeat_protocol_reports_mean_and_std():
    cfg = training.TrainConfig(transition_steps=8, training_steps=0, finetune_steps=4)
    out = evaluation.repeat_protocol("LV1", cfg, seeds=(0, 1), mode="train")
    assert len(out["per_seed"]) == 2
    assert out["mean"] == pytest.approx(np.mean(out["per_seed"]))
    assert out["std"] == pytest.approx(np.std(out["per_seed"]))


def test_dimension_mismatch_rejected():
    ckpt, _ = _quick_checkpoint()
    lorenz_ds = datasets.generate_dataset("LO1", seed=0)
    with pytest.raises(ValueError):
        evaluation.ground_truth_ll(ckpt, np.zeros((1, 3)), horizon=1.0, dataset=lorenz_ds)
