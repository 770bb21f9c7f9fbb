"""Gradient engine tests: layout round trips, per-primitive gradients, FD oracle."""

import numpy as np
import pytest
import scipy.linalg

from dgm import autodiff as ad


def test_flatten_empty():
    p = ad.flatten_params({})
    assert len(p) == 0
    assert p.segments == ()


def test_flatten_two_segments():
    p = ad.flatten_params({"a": np.zeros(3), "b": np.zeros(2)})
    assert len(p) == 5
    offsets = {seg.name: seg.offset for seg in p.segments}
    assert offsets == {"a": 0, "b": 3}


def test_flatten_roundtrip_bitwise():
    rng = np.random.default_rng(0)
    named = {
        "core/W0": rng.normal(size=(3, 10)),
        "core/b0": rng.normal(size=10),
        "head/W": rng.normal(size=(5, 2)),
        "log_noise": rng.normal(size=2),
    }
    p = ad.flatten_params(named)
    back = ad.unflatten_params(p)
    assert list(back) == list(named)
    for name in named:
        assert back[name].shape == named[name].shape
        assert np.array_equal(back[name], named[name])


def test_value_and_grad_quadratic():
    p = ad.flatten_params({"x": np.array([1.0, 2.0])})
    res = ad.value_and_grad(lambda v: (v["x"] ** 2).sum(), p)
    assert res.value == pytest.approx(5.0)
    assert np.allclose(res.gradient, [2.0, 4.0])


def test_value_and_grad_sigmoid_at_zero():
    p = ad.flatten_params({"x": np.array(0.0)})
    res = ad.value_and_grad(lambda v: ad.sigmoid(v["x"]), p)
    assert res.value == pytest.approx(0.5)
    assert res.gradient[0] == pytest.approx(0.25)  # sigma'(0) = 0.25


def test_unused_parameter_gradient_is_exactly_zero():
    p = ad.flatten_params({"used": np.array([1.5]), "unused": np.ones(4)})
    res = ad.value_and_grad(lambda v: (v["used"] ** 2).sum(), p)
    assert np.array_equal(res.gradient[1:], np.zeros(4))


def test_nonfinite_loss_raises():
    p = ad.flatten_params({"x": np.array(-1.0)})
    with pytest.raises(ad.NonFiniteLossError):
        ad.value_and_grad(lambda v: ad.log(v["x"]), p)


def test_finite_diff_check_quadratic():
    p = ad.flatten_params({"x": np.array([0.3, -1.2, 2.0])})
    err = ad.finite_diff_check(lambda v: (v["x"] ** 2).sum(), p, eps=1e-6)
    assert err < 1e-8


def test_finite_diff_check_rejects_bad_eps():
    p = ad.flatten_params({"x": np.array([1.0])})
    with pytest.raises(ValueError):
        ad.finite_diff_check(lambda v: v["x"].sum(), p, eps=0.0)


# ---------------------------------------------------------------------------
# per-primitive gradients, each against central finite differences
# ---------------------------------------------------------------------------

def _fd(loss, arrays, eps=1e-6):
    p = ad.flatten_params(arrays)
    return ad.finite_diff_check(loss, p, eps=eps)


@pytest.mark.parametrize(
    "fn",
    [
        lambda v: (v["a"] + v["b"] * 2.0).sum(),
        lambda v: (v["a"] - v["b"]).sum(),
        lambda v: (v["a"] * v["b"]).sum(),
        lambda v: (v["a"] / (v["b"] + 3.0)).sum(),
        lambda v: (-v["a"] + v["b"] ** 3).sum(),
    ],
)
def test_arithmetic_grads(fn):
    rng = np.random.default_rng(1)
    arrays = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))}
    assert _fd(fn, arrays) < 1e-7


def test_broadcasting_grads():
    rng = np.random.default_rng(2)
    arrays = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,)), "c": rng.normal(size=(3, 1))}
    fn = lambda v: ((v["a"] * v["b"] + v["c"]) ** 2).sum()
    assert _fd(fn, arrays) < 1e-6


@pytest.mark.parametrize(
    "fn",
    [
        lambda v: ad.exp(v["a"]).sum(),
        lambda v: ad.log(v["a"] + 3.0).sum(),
        lambda v: ad.sqrt(v["a"] + 3.0).sum(),
        lambda v: ad.sigmoid(v["a"]).sum(),
        lambda v: ad.softplus(v["a"]).sum(),
        lambda v: ad.sin(v["a"]).sum(),
        lambda v: ad.cos(v["a"]).sum(),
        lambda v: ad.tan(v["a"] * 0.3).sum(),
    ],
)
def test_unary_grads(fn):
    rng = np.random.default_rng(3)
    arrays = {"a": rng.normal(size=(2, 5))}
    assert _fd(fn, arrays) < 1e-6


def test_matmul_grads():
    rng = np.random.default_rng(4)
    arrays = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2)), "v": rng.normal(size=4)}
    assert _fd(lambda p: (p["a"] @ p["b"]).sum(), arrays) < 1e-7
    assert _fd(lambda p: ((p["a"] @ p["v"]) ** 2).sum(), arrays) < 1e-6
    assert _fd(lambda p: (p["v"] @ p["b"]).sum(), arrays) < 1e-7


def test_shape_op_grads():
    rng = np.random.default_rng(5)
    arrays = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(2, 4))}

    def fn(v):
        joined = ad.concatenate([v["a"], v["b"]], axis=0)
        stacked = ad.stack([v["a"][0], v["a"][1]], axis=0)
        return (joined.T ** 2).sum() + (stacked * 3.0).sum() + (v["a"][:, 1:3]).sum()

    assert _fd(fn, arrays) < 1e-6


def test_reduce_sum_axis_grads():
    rng = np.random.default_rng(6)
    arrays = {"a": rng.normal(size=(3, 4))}
    fn = lambda v: (v["a"].sum(axis=0) ** 2).sum() + (v["a"].sum(axis=1, keepdims=True)).sum()
    assert _fd(fn, arrays) < 1e-6


def test_clip_min_grad_masks_clipped_region():
    p = ad.flatten_params({"x": np.array([-1.0, 2.0])})
    res = ad.value_and_grad(lambda v: ad.clip_min(v["x"], 0.0).sum(), p)
    assert np.allclose(res.gradient, [0.0, 1.0])


def _random_spd(rng, n):
    m = rng.normal(size=(n, n))
    return m @ m.T + n * np.eye(n)


def test_cholesky_matches_numpy():
    rng = np.random.default_rng(7)
    a = _random_spd(rng, 5)
    lo = ad.cholesky(ad.constant(a))
    assert np.allclose(lo.value, np.linalg.cholesky(a))


def test_cholesky_grad_fd():
    rng = np.random.default_rng(8)
    base = _random_spd(rng, 4)
    w = rng.normal(size=(4, 4))

    def fn(v):
        a = v["s"] @ v["s"].T + ad.constant(base)
        lo = ad.cholesky(a)
        return (lo * ad.constant(w)).sum()

    assert _fd(fn, {"s": rng.normal(size=(4, 4)) * 0.3}, eps=1e-6) < 1e-6


def test_solve_triangular_values_and_grads():
    rng = np.random.default_rng(9)
    a = _random_spd(rng, 4)
    lo = np.linalg.cholesky(a)
    b = rng.normal(size=(4, 3))
    x = ad.solve_triangular(ad.constant(lo), ad.constant(b), trans="N")
    assert np.allclose(lo @ x.value, b)
    y = ad.solve_triangular(ad.constant(lo), ad.constant(b), trans="T")
    assert np.allclose(lo.T @ y.value, b)

    w = rng.normal(size=(4, 3))

    def fn(v):
        lo_t = ad.cholesky(v["s"] @ v["s"].T + ad.constant(a))
        sol = ad.solve_triangular(lo_t, v["b"], trans="N")
        sol2 = ad.solve_triangular(lo_t, sol, trans="T")
        return (sol2 * ad.constant(w)).sum()

    arrays = {"s": rng.normal(size=(4, 4)) * 0.2, "b": b}
    assert _fd(fn, arrays, eps=1e-6) < 1e-6


def test_spd_solve_and_logdet_against_scipy():
    rng = np.random.default_rng(10)
    a = _random_spd(rng, 6)
    b = rng.normal(size=6)
    lo = ad.cholesky(ad.constant(a))
    alpha = ad.solve_triangular(lo, ad.solve_triangular(lo, ad.constant(b)), trans="T")
    assert np.allclose(alpha.value, np.linalg.solve(a, b), atol=1e-10)
    logdet = 2.0 * ad.log(ad.diag_part(lo)).sum()
    assert logdet.item() == pytest.approx(np.linalg.slogdet(a)[1])


def test_gp_style_loss_fd():
    """Quadratic form + logdet of an SPD matrix built from parameters."""
    rng = np.random.default_rng(11)
    y = rng.normal(size=5)

    def fn(v):
        z = v["z"]
        sq_norm = (z**2).sum(axis=1)
        sq_dist = sq_norm.reshape((5, 1)) + sq_norm.reshape((1, 5)) - 2.0 * (z @ z.T)
        k = ad.exp(-0.5 * sq_dist)
        a = k + (ad.exp(v["log_noise"]) ** 2 + 1e-8) * ad.constant(np.eye(5))
        lo = ad.cholesky(a)
        alpha = ad.solve_triangular(lo, ad.constant(y))
        return 0.5 * (alpha**2).sum() + ad.log(ad.diag_part(lo)).sum()

    arrays = {"z": rng.normal(size=(5, 3)), "log_noise": np.array(-1.0)}
    assert _fd(fn, arrays, eps=1e-6) < 1e-6


def test_cholesky_escalates_jitter_then_fails(caplog):
    # rank-1 matrix: not PD, but fixable by jitter
    v = np.ones((3, 1))
    nearly = v @ v.T
    with caplog.at_level("WARNING", logger="dgm.autodiff"):
        lo = ad.cholesky(ad.constant(nearly))
    assert np.all(np.isfinite(lo.value))
    assert any("jitter" in rec.message for rec in caplog.records)
    # an indefinite matrix stays unfactorizable at every jitter level
    with pytest.raises(ad.ConditioningError):
        ad.cholesky(ad.constant(np.diag([1.0, -5.0])))
