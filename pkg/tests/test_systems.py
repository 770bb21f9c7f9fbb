"""Vector-field values, integrator order/energy checks, random linear system."""

import numpy as np
import pytest

from dgm import systems


def test_lv_field_substitution():
    spec = systems.lotka_volterra()
    out = systems.eval_vector_field(spec, np.array([1.0, 2.0]))
    assert np.allclose(out, [-1.0, 0.0])


def test_lorenz_equilibrium():
    spec = systems.lorenz()
    assert np.allclose(systems.eval_vector_field(spec, np.zeros(3)), 0.0)


def test_lorenz_standard_vs_text_form():
    x = np.array([1.0, 2.0, 3.0])
    standard = systems.eval_vector_field(systems.lorenz(), x)
    text = systems.eval_vector_field(systems.lorenz(text_form=True), x)
    tau = 8.0 / 3.0
    assert standard[2] == pytest.approx(1.0 * 2.0 - tau * 3.0)
    assert text[2] == pytest.approx(1.0 * 2.0 - tau * 2.0)


def test_double_pendulum_rest_equilibrium():
    spec = systems.double_pendulum()
    assert np.allclose(systems.eval_vector_field(spec, np.zeros(4)), 0.0)


def test_quadrocopter_w_dot_at_zero_state():
    spec = systems.quadrocopter()
    out = systems.eval_vector_field(spec, np.zeros(12))
    f_z = 0.496 + 0.495 + 0.4955 + 0.4955
    assert out[2] == pytest.approx(-f_z / 0.1 + 9.85)
    assert out[2] == pytest.approx(-9.97)


def test_quadrocopter_pitch_singularity():
    spec = systems.quadrocopter()
    state = np.zeros(12)
    state[7] = np.pi / 2.0
    with pytest.raises(systems.DomainError):
        systems.eval_vector_field(spec, state)


def test_random_linear_construction():
    spec = systems.make_random_linear_system(seed=0)
    a = systems.linear_matrix(spec)
    skew = a[1:, 1:]
    assert np.allclose(skew, -skew.T)
    assert max(abs(np.linalg.eigvals(skew))) == pytest.approx(np.pi / 2.0)
    assert -0.5 <= a[0, 0] <= -0.1
    again = systems.make_random_linear_system(seed=0)
    assert np.array_equal(systems.linear_matrix(again), a)
    other = systems.make_random_linear_system(seed=1)
    assert not np.array_equal(systems.linear_matrix(other), a)


def test_integrate_exponential_decay():
    field = lambda x: -x
    out = systems.integrate(field, np.array([1.0]), [1.0], substep=1e-3)
    assert out[0, 0] == pytest.approx(np.exp(-1.0), abs=1e-6)


def test_integrate_lorenz_equilibrium_stays_fixed():
    out = systems.integrate(systems.lorenz(), np.zeros(3), np.linspace(0.1, 1.0, 10))
    assert np.allclose(out, 0.0)


def test_integrator_is_fourth_order():
    field = lambda x: -x
    exact = np.exp(-1.0)
    errors = []
    for h in (0.1, 0.05, 0.025):
        out = systems.integrate(field, np.array([1.0]), [1.0], substep=h)
        errors.append(abs(out[0, 0] - exact))
    assert errors[0] / errors[1] >= 8.0
    assert errors[1] / errors[2] >= 8.0


def test_double_pendulum_energy_drift():
    spec = systems.double_pendulum()
    x0 = np.array([-np.pi / 6.0, -np.pi / 6.0, 0.0, 0.0])
    states = systems.integrate(spec, x0, np.linspace(0.1, 1.0, 10))
    e0 = systems.double_pendulum_energy(x0)
    drift = max(abs(systems.double_pendulum_energy(s) - e0) for s in states)
    assert drift / abs(e0) < 1e-6


def test_divergence_reports_time():
    field = lambda x: x**3
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(systems.DivergenceError) as err:
            systems.integrate(field, np.array([5.0]), [0.5, 1.0, 2.0], substep=1e-2)
    assert err.value.time in (0.5, 1.0, 2.0)


def test_vector_field_rejects_nonfinite_state():
    with pytest.raises(systems.DomainError):
        systems.eval_vector_field(systems.lotka_volterra(), np.array([np.nan, 1.0]))
