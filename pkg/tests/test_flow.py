import math

import numpy as np
import pytest

from sigmaflow.core import flow
from sigmaflow.core.operators import OperatorSpec
from sigmaflow.core.validators import DomainError


def _circle(N=64):
    prob = flow.TorusProblem.from_potential(N, [[4.0]], [[1.0]], OperatorSpec.j_operator(1))
    phi0 = flow.PotentialField.from_modes(prob.grid, [{"amplitude": 0.05, "wave": [1]}])
    return prob, phi0


def _torus(N=64):
    prob = flow.TorusProblem.from_potential(N, np.diag([2.0, 3.0]), np.eye(2), OperatorSpec.j_operator(2))
    phi0 = flow.PotentialField.from_modes(
        prob.grid, [{"amplitude": 0.01, "wave": [1, 0]}, {"amplitude": 0.01, "wave": [0, 1], "phase": 0.3}]
    )
    return prob, phi0


def test_periodic_hessian_of_cosine_mode():
    grid = flow.PeriodicGrid(2, 32)
    x, y = grid.coords()
    phi = np.cos(2 * math.pi * (x + y))
    H = flow.hessian_periodic(phi, grid.h)
    factor = 4 * math.sin(math.pi * grid.h) ** 2 / grid.h**2
    np.testing.assert_allclose(H[..., 0, 0], -factor * phi, atol=1e-9)
    np.testing.assert_allclose(H[..., 0, 1], H[..., 1, 0])


def test_potential_field_is_mean_zero():
    grid = flow.PeriodicGrid(1, 16)
    field = flow.PotentialField(np.arange(16.0))
    assert field.values.mean() == pytest.approx(0.0, abs=1e-12)
    assert flow.PotentialField.zeros(grid).sup_norm() == 0.0
    with pytest.raises(DomainError):
        flow.PotentialField.from_dict(grid, {"modes": [], "extra": 1})
    with pytest.raises(DomainError):
        flow.PotentialField.from_modes(grid, [{"amplitude": 1.0, "wave": [1, 0]}])


def test_problem_validation():
    with pytest.raises(DomainError):
        flow.TorusProblem.from_potential(16, [[-1.0]], [[1.0]], OperatorSpec.j_operator(1))
    with pytest.raises(DomainError):
        flow.TorusProblem.from_potential(16, np.eye(2), np.eye(2), OperatorSpec.j_operator(1))
    with pytest.raises(DomainError):
        flow.PeriodicGrid(3, 16)
    with pytest.raises(DomainError):
        flow.TorusProblem.from_dict({"n": 1, "N": 16, "G0": [[1.0]], "alpha": {"const": [[1.0]]}, "operator": {"c": [1.0]}, "x": 1})


def test_problem_from_dict():
    prob = flow.TorusProblem.from_dict(
        {
            "n": 2,
            "N": 16,
            "G0": [[2.0, 0.0], [0.0, 3.0]],
            "alpha": {"const": [[1.0, 0.0], [0.0, 1.0]], "potential": {"modes": [{"amplitude": 0.001, "wave": [1, 1]}]}},
            "operator": {"c": [1.0, 0.0]},
        }
    )
    assert prob.alpha_field.shape == (16, 16, 2, 2)
    assert np.mean(np.linalg.det(prob.alpha_field)) == pytest.approx(1.0, rel=1e-3)
    assert prob.to_header()["N"] == 16


def test_normalizing_constant_for_constant_coefficients():
    prob, _ = _torus(16)
    assert flow.normalizing_constant(prob) == pytest.approx(1 / 2 + 1 / 3)


def test_degenerate_metric_reports_node():
    prob = flow.TorusProblem.from_potential(16, [[1.0]], [[1.0]], OperatorSpec.j_operator(1))
    phi = np.zeros(16)
    phi[3] = 1.0
    with pytest.raises(flow.DegenerateMetricError) as err:
        flow.metric(prob, phi, t=0.5)
    assert err.value.node == (3,)
    assert err.value.t == 0.5


def test_zero_potential_is_already_converged():
    prob, _ = _circle(16)
    result = flow.run(prob, flow.PotentialField.zeros(prob.grid), 1e-5, 1.0)
    assert result.converged
    assert result.state.steps == 0


def test_circle_flow_converges_monotonically():
    prob, phi0 = _circle()
    result = flow.run(prob, phi0, 1e-5, 50.0)
    assert result.converged
    assert result.state.residual < 1e-5
    assert result.sup_violations == 0
    assert result.j_violations == 0
    assert result.trace[-1].J <= result.trace[0].J
    assert result.state.phi.sup_norm() < 1e-5


def test_torus_flow_converges_monotonically():
    prob, phi0 = _torus()
    result = flow.run(prob, phi0, 1e-5, 50.0, trace_every=50)
    assert result.converged
    assert result.sup_violations == 0
    assert result.j_violations == 0
    volumes = [row.volume for row in result.trace]
    np.testing.assert_allclose(volumes, volumes[0], rtol=1e-3)


def test_semi_implicit_scheme_converges_with_large_steps():
    prob, phi0 = _torus(32)
    explicit_dt = flow.stable_dt(prob, phi0)
    result = flow.run(prob, phi0, 1e-5, 50.0, scheme="semi-implicit", dt=20 * explicit_dt)
    assert result.converged
    assert result.state.steps < flow.run(prob, phi0, 1e-5, 50.0).state.steps


def test_unknown_scheme_rejected():
    prob, phi0 = _circle(16)
    state = flow.initial_state(prob, phi0)
    with pytest.raises(DomainError):
        flow.step(state, 1e-4, scheme="rk4")


def test_step_halves_dt_when_metric_degenerates():
    prob, phi0 = _circle(16)
    state = flow.initial_state(prob, phi0)
    logs = []
    new = flow.step(state, 10.0, log=logs.append)
    assert new.dt < 10.0
    assert logs


def test_j_functional_vanishes_at_zero_and_is_positive_elsewhere():
    prob, phi0 = _torus(32)
    assert flow.j_functional(prob, np.zeros(prob.grid.shape)) == pytest.approx(0.0, abs=1e-14)
    assert flow.j_functional(prob, phi0) > 0
    with pytest.raises(DomainError):
        flow.j_functional(prob, phi0, path_steps=64)


def test_background_change_identity(rng):
    from sigmaflow.core.battery import random_modes

    prob = flow.TorusProblem.from_potential(64, np.eye(2), np.eye(2), OperatorSpec.j_operator(2))
    for _ in range(3):
        psi = flow.PotentialField.from_modes(prob.grid, random_modes(rng, 0.01))
        phi = flow.PotentialField.from_modes(prob.grid, random_modes(rng, 0.01))
        assert abs(flow.background_change_delta(prob, psi, phi, 65)) < 1e-4


def test_background_change_needs_pure_s1():
    prob = flow.TorusProblem.from_potential(16, np.eye(2), np.eye(2), OperatorSpec.sigma(1.0, 0.5))
    with pytest.raises(DomainError):
        flow.background_change_delta(prob, np.zeros((16, 16)), np.zeros((16, 16)))


def test_deflation_identity_is_exact():
    prob, phi0 = _torus(32)
    assert abs(flow.deflation_delta(prob, phi0, 0.05)) < 1e-10


def test_energy_and_properness_profile():
    prob, phi0 = _torus(32)
    family = [phi0.scaled(t) for t in (0.5, 1.0, 2.0)]
    profile = flow.properness_profile(prob, family)
    assert all(e > 0 for e in profile.energies)
    assert profile.slope > 0
    assert flow.energy_functional(prob, np.zeros(prob.grid.shape)) == 0.0
    assert set(profile.to_dict()) == {"J", "energy", "C", "delta"}
