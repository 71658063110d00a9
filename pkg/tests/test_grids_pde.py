import math

import numpy as np
import pytest

from sigmaflow.core import pde
from sigmaflow.core.battery import manufactured_errors
from sigmaflow.core.grids import GridDomain, PolynomialPotential
from sigmaflow.core.validators import DomainError


H_SKEW = np.array([[2.0, 0.5], [0.5, 1.0]])


def _quartic_background():
    return PolynomialPotential.from_dict(
        {"monomials": [{"coef": 1 / 12, "powers": [4]}, {"coef": 0.5, "powers": [2]}]}, 1
    )


def _toric_interval(c=2.0, d=0.0, nodes=65):
    return pde.DirichletProblem(
        GridDomain.interval(-1.0, 1.0, nodes),
        _quartic_background(),
        d,
        c=c,
        target=pde.Target.TORIC,
        boundary_data=PolynomialPotential.half_square(1),
    )


@pytest.mark.parametrize(
    "domain",
    [GridDomain.rectangle([-1, -1], [1, 1], 9), GridDomain.ball([0.0, 0.0], 1.0, 17)],
    ids=["rectangle", "ball"],
)
def test_stencil_exact_on_quadratics(domain):
    u = PolynomialPotential.quadratic(H_SKEW, [0.3, -0.2], 1.0).on(domain)
    H = u.hessian()
    np.testing.assert_allclose(H, np.broadcast_to(H_SKEW, H.shape), atol=1e-8)
    pts = u.stencil.interior_points
    np.testing.assert_allclose(u.gradient(), pts @ H_SKEW + [0.3, -0.2], atol=1e-8)


def test_ball_boundary_points_lie_on_circle():
    st = GridDomain.ball([0.5, -0.5], 2.0, 17).stencil()
    radii = np.linalg.norm(st.boundary_points - [0.5, -0.5], axis=1)
    np.testing.assert_allclose(radii, 2.0)
    assert st.inner.any() and not st.inner.all()


def test_domain_validation():
    with pytest.raises(DomainError):
        GridDomain.interval(0.0, 1.0, 4)
    with pytest.raises(DomainError):
        GridDomain.from_dict({"kind": "annulus", "nodes": 9})
    with pytest.raises(DomainError):
        GridDomain.from_dict({"kind": "ball", "center": [0, 0], "radius": 1.0})
    domain = GridDomain.from_dict({"kind": "ball", "center": [0, 0], "radius": 1.0, "nodes": 9})
    assert GridDomain.from_dict(domain.to_dict()) == domain


def test_model_interval_is_exact():
    prob = pde.DirichletProblem(GridDomain.interval(-1.0, 1.0, 257), None, 1.0)
    sol = pde.solve_model_dirichlet(prob)
    assert sol.max_error(lambda x: (x[:, 0] ** 2 - 1.0) / 4.0) < 1e-8


def test_model_disc_center_value():
    prob = pde.DirichletProblem(GridDomain.ball([0.0, 0.0], 1.0, 33), None, 1.0)
    trace = pde.NewtonLog()
    sol = pde.solve_model_dirichlet(prob, trace=trace)
    assert trace.converged
    assert trace.residuals[-1] < pde.MODEL_TOL
    assert float(sol.sample([[0.0, 0.0]])[0]) == pytest.approx(-1 / (2 * (1 + math.sqrt(2))), abs=1e-6)
    assert pde.hessian_bound_check(sol, 1.0) <= math.sqrt(2)


def test_model_converges_at_second_order():
    errors = manufactured_errors([17, 33])
    assert math.log2(errors[0] / errors[1]) == pytest.approx(2.0, abs=0.3)


def test_newton_reports_last_iterate_on_failure():
    prob = pde.DirichletProblem(GridDomain.ball([0.0, 0.0], 1.0, 17), None, 1.0)
    with pytest.raises(pde.NonConvergence) as err:
        pde.solve_model_dirichlet(prob, max_iter=1)
    assert err.value.last_iterate is not None
    assert err.value.history.reason == "max-iterations"
    assert len(err.value.history.csv_rows()) == 2


def test_supersolution_of_quadratic_vanishes():
    u = PolynomialPotential.quadratic(0.25 * np.eye(2)).on(GridDomain.rectangle([-1, -1], [1, 1], 9))
    report = pde.supersolution_check(u, 8.0)
    assert abs(report.max_Lf) < 1e-10
    assert report.warning is None
    assert report.to_dict()["nodes"] == len(report.values)


def test_supersolution_warns_on_non_solution():
    u = PolynomialPotential.quadratic(np.eye(2)).on(GridDomain.rectangle([-1, -1], [1, 1], 9))
    assert pde.supersolution_check(u, 1.0).warning is not None


def test_toric_solve_matches_quartic_solution():
    prob = _toric_interval()
    sol = pde.solve_toric_equation(prob)
    exact = lambda x: x[:, 0] ** 4 / 24 + x[:, 0] ** 2 / 4 + 5 / 24
    assert sol.max_error(exact) < 1e-4
    assert pde.toric_identity_residual(prob, sol) < 1e-8


def test_toric_target_checks():
    with pytest.raises(DomainError):
        pde.solve_toric_equation(pde.DirichletProblem(GridDomain.interval(-1, 1, 9), None, 1.0))
    with pytest.raises(DomainError):
        pde.solve_model_dirichlet(_toric_interval(nodes=9))
    with pytest.raises(DomainError):
        pde.DirichletProblem(GridDomain.interval(-1, 1, 9), None, 0.0, target=pde.Target.TORIC)


def test_d_schedule():
    schedule = pde.d_schedule(10.0, 0.0, 6)
    assert len(schedule) == 6
    assert schedule[0] == 10.0 and schedule[-1] == 0.0
    assert schedule[-2] == pytest.approx(1e-3)
    assert pde.d_schedule(8.0, 2.0, 3) == pytest.approx([8.0, 4.0, 2.0])
    with pytest.raises(DomainError):
        pde.d_schedule(1.0, 2.0, 3)
    with pytest.raises(DomainError):
        pde.d_schedule(1.0, 0.0, 0)


def test_continuity_fixed_reaches_zero():
    prob = _toric_interval()
    path = pde.continuity_solve(prob, 10.0, 0.0, 6)
    assert path.completed
    assert path.smallest_d == 0.0
    assert all(stage.converged for stage in path.stages)
    direct = pde.solve_toric_equation(prob)
    np.testing.assert_allclose(path.solutions[-1].interior, direct.interior, atol=1e-7)
    assert path.to_dict()["d_schedule"] == path.d_schedule


def test_continuity_class_mode_needs_normalized_c():
    prob = _toric_interval()
    pts = prob.domain.stencil().interior_points
    mass_f = float(np.mean(pts[:, 0] ** 2 + 1.0))
    path = pde.continuity_solve(_toric_interval(c=mass_f), 10.0, 0.0, 4, c_mode="class")
    assert path.completed
    stalled = pde.continuity_solve(_toric_interval(c=1.4), 10.0, 0.0, 4, c_mode="class")
    assert not stalled.completed
    assert stalled.failing_d == 10.0
    assert stalled.stages[-1].reason == "class-mass"
    with pytest.raises(DomainError):
        pde.continuity_solve(prob, 10.0, 0.0, 4, c_mode="free")


def test_legendre_of_isotropic_quadratic_is_exact():
    g = PolynomialPotential.quadratic(2.0 * np.eye(2)).on(GridDomain.ball([0.0, 0.0], 1.0, 33))
    h = pde.legendre_transform(g, shrink=0.5)
    pts = h.stencil.interior_points
    np.testing.assert_allclose(h.interior, 0.25 * np.sum(pts**2, axis=1), atol=1e-10)


def test_legendre_of_skew_quadratic_is_close():
    g = PolynomialPotential.quadratic(H_SKEW).on(GridDomain.ball([0.0, 0.0], 1.0, 33))
    h = pde.legendre_transform(g, shrink=0.5)
    pts = h.stencil.interior_points
    exact = 0.5 * np.einsum("ia,ab,ib->i", pts, np.linalg.inv(H_SKEW), pts)
    assert np.max(np.abs(h.interior - exact)) < 1e-2


def test_legendre_of_quartic_matches_closed_form():
    quartic = PolynomialPotential(1, ((0.25, (4,)),))
    g = quartic.on(GridDomain.interval(0.5, 1.5, 257))
    h = pde.legendre_transform(g, shrink=0.9)
    y = h.stencil.interior_points[:, 0]
    assert np.all(y > 0)
    np.testing.assert_allclose(h.interior, 0.75 * y ** (4.0 / 3.0), atol=1e-4)


def test_legendre_applied_twice_returns_input():
    quartic = PolynomialPotential(1, ((0.25, (4,)),))
    g = quartic.on(GridDomain.interval(0.5, 1.5, 257))
    back = pde.legendre_transform(pde.legendre_transform(g, shrink=0.9), shrink=0.9, nodes=257)
    x = back.stencil.interior_points
    assert np.all(g.domain.contains(x))
    np.testing.assert_allclose(back.interior, quartic(x), atol=1e-4)

    square = PolynomialPotential.quadratic(2.0 * np.eye(2))
    g2 = square.on(GridDomain.ball([0.0, 0.0], 1.0, 33))
    back2 = pde.legendre_transform(pde.legendre_transform(g2, shrink=0.5), shrink=0.5)
    np.testing.assert_allclose(back2.interior, square(back2.stencil.interior_points), atol=1e-8)


def test_legendre_rejects_non_convex():
    g = PolynomialPotential.quadratic(-np.eye(1)).on(GridDomain.interval(-1, 1, 17))
    with pytest.raises(DomainError):
        pde.legendre_transform(g)


def test_gradient_image_shrinks():
    g = PolynomialPotential.half_square(2).on(GridDomain.ball([0.0, 0.0], 1.0, 17))
    grads = pde.gradient_image(g, 0.5)
    assert np.max(np.linalg.norm(grads, axis=1)) <= 0.5 + 1e-12
    assert len(grads) < g.stencil.m


def test_bian_guan_form_nonnegative(rng):
    for _ in range(100):
        n = int(rng.integers(2, 4))
        X = rng.normal(size=(n, n))
        A = X @ X.T + 0.5 * np.eye(n)
        Y = rng.normal(size=(n, n))
        B = Y @ Y.T + 0.5 * np.eye(n)
        Z = rng.normal(size=(n, n))
        E = Z + Z.T
        assert pde.bian_guan_form(B, float(rng.uniform(0, 3)), A, E) >= -1e-9
    assert pde.bian_guan_form(np.eye(2), 1.0, np.eye(2), np.zeros((2, 2))) == pytest.approx(0.0)
    with pytest.raises(DomainError):
        pde.bian_guan_form(np.eye(2), -1.0, np.eye(2), np.eye(2))


def test_problem_from_dict():
    prob = pde.DirichletProblem.from_dict(
        {
            "domain": {"kind": "ball", "center": [0, 0], "radius": 1.0, "nodes": 17},
            "target": "toric",
            "b_or_d": 0.5,
            "c": 2.0,
            "background": {"hessian": [[1, 0], [0, 1]]},
            "boundary": {"hessian": [[1, 0], [0, 1]]},
        }
    )
    assert prob.target == pde.Target.TORIC
    assert prob.floor == pytest.approx(2e-8)
    with pytest.raises(DomainError):
        pde.DirichletProblem.from_dict({"domain": {"kind": "ball", "center": [0, 0], "radius": 1.0, "nodes": 17}, "rhs": 1})
    with pytest.raises(DomainError):
        pde.DirichletProblem.from_dict({"target": "model"})
    with pytest.raises(DomainError):
        pde.DirichletProblem.from_dict(
            {"domain": {"kind": "ball", "center": [0, 0], "radius": 1.0, "nodes": 17}, "target": "hyperbolic"}
        )
