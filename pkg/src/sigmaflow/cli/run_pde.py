"""solve-model, solve-toric, continuity and legendre."""

from __future__ import annotations

from dataclasses import replace
from typing import Any, Dict, Optional

import numpy as np

from sigmaflow.cli.config import check_keys, get_bool, get_float, get_int, get_str, section
from sigmaflow.cli.outcome import EXIT_MATH, EXIT_OK, CommandOutcome, Log
from sigmaflow.cli.parser import RunConfig
from sigmaflow.core import pde
from sigmaflow.core.grids import ConvexGridFunction, GridDomain, PolynomialPotential
from sigmaflow.core.validators import DomainError
from sigmaflow.infra.artifacts import write_csv, write_json, write_points


NEWTON_HEADER = ["iter", "residual", "damping", "min_eig"]


def _problem(cfg: RunConfig, data: Dict[str, Any]) -> pde.DirichletProblem:
    prob = section(data, "problem", pde.DirichletProblem.from_dict)
    if prob.convexity_floor is None:
        prob = replace(prob, convexity_floor=cfg.settings.convexity_floor * prob.domain.scale)
    return prob


def _write_solution(outcome: CommandOutcome, cfg: RunConfig, u: ConvexGridFunction, name: str = "solution.csv") -> None:
    outcome.add(write_points(cfg.out_dir / name, u.points(), u.values(), "u"))


def _newton(
    cfg: RunConfig, data: Dict[str, Any], log: Log, solve, default_tol: float
) -> tuple[CommandOutcome, Optional[ConvexGridFunction], pde.DirichletProblem]:
    prob = _problem(cfg, data)
    tol = cfg.tol if cfg.tol is not None else get_float(data, "tol", default_tol)
    max_iter = get_int(data, "max_iter", pde.MAX_ITER)
    history = pde.NewtonLog()
    try:
        u = solve(prob, tol=tol, max_iter=max_iter, trace=history, log=log)
    except pde.NonConvergence as exc:
        log(str(exc))
        outcome = CommandOutcome(EXIT_MATH)
        outcome.add(write_csv(cfg.out_dir / "newton_log.csv", NEWTON_HEADER, history.csv_rows()))
        if exc.last_iterate is not None:
            _write_solution(outcome, cfg, exc.last_iterate, "last_iterate.csv")
        outcome.summary = {
            "command": cfg.command.value,
            "converged": False,
            "reason": history.reason,
            "iterations": history.iterations,
            "residual": history.residuals[-1] if history.records else None,
        }
        return outcome, None, prob
    outcome = CommandOutcome(EXIT_OK)
    outcome.add(write_csv(cfg.out_dir / "newton_log.csv", NEWTON_HEADER, history.csv_rows()))
    _write_solution(outcome, cfg, u)
    outcome.summary = {
        "command": cfg.command.value,
        "converged": True,
        "target": prob.target.value,
        "iterations": history.iterations,
        "residual": history.residuals[-1],
        "min_hessian_eigenvalue": u.min_hessian_eigenvalue(),
        "domain": prob.domain.to_dict(),
    }
    return outcome, u, prob


def run_solve_model(cfg: RunConfig, data: Dict[str, Any], log: Log) -> CommandOutcome:
    check_keys(data, {"problem", "tol", "max_iter"}, {"problem"})
    outcome, u, prob = _newton(cfg, data, log, pde.solve_model_dirichlet, cfg.settings.newton_tol)
    if u is not None and prob.target == pde.Target.MODEL:
        bound = pde.hessian_bound_check(u, prob.b_or_d)
        outcome.summary["hessian_bound"] = {"max_frobenius": bound, "sqrt_n": float(np.sqrt(prob.domain.n))}
        report = pde.supersolution_check(u, prob.b_or_d)
        if report.warning:
            log(report.warning)
        outcome.summary["supersolution"] = report.to_dict()
        if len(report.values):
            outcome.add(write_points(cfg.out_dir / "supersolution.csv", report.points, report.values, "Lf"))
    outcome.write_summary(cfg.out_dir)
    return outcome


def run_solve_toric(cfg: RunConfig, data: Dict[str, Any], log: Log) -> CommandOutcome:
    check_keys(data, {"problem", "tol", "max_iter"}, {"problem"})
    outcome, g, prob = _newton(cfg, data, log, pde.solve_toric_equation, cfg.settings.toric_newton_tol)
    if g is not None:
        outcome.summary["identity_residual"] = pde.toric_identity_residual(prob, g)
    outcome.write_summary(cfg.out_dir)
    return outcome


def run_continuity(cfg: RunConfig, data: Dict[str, Any], log: Log) -> CommandOutcome:
    check_keys(data, {"problem", "d_start", "d_end", "stages", "c_mode", "tol"}, {"problem", "d_start"})
    prob = _problem(cfg, data)
    d_start = get_float(data, "d_start", None)
    d_end = get_float(data, "d_end", 0.0)
    stages = get_int(data, "stages", 8)
    c_mode = get_str(data, "c_mode", "fixed", ("fixed", "class"))
    tol = cfg.tol if cfg.tol is not None else get_float(data, "tol", cfg.settings.toric_newton_tol)

    path = pde.continuity_solve(prob, d_start, d_end, stages, c_mode=c_mode, tol=tol, log=log)
    outcome = CommandOutcome(EXIT_OK if path.completed else EXIT_MATH)
    rows = [[s.d, s.c, s.iterations, s.residual, s.converged, s.reason] for s in path.stages]
    outcome.add(write_csv(cfg.out_dir / "stages.csv", ["d", "c", "iterations", "residual", "converged", "reason"], rows))
    outcome.add(write_json(cfg.out_dir / "continuity.json", path.to_dict()))
    if path.solutions:
        _write_solution(outcome, cfg, path.solutions[-1])
    outcome.summary = {
        "command": cfg.command.value,
        "completed": path.completed,
        "smallest_d": path.smallest_d,
        "failing_d": path.failing_d,
        "c_mode": c_mode,
    }
    outcome.write_summary(cfg.out_dir)
    return outcome


def _function(data: Dict[str, Any]) -> ConvexGridFunction:
    check_keys(data, {"domain", "potential"}, {"domain", "potential"}, "function")
    domain = GridDomain.from_dict(data["domain"])
    return PolynomialPotential.from_dict(data["potential"], domain.n).on(domain)


def run_legendre(cfg: RunConfig, data: Dict[str, Any], log: Log) -> CommandOutcome:
    check_keys(data, {"function", "shrink", "nodes", "involution"}, {"function"})
    g = section(data, "function", _function)
    shrink = get_float(data, "shrink", 0.9)
    nodes = get_int(data, "nodes", None)
    if not 0.0 < shrink <= 1.0:
        raise DomainError(f"shrink must lie in (0, 1], got {shrink}.")

    h = pde.legendre_transform(g, shrink=shrink, nodes=nodes)
    outcome = CommandOutcome(EXIT_OK)
    _write_solution(outcome, cfg, h, "transform.csv")
    image = pde.gradient_image(g, shrink)
    nested = bool(np.all(h.domain.contains(image))) if len(image) else True
    outcome.summary = {
        "command": cfg.command.value,
        "domain": h.domain.to_dict(),
        "min_hessian_eigenvalue": h.min_hessian_eigenvalue(),
        "gradient_image_nested": nested,
    }
    if get_bool(data, "involution", False):
        back = pde.legendre_transform(h, shrink=shrink, nodes=g.domain.nodes)
        pts = back.stencil.interior_points
        inside = g.domain.contains(pts)
        error = float(np.max(np.abs(back.interior[inside] - g.sample(pts[inside])))) if np.any(inside) else float("nan")
        outcome.summary["involution_error"] = error
        log(f"legendre involution error {error:.3e} on {int(np.sum(inside))} nodes")
    outcome.write_summary(cfg.out_dir)
    return outcome
