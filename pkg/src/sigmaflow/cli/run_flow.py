"""flow: integrate the torus flow and dump trace, summary and final potential."""

from __future__ import annotations

from typing import Any, Dict

from sigmaflow.cli.config import check_keys, get_float, get_int, get_str, section
from sigmaflow.cli.outcome import EXIT_MATH, EXIT_OK, CommandOutcome, Log
from sigmaflow.cli.parser import RunConfig
from sigmaflow.core import flow
from sigmaflow.infra.artifacts import write_csv, write_json, write_potential_grid


TRACE_HEADER = ["t", "residual", "sup_F", "J", "dt", "volume"]


def run_flow(cfg: RunConfig, data: Dict[str, Any], log: Log) -> CommandOutcome:
    check_keys(data, {"problem", "phi0", "tol", "t_max", "scheme", "dt", "trace_every"}, {"problem"})
    prob = section(data, "problem", flow.TorusProblem.from_dict)
    phi0 = flow.PotentialField.zeros(prob.grid)
    if "phi0" in data:
        phi0 = section(data, "phi0", lambda d: flow.PotentialField.from_dict(prob.grid, d))
    settings = cfg.settings
    tol = cfg.tol if cfg.tol is not None else get_float(data, "tol", settings.flow_tol)
    t_max = get_float(data, "t_max", settings.flow_t_max)
    scheme = get_str(data, "scheme", "euler", ("euler", "semi-implicit"))
    dt = get_float(data, "dt", None)
    trace_every = get_int(data, "trace_every", 1)

    result = flow.run(
        prob, phi0, tol, t_max, scheme=scheme, dt=dt, trace_every=trace_every, path_steps=settings.path_steps, log=log
    )
    outcome = CommandOutcome(EXIT_OK if result.converged else EXIT_MATH)
    rows = [[r.t, r.residual, r.sup_F, r.J, r.dt, r.volume] for r in result.trace]
    outcome.add(write_csv(cfg.out_dir / "trace.csv", TRACE_HEADER, rows))
    outcome.add(write_potential_grid(cfg.out_dir / "phi.csv", prob.to_header(), result.state.phi.values))
    summary = result.summary()
    summary["c_eps_from_classes"] = flow.normalizing_constant(prob)
    summary["energy"] = flow.energy_functional(prob, result.state.phi)
    outcome.summary = {"command": cfg.command.value, **summary}
    if not result.converged:
        log(f"flow stopped at t={result.state.t:g} with residual {result.state.residual:.3e}")
    outcome.add(write_json(cfg.out_dir / "flow_summary.json", summary))
    outcome.write_summary(cfg.out_dir)
    return outcome
