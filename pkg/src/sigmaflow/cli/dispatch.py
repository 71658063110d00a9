from __future__ import annotations

import sys
from typing import Any, Callable, Dict

import numpy as np

from sigmaflow.cli.config import ConfigError, load_json
from sigmaflow.cli.outcome import EXIT_INPUT, EXIT_MATH, CommandOutcome, Log
from sigmaflow.cli.parser import Command, RunConfig
from sigmaflow.cli.run_algebra import run_check_operator, run_toric_stability
from sigmaflow.cli.run_flow import run_flow
from sigmaflow.cli.run_pde import run_continuity, run_legendre, run_solve_model, run_solve_toric
from sigmaflow.cli.verify import run_verify_all
from sigmaflow.core.flow import DegenerateMetricError
from sigmaflow.core.pde import NonConvergence
from sigmaflow.core.toric import NumericError
from sigmaflow.core.validators import DomainError
from sigmaflow.infra.journal import append_journal


Runner = Callable[[RunConfig, Dict[str, Any], Log], CommandOutcome]

RUNNERS: Dict[Command, Runner] = {
    Command.CHECK_OPERATOR: run_check_operator,
    Command.TORIC_STABILITY: run_toric_stability,
    Command.FLOW: run_flow,
    Command.SOLVE_MODEL: run_solve_model,
    Command.SOLVE_TORIC: run_solve_toric,
    Command.CONTINUITY: run_continuity,
    Command.LEGENDRE: run_legendre,
}


def stderr_log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _execute(config: RunConfig, log: Log) -> CommandOutcome:
    if config.command == Command.VERIFY_ALL:
        return run_verify_all(config, log)
    data = load_json(config.config_path)
    return RUNNERS[config.command](config, data, log)


def dispatch(config: RunConfig, log: Log = stderr_log) -> CommandOutcome:
    """Run one command; failures become exit statuses, never tracebacks."""
    try:
        outcome = _execute(config, log)
    except ConfigError as exc:
        log(f"config error: {exc}")
        outcome = CommandOutcome(EXIT_INPUT, {"command": config.command.value, "error": str(exc), "key_path": exc.key_path})
    except DegenerateMetricError as exc:
        log(f"degenerate metric: {exc}")
        outcome = CommandOutcome(EXIT_MATH, {"command": config.command.value, "error": str(exc)})
    except DomainError as exc:
        log(f"{type(exc).__name__}: {exc}")
        outcome = CommandOutcome(EXIT_INPUT, {"command": config.command.value, "error": str(exc)})
    except OSError as exc:
        log(f"I/O error: {exc}")
        outcome = CommandOutcome(EXIT_INPUT, {"command": config.command.value, "error": str(exc)})
    except (NonConvergence, NumericError, np.linalg.LinAlgError) as exc:
        log(f"{type(exc).__name__}: {exc}")
        outcome = CommandOutcome(EXIT_MATH, {"command": config.command.value, "error": str(exc)})

    append_journal(
        {
            "command": config.command.value,
            "config": str(config.config_path) if config.config_path else None,
            "out": str(config.out_dir),
            "status": outcome.status,
            "summary": outcome.summary,
        }
    )
    return outcome
