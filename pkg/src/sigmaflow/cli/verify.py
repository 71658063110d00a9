"""verify-all: run the acceptance battery and write a reproducible report."""

from __future__ import annotations

from typing import Any, Dict, Optional, Sequence

from sigmaflow.cli.outcome import EXIT_MATH, EXIT_OK, CommandOutcome, Log
from sigmaflow.cli.parser import RunConfig
from sigmaflow.core.battery import build_battery, run_battery
from sigmaflow.infra.artifacts import write_json


def verify_all(seed: int, tolerance_scale: float = 1.0, only: Optional[Sequence[str]] = None, log: Optional[Log] = None) -> Dict[str, Any]:
    battery = run_battery(build_battery(seed, tolerance_scale, only), log)
    return battery.to_dict()


def run_verify_all(cfg: RunConfig, log: Log) -> CommandOutcome:
    scale = cfg.tol if cfg.tol is not None else 1.0
    report = verify_all(cfg.seed, scale, cfg.only, log)
    outcome = CommandOutcome(EXIT_OK if report["all_passed"] else EXIT_MATH)
    # no timestamps: the report is byte-identical for a fixed seed
    outcome.add(write_json(cfg.out_dir / "verify_report.json", report))
    if report["failed"]:
        log(f"failing criteria: {', '.join(report['failed'])}")
    outcome.summary = {
        "command": cfg.command.value,
        "all_passed": report["all_passed"],
        "failed": report["failed"],
        "criteria": len(report["criteria"]),
    }
    return outcome
