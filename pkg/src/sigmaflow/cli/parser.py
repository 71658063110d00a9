from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence

from sigmaflow import __version__
from sigmaflow.infra.settings import AppSettings


class Command(str, Enum):
    CHECK_OPERATOR = "check-operator"
    TORIC_STABILITY = "toric-stability"
    FLOW = "flow"
    SOLVE_MODEL = "solve-model"
    SOLVE_TORIC = "solve-toric"
    CONTINUITY = "continuity"
    LEGENDRE = "legendre"
    VERIFY_ALL = "verify-all"


@dataclass
class RunConfig:
    command: Command
    config_path: Optional[Path]
    out_dir: Path
    seed: int
    tol: Optional[float] = None
    expect_stable: bool = False
    only: List[str] = field(default_factory=list)
    settings: AppSettings = field(default_factory=AppSettings)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigmaflow",
        description="Numerical toolkit for inverse sigma_k type equations: operator checks, toric criteria, flows and convex PDE solvers.",
    )
    parser.add_argument("command", choices=[c.value for c in Command], help="pipeline to run")
    parser.add_argument("--config", type=Path, default=None, help="JSON problem config")
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: <data dir>/runs/<command>)")
    parser.add_argument("--seed", type=int, default=None, help="seed for sampled checks")
    parser.add_argument("--tol", type=float, default=None, help="primary tolerance; for verify-all a threshold scale")
    parser.add_argument("--expect-stable", action="store_true", help="exit 1 on an unstable verdict")
    parser.add_argument("--only", default="", help="verify-all: comma-separated criterion ids")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def to_run_config(ns: argparse.Namespace, settings: AppSettings) -> RunConfig:
    command = Command(ns.command)
    out_dir = ns.out if ns.out is not None else settings.resolved_output_dir() / command.value
    return RunConfig(
        command=command,
        config_path=ns.config,
        out_dir=Path(out_dir),
        seed=settings.default_seed if ns.seed is None else ns.seed,
        tol=ns.tol,
        expect_stable=bool(ns.expect_stable),
        only=[x for x in ns.only.split(",") if x.strip()],
        settings=settings,
    )


def parse_args(argv: Optional[Sequence[str]], settings: AppSettings) -> RunConfig:
    return to_run_config(build_parser().parse_args(argv), settings)
