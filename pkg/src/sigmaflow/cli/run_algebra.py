"""check-operator and toric-stability."""

from __future__ import annotations

from typing import Any, Dict, List

import numpy as np

from sigmaflow.cli.config import ConfigError, check_keys, get_bool, get_float, get_int, get_list, section
from sigmaflow.cli.outcome import EXIT_MATH, EXIT_OK, CommandOutcome, Log
from sigmaflow.cli.parser import RunConfig
from sigmaflow.core import toric
from sigmaflow.core.operators import OperatorSpec, check_structural, cone_coefficients, epsilon_budget, subsolution_margin
from sigmaflow.infra.artifacts import write_csv, write_json


def _margins(spec: OperatorSpec, data: Dict[str, Any]) -> Dict[str, Any]:
    check_keys(data, {"c", "spectra"}, {"c", "spectra"}, "margins")
    c = get_float(data, "c", None, "margins")
    out: List[Dict[str, Any]] = []
    for mu in get_list(data, "spectra", [], "margins"):
        mu = np.asarray(mu, dtype=float)
        out.append(
            {
                "mu": mu.tolist(),
                "margin": float(subsolution_margin(spec, c, mu)),
                "cone_coefficients": cone_coefficients(spec, c, mu).tolist(),
            }
        )
    return {"c": c, "points": out}


def run_check_operator(cfg: RunConfig, data: Dict[str, Any], log: Log) -> CommandOutcome:
    check_keys(data, {"operator", "samples", "box", "restrict", "margins", "budget"}, {"operator"})
    spec = section(data, "operator", OperatorSpec.from_dict)
    samples = get_int(data, "samples", 1000)
    box = get_list(data, "box", [0.1, 10.0])
    if len(box) != 2 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in box):
        raise ConfigError("expected [lo, hi]", "box")
    restrict = get_bool(data, "restrict", False)

    report = check_structural(
        spec, samples, (box[0], box[1]), seed=cfg.seed, workers=cfg.settings.worker_count(), restrict=restrict, log=log
    )
    outcome = CommandOutcome(EXIT_OK if report.all_passed else EXIT_MATH)
    outcome.add(write_json(cfg.out_dir / "structural_report.json", report.to_dict()))
    outcome.summary = {"command": cfg.command.value, "all_passed": report.all_passed, "failed": report.failed()}

    if "margins" in data:
        margins = section(data, "margins", lambda m: _margins(spec, m))
        outcome.add(write_json(cfg.out_dir / "margins.json", margins))
        outcome.summary["min_margin"] = min((p["margin"] for p in margins["points"]), default=None)
    if "budget" in data:
        budget = check_keys(data["budget"], {"delta", "n"}, {"delta", "n"}, "budget")
        eps = epsilon_budget(get_float(budget, "delta", None, "budget"), get_int(budget, "n", None, "budget"), seed=cfg.seed)
        outcome.summary["epsilon_budget"] = eps
    outcome.write_summary(cfg.out_dir)
    return outcome


def run_toric_stability(cfg: RunConfig, data: Dict[str, Any], log: Log) -> CommandOutcome:
    check_keys(data, {"chi", "alpha", "c"}, {"chi", "alpha"})
    P_chi = section(data, "chi", toric.Polytope.from_dict)
    P_alpha = section(data, "alpha", toric.Polytope.from_dict)
    c = get_float(data, "c", None)
    margin_tol = cfg.tol if cfg.tol is not None else cfg.settings.margin_tol

    report = toric.stability_report(P_chi, P_alpha, c, margin_tol=margin_tol)
    log(f"c = {report.c:.6g}, verdict {report.verdict.value}" + (f" (witness {report.witness})" if report.witness else ""))
    unstable = report.verdict == toric.Verdict.UNSTABLE
    outcome = CommandOutcome(EXIT_MATH if (unstable and cfg.expect_stable) else EXIT_OK)
    payload = report.to_dict()
    if P_chi.dim == 2:
        payload["edge_pairings"] = toric.difference_pairings(P_chi, P_alpha, report.c)
    outcome.add(write_json(cfg.out_dir / "stability_report.json", payload))
    outcome.add(write_csv(cfg.out_dir / "faces.csv", ["face", "dim", "margin"], report.csv_rows()))
    outcome.summary = {
        "command": cfg.command.value,
        "c": report.c,
        "verdict": report.verdict.value,
        "witness": report.witness,
    }
    outcome.write_summary(cfg.out_dir)
    return outcome
