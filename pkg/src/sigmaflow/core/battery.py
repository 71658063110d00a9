from __future__ import annotations

import json
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import flow, pde, toric
from .grids import GridDomain, PolynomialPotential
from .operators import OperatorSpec, Region, check_structural, epsilon_budget, evaluate
from .symfunc import (
    convexity_form,
    elem_sym,
    elem_sym_deleted,
    fd_gradient,
    fd_hessian,
    grad_inverse_sigma,
    hessian_inverse_sigma,
)
from .validators import DomainError


@dataclass
class Criterion:
    """One acceptance check: ``passed`` means value <= threshold * tolerance scale."""

    criterion_id: str
    title: str
    threshold: float
    value: float = math.nan
    passed: bool = False
    detail: str = ""
    selected: bool = True
    warning: str = ""

    def record(self, value: float, scale: float, detail: str = "") -> None:
        self.value = float(value)
        self.detail = detail
        self.passed = bool(not math.isnan(self.value) and self.value <= self.threshold * scale)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.criterion_id,
            "title": self.title,
            "passed": self.passed,
            "value": _json_float(self.value),
            "threshold": self.threshold,
            "detail": self.detail,
            "warning": self.warning,
        }


def _json_float(x: float) -> Any:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class Battery:
    """Ordered criteria plus derived warnings; deterministic for a fixed seed."""

    seed: int
    tolerance_scale: float = 1.0
    criteria: List[Criterion] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def selected_criteria(self) -> List[Criterion]:
        return [c for c in self.criteria if c.selected]

    def count_selected(self) -> int:
        return sum(1 for c in self.criteria if c.selected)

    def failed_ids(self) -> List[str]:
        return [c.criterion_id for c in self.selected_criteria() if not c.passed]

    @property
    def all_passed(self) -> bool:
        return not self.failed_ids()

    def add_warning(self, msg: str) -> None:
        if msg not in self.warnings:
            self.warnings.append(msg)

    def extend(self, criteria: Iterable[Criterion]) -> None:
        self.criteria.extend(list(criteria))

    def restrict(self, only: Optional[Sequence[str]]) -> None:
        if not only:
            return
        wanted = {x.strip().upper() for x in only if x.strip()}
        known = {c.criterion_id for c in self.criteria}
        unknown = sorted(wanted - known)
        if unknown:
            raise DomainError(f"Unknown criterion id(s): {', '.join(unknown)}")
        for c in self.criteria:
            c.selected = c.criterion_id in wanted

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "tolerance_scale": self.tolerance_scale,
            "criteria": [c.to_dict() for c in self.selected_criteria()],
            "all_passed": self.all_passed,
            "failed": self.failed_ids(),
            "warnings": list(self.warnings),
        }


# --- checks -----------------------------------------------------------------

CheckResult = Tuple[float, str]


def _log_uniform(rng: np.random.Generator, lo: float, hi: float, size) -> np.ndarray:
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=size))


def _random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    B = 0.5 * (X + X.conj().T)
    return B / np.linalg.norm(B)


def check_derivatives(rng: np.random.Generator) -> CheckResult:
    grad_err = 0.0
    hess_err = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 6))
        k = int(rng.integers(1, n + 1))
        lam = _log_uniform(rng, 0.5, 2.0, n)
        exact = grad_inverse_sigma(k, lam)
        approx = fd_gradient(k, lam)
        grad_err = max(grad_err, float(np.linalg.norm(exact - approx) / np.linalg.norm(approx)))
        H = hessian_inverse_sigma(k, lam)
        F = fd_hessian(k, lam)
        scale = max(np.max(np.abs(F.diag_pairs)), np.max(np.abs(F.swap_pairs)))
        diff = max(np.max(np.abs(H.diag_pairs - F.diag_pairs)), np.max(np.abs(H.swap_pairs - F.swap_pairs)))
        hess_err = max(hess_err, float(diff / scale))
    value = max(grad_err / 1e-6, hess_err / 1e-4)
    return value, f"gradient rel err {grad_err:.2e}, hessian rel err {hess_err:.2e}"


def check_convexity(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 5))
        weights = rng.uniform(0.0, 1.0, n)
        lam = _log_uniform(rng, 0.1, 10.0, n)
        spec = OperatorSpec.sigma(*weights)
        form = convexity_form(spec, lam, _random_hermitian(rng, n))
        scale = max(1.0, abs(evaluate(spec, lam)) / float(np.min(lam)) ** 2)
        worst = max(worst, -form / scale)
    delta = 0.5
    budgets = {n: epsilon_budget(delta, n) for n in (2, 3, 4)}
    for _ in range(1000):
        n = int(rng.integers(2, 5))
        spec = OperatorSpec.j_operator(n, epsilon=budgets[n], region=Region.floor(delta))
        lam = delta * _log_uniform(rng, 1.0 + 1e-9, 20.0, n)
        form = convexity_form(spec, lam, _random_hermitian(rng, n))
        scale = max(1.0, abs(evaluate(spec, lam)) / float(np.min(lam)) ** 2)
        worst = max(worst, -form / scale)
    return max(0.0, worst), f"most negative scaled form {-worst:.3e}"


def check_deletion_identity(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for n in range(1, 9):
        lam = _log_uniform(rng, 0.2, 5.0, n)
        for l in range(0, n + 1):
            total = sum(elem_sym_deleted(l, [i], lam) for i in range(1, n + 1))
            expected = (n - l) * elem_sym(l, lam)
            scale = max(abs(expected), abs(total), 1e-300)
            worst = max(worst, abs(total - expected) / scale)
    return worst, f"max relative error {worst:.2e}"


def check_structural_pure(rng: np.random.Generator) -> CheckResult:
    n = 3
    weights = rng.uniform(0.1, 1.0, n)
    seed = int(rng.integers(0, 2**31 - 1))
    report = check_structural(OperatorSpec.sigma(*weights), 500, (0.1, 10.0), seed=seed)
    excess = max(0.0, 1.0 - report.ratio_min) + max(0.0, report.ratio_max - n)
    value = len(report.failed()) + excess
    detail = f"failed conditions {report.failed() or 'none'}, ratio in [{report.ratio_min:.4f}, {report.ratio_max:.4f}]"
    return value, detail


def _bl_p(b: float, e: float) -> Tuple[toric.Polytope, toric.Polytope]:
    def polytope(t: float) -> toric.Polytope:
        return toric.Polytope.from_halfspaces(
            [
                toric.Halfspace((-1.0, 0.0), 0.0, "D1"),
                toric.Halfspace((0.0, -1.0), 0.0, "D2"),
                toric.Halfspace((-1.0, -1.0), -t, "E"),
                toric.Halfspace((1.0, 1.0), 1.0, "H"),
            ]
        )

    return polytope(b), polytope(e)


def check_toric(rng: np.random.Generator) -> CheckResult:
    a = 2.0
    simplex = toric.Polytope.from_vertices([[0, 0], [1, 0], [0, 1]])
    cp2 = toric.stability_report(simplex.scaled(a), simplex)
    errors = [abs(cp2.c - 2.0 / a) / 1e-9]
    verdicts_ok = cp2.verdict == toric.Verdict.SOLVABLE_J

    b, e = 0.1, 0.5
    P_chi, P_alpha = _bl_p(b, e)
    report = toric.stability_report(P_chi, P_alpha)
    oracle = 2.0 * (1.0 - b * e) / (1.0 - b * b) * b - e
    errors.append(abs(report.face("E").margin - oracle) / 1e-6)
    verdicts_ok = verdicts_ok and report.verdict == toric.Verdict.UNSTABLE

    P_chi, P_alpha = _bl_p(0.1, 0.1)
    balanced = toric.stability_report(P_chi, P_alpha)
    errors.append(abs(balanced.face("E").margin - 0.1) / 1e-9)
    verdicts_ok = verdicts_ok and balanced.verdict == toric.Verdict.SOLVABLE_J

    t = float(rng.uniform(0.5, 2.0))
    P, Q = _bl_p(0.1, 0.5)
    n = P.dim
    for k in range(n + 1):
        v = toric.mixed_volume(P, Q, k)
        errors.append(abs(v - toric.mixed_volume(Q, P, n - k)) / 1e-9)
        errors.append(abs(toric.mixed_volume(P.scaled(t), Q, k) - t**k * v) / 1e-9)
    value = max(errors) if verdicts_ok else math.inf
    detail = f"E margin {report.face('E').margin:.6f} (oracle {oracle:.6f}), verdicts {'ok' if verdicts_ok else 'wrong'}"
    return value, detail


def _flow_case(n: int, N: int) -> Tuple[flow.TorusProblem, flow.PotentialField]:
    spec = OperatorSpec.j_operator(n)
    if n == 1:
        prob = flow.TorusProblem.from_potential(N, [[4.0]], [[1.0]], spec)
        phi0 = flow.PotentialField.from_modes(prob.grid, [{"amplitude": 0.05, "wave": [1]}])
    else:
        prob = flow.TorusProblem.from_potential(N, np.diag([2.0, 3.0]), np.eye(2), spec)
        phi0 = flow.PotentialField.from_modes(
            prob.grid, [{"amplitude": 0.01, "wave": [1, 0]}, {"amplitude": 0.01, "wave": [0, 1], "phase": 0.3}]
        )
    return prob, phi0


def check_flows(rng: np.random.Generator, N: int = 64) -> CheckResult:
    values = []
    parts = []
    for n in (1, 2):
        prob, phi0 = _flow_case(n, N)
        result = flow.run(prob, phi0, tol=1e-5, t_max=50.0)
        if result.sup_violations or result.j_violations or not result.converged:
            return math.inf, f"n={n}: converged={result.converged}, violations sup={result.sup_violations} J={result.j_violations}"
        values.append(result.state.residual / 1e-5)
        if n == 1:
            values.append(result.state.phi.sup_norm() / 1e-5)
        parts.append(f"n={n}: t={result.state.t:.3f} residual={result.state.residual:.2e}")
    return max(values), "; ".join(parts)


def random_modes(rng: np.random.Generator, amplitude: float, count: int = 2) -> List[Dict[str, Any]]:
    waves = [[1, 0], [0, 1], [1, 1], [1, -1]]
    modes = []
    for _ in range(count):
        modes.append(
            {
                "amplitude": float(amplitude * rng.uniform(0.5, 1.0)),
                "wave": waves[int(rng.integers(0, len(waves)))],
                "phase": float(rng.uniform(0, 2 * math.pi)),
            }
        )
    return modes


def check_background_change(rng: np.random.Generator, N: int = 64) -> CheckResult:
    prob = flow.TorusProblem.from_potential(N, np.eye(2), np.eye(2), OperatorSpec.j_operator(2))
    worst = 0.0
    for _ in range(5):
        psi = flow.PotentialField.from_modes(prob.grid, random_modes(rng, 0.01))
        phi = flow.PotentialField.from_modes(prob.grid, random_modes(rng, 0.01))
        worst = max(worst, abs(flow.background_change_delta(prob, psi, phi, 65)))
    return worst, f"max discrepancy {worst:.2e}"


def _exp_solution(b: float):
    def exact(x):
        return 0.5 * np.exp(0.5 * np.sum(np.asarray(x) ** 2, axis=-1))

    def rhs(x):
        r2 = np.sum(np.asarray(x) ** 2, axis=-1)
        e = np.exp(0.5 * r2)
        return 0.5 * (2.0 + r2) * e + 0.25 * b * e * e * (1.0 + r2)

    return exact, rhs


def manufactured_errors(nodes: Sequence[int], b: float = 1.0) -> List[float]:
    exact, rhs = _exp_solution(b)
    errors = []
    for m in nodes:
        domain = GridDomain.rectangle([-1.0, -1.0], [1.0, 1.0], m)
        prob = pde.DirichletProblem(domain, None, b, boundary_data=exact, rhs=rhs)
        errors.append(pde.solve_model_dirichlet(prob).max_error(exact))
    return errors


@lru_cache(maxsize=1)
def _model_solutions() -> Dict[str, Any]:
    interval = pde.DirichletProblem(GridDomain.interval(-1.0, 1.0, 257), None, 1.0)
    disc = pde.DirichletProblem(GridDomain.ball([0.0, 0.0], 1.0, 129), None, 1.0)
    return {"interval": pde.solve_model_dirichlet(interval), "disc": pde.solve_model_dirichlet(disc)}


def check_model_exactness(rng: np.random.Generator) -> CheckResult:
    sols = _model_solutions()
    err_1d = sols["interval"].max_error(lambda x: (x[:, 0] ** 2 - 1.0) / 4.0)
    h0 = float(sols["disc"].sample([[0.0, 0.0]])[0])
    err_2d = abs(h0 + 1.0 / (2.0 * (1.0 + math.sqrt(2.0))))
    errors = manufactured_errors([17, 33, 65])
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    order_dev = max(abs(p - 2.0) for p in orders)
    value = max(err_1d / 1e-8, err_2d / 1e-5, order_dev / 0.2)
    return value, f"1D err {err_1d:.2e}, h(0) err {err_2d:.2e}, orders {orders[0]:.3f}/{orders[1]:.3f}"


def non_radial_problem(nodes: int) -> pde.DirichletProblem:
    boundary = PolynomialPotential.from_dict(
        {
            "monomials": [
                {"coef": 0.3, "powers": [2, 0]},
                {"coef": 0.15, "powers": [0, 2]},
                {"coef": 0.1, "powers": [1, 1]},
                {"coef": 0.05, "powers": [4, 0]},
            ]
        }
    )
    return pde.DirichletProblem(GridDomain.rectangle([-1.0, -1.0], [1.0, 1.0], nodes), None, 1.0, boundary_data=boundary)


def check_supersolution(rng: np.random.Generator) -> CheckResult:
    dyadic = GridDomain.rectangle([-1.0, -1.0], [1.0, 1.0], 9)
    quadratic = PolynomialPotential.quadratic(0.25 * np.eye(2)).on(dyadic)
    exact = pde.supersolution_check(quadratic, 8.0)
    positive = []
    for nodes in (17, 33):
        sol = pde.solve_model_dirichlet(non_radial_problem(nodes))
        report = pde.supersolution_check(sol, 1.0)
        positive.append((max(report.max_Lf, 0.0), sol.h))
    value = max(abs(exact.max_Lf) / 1e-12, positive[0][0] / positive[0][1], positive[1][0] / positive[1][1])
    if positive[1][0] > positive[0][0] + 1e-12:
        value = math.inf
    return value, f"quadratic max Lf {exact.max_Lf:.1e}; positive part {positive[0][0]:.2e} -> {positive[1][0]:.2e}"


def check_hessian_bound(rng: np.random.Generator) -> CheckResult:
    sols = list(_model_solutions().values())
    sols.append(pde.solve_model_dirichlet(non_radial_problem(33)))
    worst = max(pde.hessian_bound_check(u, 1.0) - math.sqrt(u.domain.n) for u in sols)
    return max(0.0, worst), f"max |D^2 u|_F - sqrt(n) = {worst:.3e}"


def _continuity_problem(c: float, nodes: int = 33) -> pde.DirichletProblem:
    quadratic = PolynomialPotential.half_square(2)
    return pde.DirichletProblem(
        GridDomain.ball([0.0, 0.0], 1.0, nodes), quadratic, 0.0, c=c, target=pde.Target.TORIC, boundary_data=quadratic
    )


def check_continuity(rng: np.random.Generator) -> CheckResult:
    path = pde.continuity_solve(_continuity_problem(2.0), 10.0, 0.0, 6, c_mode="class")
    if not path.completed:
        return math.inf, f"compatible path stalled at d={path.failing_d}"
    worst_residual = max(s.residual for s in path.stages)
    direct = pde.solve_toric_equation(_continuity_problem(2.0))
    agreement = float(np.max(np.abs(direct.interior - path.solutions[-1].interior)))
    stalled = pde.continuity_solve(_continuity_problem(1.4), 10.0, 0.0, 6, c_mode="class")
    if stalled.completed or not stalled.failing_d:
        return math.inf, "reduced c did not stall"
    value = max(worst_residual / 1e-9, agreement / 1e-8)
    return value, f"stage residual {worst_residual:.1e}, d=0 agreement {agreement:.1e}, reduced c stalls at d={stalled.failing_d:g}"


def check_determinism(rng: np.random.Generator) -> CheckResult:
    seed = int(rng.integers(0, 2**31 - 1))
    spec = OperatorSpec.sigma(1.0, 0.5, 0.25)
    first = check_structural(spec, 300, (0.1, 10.0), seed=seed, workers=1).to_dict()
    second = check_structural(spec, 300, (0.1, 10.0), seed=seed, workers=4).to_dict()
    same = json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)
    return (0.0 if same else 1.0), "identical reports" if same else "reports differ"


CHECKS: List[Tuple[str, str, float, Callable[[np.random.Generator], CheckResult]]] = [
    ("AC01", "inverse sigma_k derivatives match finite differences", 1.0, check_derivatives),
    ("AC02", "convexity inequality on pure and deflated operators", 1e-10, check_convexity),
    ("AC03", "deletion identity sum_i S_{l;i} = (n-l) S_l", 1e-12, check_deletion_identity),
    ("AC04", "structural conditions and ratio bound for sum c_k S_k", 0.0, check_structural_pure),
    ("AC05", "toric stability verdicts and mixed volumes", 1.0, check_toric),
    ("AC06", "flow convergence with monotone sup F and J", 1.0, check_flows),
    ("AC07", "change-of-background identity for J", 1e-4, check_background_change),
    ("AC08", "model Dirichlet exactness and second-order convergence", 1.0, check_model_exactness),
    ("AC09", "supersolution property of det(D^2 h)^(1/n)", 1.0, check_supersolution),
    ("AC10", "Hessian bound |D^2 u| <= sqrt(n)", 1e-8, check_hessian_bound),
    ("AC11", "continuity path in d and its obstruction", 1.0, check_continuity),
    ("AC12", "seeded sampling is reproducible", 0.0, check_determinism),
]


def build_battery(seed: int, tolerance_scale: float = 1.0, only: Optional[Sequence[str]] = None) -> Battery:
    if tolerance_scale < 0:
        raise DomainError(f"Tolerance scale must be nonnegative, got {tolerance_scale}.")
    battery = Battery(seed=seed, tolerance_scale=tolerance_scale)
    battery.extend(Criterion(cid, title, threshold) for cid, title, threshold, _ in CHECKS)
    battery.restrict(only)
    return battery


def run_battery(battery: Battery, log: Optional[Callable[[str], None]] = None) -> Battery:
    checks = {cid: fn for cid, _, _, fn in CHECKS}
    for index, criterion in enumerate(battery.criteria):
        if not criterion.selected:
            continue
        rng = np.random.default_rng([battery.seed, index])
        try:
            value, detail = checks[criterion.criterion_id](rng)
        except (DomainError, pde.NonConvergence, toric.NumericError, np.linalg.LinAlgError) as exc:
            criterion.record(math.inf, battery.tolerance_scale, f"{type(exc).__name__}: {exc}")
            criterion.warning = "check raised"
            battery.add_warning(f"{criterion.criterion_id} raised {type(exc).__name__}")
        else:
            criterion.record(value, battery.tolerance_scale, detail)
        if log is not None:
            log(f"{criterion.criterion_id} {'PASS' if criterion.passed else 'FAIL'}: {criterion.detail}")
    return battery
