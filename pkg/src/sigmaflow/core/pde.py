"""Convex Dirichlet problems: the model equation, the toric equation and its continuity path.

All solvers share one damped Newton loop. A step is accepted only when the
discrete Hessian keeps its convexity floor and the residual sup-norm drops;
otherwise the damping factor is halved.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
import math
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.linalg import sqrtm
from scipy.sparse.linalg import spsolve
from scipy.spatial import ConvexHull, QhullError

from .grids import ConvexGridFunction, DomainKind, GridDomain, PolynomialPotential, components
from .symfunc import convexity_form
from .validators import DomainError


MODEL_TOL = 1e-10
TORIC_TOL = 1e-9
MAX_ITER = 50
MIN_DAMPING = 2.0**-20
RESIDUAL_WARNING = 1e-6
CLASS_MASS_RTOL = 1e-6


class Target(str, Enum):
    MODEL = "model"
    VARIABLE = "variable"
    TORIC = "toric"


@dataclass
class NewtonRecord:
    iteration: int
    residual: float
    damping: float
    min_eig: float


@dataclass
class NewtonLog:
    records: List[NewtonRecord] = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    def append(self, record: NewtonRecord) -> None:
        self.records.append(record)

    @property
    def residuals(self) -> List[float]:
        return [r.residual for r in self.records]

    @property
    def iterations(self) -> int:
        return max(0, len(self.records) - 1)

    def csv_rows(self) -> List[List[Any]]:
        return [[r.iteration, r.residual, r.damping, r.min_eig] for r in self.records]


class NonConvergence(RuntimeError):
    def __init__(self, message: str, last_iterate: Optional[ConvexGridFunction] = None, history: Optional[NewtonLog] = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.history = history


Potential = Any  # PolynomialPotential, ConvexGridFunction or any object with __call__ / hessian_at


@dataclass
class DirichletProblem:
    domain: GridDomain
    f_background: Optional[Potential]
    b_or_d: float
    c: float = 1.0
    target: Target = Target.MODEL
    boundary_data: Optional[Potential] = None
    rhs: Optional[Callable[[np.ndarray], np.ndarray]] = None
    convexity_floor: Optional[float] = None

    def __post_init__(self) -> None:
        self.target = Target(self.target)
        if self.b_or_d < 0:
            raise DomainError(f"The determinant weight must be nonnegative, got {self.b_or_d}.")
        if self.target != Target.MODEL:
            if self.f_background is None:
                raise DomainError(f"Target {self.target.value} needs a background potential.")
            if self.c <= 0:
                raise DomainError(f"c must be positive, got {self.c}.")

    @property
    def floor(self) -> float:
        """Convexity floor tau; defaults to 1e-8 times the domain scale."""
        if self.convexity_floor is not None:
            return self.convexity_floor
        return 1e-8 * self.domain.scale

    def boundary_function(self) -> ConvexGridFunction:
        if self.boundary_data is None:
            return ConvexGridFunction.from_function(self.domain, lambda x: np.zeros(len(x)))
        if isinstance(self.boundary_data, ConvexGridFunction):
            return self.boundary_data
        return ConvexGridFunction.from_function(self.domain, self.boundary_data)

    def background_hessian(self) -> np.ndarray:
        """D^2 f at the interior nodes; exact for polynomial backgrounds."""
        st = self.domain.stencil()
        f = self.f_background
        if isinstance(f, ConvexGridFunction) and f.domain == self.domain:
            return f.hessian()
        return np.asarray(f.hessian_at(st.interior_points), dtype=float)

    def rhs_values(self) -> np.ndarray:
        st = self.domain.stencil()
        if self.rhs is None:
            return np.ones(st.m)
        return np.asarray(self.rhs(st.interior_points), dtype=float)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DirichletProblem":
        allowed = {"domain", "target", "b_or_d", "c", "background", "boundary", "convexity_floor"}
        for key in data:
            if key not in allowed:
                raise DomainError(f"Unknown problem key: {key}")
        if "domain" not in data:
            raise DomainError("Problem is missing key: domain")
        domain = GridDomain.from_dict(data["domain"])
        background = PolynomialPotential.from_dict(data["background"], domain.n) if "background" in data else None
        boundary = PolynomialPotential.from_dict(data["boundary"], domain.n) if "boundary" in data else None
        try:
            target = Target(data.get("target", "model"))
        except ValueError as exc:
            raise DomainError(f"Unknown target: {data.get('target')}") from exc
        floor = data.get("convexity_floor")
        return cls(
            domain=domain,
            f_background=background,
            b_or_d=float(data.get("b_or_d", 0.0)),
            c=float(data.get("c", 1.0)),
            target=target,
            boundary_data=boundary,
            convexity_floor=None if floor is None else float(floor),
        )


def _adjugate(H: np.ndarray) -> np.ndarray:
    n = H.shape[-1]
    if n == 1:
        return np.ones_like(H)
    out = np.empty_like(H)
    out[..., 0, 0] = H[..., 1, 1]
    out[..., 1, 1] = H[..., 0, 0]
    out[..., 0, 1] = -H[..., 0, 1]
    out[..., 1, 0] = -H[..., 1, 0]
    return out


Residual = Callable[[ConvexGridFunction], Tuple[np.ndarray, np.ndarray]]


def _model_residual(prob: DirichletProblem) -> Residual:
    b = prob.b_or_d
    rhs = prob.rhs_values()

    def fn(u: ConvexGridFunction) -> Tuple[np.ndarray, np.ndarray]:
        H = u.hessian()
        R = np.trace(H, axis1=-2, axis2=-1) + b * np.linalg.det(H) - rhs
        P = np.eye(H.shape[-1]) + b * _adjugate(H)
        return R, P

    return fn


def _toric_residual(prob: DirichletProblem) -> Residual:
    d = prob.b_or_d
    c = prob.c
    F = prob.background_hessian()
    det_F = np.linalg.det(F)

    def fn(g: ConvexGridFunction) -> Tuple[np.ndarray, np.ndarray]:
        G = g.hessian()
        Gi = np.linalg.inv(G)
        ratio = det_F / np.linalg.det(G)
        R = np.einsum("...ab,...ba->...", Gi, F) + d * ratio - c
        P = -(Gi @ F @ Gi + d * ratio[..., None, None] * Gi)
        return R, P

    return fn


def _variable_residual(prob: DirichletProblem) -> Residual:
    b = prob.b_or_d
    rhs = prob.rhs_values()
    f = prob.f_background

    def fn(h: ConvexGridFunction) -> Tuple[np.ndarray, np.ndarray]:
        H = h.hessian()
        A = np.asarray(f.hessian_at(h.gradient()), dtype=float)
        det_A = np.linalg.det(A)
        R = np.einsum("...ab,...ab->...", A, H) + b * det_A * np.linalg.det(H) - rhs
        # coefficients frozen at the current gradient
        P = A + b * det_A[..., None, None] * _adjugate(H)
        return R, P

    return fn


def _jacobian(u: ConvexGridFunction, P: np.ndarray) -> sparse.csr_matrix:
    st = u.stencil
    J = sparse.csr_matrix((st.m, st.m))
    for a, b in components(u.domain.n):
        weight = P[:, a, b] if a == b else 2.0 * P[:, a, b]
        J = J + sparse.diags(weight) @ st.second[(a, b)][0]
    return J.tocsr()


def _min_eig(u: ConvexGridFunction) -> float:
    return u.min_hessian_eigenvalue()


def newton_solve(
    u0: ConvexGridFunction,
    residual: Residual,
    *,
    floor: float,
    tol: float,
    max_iter: int = MAX_ITER,
    trace: Optional[NewtonLog] = None,
    log: Optional[Callable[[str], None]] = None,
) -> ConvexGridFunction:
    """Damped Newton on the interior values of ``u0`` (boundary values stay fixed)."""
    history = trace if trace is not None else NewtonLog()
    u = u0
    R, P = residual(u)
    res = float(np.max(np.abs(R)))
    eig = _min_eig(u)
    history.append(NewtonRecord(0, res, 1.0, eig))
    for it in range(1, max_iter + 1):
        if res < tol:
            break
        delta = spsolve(_jacobian(u, P), -R)
        # never let the convexity certificate drop below the floor (or below where it already is)
        threshold = min(floor, eig)
        damping = 1.0
        accepted = False
        while damping >= MIN_DAMPING:
            trial = u.with_interior(u.interior + damping * delta)
            trial_eig = _min_eig(trial)
            if trial_eig >= threshold:
                R_t, P_t = residual(trial)
                res_t = float(np.max(np.abs(R_t)))
                if np.isfinite(res_t) and res_t < res:
                    u, R, P, res, eig = trial, R_t, P_t, res_t, trial_eig
                    accepted = True
                    break
            damping /= 2.0
        if not accepted:
            history.reason = "stagnation"
            raise NonConvergence(f"Newton stagnated at iteration {it} with residual {res:.3e}.", u, history)
        history.append(NewtonRecord(it, res, damping, eig))
        if log is not None:
            log(f"newton {it}: residual={res:.3e} damping={damping:g} min_eig={eig:.3e}")
    if res >= tol:
        history.reason = "max-iterations"
        raise NonConvergence(f"Newton did not reach {tol:g} in {max_iter} iterations (residual {res:.3e}).", u, history)
    history.converged = True
    history.reason = "tolerance"
    return u


def poisson_solve(domain: GridDomain, rhs: np.ndarray, boundary: np.ndarray) -> ConvexGridFunction:
    """Delta u = rhs with the given Dirichlet values."""
    st = domain.stencil()
    L_int = sparse.csr_matrix((st.m, st.m))
    L_bnd = sparse.csr_matrix((st.m, st.k))
    for a in range(domain.n):
        A_int, A_bnd = st.second[(a, a)]
        L_int = L_int + A_int
        L_bnd = L_bnd + A_bnd
    interior = spsolve(L_int.tocsc(), np.asarray(rhs, dtype=float) - L_bnd @ boundary)
    return ConvexGridFunction(domain, interior, boundary)


def _initial_guess(prob: DirichletProblem, initial: Optional[ConvexGridFunction]) -> ConvexGridFunction:
    if initial is not None:
        return initial
    guess = prob.boundary_function()
    if _min_eig(guess) >= prob.floor:
        return guess
    rhs = prob.rhs_values() if prob.target == Target.MODEL else np.full(guess.stencil.m, float(prob.domain.n))
    return poisson_solve(prob.domain, rhs, guess.boundary)


def solve_model_dirichlet(
    prob: DirichletProblem,
    *,
    initial: Optional[ConvexGridFunction] = None,
    tol: float = MODEL_TOL,
    max_iter: int = MAX_ITER,
    trace: Optional[NewtonLog] = None,
    log: Optional[Callable[[str], None]] = None,
) -> ConvexGridFunction:
    """Delta h + b det D^2 h = rhs (default 1), or the variable-coefficient form for target ``variable``."""
    if prob.target == Target.TORIC:
        raise DomainError("Use solve_toric_equation for the toric target.")
    residual = _variable_residual(prob) if prob.target == Target.VARIABLE else _model_residual(prob)
    iterations = max_iter if prob.target == Target.MODEL else 4 * max_iter
    return newton_solve(
        _initial_guess(prob, initial), residual, floor=prob.floor, tol=tol, max_iter=iterations, trace=trace, log=log
    )


def solve_toric_equation(
    prob: DirichletProblem,
    *,
    initial: Optional[ConvexGridFunction] = None,
    tol: float = TORIC_TOL,
    max_iter: int = MAX_ITER,
    trace: Optional[NewtonLog] = None,
    log: Optional[Callable[[str], None]] = None,
) -> ConvexGridFunction:
    """tr((D^2 g)^{-1} D^2 f) + d det D^2 f / det D^2 g = c for g."""
    if prob.target != Target.TORIC:
        raise DomainError(f"solve_toric_equation needs target toric, got {prob.target.value}.")
    F = prob.background_hessian()
    low = float(np.min(np.linalg.eigvalsh(F)))
    if low < prob.floor:
        raise DomainError(f"Background is not strictly convex (min Hessian eigenvalue {low:.3e}).")
    return newton_solve(
        _initial_guess(prob, initial), _toric_residual(prob), floor=prob.floor, tol=tol, max_iter=max_iter, trace=trace, log=log
    )


def toric_identity_residual(prob: DirichletProblem, g: ConvexGridFunction) -> float:
    """max |S_1(A) + d S_n(A) - c| with A = (D^2 g)^{-1} D^2 f at the interior nodes."""
    A = np.linalg.solve(g.hessian(), prob.background_hessian())
    lam = np.linalg.eigvals(A).real
    return float(np.max(np.abs(lam.sum(axis=-1) + prob.b_or_d * lam.prod(axis=-1) - prob.c)))


@dataclass
class StageRecord:
    d: float
    c: float
    iterations: int
    residual: float
    converged: bool
    reason: str


@dataclass
class ContinuityPath:
    d_schedule: List[float]
    stages: List[StageRecord] = field(default_factory=list)
    solutions: List[ConvexGridFunction] = field(default_factory=list, repr=False)
    completed: bool = False
    smallest_d: Optional[float] = None
    failing_d: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "d_schedule": list(self.d_schedule),
            "completed": self.completed,
            "smallest_d": self.smallest_d,
            "failing_d": self.failing_d,
            "stages": [
                {"d": s.d, "c": s.c, "iterations": s.iterations, "residual": s.residual, "converged": s.converged, "reason": s.reason}
                for s in self.stages
            ],
        }


def d_schedule(d_start: float, d_end: float, stages: int) -> List[float]:
    """Geometric schedule; a zero endpoint is reached after a geometric run to d_start * 1e-4."""
    if d_start <= 0 or d_end < 0 or d_end > d_start:
        raise DomainError(f"Need d_start > 0 and 0 <= d_end <= d_start, got {d_start}, {d_end}.")
    if stages < 1:
        raise DomainError(f"stages must be positive, got {stages}.")
    if d_end > 0:
        return [float(d) for d in np.geomspace(d_start, d_end, stages)]
    if stages == 1:
        return [0.0]
    return [float(d) for d in np.geomspace(d_start, d_start * 1e-4, stages - 1)] + [0.0]


def continuity_solve(
    prob: DirichletProblem,
    d_start: float,
    d_end: float,
    stages: int,
    *,
    c_mode: str = "fixed",
    tol: float = TORIC_TOL,
    log: Optional[Callable[[str], None]] = None,
) -> ContinuityPath:
    """Warm-started toric solves along a decreasing d schedule.

    ``c_mode`` "fixed" holds c. "class" uses c_d = c + d int det D^2 f / int det D^2 g_ref
    (g_ref the boundary data) and accepts a stage only if the solution keeps the
    Monge-Ampere mass of g_ref.
    """
    if c_mode not in ("fixed", "class"):
        raise DomainError(f"Unknown c_mode: {c_mode}")
    schedule = d_schedule(d_start, d_end, stages)
    path = ContinuityPath(d_schedule=schedule)
    base = replace(prob, target=Target.TORIC)
    reference = base.boundary_function()
    mass_ref = float(np.mean(np.linalg.det(reference.hessian())))
    mass_f = float(np.mean(np.linalg.det(base.background_hessian())))
    guess: Optional[ConvexGridFunction] = None

    for d in schedule:
        c_d = base.c if c_mode == "fixed" else base.c + d * mass_f / mass_ref
        stage = replace(base, b_or_d=d, c=c_d)
        history = NewtonLog()
        try:
            solution = solve_toric_equation(stage, initial=guess, tol=tol, trace=history)
        except (NonConvergence, np.linalg.LinAlgError) as exc:
            last = history.residuals[-1] if history.records else math.nan
            path.stages.append(StageRecord(d, c_d, history.iterations, last, False, history.reason or str(exc)))
            path.failing_d = d
            if log is not None:
                log(f"continuity stalled at d={d:g}: {exc}")
            break
        if c_mode == "class":
            mass = float(np.mean(np.linalg.det(solution.hessian())))
            if abs(mass - mass_ref) > CLASS_MASS_RTOL * abs(mass_ref):
                path.stages.append(StageRecord(d, c_d, history.iterations, history.residuals[-1], False, "class-mass"))
                path.failing_d = d
                if log is not None:
                    log(f"continuity stalled at d={d:g}: mass {mass:.6g} vs {mass_ref:.6g}")
                break
        path.stages.append(StageRecord(d, c_d, history.iterations, history.residuals[-1], True, "tolerance"))
        path.solutions.append(solution)
        path.smallest_d = d
        guess = solution
    path.completed = path.failing_d is None
    return path


@dataclass
class SupersolutionReport:
    points: np.ndarray
    values: np.ndarray
    max_Lf: float
    model_residual: float
    warning: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"max_Lf": self.max_Lf, "model_residual": self.model_residual, "nodes": int(len(self.values)), "warning": self.warning}


def supersolution_check(h: ConvexGridFunction, b: float) -> SupersolutionReport:
    """L f = Delta f + b det(D^2 h) h^{ij} f_ij for f = det(D^2 h)^{1/n}, one cell in from the boundary."""
    st = h.stencil
    n = h.domain.n
    H = h.hessian()
    det = np.linalg.det(H)
    residual = float(np.max(np.abs(np.trace(H, axis1=-2, axis2=-1) + b * det - 1.0)))
    f = np.clip(det, 0.0, None) ** (1.0 / n)
    F_hess = ConvexGridFunction(h.domain, f, np.zeros(st.k)).hessian()
    inner = st.inner
    Hi = np.linalg.inv(H[inner])
    Lf = np.trace(F_hess[inner], axis1=-2, axis2=-1) + b * det[inner] * np.einsum("...ab,...ab->...", Hi, F_hess[inner])
    warning = None
    if residual > RESIDUAL_WARNING:
        warning = f"input does not solve the model equation (residual {residual:.3e})"
    max_Lf = float(np.max(Lf)) if Lf.size else math.nan
    return SupersolutionReport(st.interior_points[inner], Lf, max_Lf, residual, warning)


def hessian_bound_check(u: ConvexGridFunction, b: float) -> float:
    """max |D^2 u|_F over interior nodes; bounded by sqrt(n) for convex solutions of the model equation."""
    if b < 0:
        raise DomainError(f"b must be nonnegative, got {b}.")
    return float(np.max(np.linalg.norm(u.hessian(), axis=(-2, -1))))


def gradient_image(g: ConvexGridFunction, shrink: float = 1.0) -> np.ndarray:
    """Discrete gradients at interior nodes of the domain shrunk about its center."""
    st = g.stencil
    domain = g.domain
    pts = st.interior_points
    if domain.kind == DomainKind.BALL:
        keep = np.linalg.norm(pts - np.asarray(domain.center), axis=-1) <= shrink * domain.radius
    else:
        mid = 0.5 * (np.asarray(domain.lower) + np.asarray(domain.upper))
        half = 0.5 * (np.asarray(domain.upper) - np.asarray(domain.lower))
        keep = np.all(np.abs(pts - mid) <= shrink * half, axis=-1)
    return g.gradient()[keep]


def _image_domain(grads: np.ndarray, shrink: float, nodes: int) -> GridDomain:
    n = grads.shape[1]
    if n == 1:
        lo, hi = float(grads.min()), float(grads.max())
        if hi - lo <= 1e-14:
            raise DomainError("Gradient image has empty interior.")
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return GridDomain.interval(mid - shrink * half, mid + shrink * half, nodes)
    try:
        hull = ConvexHull(grads)
    except QhullError as exc:
        raise DomainError("Gradient image has empty interior.") from exc
    center = grads[hull.vertices].mean(axis=0)
    distance = float(np.min(-(hull.equations[:, :-1] @ center + hull.equations[:, -1])))
    if distance <= 1e-14:
        raise DomainError("Gradient image has empty interior.")
    return GridDomain.ball(center, shrink * distance, nodes)


def _conjugate(g: ConvexGridFunction, query: np.ndarray, chunk: int = 2048) -> np.ndarray:
    pts = g.points()
    vals = g.values()
    st = g.stencil
    grads = g.gradient()
    hess = g.hessian()
    h = g.h
    out = np.empty(len(query))
    for start in range(0, len(query), chunk):
        y = query[start:start + chunk]
        scores = y @ pts.T - vals
        best = np.argmax(scores, axis=1)
        out[start:start + chunk] = scores[np.arange(len(y)), best]
        # second-order correction at interior maximizers
        for row, node in enumerate(best):
            if node >= st.m:
                continue
            delta = y[row] - grads[node]
            try:
                step = np.linalg.solve(hess[node], delta)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.norm(step) <= h:
                out[start + row] += 0.5 * float(delta @ step)
    return out


def legendre_transform(g: ConvexGridFunction, *, shrink: float = 0.9, nodes: Optional[int] = None) -> ConvexGridFunction:
    """h(y) = sup_x (x.y - g(x)) on a grid over the shrunken discrete gradient image."""
    if g.min_hessian_eigenvalue() <= 0:
        raise DomainError("Legendre transform needs a strictly convex input.")
    domain = _image_domain(g.gradient(), shrink, nodes or g.domain.nodes)
    st = domain.stencil()
    interior = _conjugate(g, st.interior_points)
    boundary = _conjugate(g, st.boundary_points) if st.k else np.zeros(0)
    return ConvexGridFunction(domain, interior, boundary)


def bian_guan_form(Bmat, c: float, A, E) -> float:
    """Second variation of A -> Tr(B A^{-1}) + c det A^{-1} along the symmetric E."""
    B = np.atleast_2d(np.asarray(Bmat, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    n = B.shape[0]
    if c < 0:
        raise DomainError(f"c must be nonnegative, got {c}.")
    root_inv = np.linalg.inv(np.real(sqrtm(B)))
    A_t = root_inv @ A @ root_inv
    E_t = root_inv @ E @ root_inv
    E_t = 0.5 * (E_t + E_t.T)
    lam, U = np.linalg.eigh(0.5 * (A_t + A_t.T))
    if np.any(lam <= 0):
        raise DomainError("A must be positive definite.")
    w = np.zeros(n + 1)
    w[1] = 1.0
    w[n] += c / np.linalg.det(B)
    E_rot = U.T @ E_t @ U
    return convexity_form(w, lam, 0.5 * (E_rot + E_rot.T))
