"""Parabolic flow dphi/dt = c - F(A_t) on torus-invariant periodic data.

The background is written in the invariant frame: omega = G0 + D^2_h phi on the
unit torus [0, 1)^n with N nodes per axis, alpha is a positive-definite field
and A = alpha^{-1} omega. Spatial quadrature is the periodic trapezoid rule,
which on a uniform grid is the node mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from .operators import OperatorSpec, Region, evaluate
from .symfunc import weighted_gradient
from .validators import DomainError, RegionError, assert_spd


DT_FLOOR = 1e-12
MONOTONE_TOL = 1e-8


class DegenerateMetricError(DomainError):
    def __init__(self, message: str, node: Optional[Tuple[int, ...]] = None, t: Optional[float] = None):
        super().__init__(message)
        self.node = node
        self.t = t


@dataclass(frozen=True)
class PeriodicGrid:
    n: int
    N: int

    def __post_init__(self) -> None:
        if self.n not in (1, 2):
            raise DomainError(f"Torus problems are reduced to n = 1 or 2, got {self.n}.")
        if self.N < 4:
            raise DomainError(f"Grid needs at least 4 nodes per axis, got {self.N}.")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.n

    def coords(self) -> List[np.ndarray]:
        axis = np.arange(self.N) * self.h
        return list(np.meshgrid(*([axis] * self.n), indexing="ij"))


def hessian_periodic(phi: np.ndarray, h: float) -> np.ndarray:
    """Second-order central-difference Hessian, shape phi.shape + (n, n)."""
    n = phi.ndim
    out = np.zeros(phi.shape + (n, n))
    for a in range(n):
        out[..., a, a] = (np.roll(phi, -1, axis=a) - 2.0 * phi + np.roll(phi, 1, axis=a)) / (h * h)
    if n == 2:
        pp = np.roll(np.roll(phi, -1, 0), -1, 1)
        pm = np.roll(np.roll(phi, -1, 0), 1, 1)
        mp = np.roll(np.roll(phi, 1, 0), -1, 1)
        mm = np.roll(np.roll(phi, 1, 0), 1, 1)
        xy = (pp - pm - mp + mm) / (4.0 * h * h)
        out[..., 0, 1] = xy
        out[..., 1, 0] = xy
    return out


def _modes_field(grid: PeriodicGrid, modes: Sequence[Dict[str, Any]]) -> np.ndarray:
    coords = grid.coords()
    values = np.zeros(grid.shape)
    for mode in modes:
        for key in mode:
            if key not in ("amplitude", "wave", "phase"):
                raise DomainError(f"Unknown mode key: {key}")
        wave = [float(k) for k in mode.get("wave", [1] + [0] * (grid.n - 1))]
        if len(wave) != grid.n:
            raise DomainError(f"Mode wave vector must have {grid.n} entries.")
        arg = sum(2.0 * math.pi * k * x for k, x in zip(wave, coords))
        values = values + float(mode.get("amplitude", 0.0)) * np.cos(arg + float(mode.get("phase", 0.0)))
    return values


@dataclass
class PotentialField:
    values: np.ndarray
    mean_zero: bool = True

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=float, copy=True)
        if self.mean_zero:
            self.values -= self.values.mean()

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "PotentialField":
        return cls(np.zeros(grid.shape))

    @classmethod
    def from_modes(cls, grid: PeriodicGrid, modes: Sequence[Dict[str, Any]]) -> "PotentialField":
        return cls(_modes_field(grid, modes))

    @classmethod
    def from_dict(cls, grid: PeriodicGrid, data: Dict[str, Any]) -> "PotentialField":
        for key in data:
            if key != "modes":
                raise DomainError(f"Unknown potential key: {key}")
        return cls.from_modes(grid, data.get("modes", []))

    def normalized(self) -> "PotentialField":
        return PotentialField(self.values, mean_zero=True)

    def scaled(self, t: float) -> "PotentialField":
        return PotentialField(t * self.values, mean_zero=self.mean_zero)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class TorusProblem:
    n: int
    N: int
    G0: np.ndarray
    alpha_field: np.ndarray
    spec: OperatorSpec

    def __post_init__(self) -> None:
        self.G0 = np.asarray(self.G0, dtype=float).reshape(self.n, self.n)
        grid = self.grid
        alpha = np.asarray(self.alpha_field, dtype=float)
        if alpha.shape == (self.n, self.n):
            alpha = np.broadcast_to(alpha, grid.shape + (self.n, self.n)).copy()
        if alpha.shape != grid.shape + (self.n, self.n):
            raise DomainError(f"alpha_field must have shape {grid.shape + (self.n, self.n)}, got {alpha.shape}.")
        self.alpha_field = alpha
        if self.spec.n != self.n:
            raise DomainError(f"Operator dimension {self.spec.n} does not match n = {self.n}.")
        assert_spd(self.G0, "G0")
        assert_spd(self.alpha_field, "alpha_field")
        chol = np.linalg.cholesky(self.alpha_field)
        self._alpha_inv_chol = np.linalg.inv(chol)
        self._det_alpha = np.linalg.det(self.alpha_field)

    @property
    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.n, self.N)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @classmethod
    def from_potential(
        cls,
        N: int,
        G0,
        alpha_const,
        spec: OperatorSpec,
        alpha_potential: Optional[np.ndarray] = None,
    ) -> "TorusProblem":
        """Closed background alpha = A0 + D^2_h a for a periodic potential a."""
        G0 = np.atleast_2d(np.asarray(G0, dtype=float))
        n = G0.shape[0]
        grid = PeriodicGrid(n, N)
        alpha = np.broadcast_to(np.atleast_2d(np.asarray(alpha_const, dtype=float)), grid.shape + (n, n)).copy()
        if alpha_potential is not None:
            alpha = alpha + hessian_periodic(np.asarray(alpha_potential, dtype=float), grid.h)
        return cls(n=n, N=N, G0=G0, alpha_field=alpha, spec=spec)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TorusProblem":
        for key in data:
            if key not in ("n", "N", "G0", "alpha", "operator"):
                raise DomainError(f"Unknown problem key: {key}")
        for key in ("n", "N", "G0", "alpha", "operator"):
            if key not in data:
                raise DomainError(f"Problem is missing key: {key}")
        n = int(data["n"])
        N = int(data["N"])
        alpha = data["alpha"]
        for key in alpha:
            if key not in ("const", "potential"):
                raise DomainError(f"Unknown alpha key: {key}")
        potential = None
        if "potential" in alpha:
            potential = PotentialField.from_dict(PeriodicGrid(n, N), alpha["potential"]).values
        spec = OperatorSpec.from_dict(data["operator"])
        G0 = np.asarray(data["G0"], dtype=float).reshape(n, n)
        return cls.from_potential(N, G0, np.asarray(alpha["const"], dtype=float).reshape(n, n), spec, potential)

    def to_header(self) -> Dict[str, Any]:
        return {"n": self.n, "N": self.N, "G0": self.G0.tolist(), "operator": self.spec.to_dict()}

    def with_alpha(self, alpha_field: np.ndarray) -> "TorusProblem":
        return TorusProblem(self.n, self.N, self.G0, alpha_field, self.spec)

    def with_spec(self, spec: OperatorSpec) -> "TorusProblem":
        return TorusProblem(self.n, self.N, self.G0, self.alpha_field, spec)


def metric(prob: TorusProblem, phi, t: Optional[float] = None) -> np.ndarray:
    """omega = G0 + D^2_h phi, checked positive definite at every node."""
    values = getattr(phi, "values", phi)
    omega = prob.G0 + hessian_periodic(np.asarray(values, dtype=float), prob.h)
    low = np.linalg.eigvalsh(omega)[..., 0]
    if np.any(low <= 0):
        node = tuple(int(i) for i in np.unravel_index(int(np.argmin(low)), low.shape))
        where = "" if t is None else f" at path parameter t={t:g}"
        raise DegenerateMetricError(f"omega is not positive definite at node {node}{where}.", node=node, t=t)
    return omega


def _spectral(prob: TorusProblem, omega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    Li = prob._alpha_inv_chol
    M = Li @ omega @ np.swapaxes(Li, -1, -2)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    lam, V = np.linalg.eigh(M)
    W = np.swapaxes(Li, -1, -2) @ V
    return lam, W


def assemble_A(prob: TorusProblem, phi) -> np.ndarray:
    """Spectrum of A = alpha^{-1} omega at every node, shape grid + (n,)."""
    lam, _ = _spectral(prob, metric(prob, phi))
    return lam


def _operator_field(prob: TorusProblem, omega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lam, _ = _spectral(prob, omega)
    return evaluate(prob.spec, lam), np.linalg.det(omega)


def normalizing_constant(prob: TorusProblem) -> float:
    """c with int (F(A) - c) omega^n = 0 at phi = 0."""
    omega = np.broadcast_to(prob.G0, prob.grid.shape + (prob.n, prob.n))
    F, det = _operator_field(prob, omega)
    return float(np.mean(F * det) / np.mean(det))


def diffusion_tensor(prob: TorusProblem, omega: np.ndarray) -> np.ndarray:
    """D = -sum_i dF/dlam_i w_i w_i^T, the principal part of the linearized flow."""
    lam, W = _spectral(prob, omega)
    grad = weighted_gradient(prob.spec.weights_vector(), lam)
    return np.einsum("...ai,...i,...bi->...ab", W, -grad, W)


def stable_dt(prob: TorusProblem, phi, cfl: float = 0.9) -> float:
    D = diffusion_tensor(prob, metric(prob, phi))
    trace = float(np.max(np.trace(D, axis1=-2, axis2=-1)))
    return cfl * prob.h**2 / (2.0 * max(trace, 1e-300))


@dataclass
class FlowState:
    problem: TorusProblem
    t: float
    phi: PotentialField
    c_eps: float
    sup_F: float
    J_value: float
    residual: float
    F: np.ndarray = field(repr=False, default=None)
    det_omega: np.ndarray = field(repr=False, default=None)
    dt: float = 0.0
    steps: int = 0


def _diagnose(prob: TorusProblem, phi: PotentialField) -> Tuple[np.ndarray, np.ndarray]:
    return _operator_field(prob, metric(prob, phi))


def initial_state(
    prob: TorusProblem, phi0: PotentialField, *, c_eps: Optional[float] = None, path_steps: int = 65
) -> FlowState:
    c = normalizing_constant(prob) if c_eps is None else c_eps
    phi = phi0.normalized()
    F, det = _diagnose(prob, phi)
    J0 = 0.0 if not np.any(phi.values) else j_functional(prob, phi, path_steps, c_eps=c)
    return FlowState(
        problem=prob,
        t=0.0,
        phi=phi,
        c_eps=c,
        sup_F=float(np.max(F)),
        J_value=J0,
        residual=float(np.max(np.abs(F - c))),
        F=F,
        det_omega=det,
    )


def _semi_implicit_increment(prob: TorusProblem, state: FlowState, dt: float) -> np.ndarray:
    omega = metric(prob, state.phi)
    Dbar = diffusion_tensor(prob, omega).reshape(-1, prob.n, prob.n).mean(axis=0)
    rhs = np.fft.fftn(dt * (state.c_eps - state.F))
    theta = 2.0 * math.pi * np.fft.fftfreq(prob.N)
    h2 = prob.h**2
    if prob.n == 1:
        symbol = Dbar[0, 0] * 4.0 * np.sin(theta / 2.0) ** 2 / h2
    else:
        tx, ty = np.meshgrid(theta, theta, indexing="ij")
        symbol = (
            Dbar[0, 0] * 4.0 * np.sin(tx / 2.0) ** 2
            + Dbar[1, 1] * 4.0 * np.sin(ty / 2.0) ** 2
            + 2.0 * Dbar[0, 1] * np.sin(tx) * np.sin(ty)
        ) / h2
    return np.real(np.fft.ifftn(rhs / (1.0 + dt * symbol)))


def step(state: FlowState, dt: float, *, scheme: str = "euler", log: Optional[Callable[[str], None]] = None) -> FlowState:
    """One step of dphi/dt = c - F(A); dt is halved while admissibility fails."""
    prob = state.problem
    trial = float(dt)
    while True:
        if scheme == "euler":
            increment = trial * (state.c_eps - state.F)
        elif scheme == "semi-implicit":
            increment = _semi_implicit_increment(prob, state, trial)
        else:
            raise DomainError(f"Unknown time-stepping scheme: {scheme}")
        phi = PotentialField(state.phi.values + increment)
        try:
            F, det = _diagnose(prob, phi)
            break
        except (DegenerateMetricError, RegionError) as exc:
            trial /= 2.0
            if log is not None:
                log(f"t={state.t:.6g}: step rejected ({exc}); dt -> {trial:.3e}")
            if trial < DT_FLOOR:
                raise DegenerateMetricError(f"Time step fell below {DT_FLOOR:g} at t={state.t:g}.") from exc

    n = prob.n
    dphi = phi.values - state.phi.values
    integrand = 0.5 * ((state.F - state.c_eps) * state.det_omega + (F - state.c_eps) * det)
    J = state.J_value + float(np.mean(dphi * integrand)) / n
    return FlowState(
        problem=prob,
        t=state.t + trial,
        phi=phi,
        c_eps=state.c_eps,
        sup_F=float(np.max(F)),
        J_value=J,
        residual=float(np.max(np.abs(F - state.c_eps))),
        F=F,
        det_omega=det,
        dt=trial,
        steps=state.steps + 1,
    )


@dataclass
class TraceRow:
    t: float
    residual: float
    sup_F: float
    J: float
    dt: float
    volume: float


@dataclass
class FlowResult:
    state: FlowState
    trace: List[TraceRow]
    converged: bool
    reason: str
    sup_violations: int = 0
    j_violations: int = 0
    max_sup_increase: float = 0.0
    max_j_increase: float = 0.0

    def summary(self) -> Dict[str, Any]:
        return {
            "converged": self.converged,
            "reason": self.reason,
            "t": self.state.t,
            "steps": self.state.steps,
            "residual": self.state.residual,
            "sup_F": self.state.sup_F,
            "J": self.state.J_value,
            "c_eps": self.state.c_eps,
            "phi_sup": self.state.phi.sup_norm(),
            "sup_violations": self.sup_violations,
            "j_violations": self.j_violations,
            "max_sup_increase": self.max_sup_increase,
            "max_j_increase": self.max_j_increase,
        }


def run(
    prob: TorusProblem,
    phi0: PotentialField,
    tol: float,
    t_max: float,
    *,
    scheme: str = "euler",
    dt: Optional[float] = None,
    cfl: float = 0.9,
    trace_every: int = 1,
    path_steps: int = 65,
    log: Optional[Callable[[str], None]] = None,
) -> FlowResult:
    """Integrate until the residual drops below ``tol`` or t reaches ``t_max``."""
    state = initial_state(prob, phi0, path_steps=path_steps)
    trace = [TraceRow(0.0, state.residual, state.sup_F, state.J_value, 0.0, float(np.mean(state.det_omega)))]
    result = FlowResult(state=state, trace=trace, converged=state.residual < tol, reason="tolerance")
    if result.converged:
        return result

    while state.residual >= tol and state.t < t_max:
        step_dt = dt if dt is not None else stable_dt(prob, state.phi, cfl)
        step_dt = min(step_dt, t_max - state.t)
        new = step(state, step_dt, scheme=scheme, log=log)
        sup_increase = new.sup_F - state.sup_F
        j_increase = new.J_value - state.J_value
        if sup_increase > MONOTONE_TOL:
            result.sup_violations += 1
        if j_increase > MONOTONE_TOL:
            result.j_violations += 1
        result.max_sup_increase = max(result.max_sup_increase, sup_increase)
        result.max_j_increase = max(result.max_j_increase, j_increase)
        state = new
        if state.steps % trace_every == 0 or state.residual < tol:
            trace.append(TraceRow(state.t, state.residual, state.sup_F, state.J_value, state.dt, float(np.mean(state.det_omega))))
        if log is not None and state.steps % 1000 == 0:
            log(f"t={state.t:.4f} residual={state.residual:.3e} J={state.J_value:.6e}")

    result.state = state
    result.converged = state.residual < tol
    result.reason = "tolerance" if result.converged else "t_max"
    if result.sup_violations and log is not None:
        log(f"sup F increased in {result.sup_violations} steps (max {result.max_sup_increase:.3e})")
    return result


def _path_nodes(path_steps: int) -> np.ndarray:
    if path_steps < 3 or path_steps % 2 == 0:
        raise DomainError(f"Simpson quadrature needs an odd number >= 3 of path nodes, got {path_steps}.")
    return np.linspace(0.0, 1.0, path_steps)


def j_functional(prob: TorusProblem, phi, path_steps: int = 65, *, c_eps: Optional[float] = None) -> float:
    """J(omega_0 + D^2 phi) = (1/n) int_0^1 int phi (F(A_t) - c) omega_t^n dt, J(omega_0) = 0."""
    values = np.asarray(getattr(phi, "values", phi), dtype=float)
    c = normalizing_constant(prob) if c_eps is None else c_eps
    ts = _path_nodes(path_steps)
    integrand = np.empty_like(ts)
    for i, t in enumerate(ts):
        omega = metric(prob, t * values, t=float(t))
        F, det = _operator_field(prob, omega)
        integrand[i] = np.mean(values * (F - c) * det)
    return float(simpson(integrand, x=ts)) / prob.n


def _is_j_operator(spec: OperatorSpec) -> bool:
    weights = spec.sigma_weights
    return weights[0] > 0 and all(w == 0 for w in weights[1:]) and spec.kappa == 0 and spec.epsilon == 0 and spec.ma_twist == 0


def background_change_delta(prob: TorusProblem, psi, phi, path_steps: int = 65) -> float:
    """Discrepancy between J_beta - J_alpha by quadrature and (1/n) int psi (omega_1^n - omega_0^n)."""
    if not _is_j_operator(prob.spec):
        raise DomainError("The change-of-background identity is stated for the pure S_1 operator.")
    psi_values = np.asarray(getattr(psi, "values", psi), dtype=float)
    phi_values = np.asarray(getattr(phi, "values", phi), dtype=float)
    beta = prob.alpha_field + hessian_periodic(psi_values, prob.h)
    try:
        beta_prob = prob.with_alpha(beta)
    except DomainError as exc:
        raise DomainError(f"alpha + D^2 psi is not positive definite: {exc}") from exc

    by_quadrature = j_functional(beta_prob, phi_values, path_steps) - j_functional(prob, phi_values, path_steps)
    det0 = np.linalg.det(metric(prob, np.zeros_like(phi_values)))
    det1 = np.linalg.det(metric(prob, phi_values))
    closed = prob.spec.sigma_weights[0] * float(np.mean(psi_values * (det1 - det0))) / prob.n
    return float(by_quadrature - closed)


def deflation_delta(prob: TorusProblem, phi, epsilon: float, path_steps: int = 65) -> float:
    """Discrepancy between J_eps - J_0 by quadrature and its closed form.

    J_eps - J_0 = -eps (1/n) int_0^1 int phi (det alpha - M det omega_t) dt with
    M = int det alpha / int det omega_0.
    """
    values = np.asarray(getattr(phi, "values", phi), dtype=float)
    ts = _path_nodes(path_steps)
    floor = math.inf
    for t in ts:
        floor = min(floor, float(np.min(assemble_A(prob, t * values))))
    spec_eps = OperatorSpec(
        prob.spec.sigma_weights,
        epsilon=epsilon,
        kappa=prob.spec.kappa,
        ma_twist=prob.spec.ma_twist,
        region=Region.floor(0.5 * floor),
    )
    deflated = prob.with_spec(spec_eps)
    by_quadrature = j_functional(deflated, values, path_steps) - j_functional(prob, values, path_steps)

    det_alpha = prob._det_alpha
    M = float(np.mean(det_alpha) / np.linalg.det(prob.G0))
    integrand = np.empty_like(ts)
    for i, t in enumerate(ts):
        det = np.linalg.det(metric(prob, t * values))
        integrand[i] = np.mean(values * (det_alpha - M * det))
    closed = -epsilon * float(simpson(integrand, x=ts)) / prob.n
    return float(by_quadrature - closed)


def energy_functional(prob: TorusProblem, phi) -> float:
    """(1/n) int phi (omega_0^n - omega^n), nonnegative for admissible phi."""
    values = np.asarray(getattr(phi, "values", phi), dtype=float)
    det0 = np.linalg.det(prob.G0)
    det = np.linalg.det(metric(prob, values))
    return float(np.mean(values * (det0 - det))) / prob.n


@dataclass
class PropernessProfile:
    j_values: List[float]
    energies: List[float]
    offset: float
    slope: float

    def to_dict(self) -> Dict[str, Any]:
        return {"J": self.j_values, "energy": self.energies, "C": self.offset, "delta": self.slope}


def properness_profile(prob: TorusProblem, phis: Sequence, *, offset: float = 0.0, path_steps: int = 65) -> PropernessProfile:
    """J and energy on a family; ``slope`` is the largest delta with J >= -offset + delta energy on it."""
    js: List[float] = []
    energies: List[float] = []
    for phi in phis:
        js.append(j_functional(prob, phi, path_steps))
        energies.append(energy_functional(prob, phi))
    ratios = [(j + offset) / e for j, e in zip(js, energies) if e > 1e-14]
    slope = min(ratios) if ratios else math.nan
    return PropernessProfile(js, energies, offset, slope)
