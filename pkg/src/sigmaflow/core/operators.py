"""Inverse sigma_k operator families and their structural conditions.

F(A) = sum_k c_k S_k(A^{-1}) + kappa S_1(A^{-1}) - epsilon S_n(A^{-1}) + d S_n(A^{-1}),
always evaluated on the spectrum of A.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from itertools import combinations
import math
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from .symfunc import (
    Spectrum,
    _esym,
    convexity_form,
    weighted_gradient,
    weighted_value,
)
from .validators import DomainError, RegionError, as_spectrum, assert_positive


class RegionKind(str, Enum):
    ALL_POSITIVE = "all-positive"
    EIGENVALUE_FLOOR = "eigenvalue-floor"
    SUBLEVEL = "sublevel"


@dataclass(frozen=True)
class Region:
    """Validity region: all positive spectra, lam_i > delta, or S_1(A^{-1}) < Q."""

    kind: RegionKind = RegionKind.ALL_POSITIVE
    bound: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RegionKind(self.kind))
        if self.kind == RegionKind.EIGENVALUE_FLOOR and not self.bound > 0:
            raise DomainError(f"Eigenvalue floor must be positive, got {self.bound}.")
        if self.kind == RegionKind.SUBLEVEL and not self.bound > 0:
            raise DomainError(f"Sublevel bound Q must be positive, got {self.bound}.")

    @classmethod
    def all_positive(cls) -> "Region":
        return cls(RegionKind.ALL_POSITIVE, 0.0)

    @classmethod
    def floor(cls, delta: float) -> "Region":
        return cls(RegionKind.EIGENVALUE_FLOOR, float(delta))

    @classmethod
    def sublevel(cls, Q: float) -> "Region":
        return cls(RegionKind.SUBLEVEL, float(Q))

    def contains(self, lam):
        arr = as_spectrum(lam)
        positive = np.all(arr > 0, axis=-1)
        if self.kind == RegionKind.EIGENVALUE_FLOOR:
            return np.all(arr > self.bound, axis=-1)
        if self.kind == RegionKind.SUBLEVEL:
            with np.errstate(divide="ignore"):
                return positive & (np.sum(1.0 / np.where(arr > 0, arr, np.inf), axis=-1) < self.bound)
        return positive

    def implied_floor(self) -> float:
        if self.kind == RegionKind.EIGENVALUE_FLOOR:
            return self.bound
        if self.kind == RegionKind.SUBLEVEL:
            return sublevel_floor(self.bound)
        return 0.0

    def describe(self) -> str:
        if self.kind == RegionKind.EIGENVALUE_FLOOR:
            return f"lambda_i > {self.bound:g}"
        if self.kind == RegionKind.SUBLEVEL:
            return f"S_1(A^-1) < {self.bound:g}"
        return "all positive spectra"

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == RegionKind.EIGENVALUE_FLOOR:
            return {"kind": self.kind.value, "delta": self.bound}
        if self.kind == RegionKind.SUBLEVEL:
            return {"kind": self.kind.value, "Q": self.bound}
        return {"kind": self.kind.value}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Region":
        allowed = {"kind", "delta", "Q"}
        for key in data:
            if key not in allowed:
                raise DomainError(f"Unknown region key: {key}")
        kind = RegionKind(data.get("kind", RegionKind.ALL_POSITIVE.value))
        if kind == RegionKind.EIGENVALUE_FLOOR:
            return cls.floor(float(data["delta"]))
        if kind == RegionKind.SUBLEVEL:
            return cls.sublevel(float(data["Q"]))
        return cls.all_positive()


def sublevel_floor(Q: float) -> float:
    """S_1(A^{-1}) < Q forces every eigenvalue above 1/Q."""
    return 1.0 / Q


@dataclass(frozen=True)
class OperatorSpec:
    sigma_weights: Tuple[float, ...]
    epsilon: float = 0.0
    kappa: float = 0.0
    ma_twist: float = 0.0
    region: Region = field(default_factory=Region)

    def __post_init__(self) -> None:
        weights = tuple(float(c) for c in self.sigma_weights)
        object.__setattr__(self, "sigma_weights", weights)
        if not weights:
            raise DomainError("OperatorSpec needs at least one sigma weight.")
        for name, value in (("epsilon", self.epsilon), ("kappa", self.kappa), ("d", self.ma_twist)):
            if value < 0:
                raise DomainError(f"{name} must be nonnegative, got {value}.")
        if any(c < 0 for c in weights):
            raise DomainError(f"sigma weights must be nonnegative, got {weights}.")
        if self.epsilon > 0 and self.region.kind == RegionKind.ALL_POSITIVE:
            raise DomainError("A deflated operator (epsilon > 0) needs an eigenvalue-floor or sublevel region.")

    @property
    def n(self) -> int:
        return len(self.sigma_weights)

    @property
    def is_pure(self) -> bool:
        """True for nonnegative combinations of S_k(A^{-1}) (no deflation)."""
        return self.epsilon == 0.0

    def weights_vector(self, n: Optional[int] = None) -> np.ndarray:
        n = self.n if n is None else n
        if n != self.n:
            raise DomainError(f"Operator has dimension {self.n}, spectrum has {n}.")
        w = np.zeros(n + 1)
        w[1:] = self.sigma_weights
        w[1] += self.kappa
        w[n] += self.ma_twist - self.epsilon
        return w

    def with_twist(self, d: float) -> "OperatorSpec":
        return replace(self, ma_twist=float(d))

    @classmethod
    def sigma(cls, *weights: float, region: Optional[Region] = None) -> "OperatorSpec":
        return cls(tuple(weights), region=region or Region.all_positive())

    @classmethod
    def j_operator(cls, n: int, epsilon: float = 0.0, region: Optional[Region] = None) -> "OperatorSpec":
        weights = tuple([1.0] + [0.0] * (n - 1))
        return cls(weights, epsilon=epsilon, region=region or Region.all_positive())

    @classmethod
    def kappa_epsilon(
        cls, weights: Sequence[float], kappa: float, epsilon: float, region: Region
    ) -> "OperatorSpec":
        return cls(tuple(weights), epsilon=epsilon, kappa=kappa, region=region)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "c": list(self.sigma_weights),
            "epsilon": self.epsilon,
            "kappa": self.kappa,
            "d": self.ma_twist,
            "region": self.region.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OperatorSpec":
        allowed = {"c", "epsilon", "kappa", "d", "region"}
        for key in data:
            if key not in allowed:
                raise DomainError(f"Unknown operator key: {key}")
        if "c" not in data:
            raise DomainError("Operator is missing key: c")
        return cls(
            sigma_weights=tuple(float(x) for x in data["c"]),
            epsilon=float(data.get("epsilon", 0.0)),
            kappa=float(data.get("kappa", 0.0)),
            ma_twist=float(data.get("d", 0.0)),
            region=Region.from_dict(data.get("region", {})),
        )


def shifted_constant(c: float, kappa: float, epsilon: float, d1: float, d2: float) -> float:
    """Normalizing constant of the kappa/epsilon family: c + kappa d1 - epsilon d2."""
    return c + kappa * d1 - epsilon * d2


def _checked(spec: OperatorSpec, lam) -> np.ndarray:
    arr = as_spectrum(lam, spec.n)
    assert_positive(arr)
    inside = np.asarray(spec.region.contains(arr))
    if not np.all(inside):
        bad = arr[~inside] if arr.ndim > 1 else arr
        raise RegionError(f"Spectrum outside {spec.region.describe()}.", np.asarray(bad).reshape(-1, spec.n)[0])
    return arr


def evaluate(spec: OperatorSpec, lam):
    """F(lam) for one spectrum or a batch."""
    arr = _checked(spec, lam)
    out = weighted_value(spec.weights_vector(), arr)
    return float(out) if np.ndim(out) == 0 else out


def eval_tilde(spec: OperatorSpec, mu, n: Optional[int] = None):
    """Limit of F as one eigenvalue tends to infinity, maximized over the dropped slot."""
    n = spec.n if n is None else n
    arr = as_spectrum(mu)
    if arr.shape[-1] != n or n != spec.n:
        raise DomainError(f"Spectrum length {arr.shape[-1]} does not match dimension {n}.")
    assert_positive(arr)
    w = spec.weights_vector()
    best = None
    for T in combinations(range(n), n - 1):
        inv = 1.0 / arr[..., list(T)]
        val = np.zeros(arr.shape[:-1])
        for k in range(1, n):
            if w[k] != 0.0:
                val = val + w[k] * _esym(inv, k)
        best = val if best is None else np.maximum(best, val)
    if best is None:
        best = np.zeros(arr.shape[:-1])
    return float(best) if np.ndim(best) == 0 else best


def subsolution_margin(spec: OperatorSpec, c: float, mu):
    tilde = eval_tilde(spec, mu)
    return c - tilde


def cone_coefficients(spec: OperatorSpec, c: float, mu) -> np.ndarray:
    """Coefficients of c chi^{n-1} - sum_k c_k C(n-1,k) chi^{n-k-1} alpha^k.

    Evaluated in the frame where alpha = I and chi = diag(mu), one entry per
    omitted index i (the form component on the complementary n-1 directions).
    All entries are positive exactly when ``subsolution_margin`` is.
    """
    arr = as_spectrum(mu, spec.n)
    assert_positive(arr)
    n = spec.n
    w = spec.weights_vector()
    out = np.zeros(arr.shape)
    for i in range(n):
        keep = [j for j in range(n) if j != i]
        sub = arr[..., keep]
        val = c * _esym(sub, n - 1)
        for k in range(1, n):
            if w[k] != 0.0:
                val = val - w[k] * _esym(sub, n - 1 - k)
        out[..., i] = val
    return out


def spectrum_of(A, alpha=None) -> Spectrum:
    """Eigenvalues of alpha^{-1} A for Hermitian A (and Hermitian positive alpha)."""
    A = np.asarray(A)
    if alpha is None:
        vals = eigh(A, eigvals_only=True)
    else:
        vals = eigh(A, np.asarray(alpha), eigvals_only=True)
    return Spectrum(tuple(float(v) for v in np.real(vals)))


CONDITION_NAMES = {
    1: "positivity and monotonicity",
    2: "convexity",
    3: "ratio bound",
    4: "smallest-eigenvalue dominance",
    5: "boundary continuity",
}


@dataclass
class ConditionResult:
    condition: int
    passed: bool
    witness: Optional[List[float]] = None
    detail: str = ""


@dataclass
class StructuralReport:
    conditions: Dict[int, ConditionResult]
    ratio_min: float
    ratio_max: float
    constant_c: float
    dominance_min: float
    sample_count: int
    seed: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def failed(self) -> List[int]:
        return [k for k, c in sorted(self.conditions.items()) if not c.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "conditions": {
                str(k): {"name": CONDITION_NAMES[k], **asdict(v)} for k, v in sorted(self.conditions.items())
            },
            "ratio_min": self.ratio_min,
            "ratio_max": self.ratio_max,
            "constant_C": self.constant_c,
            "dominance_min": self.dominance_min,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "all_passed": self.all_passed,
            "metadata": self.metadata,
        }


@dataclass
class _ChunkResult:
    failures: Dict[int, Optional[np.ndarray]]
    details: Dict[int, str]
    ratio_min: float
    ratio_max: float
    dominance_min: float


def _random_hermitian(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    X = rng.standard_normal((count, n, n)) + 1j * rng.standard_normal((count, n, n))
    H = 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))
    norms = np.linalg.norm(H, axis=(-2, -1))[:, None, None]
    return H / norms


def _boundary_ts() -> np.ndarray:
    return np.array([1.0, 1e-2, 1e-4, 1e-6])


def _evaluate_chunk(spec: OperatorSpec, lam: np.ndarray, rng: np.random.Generator) -> _ChunkResult:
    n = spec.n
    w = spec.weights_vector()
    failures: Dict[int, Optional[np.ndarray]] = {k: None for k in CONDITION_NAMES}
    details: Dict[int, str] = {}

    def record(cond: int, mask: np.ndarray, text: str) -> None:
        if failures[cond] is None and np.any(mask):
            idx = int(np.argmax(mask))
            failures[cond] = lam[idx].copy()
            details[cond] = text

    F = weighted_value(w, lam)
    g = weighted_gradient(w, lam)

    record(1, (F <= 0) | np.any(g >= 0, axis=-1), "F <= 0 or some d_ii F >= 0")

    B = _random_hermitian(rng, lam.shape[0], n)
    form = np.asarray(convexity_form(w, lam, B)).reshape(-1)
    scale = np.maximum(1.0, np.abs(F) / np.min(lam, axis=-1) ** 2)
    record(2, form < -1e-10 * scale, "convexity form negative")

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = -np.sum(lam * g, axis=-1) / F
    ok = np.isfinite(ratio) & (ratio > 0) & (F > 0)
    if spec.is_pure:
        tol = 1e-12 * n
        ok = ok & (ratio >= 1.0 - tol) & (ratio <= n + tol)
    record(3, ~ok, "ratio outside bounds")
    finite = ratio[np.isfinite(ratio) & (F > 0)]
    r_min = float(np.min(finite)) if finite.size else math.nan
    r_max = float(np.max(finite)) if finite.size else math.nan

    weighted = -lam * g
    smallest = np.argmin(lam, axis=-1)
    lead = np.take_along_axis(weighted, smallest[:, None], axis=-1)[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        dominance = lead / np.max(weighted, axis=-1)
    record(4, ~(dominance >= 1.0 - 1e-12), "smallest eigenvalue does not dominate")
    dom_min = float(np.nanmin(dominance)) if dominance.size else math.nan

    x = 1.0 / lam
    base = x.copy()
    base[:, -1] = 0.0
    g0 = weighted_value_poly(w, base)
    diffs = []
    for t in _boundary_ts():
        xt = x.copy()
        xt[:, -1] = x[:, -1] * t
        diffs.append(np.abs(weighted_value_poly(w, xt) - g0))
    diffs = np.stack(diffs, axis=-1)
    tail_ok = diffs[:, -1] <= 1e-5 * np.maximum(1.0, np.abs(g0))
    monotone = np.all(np.diff(diffs, axis=-1) <= 1e-12 * np.maximum(1.0, np.abs(g0))[:, None], axis=-1)
    record(5, ~(np.isfinite(g0) & tail_ok & monotone), "g not continuous at the orthant boundary")

    return _ChunkResult(failures, details, r_min, r_max, dom_min)


def weighted_value_poly(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """g(x) = sum_k w_k S_k(x), the operator written in reciprocal eigenvalues."""
    total = np.zeros(x.shape[:-1])
    for k, wk in enumerate(w):
        if wk != 0.0:
            total = total + wk * _esym(x, k)
    return total


def _box_corners(n: int, lo: float, hi: float) -> np.ndarray:
    if n > 10:
        return np.empty((0, n))
    grid = np.array(np.meshgrid(*[[lo, hi]] * n, indexing="ij")).reshape(n, -1).T
    return grid


def _sample_stream(seq: np.random.SeedSequence, count: int, n: int, lo: float, hi: float) -> Tuple[np.ndarray, np.random.Generator]:
    rng = np.random.default_rng(seq)
    lam = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(count, n)))
    return lam, rng


def check_structural(
    spec: OperatorSpec,
    sample_count: int,
    spectrum_box: Tuple[float, float],
    *,
    seed: int = 0,
    workers: int = 1,
    streams: int = 4,
    restrict: bool = False,
    log: Optional[Callable[[str], None]] = None,
) -> StructuralReport:
    """Monte-Carlo plus corner check of the five structural conditions.

    Samples are split into ``streams`` seeded streams evaluated on up to
    ``workers`` threads; stream results are merged in stream order, so the
    report depends on the seed and stream count only.
    With ``restrict`` samples outside ``spec.region`` are discarded instead of
    raising ``RegionError``.
    """
    lo, hi = (float(spectrum_box[0]), float(spectrum_box[1]))
    if not 0 < lo <= hi:
        raise DomainError(f"Spectrum box must satisfy 0 < lo <= hi, got ({lo}, {hi}).")
    n = spec.n
    streams = max(1, int(streams))
    root = np.random.SeedSequence(seed)
    children = root.spawn(streams + 1)
    counts = [sample_count // streams + (1 if i < sample_count % streams else 0) for i in range(streams)]

    def prepare(i: int) -> Tuple[np.ndarray, np.random.Generator]:
        if i == 0:
            return _box_corners(n, lo, hi), np.random.default_rng(children[0])
        return _sample_stream(children[i], counts[i - 1], n, lo, hi)

    batches = [prepare(i) for i in range(streams + 1)]
    checked: List[np.ndarray] = []
    for lam, _ in batches:
        if lam.size == 0:
            checked.append(lam)
            continue
        inside = np.asarray(spec.region.contains(lam))
        if not np.all(inside):
            if not restrict:
                raise RegionError(
                    f"Sample outside {spec.region.describe()}.", lam[~inside][0]
                )
            lam = lam[inside]
        checked.append(lam)

    def run(i: int) -> Optional[_ChunkResult]:
        lam = checked[i]
        if lam.shape[0] == 0:
            return None
        return _evaluate_chunk(spec, lam, batches[i][1])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(int(workers), streams + 1)) as pool:
            results = list(pool.map(run, range(streams + 1)))
    else:
        results = [run(i) for i in range(streams + 1)]

    conditions: Dict[int, ConditionResult] = {}
    for cond in CONDITION_NAMES:
        witness = None
        detail = ""
        for res in results:
            if res is not None and res.failures[cond] is not None:
                witness = [float(v) for v in res.failures[cond]]
                detail = res.details[cond]
                break
        conditions[cond] = ConditionResult(cond, witness is None, witness, detail)

    live = [r for r in results if r is not None]
    ratio_min = min((r.ratio_min for r in live if not math.isnan(r.ratio_min)), default=math.nan)
    ratio_max = max((r.ratio_max for r in live if not math.isnan(r.ratio_max)), default=math.nan)
    dominance_min = min((r.dominance_min for r in live if not math.isnan(r.dominance_min)), default=math.nan)
    if ratio_min > 0 and not math.isnan(ratio_max):
        constant_c = max(ratio_max, 1.0 / ratio_min)
    else:
        constant_c = math.inf

    total = int(sum(b.shape[0] for b in checked))
    report = StructuralReport(
        conditions=conditions,
        ratio_min=ratio_min,
        ratio_max=ratio_max,
        constant_c=constant_c,
        dominance_min=dominance_min,
        sample_count=total,
        seed=seed,
        metadata={
            "operator": spec.to_dict(),
            "box": [lo, hi],
            "streams": streams,
            "constant_C_is_empirical": not spec.is_pure,
        },
    )
    if spec.epsilon > 0:
        report.metadata["epsilon_rule"] = "delta^(n-1)/2, halved while sampled conditions (1)-(2) fail"
    if log is not None:
        failed = report.failed()
        log(f"structural check: {total} spectra, failed conditions: {failed or 'none'}")
    return report


def _budget_verified(epsilon: float, delta: float, n: int, samples: int, seed: int) -> bool:
    spec = OperatorSpec.j_operator(n, epsilon=epsilon, region=Region.floor(delta))
    lo = delta * (1.0 + 1e-9)
    report = check_structural(spec, samples, (lo, lo + max(10.0 * delta, 10.0)), seed=seed)
    return report.conditions[1].passed and report.conditions[2].passed


def epsilon_budget(delta: float, n: int, *, verify: bool = True, samples: int = 400, seed: int = 0) -> float:
    """Largest tested epsilon for which S_1 - epsilon S_n is certified on lambda_i > delta.

    Starts from delta^(n-1)/2 and halves only while sampled conditions (1) and (2)
    fail; with ``verify`` off the starting value is returned.
    """
    if not delta > 0:
        raise DomainError(f"Eigenvalue floor must be positive, got {delta}.")
    if n < 1:
        raise DomainError(f"Dimension must be positive, got {n}.")
    cap = delta ** (n - 1)
    epsilon = cap / 2.0
    for _ in range(64):
        if not verify or epsilon == 0.0 or _budget_verified(epsilon, delta, n, samples, seed):
            return epsilon
        epsilon /= 2.0
    return 0.0
