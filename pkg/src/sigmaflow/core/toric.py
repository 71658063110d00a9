"""Moment polytopes of toric Kaehler classes and the face-wise stability criterion.

Halfspaces follow the convention <normal, x> <= offset with outward normals.
Volumes of faces are lattice normalized, so that p! Vol of a p-dimensional
face equals the degree of the corresponding toric subvariety.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from itertools import combinations
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.spatial import ConvexHull, QhullError

from .validators import DomainError


TIGHT_TOL = 1e-9
MARGIN_TOL = 1e-9
GLOBAL_TOL = 1e-10
MAX_CONDITION = 1e12


class NumericError(RuntimeError):
    def __init__(self, message: str, sample_log: Optional[List[Dict[str, float]]] = None):
        super().__init__(message)
        self.sample_log = sample_log or []


def primitive_vector(v: Sequence[float]) -> Tuple[float, ...]:
    """Primitive integer vector on the ray of ``v`` (unchanged if not rational)."""
    arr = np.asarray(v, dtype=float)
    nonzero = np.abs(arr[np.abs(arr) > 1e-12])
    if nonzero.size == 0:
        raise DomainError("Zero normal vector.")
    scaled = arr / nonzero.min()
    fracs = [Fraction(float(x)).limit_denominator(10**6) for x in scaled]
    if any(abs(float(f) - x) > 1e-9 * max(1.0, abs(x)) for f, x in zip(fracs, scaled)):
        return tuple(float(x) for x in arr / np.linalg.norm(arr))
    lcm = 1
    for f in fracs:
        lcm = lcm * f.denominator // math.gcd(lcm, f.denominator)
    ints = [int(f * lcm) for f in fracs]
    g = 0
    for x in ints:
        g = math.gcd(g, abs(x))
    return tuple(float(x // g) for x in ints)


@dataclass(frozen=True)
class Halfspace:
    normal: Tuple[float, ...]
    offset: float
    label: str = ""

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ np.asarray(self.normal) - self.offset

    def direction_key(self) -> Tuple[float, ...]:
        return primitive_vector(self.normal)

    def to_dict(self) -> Dict[str, Any]:
        return {"normal": list(self.normal), "offset": self.offset, "label": self.label}


def _affine_rank(points: np.ndarray, tol: float = 1e-10) -> int:
    if points.shape[0] <= 1:
        return 0
    centered = points - points[0]
    scale = max(1.0, float(np.max(np.abs(points))))
    return int(np.linalg.matrix_rank(centered, tol=tol * scale))


def _unique_rows(points: np.ndarray) -> np.ndarray:
    rounded = np.round(points, 12) + 0.0
    _, idx = np.unique(rounded, axis=0, return_index=True)
    out = points[np.sort(idx)]
    order = np.lexsort(out.T[::-1])
    return out[order]


def _extreme_points(points: np.ndarray) -> np.ndarray:
    pts = _unique_rows(np.asarray(points, dtype=float))
    rank = _affine_rank(pts)
    if rank == 0:
        return pts[:1]
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:rank].T
    if rank == 1:
        keep = [int(np.argmin(coords[:, 0])), int(np.argmax(coords[:, 0]))]
    else:
        keep = list(ConvexHull(coords).vertices)
    return _unique_rows(pts[keep])


def _points_volume(points: np.ndarray) -> float:
    """Euclidean volume of the hull of ``points`` in their ambient dimension (0 if degenerate)."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[1]
    if _affine_rank(pts) < n:
        return 0.0
    if n == 1:
        return float(pts.max() - pts.min())
    hull = ConvexHull(pts)
    if n == 2:
        ring = pts[hull.vertices]
        x, y = ring[:, 0], ring[:, 1]
        return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
    centroid = pts[hull.vertices].mean(axis=0)
    total = 0.0
    for simplex in hull.simplices:
        a, b, c = pts[simplex]
        total += abs(np.linalg.det(np.stack([a - centroid, b - centroid, c - centroid]))) / 6.0
    return float(total)


@dataclass(frozen=True)
class Polytope:
    vertices: Tuple[Tuple[float, ...], ...]
    halfspaces: Tuple[Halfspace, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.vertices[0])

    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def is_full_dimensional(self) -> bool:
        return _affine_rank(self.vertex_array()) == self.dim

    def label_of(self, index: int) -> str:
        return self.halfspaces[index].label or f"D{index + 1}"

    @classmethod
    def from_vertices(cls, points, labels: Optional[Sequence[str]] = None) -> "Polytope":
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DomainError("Polytope needs a non-empty list of points.")
        n = pts.shape[1]
        if not 1 <= n <= 3:
            raise DomainError(f"Polytopes of dimension {n} are not supported (n <= 3).")
        verts = _extreme_points(pts)
        if _affine_rank(verts) < n:
            return cls(tuple(tuple(float(x) for x in v) for v in verts), ())
        if n == 1:
            raw = [((-1.0,), -float(verts.min())), ((1.0,), float(verts.max()))]
        else:
            try:
                hull = ConvexHull(verts)
            except QhullError as exc:
                raise DomainError(f"Degenerate hull: {exc}") from exc
            raw = []
            seen = set()
            for eq in hull.equations:
                normal = primitive_vector(eq[:-1])
                if normal in seen:
                    continue
                seen.add(normal)
                scale = np.linalg.norm(normal) / np.linalg.norm(eq[:-1])
                raw.append((normal, float(-eq[-1] * scale)))
            raw.sort(key=lambda item: item[0])
        halfspaces = []
        for i, (normal, offset) in enumerate(raw):
            label = labels[i] if labels is not None and i < len(labels) else f"D{i + 1}"
            halfspaces.append(Halfspace(tuple(float(x) for x in normal), offset, label))
        return cls(tuple(tuple(float(x) for x in v) for v in verts), tuple(halfspaces))

    @classmethod
    def from_halfspaces(cls, halfspaces: Sequence[Halfspace]) -> "Polytope":
        hs = []
        for i, h in enumerate(halfspaces):
            hs.append(Halfspace(tuple(float(x) for x in h.normal), float(h.offset), h.label or f"D{i + 1}"))
        if not hs:
            raise DomainError("Polytope needs at least one halfspace.")
        n = len(hs[0].normal)
        if not 1 <= n <= 3 or any(len(h.normal) != n for h in hs):
            raise DomainError("Halfspace normals must share a dimension n <= 3.")
        normals = np.array([h.normal for h in hs])
        offsets = np.array([h.offset for h in hs])
        found = []
        for subset in combinations(range(len(hs)), n):
            M = normals[list(subset)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            x = np.linalg.solve(M, offsets[list(subset)])
            if np.all(normals @ x - offsets <= TIGHT_TOL * max(1.0, float(np.max(np.abs(offsets))))):
                found.append(x)
        if not found:
            raise DomainError("Halfspaces describe an empty or unbounded set.")
        verts = _unique_rows(np.array(found))
        if _affine_rank(verts) < n:
            raise DomainError("Halfspaces describe a degenerate polytope.")
        return cls(tuple(tuple(float(x) for x in v) for v in verts), tuple(hs))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Polytope":
        for key in data:
            if key not in ("vertices", "halfspaces"):
                raise DomainError(f"Unknown polytope key: {key}")
        if "halfspaces" in data:
            hs = []
            for item in data["halfspaces"]:
                for key in item:
                    if key not in ("normal", "offset", "label"):
                        raise DomainError(f"Unknown halfspace key: {key}")
                hs.append(Halfspace(tuple(float(x) for x in item["normal"]), float(item["offset"]), str(item.get("label", ""))))
            poly = cls.from_halfspaces(hs)
            if "vertices" in data:
                given = _unique_rows(np.asarray(data["vertices"], dtype=float))
                ours = poly.vertex_array()
                if given.shape != ours.shape or not np.allclose(given, ours, atol=1e-9):
                    raise DomainError("Vertices and halfspaces describe different polytopes.")
            return poly
        if "vertices" in data:
            return cls.from_vertices(data["vertices"])
        raise DomainError("Polytope needs vertices or halfspaces.")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "vertices": [list(v) for v in self.vertices],
            "halfspaces": [h.to_dict() for h in self.halfspaces],
        }

    def scaled(self, t: float) -> "Polytope":
        hs = tuple(Halfspace(h.normal, h.offset * t, h.label) for h in self.halfspaces)
        return Polytope(tuple(tuple(t * x for x in v) for v in self.vertices), hs)


def volume(P: Polytope) -> float:
    if not P.is_full_dimensional:
        raise DomainError("Degenerate polytope has no volume.")
    return _points_volume(P.vertex_array())


def minkowski_sum(P: Polytope, Q: Polytope) -> Polytope:
    if P.dim != Q.dim:
        raise DomainError(f"Dimension mismatch: {P.dim} vs {Q.dim}.")
    sums = (P.vertex_array()[:, None, :] + Q.vertex_array()[None, :, :]).reshape(-1, P.dim)
    return Polytope.from_vertices(sums)


def _mixed_volumes_points(Pv: np.ndarray, Qv: np.ndarray) -> np.ndarray:
    """All V(P[k], Q[n-k]), k = 0..n, from Vol(sP + Q) at s = 0..n."""
    n = Pv.shape[1]
    s = np.arange(n + 1, dtype=float)
    vols = np.array([_points_volume((si * Pv[:, None, :] + Qv[None, :, :]).reshape(-1, n)) for si in s])
    V = np.vander(s, n + 1, increasing=True)
    cond = float(np.linalg.cond(V))
    if cond > MAX_CONDITION:
        log = [{"s": float(si), "volume": float(v)} for si, v in zip(s, vols)]
        raise NumericError(f"Interpolation matrix is ill-conditioned (cond={cond:.3e}).", log)
    coeffs = np.linalg.solve(V, vols)
    return np.array([coeffs[k] / math.comb(n, k) for k in range(n + 1)])


def mixed_volume(P: Polytope, Q: Polytope, k: int) -> float:
    """V(P[k], Q[n-k]) from Vol(sP + tQ) = sum_k C(n,k) V(P[k],Q[n-k]) s^k t^(n-k)."""
    if P.dim != Q.dim:
        raise DomainError(f"Dimension mismatch: {P.dim} vs {Q.dim}.")
    n = P.dim
    if not 0 <= k <= n:
        raise DomainError(f"k={k} outside 0..{n}.")
    return float(_mixed_volumes_points(P.vertex_array(), Q.vertex_array())[k])


def assert_compatible_fans(P: Polytope, Q: Polytope) -> None:
    if P.dim != Q.dim:
        raise DomainError(f"Dimension mismatch: {P.dim} vs {Q.dim}.")
    if not P.halfspaces or not Q.halfspaces:
        raise DomainError("Both classes need a halfspace description.")
    a = sorted(h.direction_key() for h in P.halfspaces)
    b = sorted(h.direction_key() for h in Q.halfspaces)
    if a != b:
        raise DomainError("Polytopes have different normal fans (classes on different toric manifolds).")


def intersection_number(P_chi: Polytope, P_alpha: Polytope, a: int, b: int) -> float:
    """Integral of chi^a alpha^b = n! V(P_chi[a], P_alpha[b])."""
    n = P_chi.dim
    if a + b != n or a < 0 or b < 0:
        raise DomainError(f"Exponents must satisfy a + b = {n}, got ({a}, {b}).")
    assert_compatible_fans(P_chi, P_alpha)
    return math.factorial(n) * mixed_volume(P_chi, P_alpha, a)


@dataclass(frozen=True)
class Face:
    codim: int
    support: Tuple[int, ...]
    labels: Tuple[str, ...]
    vertex_index: Tuple[int, ...]
    ambient_dim: int

    @property
    def dim(self) -> int:
        return self.ambient_dim - self.codim

    @property
    def face_id(self) -> str:
        return "&".join(self.labels)


def _tight(P: Polytope, indices: Sequence[int]) -> np.ndarray:
    verts = P.vertex_array()
    mask = np.ones(len(verts), dtype=bool)
    for i in indices:
        h = P.halfspaces[i]
        mask &= np.abs(h.value(verts)) <= TIGHT_TOL * max(1.0, abs(h.offset))
    return mask


def faces(P: Polytope) -> List[Face]:
    """All proper nonempty faces, sorted by codim then by supporting normals."""
    if not P.is_full_dimensional or not P.halfspaces:
        raise DomainError("Faces need a full-dimensional polytope with halfspaces.")
    n = P.dim
    verts = P.vertex_array()
    out: List[Face] = []
    seen = set()
    for codim in range(1, n + 1):
        for subset in combinations(range(len(P.halfspaces)), codim):
            mask = _tight(P, subset)
            if not mask.any():
                continue
            idx = tuple(int(i) for i in np.flatnonzero(mask))
            if _affine_rank(verts[list(idx)]) != n - codim or idx in seen:
                continue
            seen.add(idx)
            out.append(Face(codim, tuple(subset), tuple(P.label_of(i) for i in subset), idx, n))
    out.sort(key=lambda f: (f.codim, sorted(P.halfspaces[i].direction_key() for i in f.support)))
    return out


def _lattice_covolume(normals: List[Tuple[float, ...]], n: int) -> float:
    p = n - len(normals)
    if p == n:
        return 1.0
    if len(normals) == 1:
        return float(np.linalg.norm(normals[0]))
    if p == 1 and n == 3:
        d = primitive_vector(np.cross(normals[0], normals[1]))
        return float(np.linalg.norm(d))
    raise DomainError(f"Unsupported face dimension {p} in ambient dimension {n}.")


@dataclass
class FaceMargin:
    face_id: str
    dim: int
    codim: int
    margin: float
    chi_volume: float
    mixed_term: float


class Verdict(str, Enum):
    SOLVABLE_J = "solvable-J"
    SOLVABLE_TWISTED = "solvable-twisted"
    UNSTABLE = "unstable"


@dataclass
class StabilityReport:
    c: float
    global_value: float
    faces: List[FaceMargin] = field(default_factory=list)
    verdict: Verdict = Verdict.SOLVABLE_J
    witness: Optional[str] = None
    twist_d: float = 0.0
    c_from_classes: bool = True

    def face(self, face_id: str) -> FaceMargin:
        for f in self.faces:
            if f.face_id == face_id:
                return f
        raise KeyError(face_id)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "c": self.c,
            "c_from_classes": self.c_from_classes,
            "global_value": self.global_value,
            "twist_d": self.twist_d,
            "verdict": self.verdict.value,
            "witness": self.witness,
            "faces": [
                {"face": f.face_id, "dim": f.dim, "codim": f.codim, "margin": f.margin} for f in self.faces
            ],
        }

    def csv_rows(self) -> List[List[Any]]:
        return [[f.face_id, f.dim, f.margin] for f in self.faces]


def _matched_indices(P_chi: Polytope, P_alpha: Polytope, support: Sequence[int]) -> List[int]:
    keys = {h.direction_key(): i for i, h in enumerate(P_alpha.halfspaces)}
    out = []
    for i in support:
        key = P_chi.halfspaces[i].direction_key()
        if key not in keys:
            raise DomainError(f"Facet {P_chi.label_of(i)} has no counterpart in the second class.")
        out.append(keys[key])
    return out


def face_margin(P_chi: Polytope, P_alpha: Polytope, face: Face, c: float) -> FaceMargin:
    """c p! Vol(F_chi) - p p! V(F_chi[p-1], F_alpha[1]) with lattice-normalized volumes."""
    p = face.dim
    if p == 0:
        return FaceMargin(face.face_id, 0, face.codim, float(c), 1.0, 0.0)
    n = P_chi.dim
    normals = [P_chi.halfspaces[i].direction_key() for i in face.support]
    basis = null_space(np.asarray(normals, dtype=float))
    covol = _lattice_covolume(normals, n)

    chi_pts = P_chi.vertex_array()[list(face.vertex_index)]
    origin = chi_pts[0]
    alpha_mask = _tight(P_alpha, _matched_indices(P_chi, P_alpha, face.support))
    alpha_pts = P_alpha.vertex_array()[alpha_mask]
    if alpha_pts.shape[0] == 0:
        raise DomainError(f"Face {face.face_id} is empty for the second class.")

    chi_coords = (chi_pts - origin) @ basis
    alpha_coords = (alpha_pts - origin) @ basis
    mixed = _mixed_volumes_points(chi_coords, alpha_coords)
    vol = mixed[p] / covol
    mixed_term = mixed[p - 1] / covol
    fact = math.factorial(p)
    margin = c * fact * vol - p * fact * mixed_term
    return FaceMargin(face.face_id, p, face.codim, float(margin), float(vol), float(mixed_term))


def stability_report(
    P_chi: Polytope,
    P_alpha: Polytope,
    c: Optional[float] = None,
    *,
    margin_tol: float = MARGIN_TOL,
) -> StabilityReport:
    """Face-wise numerical criterion for the pair of classes ([chi], [alpha]).

    Without ``c`` the constant comes from c int chi^n = n int chi^(n-1) alpha.
    """
    assert_compatible_fans(P_chi, P_alpha)
    if not P_chi.is_full_dimensional or not P_alpha.is_full_dimensional:
        raise DomainError("Both classes must be represented by full-dimensional polytopes.")
    n = P_chi.dim
    mv = _mixed_volumes_points(P_chi.vertex_array(), P_alpha.vertex_array())
    fact = math.factorial(n)
    chi_n = fact * mv[n]
    chi_alpha = fact * mv[n - 1]
    alpha_n = fact * mv[0]

    c_from_classes = c is None
    if c is None:
        c = n * chi_alpha / chi_n
    global_value = c * chi_n - n * chi_alpha
    scale = max(1.0, abs(c * chi_n))
    if c_from_classes:
        global_value = 0.0 if abs(global_value) <= GLOBAL_TOL * scale else global_value

    report = StabilityReport(c=float(c), global_value=float(global_value), c_from_classes=c_from_classes)
    report.twist_d = float(global_value / alpha_n) if alpha_n > 0 else 0.0
    report.faces = [face_margin(P_chi, P_alpha, f, c) for f in faces(P_chi)]

    failing = [f for f in report.faces if f.margin <= margin_tol]
    if global_value < -GLOBAL_TOL * scale:
        report.verdict, report.witness = Verdict.UNSTABLE, "M"
    elif failing:
        report.verdict, report.witness = Verdict.UNSTABLE, failing[0].face_id
    elif abs(global_value) <= GLOBAL_TOL * scale:
        report.verdict = Verdict.SOLVABLE_J
    else:
        report.verdict = Verdict.SOLVABLE_TWISTED
    return report


def difference_pairings(P_chi: Polytope, P_alpha: Polytope, c: float) -> Dict[str, float]:
    """For n = 2: lattice length of each edge of c P_chi minus that of P_alpha."""
    if P_chi.dim != 2:
        raise DomainError("Edge pairings are defined for polygons only.")
    assert_compatible_fans(P_chi, P_alpha)
    out: Dict[str, float] = {}
    for i, h in enumerate(P_chi.halfspaces):
        u = np.asarray(h.direction_key())
        direction = np.linalg.norm(primitive_vector((-u[1], u[0])))
        j = _matched_indices(P_chi, P_alpha, [i])[0]

        def edge_length(P: Polytope, idx: int) -> float:
            pts = P.vertex_array()[_tight(P, [idx])]
            if pts.shape[0] < 2:
                return 0.0
            return float(np.max(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)))

        out[P_chi.label_of(i)] = c * edge_length(P_chi, i) / direction - edge_length(P_alpha, j) / direction
    return out
