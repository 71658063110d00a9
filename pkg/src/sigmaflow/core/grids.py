"""Bounded grids in R^n (n <= 2) with sparse first and second difference operators."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.interpolate import griddata

from .validators import DomainError


class DomainKind(str, Enum):
    RECTANGLE = "rectangle"
    BALL = "ball"


# Interior nodes closer than this fraction of h to a curved boundary are dropped.
BALL_MARGIN = 0.1


@dataclass(frozen=True)
class GridDomain:
    kind: DomainKind
    n: int
    nodes: int
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    center: Tuple[float, ...] = ()
    radius: float = 0.0

    def __post_init__(self) -> None:
        if self.n not in (1, 2):
            raise DomainError(f"Grids are limited to n = 1 or 2, got {self.n}.")
        if self.nodes < 5:
            raise DomainError(f"A grid needs at least 5 nodes per axis, got {self.nodes}.")
        if len(self.lower) != self.n or len(self.upper) != self.n:
            raise DomainError("Bounds must have one entry per dimension.")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise DomainError(f"Empty box {self.lower} .. {self.upper}.")

    @classmethod
    def interval(cls, a: float, b: float, nodes: int) -> "GridDomain":
        return cls(DomainKind.RECTANGLE, 1, int(nodes), (float(a),), (float(b),))

    @classmethod
    def rectangle(cls, lower: Sequence[float], upper: Sequence[float], nodes: int) -> "GridDomain":
        lower = tuple(float(x) for x in lower)
        return cls(DomainKind.RECTANGLE, len(lower), int(nodes), lower, tuple(float(x) for x in upper))

    @classmethod
    def ball(cls, center: Sequence[float], radius: float, nodes: int) -> "GridDomain":
        center = tuple(float(x) for x in center)
        if radius <= 0:
            raise DomainError(f"Ball radius must be positive, got {radius}.")
        lower = tuple(x - radius for x in center)
        upper = tuple(x + radius for x in center)
        if len(center) == 1:
            return cls(DomainKind.RECTANGLE, 1, int(nodes), lower, upper)
        return cls(DomainKind.BALL, len(center), int(nodes), lower, upper, center, float(radius))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GridDomain":
        kind = data.get("kind")
        if kind == DomainKind.RECTANGLE.value:
            allowed = {"kind", "lower", "upper", "nodes"}
        elif kind == DomainKind.BALL.value:
            allowed = {"kind", "center", "radius", "nodes"}
        else:
            raise DomainError(f"Unknown domain kind: {kind}")
        for key in data:
            if key not in allowed:
                raise DomainError(f"Unknown domain key: {key}")
        for key in allowed:
            if key not in data:
                raise DomainError(f"Domain is missing key: {key}")
        if kind == DomainKind.BALL.value:
            return cls.ball(data["center"], float(data["radius"]), int(data["nodes"]))
        return cls.rectangle(data["lower"], data["upper"], int(data["nodes"]))

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == DomainKind.BALL:
            return {"kind": self.kind.value, "center": list(self.center), "radius": self.radius, "nodes": self.nodes}
        return {"kind": self.kind.value, "lower": list(self.lower), "upper": list(self.upper), "nodes": self.nodes}

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple((u - l) / (self.nodes - 1) for l, u in zip(self.lower, self.upper))

    @property
    def h(self) -> float:
        return max(self.spacing)

    @property
    def scale(self) -> float:
        return max(u - l for l, u in zip(self.lower, self.upper))

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.nodes,) * self.n

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(l, u, self.nodes) for l, u in zip(self.lower, self.upper)]

    def node_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.kind == DomainKind.BALL:
            return np.linalg.norm(points - np.asarray(self.center), axis=-1) <= self.radius * (1 + 1e-12)
        lo = np.asarray(self.lower) - 1e-12
        hi = np.asarray(self.upper) + 1e-12
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def stencil(self) -> "Stencil":
        return _build_stencil(self)


def components(n: int) -> List[Tuple[int, int]]:
    return [(0, 0)] if n == 1 else [(0, 0), (0, 1), (1, 1)]


@dataclass
class Stencil:
    domain: GridDomain
    interior_points: np.ndarray
    boundary_points: np.ndarray
    interior_nodes: np.ndarray
    inner: np.ndarray
    second: Dict[Tuple[int, int], Tuple[sparse.csr_matrix, sparse.csr_matrix]]
    first: Dict[int, Tuple[sparse.csr_matrix, sparse.csr_matrix]]

    @property
    def m(self) -> int:
        return len(self.interior_points)

    @property
    def k(self) -> int:
        return len(self.boundary_points)

    def hessian(self, interior: np.ndarray, boundary: np.ndarray) -> np.ndarray:
        n = self.domain.n
        out = np.zeros((self.m, n, n))
        for (a, b), (A_int, A_bnd) in self.second.items():
            value = A_int @ interior + A_bnd @ boundary
            out[:, a, b] = value
            out[:, b, a] = value
        return out

    def gradient(self, interior: np.ndarray, boundary: np.ndarray) -> np.ndarray:
        out = np.zeros((self.m, self.domain.n))
        for a, (A_int, A_bnd) in self.first.items():
            out[:, a] = A_int @ interior + A_bnd @ boundary
        return out


class _Triplets:
    def __init__(self, m: int, k: int):
        self.m = m
        self.k = k
        self.rows_i: List[np.ndarray] = []
        self.cols_i: List[np.ndarray] = []
        self.vals_i: List[np.ndarray] = []
        self.rows_b: List[np.ndarray] = []
        self.cols_b: List[np.ndarray] = []
        self.vals_b: List[np.ndarray] = []

    def add(self, rows, targets, weights) -> None:
        """``targets`` >= 0 index interior unknowns, < 0 encode boundary point -1 - j."""
        rows = np.atleast_1d(np.asarray(rows, dtype=int))
        targets = np.atleast_1d(np.asarray(targets, dtype=int))
        weights = np.broadcast_to(np.asarray(weights, dtype=float), rows.shape)
        inside = targets >= 0
        self.rows_i.append(rows[inside])
        self.cols_i.append(targets[inside])
        self.vals_i.append(weights[inside])
        self.rows_b.append(rows[~inside])
        self.cols_b.append(-1 - targets[~inside])
        self.vals_b.append(weights[~inside])

    def matrices(self) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
        def build(rows, cols, vals, width):
            if rows:
                r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
            else:
                r = c = np.zeros(0, dtype=int)
                v = np.zeros(0)
            return sparse.csr_matrix((v, (r, c)), shape=(self.m, width))

        return (
            build(self.rows_i, self.cols_i, self.vals_i, self.m),
            build(self.rows_b, self.cols_b, self.vals_b, self.k),
        )


def _offsets(n: int, h: Tuple[float, ...]) -> Dict[Any, List[Tuple[Tuple[int, ...], float]]]:
    """Central-difference weights keyed by component, as (grid offset, weight)."""
    if n == 1:
        (hx,) = h
        return {
            (0, 0): [((-1,), 1 / hx**2), ((0,), -2 / hx**2), ((1,), 1 / hx**2)],
            0: [((-1,), -0.5 / hx), ((1,), 0.5 / hx)],
        }
    hx, hy = h
    return {
        (0, 0): [((-1, 0), 1 / hx**2), ((0, 0), -2 / hx**2), ((1, 0), 1 / hx**2)],
        (1, 1): [((0, -1), 1 / hy**2), ((0, 0), -2 / hy**2), ((0, 1), 1 / hy**2)],
        (0, 1): [
            ((1, 1), 0.25 / (hx * hy)),
            ((1, -1), -0.25 / (hx * hy)),
            ((-1, 1), -0.25 / (hx * hy)),
            ((-1, -1), 0.25 / (hx * hy)),
        ],
        0: [((-1, 0), -0.5 / hx), ((1, 0), 0.5 / hx)],
        1: [((0, -1), -0.5 / hy), ((0, 1), 0.5 / hy)],
    }


_RAYS = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


def _ray_hit(x: np.ndarray, d: np.ndarray, center: np.ndarray, radius: float) -> float:
    """Positive theta with |x + theta d - center| = radius."""
    y = x - center
    a = float(d @ d)
    b = 2.0 * float(y @ d)
    c = float(y @ y) - radius**2
    return (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)


@lru_cache(maxsize=32)
def _build_stencil(domain: GridDomain) -> Stencil:
    n = domain.n
    N = domain.nodes
    h = domain.spacing
    points = domain.node_points().reshape(domain.shape + (n,))
    idx = np.indices(domain.shape).reshape(n, -1).T

    if domain.kind == DomainKind.BALL:
        dist = np.linalg.norm(points - np.asarray(domain.center), axis=-1)
        interior_mask = dist < domain.radius - BALL_MARGIN * domain.h
    else:
        interior_mask = np.zeros(domain.shape, dtype=bool)
        interior_mask[(slice(1, N - 1),) * n] = True

    interior_id = -np.ones(domain.shape, dtype=int)
    interior_id[interior_mask] = np.arange(int(interior_mask.sum()))
    interior_nodes = np.argwhere(interior_mask)
    m = len(interior_nodes)
    if m == 0:
        raise DomainError("Domain has no interior nodes.")

    boundary_pts: List[np.ndarray] = []
    boundary_id = -np.ones(domain.shape, dtype=int)
    if domain.kind == DomainKind.RECTANGLE:
        edge = ~interior_mask
        boundary_id[edge] = np.arange(int(edge.sum()))
        boundary_pts = list(points[edge])

    # Every grid neighbour (including diagonals) of an inner node is an interior node.
    padded = np.pad(interior_mask, 1, constant_values=False)
    inner_grid = interior_mask.copy()
    for shift in np.ndindex(*(3,) * n):
        sl = tuple(slice(s, s + N) for s in shift)
        inner_grid &= padded[sl]
    inner = inner_grid[interior_mask]

    weights = _offsets(n, h)
    stencil_keys = components(n) + list(range(n))
    triplets = {key: _Triplets(m, 0) for key in stencil_keys}

    regular = inner if domain.kind == DomainKind.BALL else np.ones(m, dtype=bool)
    reg_nodes = interior_nodes[regular]
    reg_rows = interior_id[tuple(reg_nodes.T)]
    for key in stencil_keys:
        for offset, weight in weights[key]:
            nb = reg_nodes + np.asarray(offset)
            nb_t = tuple(nb.T)
            target = np.where(interior_id[nb_t] >= 0, interior_id[nb_t], -1 - boundary_id[nb_t])
            triplets[key].add(reg_rows, target, weight)

    if domain.kind == DomainKind.BALL:
        center = np.asarray(domain.center)
        hits: Dict[Tuple[float, float], int] = {}
        for node in interior_nodes[~regular]:
            x = points[tuple(node)]
            row = interior_id[tuple(node)]
            deltas: List[np.ndarray] = []
            targets: List[int] = []
            for ray in _RAYS:
                nb = tuple(node + np.asarray(ray))
                d = np.asarray(ray, dtype=float) * np.asarray(h)
                if all(0 <= c < N for c in nb) and interior_id[nb] >= 0:
                    deltas.append(d)
                    targets.append(int(interior_id[nb]))
                    continue
                theta = _ray_hit(x, d, center, domain.radius)
                p = x + theta * d
                key = (round(float(p[0]), 12), round(float(p[1]), 12))
                if key not in hits:
                    hits[key] = len(boundary_pts)
                    boundary_pts.append(p)
                deltas.append(theta * d)
                targets.append(-1 - hits[key])
            D = np.array([[dx, dy, 0.5 * dx * dx, dx * dy, 0.5 * dy * dy] for dx, dy in deltas])
            P = np.linalg.pinv(D)
            rows_for = {0: 0, 1: 1, (0, 0): 2, (0, 1): 3, (1, 1): 4}
            for key in stencil_keys:
                coeff = P[rows_for[key]]
                triplets[key].add(np.full(len(targets), row), targets, coeff)
                triplets[key].add([row], [row], [-coeff.sum()])

    k = len(boundary_pts)
    boundary_points = np.asarray(boundary_pts, dtype=float).reshape(k, n)
    second: Dict[Tuple[int, int], Tuple[sparse.csr_matrix, sparse.csr_matrix]] = {}
    first: Dict[int, Tuple[sparse.csr_matrix, sparse.csr_matrix]] = {}
    for key in stencil_keys:
        triplets[key].k = k
        pair = triplets[key].matrices()
        if isinstance(key, tuple):
            second[key] = pair
        else:
            first[key] = pair

    return Stencil(
        domain=domain,
        interior_points=points[interior_mask],
        boundary_points=boundary_points,
        interior_nodes=interior_nodes,
        inner=inner,
        second=second,
        first=first,
    )


def _interpolate(points: np.ndarray, values: np.ndarray, query: np.ndarray) -> np.ndarray:
    if points.shape[1] == 1:
        order = np.argsort(points[:, 0])
        return np.interp(query[:, 0], points[order, 0], values[order])
    out = griddata(points, values, query, method="linear")
    missing = np.isnan(out)
    if np.any(missing):
        out[missing] = griddata(points, values, query[missing], method="nearest")
    return out


@dataclass
class ConvexGridFunction:
    """Values at the interior nodes plus Dirichlet values at the boundary points."""

    domain: GridDomain
    interior: np.ndarray
    boundary: np.ndarray

    def __post_init__(self) -> None:
        st = self.stencil
        self.interior = np.asarray(self.interior, dtype=float).reshape(st.m)
        self.boundary = np.asarray(self.boundary, dtype=float).reshape(st.k)

    @property
    def stencil(self) -> Stencil:
        return self.domain.stencil()

    @property
    def h(self) -> float:
        return self.domain.h

    @classmethod
    def from_function(cls, domain: GridDomain, func: Callable[[np.ndarray], np.ndarray]) -> "ConvexGridFunction":
        st = domain.stencil()
        interior = np.asarray(func(st.interior_points), dtype=float)
        boundary = np.asarray(func(st.boundary_points), dtype=float) if st.k else np.zeros(0)
        return cls(domain, interior, boundary)

    def with_interior(self, interior: np.ndarray) -> "ConvexGridFunction":
        return ConvexGridFunction(self.domain, interior, self.boundary)

    def hessian(self) -> np.ndarray:
        return self.stencil.hessian(self.interior, self.boundary)

    def gradient(self) -> np.ndarray:
        return self.stencil.gradient(self.interior, self.boundary)

    def min_hessian_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.hessian())))

    def points(self) -> np.ndarray:
        st = self.stencil
        return np.concatenate([st.interior_points, st.boundary_points], axis=0)

    def values(self) -> np.ndarray:
        return np.concatenate([self.interior, self.boundary])

    def to_grid(self) -> np.ndarray:
        """Node array over the bounding box, NaN where the node is not in the domain."""
        st = self.stencil
        out = np.full(self.domain.shape, np.nan)
        out[tuple(st.interior_nodes.T)] = self.interior
        if self.domain.kind == DomainKind.RECTANGLE:
            mask = np.ones(self.domain.shape, dtype=bool)
            mask[tuple(st.interior_nodes.T)] = False
            out[mask] = self.boundary
        return out

    def sample(self, query) -> np.ndarray:
        query = np.asarray(query, dtype=float).reshape(-1, self.domain.n)
        return _interpolate(self.points(), self.values(), query)

    def hessian_at(self, query) -> np.ndarray:
        """Node Hessians interpolated to arbitrary points (nearest value outside the hull)."""
        query = np.asarray(query, dtype=float).reshape(-1, self.domain.n)
        H = self.hessian()
        pts = self.stencil.interior_points
        n = self.domain.n
        out = np.zeros((len(query), n, n))
        for a, b in components(n):
            value = _interpolate(pts, H[:, a, b], query)
            out[:, a, b] = value
            out[:, b, a] = value
        return out

    def max_error(self, exact: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.max(np.abs(self.interior - exact(self.stencil.interior_points))))


@dataclass(frozen=True)
class PolynomialPotential:
    """Sum of coef * prod x_a^p_a, used for backgrounds and boundary data."""

    n: int
    terms: Tuple[Tuple[float, Tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        for coef, powers in self.terms:
            if len(powers) != self.n or any(p < 0 or int(p) != p for p in powers):
                raise DomainError(f"Invalid monomial powers {powers} for n = {self.n}.")

    @classmethod
    def quadratic(cls, hessian, gradient=None, constant: float = 0.0) -> "PolynomialPotential":
        H = np.atleast_2d(np.asarray(hessian, dtype=float))
        n = H.shape[0]
        g = np.zeros(n) if gradient is None else np.asarray(gradient, dtype=float)
        terms: List[Tuple[float, Tuple[int, ...]]] = []
        if constant:
            terms.append((float(constant), (0,) * n))
        for a in range(n):
            e = [0] * n
            e[a] = 1
            if g[a]:
                terms.append((float(g[a]), tuple(e)))
            for b in range(a, n):
                powers = [0] * n
                powers[a] += 1
                powers[b] += 1
                coef = 0.5 * H[a, a] if a == b else H[a, b]
                if coef:
                    terms.append((float(coef), tuple(powers)))
        return cls(n, tuple(terms))

    @classmethod
    def half_square(cls, n: int) -> "PolynomialPotential":
        return cls.quadratic(np.eye(n))

    @classmethod
    def from_dict(cls, data: Dict[str, Any], n: Optional[int] = None) -> "PolynomialPotential":
        if "monomials" in data:
            for key in data:
                if key != "monomials":
                    raise DomainError(f"Unknown potential key: {key}")
            terms = []
            for item in data["monomials"]:
                for key in item:
                    if key not in ("coef", "powers"):
                        raise DomainError(f"Unknown monomial key: {key}")
                terms.append((float(item["coef"]), tuple(int(p) for p in item["powers"])))
            dim = n if n is not None else (len(terms[0][1]) if terms else 1)
            return cls(dim, tuple(terms))
        for key in data:
            if key not in ("hessian", "gradient", "constant"):
                raise DomainError(f"Unknown potential key: {key}")
        if "hessian" not in data:
            raise DomainError("Potential needs either monomials or hessian.")
        return cls.quadratic(data["hessian"], data.get("gradient"), float(data.get("constant", 0.0)))

    def to_dict(self) -> Dict[str, Any]:
        return {"monomials": [{"coef": c, "powers": list(p)} for c, p in self.terms]}

    def _points(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).reshape(-1, self.n)

    def __call__(self, x) -> np.ndarray:
        x = self._points(x)
        out = np.zeros(len(x))
        for coef, powers in self.terms:
            out += coef * np.prod(x ** np.asarray(powers), axis=-1)
        return out

    def gradient(self, x) -> np.ndarray:
        x = self._points(x)
        out = np.zeros(x.shape)
        for coef, powers in self.terms:
            for a in range(self.n):
                if powers[a] == 0:
                    continue
                p = np.asarray(powers)
                p[a] -= 1
                out[:, a] += coef * powers[a] * np.prod(x**p, axis=-1)
        return out

    def hessian_at(self, x) -> np.ndarray:
        x = self._points(x)
        out = np.zeros((len(x), self.n, self.n))
        for coef, powers in self.terms:
            for a in range(self.n):
                for b in range(self.n):
                    p = np.asarray(powers)
                    factor = p[a]
                    p[a] -= 1
                    factor = factor * p[b]
                    p[b] -= 1
                    if factor == 0:
                        continue
                    out[:, a, b] += coef * factor * np.prod(x**p, axis=-1)
        return out

    def on(self, domain: GridDomain) -> ConvexGridFunction:
        if domain.n != self.n:
            raise DomainError(f"Potential has n = {self.n}, domain has n = {domain.n}.")
        return ConvexGridFunction.from_function(domain, self)
