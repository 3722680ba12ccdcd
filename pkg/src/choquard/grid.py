"""Masked Cartesian grids on bounded domains with homogeneous Dirichlet data.

A domain is described analytically by a :class:`DomainSpec` (signed distance
function plus catalog metadata). :func:`build_grid` samples it on a uniform
node lattice; nodes strictly inside the domain carry unknowns, every other
node is pinned to zero. The discrete gradient energy and the 2n+1 point
operator ``-Delta + lambda`` are built on the same lattice edges, so that
``<(-Delta + lambda) u, u> = |grad u|^2 + lambda |u|^2`` holds exactly up to
rounding.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParameterError

KINDS = ("ball", "annulus", "multi_hole", "box")
MIN_NODES_PER_FEATURE = 16
FIELD_MAGIC = b"CHQF"
FIELD_VERSION = 1


def _as_point(x: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class DomainSpec:
    """Analytic description of a bounded domain.

    Use the constructors :meth:`ball`, :meth:`annulus`, :meth:`multi_hole`
    and :meth:`box` rather than the raw initializer. ``r_outer`` is the ball
    radius for ``ball`` and the outer radius for ``annulus``/``multi_hole``.
    ``holes`` is a tuple of ``(center, radius)`` pairs. ``declared_category``
    is the Lusternik-Schnirelmann category of the catalog shape; it is stored,
    never computed.
    """

    kind: str
    center: tuple[float, ...] = ()
    r_outer: float = 0.0
    r_inner: float = 0.0
    holes: tuple[tuple[tuple[float, ...], float], ...] = ()
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()
    r_margin: float = 0.0
    declared_category: int = 1

    # -- constructors -----------------------------------------------------
    @classmethod
    def ball(cls, center, radius, r_margin=None):
        return cls._make(kind="ball", center=_as_point(center), r_outer=float(radius),
                         r_margin=r_margin, declared_category=1)

    @classmethod
    def annulus(cls, center, r_inner, r_outer, r_margin=None):
        return cls._make(kind="annulus", center=_as_point(center), r_inner=float(r_inner),
                         r_outer=float(r_outer), r_margin=r_margin, declared_category=2)

    @classmethod
    def multi_hole(cls, center, r_outer, holes, r_margin=None):
        holes = tuple((_as_point(c), float(r)) for c, r in holes)
        # a ball with k >= 1 disjoint holes is a wedge of circles: category 2
        cat = 2 if holes else 1
        return cls._make(kind="multi_hole", center=_as_point(center), r_outer=float(r_outer),
                         holes=holes, r_margin=r_margin, declared_category=cat)

    @classmethod
    def box(cls, lo, hi, r_margin=None):
        return cls._make(kind="box", lo=_as_point(lo), hi=_as_point(hi),
                         r_margin=r_margin, declared_category=1)

    @classmethod
    def _make(cls, r_margin=None, **kw):
        spec = cls(r_margin=1.0 if r_margin is None else float(r_margin), **kw)
        spec._validate_shape()
        if r_margin is None:
            spec = cls(r_margin=0.2 * min(spec.features().values()), **kw)
        spec._validate_margin()
        return spec

    # -- geometry ---------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.lo) if self.kind == "box" else len(self.center)

    def features(self) -> dict[str, float]:
        """Named feature sizes; the grid must resolve each of them."""
        if self.kind == "ball":
            return {"ball diameter": 2.0 * self.r_outer}
        if self.kind == "annulus":
            return {"annulus gap": self.r_outer - self.r_inner}
        if self.kind == "box":
            return {f"box side {i}": b - a for i, (a, b) in enumerate(zip(self.lo, self.hi))}
        c0 = np.asarray(self.center)
        out: dict[str, float] = {}
        for k, (c, r) in enumerate(self.holes):
            ck = np.asarray(c)
            out[f"hole {k} diameter"] = 2.0 * r
            out[f"hole {k} to outer boundary gap"] = self.r_outer - float(np.linalg.norm(ck - c0)) - r
            for j in range(k):
                cj, rj = self.holes[j]
                out[f"gap between holes {j} and {k}"] = float(np.linalg.norm(ck - np.asarray(cj))) - r - rj
        if not out:
            out["ball diameter"] = 2.0 * self.r_outer
        return out

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return np.asarray(self.lo, float), np.asarray(self.hi, float)
        c = np.asarray(self.center, float)
        return c - self.r_outer, c + self.r_outer

    def sdf(self, x) -> np.ndarray:
        """Signed distance to the boundary: negative inside, positive outside."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            lo = np.asarray(self.lo)
            hi = np.asarray(self.hi)
            q = np.maximum(lo - x, x - hi)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            inside = np.minimum(np.max(q, axis=-1), 0.0)
            return outside + inside
        rho = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        d = rho - self.r_outer
        if self.kind == "annulus":
            d = np.maximum(d, self.r_inner - rho)
        for c, r in self.holes:
            d = np.maximum(d, r - np.linalg.norm(x - np.asarray(c), axis=-1))
        return d

    def contains(self, x) -> np.ndarray:
        return self.sdf(x) < 0.0

    def max_depth(self) -> float:
        """Largest distance from a point of the domain to its boundary."""
        if self.kind == "ball":
            return self.r_outer
        if self.kind == "annulus":
            return 0.5 * (self.r_outer - self.r_inner)
        if self.kind == "box":
            return 0.5 * min(b - a for a, b in zip(self.lo, self.hi))
        lo, hi = self.bounding_box()
        m = 201 if self.n == 2 else 61
        axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return float(-self.sdf(pts).min())

    # -- validation -------------------------------------------------------
    def _validate_shape(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown domain kind {self.kind!r}; expected one of {KINDS}")
        if self.n not in (2, 3):
            raise ConfigError(f"grid dimension must be 2 or 3, got {self.n}")
        if self.kind == "box":
            if len(self.hi) != len(self.lo) or any(b <= a for a, b in zip(self.lo, self.hi)):
                raise ConfigError("box requires lo < hi componentwise")
            return
        if not self.r_outer > 0:
            raise ConfigError("radius must be positive")
        if self.kind == "annulus" and not 0.0 < self.r_inner < self.r_outer:
            raise ConfigError(f"annulus requires 0 < r_inner < r_outer, got "
                              f"r_inner={self.r_inner}, r_outer={self.r_outer}")
        if self.kind == "multi_hole":
            for c, r in self.holes:
                if len(c) != self.n or not r > 0:
                    raise ConfigError("each hole needs a center of matching dimension and a positive radius")
            for name, size in self.features().items():
                if size <= 0:
                    raise ConfigError(f"multi_hole: {name} is {size:g}; holes must lie strictly "
                                      "inside the outer ball and be pairwise disjoint")

    def _validate_margin(self) -> None:
        if not self.r_margin > 0:
            raise ConfigError("r_margin must be positive")
        if self.r_margin >= self.max_depth():
            raise ConfigError(f"r_margin={self.r_margin:g} leaves the inner neighborhood empty "
                              f"(max depth {self.max_depth():g}); use a smaller r_margin")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform node lattice with an interior mask.

    ``mask[i]`` is true iff node ``i`` lies strictly inside the domain. The
    outermost layer of the lattice is always exterior.
    """

    n: int
    shape: tuple[int, ...]
    h: tuple[float, ...]
    origin: tuple[float, ...]
    mask: np.ndarray

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @property
    def num_interior(self) -> int:
        return int(self.mask.sum())

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(m) for o, h, m in zip(self.origin, self.h, self.shape)]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def index_of(self, x) -> tuple[int, ...]:
        """Index of the node nearest to point ``x``."""
        return tuple(int(round((xi - o) / h)) for xi, o, h in zip(x, self.origin, self.h))

    def same_as(self, other: "Grid") -> bool:
        return (self is other or (self.shape == other.shape and self.h == other.h
                                  and self.origin == other.origin
                                  and np.array_equal(self.mask, other.mask)))


class Field:
    """A grid function vanishing outside the domain.

    Values are copied, masked and frozen on construction, so a Field never
    changes after it is created.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        v = np.array(values, dtype=float)
        if v.shape != grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid shape {grid.shape}")
        v[~grid.mask] = 0.0
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        self.grid = grid
        self.values = v

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        return cls(grid, fn(grid.coordinates()))

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def __mul__(self, s: float) -> "Field":
        return Field(self.grid, self.values * s)

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - other.values)

    def positive_part(self) -> "Field":
        return Field(self.grid, np.maximum(self.values, 0.0))

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


def build_grid(spec: DomainSpec, resolution: float) -> Grid:
    """Sample ``spec`` on a lattice with ``resolution`` nodes per unit length.

    Round domains get a node at their center, so that the mask inherits the
    lattice symmetries of the shape.

    Raises
    ------
    ConfigError
        If some feature of the domain spans fewer than 16 grid spacings.
    """
    if not resolution > 0:
        raise ConfigError("resolution must be positive")
    for name, size in spec.features().items():
        if size * resolution < MIN_NODES_PER_FEATURE:
            raise ConfigError(
                f"resolution {resolution:g} is too coarse for the {name} ({size:g}): "
                f"need at least {MIN_NODES_PER_FEATURE} nodes across it "
                f"(resolution >= {MIN_NODES_PER_FEATURE / size:g})")
    pad = 1
    if spec.kind == "box":
        lo, hi = spec.bounding_box()
        m = [max(1, int(round((b - a) * resolution))) for a, b in zip(lo, hi)]
        h = tuple(float((b - a) / mi) for a, b, mi in zip(lo, hi, m))
        origin = tuple(float(a - pad * hi_) for a, hi_ in zip(lo, h))
        shape = tuple(mi + 1 + 2 * pad for mi in m)
    else:
        hh = 1.0 / resolution
        k = int(math.ceil(spec.r_outer * resolution - 1e-9))
        h = (hh,) * spec.n
        origin = tuple(c - (k + pad) * hh for c in spec.center)
        shape = (2 * (k + pad) + 1,) * spec.n
    axes = [o + hi_ * np.arange(mi) for o, hi_, mi in zip(origin, h, shape)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    mask = spec.sdf(pts) < -1e-9 * min(h)
    mask.flags.writeable = False
    return Grid(n=spec.n, shape=shape, h=h, origin=origin, mask=mask)


def omega_r_minus_points(grid: Grid, spec: DomainSpec, count: int) -> list[tuple[float, ...]]:
    """Spread ``count`` nodes over the inner neighborhood {d(x, boundary) >= r}.

    Depth-weighted farthest-point sampling: the first point is the deepest
    node, each next one maximizes ``dist(x, chosen) * depth(x)``. The depth
    factor keeps samples on the medial ridge of thin shapes (an annulus gets
    points on its mid-circle) while distance still spreads them. Ties resolve
    to the first node in C order, so the output is deterministic.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    pts = grid.coordinates()[grid.mask]
    depth = -spec.sdf(pts)
    keep = depth >= spec.r_margin
    if not keep.any():
        raise ConfigError(f"no grid node has depth >= r_margin={spec.r_margin:g}; "
                          "use a smaller r_margin or a finer grid")
    pts, depth = pts[keep], depth[keep]
    chosen: list[int] = []
    dmin = np.full(len(pts), np.inf)
    for k in range(count):
        i = int(np.argmax(depth)) if k == 0 else int(np.argmax(dmin * depth))
        chosen.append(i)
        dmin = np.minimum(dmin, np.linalg.norm(pts - pts[i], axis=1))
    return [tuple(float(c) for c in pts[i]) for i in chosen]


def in_omega_r_plus(spec: DomainSpec, x) -> bool:
    """True iff dist(x, domain) <= r_margin."""
    return bool(spec.sdf(np.asarray(x, float)) <= spec.r_margin)


def in_omega_r_minus(spec: DomainSpec, x) -> bool:
    """True iff x is in the domain at distance >= r_margin from its boundary."""
    return bool(spec.sdf(np.asarray(x, float)) <= -spec.r_margin)


# -- quadrature and the discrete H^1 structure ----------------------------

def integrate(f: Field) -> float:
    """Midpoint rule over interior nodes with exactly rounded summation."""
    return f.grid.cell_volume * math.fsum(f.values[f.grid.mask].ravel())


def _grad_sq_array(v: np.ndarray, h: Sequence[float]) -> float:
    terms = [(np.diff(v, axis=ax) / hx).ravel() ** 2 for ax, hx in enumerate(h)]
    return math.prod(h) * math.fsum(np.concatenate(terms))


def grad_sq_integral(u: Field) -> float:
    """|grad u|_2^2 from forward differences on every lattice edge."""
    return _grad_sq_array(u.values, u.grid.h)


def l2_sq_integral(u: Field) -> float:
    return u.grid.cell_volume * math.fsum((u.values[u.grid.mask] ** 2).ravel())


def h1_lambda_sq(u: Field, lam: float) -> float:
    """||u||_lambda^2 = |grad u|_2^2 + lambda |u|_2^2."""
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    g = grad_sq_integral(u)
    return g + lam * l2_sq_integral(u) if lam else g


def neg_laplacian_array(v: np.ndarray, h: Sequence[float], mask: np.ndarray, lam: float = 0.0) -> np.ndarray:
    """(-Delta + lam) v with zero exterior values; result masked."""
    out = (lam + sum(2.0 / hx ** 2 for hx in h)) * v
    for ax, hx in enumerate(h):
        c = 1.0 / hx ** 2
        hi = [slice(None)] * v.ndim
        lo = [slice(None)] * v.ndim
        hi[ax] = slice(1, None)
        lo[ax] = slice(None, -1)
        out[tuple(hi)] -= c * v[tuple(lo)]
        out[tuple(lo)] -= c * v[tuple(hi)]
    out[~mask] = 0.0
    return out


def apply_operator(u: Field, lam: float) -> Field:
    """Discrete (-Delta + lam) u under homogeneous Dirichlet conditions."""
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    return Field(u.grid, neg_laplacian_array(u.values, u.grid.h, u.grid.mask, lam))


def l2_inner(u: Field, v: Field) -> float:
    return u.grid.cell_volume * math.fsum((u.values * v.values)[u.grid.mask].ravel())


# -- field dumps ----------------------------------------------------------

def dump_field(f: Field) -> bytes:
    """Serialize a field: b"CHQF", u16 version, u16 n, u64 shape[n],
    f64 h[n], f64 origin[n], then f64 values in C order. Little endian."""
    g = f.grid
    head = struct.pack("<4sHH", FIELD_MAGIC, FIELD_VERSION, g.n)
    head += struct.pack(f"<{g.n}Q", *g.shape)
    head += struct.pack(f"<{g.n}d", *g.h)
    head += struct.pack(f"<{g.n}d", *g.origin)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def load_field(data: bytes, grid: Grid | None = None):
    """Parse a dump. Returns a Field if ``grid`` is given (geometry must
    match), else ``(shape, h, origin, values)``."""
    magic, version, n = struct.unpack_from("<4sHH", data, 0)
    if magic != FIELD_MAGIC:
        raise ValueError("not a field dump (bad magic)")
    if version != FIELD_VERSION:
        raise ValueError(f"unsupported field dump version {version}")
    off = 8
    shape = struct.unpack_from(f"<{n}Q", data, off)
    off += 8 * n
    h = struct.unpack_from(f"<{n}d", data, off)
    off += 8 * n
    origin = struct.unpack_from(f"<{n}d", data, off)
    off += 8 * n
    values = np.frombuffer(data, dtype="<f8", offset=off).reshape(shape).astype(float)
    if grid is None:
        return tuple(shape), h, origin, values
    if tuple(shape) != grid.shape or tuple(h) != grid.h or tuple(origin) != grid.origin:
        raise ValueError("field dump geometry does not match the grid")
    return Field(grid, values)
