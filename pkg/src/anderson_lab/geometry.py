"""Planar domains for Dirichlet problems: rectangles, disks, polygons.

Sign convention: signed_distance is positive inside the open domain,
negative outside, zero on the boundary.  Containment is strict, so
boundary points are counted as outside.  All domains expose vectorized
point queries; survival tests and tube-volume sampling run through the
batch methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# Above this edge count, polygon distance queries go through a midpoint
# kd-tree with a certified candidate radius, and containment through a
# row-bucketed winding test, instead of the dense point-by-edge sweeps.
# The dense sweeps are pure numpy and win on small polygons; measured
# crossover sits near a few hundred edges.
BRUTE_EDGE_LIMIT = 256

# Point chunking keeps the (points x edges) work arrays near 64 MB.
_PAIR_BUDGET = 4_000_000

_REJECTION_CAP = 10_000


class PlanarDomain:
    """Base interface shared by all domains."""

    def area(self) -> float:
        raise NotImplementedError

    def perimeter(self) -> float:
        raise NotImplementedError

    def bounding_box(self):
        """(xmin, xmax, ymin, ymax)."""
        raise NotImplementedError

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def signed_distance_many(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_distance_many(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance to the boundary; cheaper than the signed
        query for domains where the inside test is the expensive part."""
        return np.abs(self.signed_distance_many(points))

    def contains(self, p) -> bool:
        pts = np.asarray(p, dtype=float).reshape(1, 2)
        return bool(self.contains_many(pts)[0])

    def signed_distance(self, p) -> float:
        pts = np.asarray(p, dtype=float).reshape(1, 2)
        return float(self.signed_distance_many(pts)[0])


@dataclass(frozen=True)
class Rectangle(PlanarDomain):
    """Axis-aligned open rectangle (0, a) x (0, b)."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("rectangle sides must be positive and finite")

    def area(self) -> float:
        return self.a * self.b

    def perimeter(self) -> float:
        return 2.0 * (self.a + self.b)

    def bounding_box(self):
        return (0.0, self.a, 0.0, self.b)

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        x = points[:, 0]
        y = points[:, 1]
        return (x > 0.0) & (x < self.a) & (y > 0.0) & (y < self.b)

    def signed_distance_many(self, points: np.ndarray) -> np.ndarray:
        x = points[:, 0]
        y = points[:, 1]
        # Distance to the boundary of the rectangle, exact on both sides.
        inside = np.minimum(np.minimum(x, self.a - x), np.minimum(y, self.b - y))
        dx = np.maximum(np.maximum(-x, x - self.a), 0.0)
        dy = np.maximum(np.maximum(-y, y - self.b), 0.0)
        outside = -np.hypot(dx, dy)
        return np.where(inside > 0.0, inside, outside)


@dataclass(frozen=True)
class Disk(PlanarDomain):
    """Open disk of given radius centered at the origin."""

    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError("disk radius must be positive and finite")

    def area(self) -> float:
        return math.pi * self.radius ** 2

    def perimeter(self) -> float:
        return 2.0 * math.pi * self.radius

    def bounding_box(self):
        r = self.radius
        return (-r, r, -r, r)

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        return points[:, 0] ** 2 + points[:, 1] ** 2 < self.radius ** 2

    def signed_distance_many(self, points: np.ndarray) -> np.ndarray:
        return self.radius - np.hypot(points[:, 0], points[:, 1])


class SimplePolygon(PlanarDomain):
    """Simple polygon with counterclockwise vertex order.

    Containment uses the winding number, distance uses exact
    point-to-segment minimization.  Vertices are stored as an (m, 2)
    float array; the polygon is closed implicitly (last vertex connects
    back to the first).
    """

    def __init__(self, vertices, check_simple: bool | None = None):
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise ValueError("polygon needs an (m, 2) array with m >= 3")
        if not np.all(np.isfinite(verts)):
            raise ValueError("polygon vertices must be finite")
        signed = _shoelace(verts)
        if signed <= 0.0:
            raise ValueError("polygon vertices must be in counterclockwise order")
        self.vertices = verts
        self._signed_area = signed
        # Edge geometry precomputed once for the query kernels.
        self._edge_a = verts
        self._edge_d = np.roll(verts, -1, axis=0) - verts
        self._edge_len2 = np.einsum("ij,ij->i", self._edge_d, self._edge_d)
        if np.any(self._edge_len2 == 0.0):
            raise ValueError("polygon has a zero-length edge")
        if check_simple is None:
            check_simple = verts.shape[0] <= 600
        if check_simple and _has_self_intersection(verts):
            raise ValueError("polygon edges self-intersect")
        self._midtree = None
        self._row_index = None
        self._half_len_max = 0.5 * float(np.sqrt(self._edge_len2.max()))

    def area(self) -> float:
        return self._signed_area

    def perimeter(self) -> float:
        return float(np.sum(np.sqrt(self._edge_len2)))

    def bounding_box(self):
        v = self.vertices
        return (float(v[:, 0].min()), float(v[:, 0].max()),
                float(v[:, 1].min()), float(v[:, 1].max()))

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self._edge_a.shape[0] > BRUTE_EDGE_LIMIT:
            return self._winding_rows(points)
        n_edges = self._edge_a.shape[0]
        chunk = max(1, _PAIR_BUDGET // n_edges)
        out = np.empty(points.shape[0], dtype=bool)
        for lo in range(0, points.shape[0], chunk):
            out[lo:lo + chunk] = self._winding_chunk(points[lo:lo + chunk])
        return out

    def _winding_chunk(self, pts: np.ndarray) -> np.ndarray:
        return self._crossing_kernel(pts, np.arange(self._edge_a.shape[0]))

    def _crossing_kernel(self, pts: np.ndarray, edge_idx: np.ndarray) -> np.ndarray:
        a = self._edge_a[edge_idx]
        d = self._edge_d[edge_idx]
        ax = a[:, 0][None, :]
        ay = a[:, 1][None, :]
        bx = (a[:, 0] + d[:, 0])[None, :]
        by = (a[:, 1] + d[:, 1])[None, :]
        px = pts[:, 0][:, None]
        py = pts[:, 1][:, None]
        # Signed crossing count of a horizontal ray through each point.
        cross = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
        up = (ay <= py) & (by > py) & (cross > 0.0)
        down = (by <= py) & (ay > py) & (cross < 0.0)
        wn = up.sum(axis=1).astype(np.int64) - down.sum(axis=1).astype(np.int64)
        return wn != 0

    def _build_row_index(self):
        # Only edges whose y span straddles the query's y contribute to
        # the crossing count, so bucketing edges into horizontal rows
        # and testing each point against its row's bucket reproduces the
        # full winding number exactly while touching a small edge subset.
        n_edges = self._edge_a.shape[0]
        ymin = float(self.vertices[:, 1].min())
        ymax = float(self.vertices[:, 1].max())
        n_rows = int(np.clip(n_edges // 4, 64, 4096))
        inv_h = n_rows / (ymax - ymin)
        ay = self._edge_a[:, 1]
        by = ay + self._edge_d[:, 1]
        lo = np.clip(((np.minimum(ay, by) - ymin) * inv_h).astype(np.int64),
                     0, n_rows - 1)
        hi = np.clip(((np.maximum(ay, by) - ymin) * inv_h).astype(np.int64),
                     0, n_rows - 1)
        spans = hi - lo + 1
        total = int(spans.sum())
        offsets = np.arange(total) - np.repeat(np.cumsum(spans) - spans, spans)
        rows = np.repeat(lo, spans) + offsets
        edge_ids = np.repeat(np.arange(n_edges), spans)
        order = np.argsort(rows, kind="stable")
        counts = np.bincount(rows, minlength=n_rows)
        self._row_index = (
            ymin, inv_h, n_rows,
            np.concatenate([[0], np.cumsum(counts)]),
            edge_ids[order],
        )

    def _winding_rows(self, points: np.ndarray) -> np.ndarray:
        if self._row_index is None:
            self._build_row_index()
        ymin, inv_h, n_rows, row_ptr, row_edges = self._row_index
        rows = np.clip(((points[:, 1] - ymin) * inv_h).astype(np.int64),
                       0, n_rows - 1)
        out = np.empty(points.shape[0], dtype=bool)
        order = np.argsort(rows, kind="stable")
        cuts = np.flatnonzero(np.diff(rows[order])) + 1
        for group in np.split(order, cuts):
            row = rows[group[0]]
            edges = row_edges[row_ptr[row]:row_ptr[row + 1]]
            if edges.size == 0:
                out[group] = False
                continue
            chunk = max(1, _PAIR_BUDGET // edges.size)
            for lo_i in range(0, group.size, chunk):
                part = group[lo_i:lo_i + chunk]
                out[part] = self._crossing_kernel(points[part], edges)
        return out

    def signed_distance_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        dist = self.boundary_distance_many(points)
        sign = np.where(self.contains_many(points), 1.0, -1.0)
        return sign * dist

    def boundary_distance_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self._edge_a.shape[0] <= BRUTE_EDGE_LIMIT:
            return self._distance_dense(points)
        return self._distance_tree(points)

    def _distance_dense(self, points: np.ndarray) -> np.ndarray:
        n_edges = self._edge_a.shape[0]
        chunk = max(1, _PAIR_BUDGET // n_edges)
        out = np.empty(points.shape[0])
        for lo in range(0, points.shape[0], chunk):
            pts = points[lo:lo + chunk]
            diff = pts[:, None, :] - self._edge_a[None, :, :]
            t = np.einsum("pej,ej->pe", diff, self._edge_d) / self._edge_len2
            np.clip(t, 0.0, 1.0, out=t)
            gap = diff - t[:, :, None] * self._edge_d[None, :, :]
            d2 = np.einsum("pej,pej->pe", gap, gap)
            out[lo:lo + chunk] = np.sqrt(d2.min(axis=1))
        return out

    def _distance_tree(self, points: np.ndarray) -> np.ndarray:
        # Candidate edges are found through their midpoints.  A segment
        # of length l with midpoint m satisfies
        #   |p - m| - l/2 <= dist(p, segment) <= |p - m|,
        # so every edge that could beat the nearest-midpoint edge lies
        # within that edge's exact distance plus half the longest edge.
        if self._midtree is None:
            mids = self._edge_a + 0.5 * self._edge_d
            self._midtree = cKDTree(mids)
        _, near = self._midtree.query(points)
        upper = self._segment_distance_pairs(points, near)
        radii = upper + self._half_len_max * (1.0 + 1e-12)
        cands = self._midtree.query_ball_point(points, r=radii)
        counts = np.fromiter((len(c) for c in cands), dtype=np.int64, count=len(cands))
        pt_idx = np.repeat(np.arange(points.shape[0]), counts)
        edge_idx = np.concatenate([np.asarray(c, dtype=np.int64) for c in cands])
        dists = self._segment_distance_pairs(points[pt_idx], edge_idx)
        out = upper.copy()
        np.minimum.at(out, pt_idx, dists)
        return out

    def _segment_distance_pairs(self, pts: np.ndarray, edge_idx: np.ndarray) -> np.ndarray:
        a = self._edge_a[edge_idx]
        d = self._edge_d[edge_idx]
        diff = pts - a
        t = np.einsum("ij,ij->i", diff, d) / self._edge_len2[edge_idx]
        np.clip(t, 0.0, 1.0, out=t)
        gap = diff - t[:, None] * d
        return np.sqrt(np.einsum("ij,ij->i", gap, gap))


class KochPrefractal(SimplePolygon):
    """Outward Koch snowflake prefractal at a finite subdivision level.

    Level 0 is the equilateral triangle with the given side length.
    Each level replaces every edge by four edges of one third the
    length, so level L has 3 * 4**L edges.  Area and perimeter use the
    closed forms of the construction rather than the generic polygon
    sums.
    """

    MAX_LEVEL = 8

    def __init__(self, level: int, side: float = 1.0):
        if not (0 <= level <= self.MAX_LEVEL):
            raise ValueError(f"level must lie in [0, {self.MAX_LEVEL}]")
        if not (side > 0 and math.isfinite(side)):
            raise ValueError("side must be positive and finite")
        self.level = int(level)
        self.side = float(side)
        verts = koch_vertices(self.level, self.side)
        super().__init__(verts, check_simple=False)

    def area(self) -> float:
        base = math.sqrt(3.0) / 4.0 * self.side ** 2
        return base * (1.0 + 0.6 * (1.0 - (4.0 / 9.0) ** self.level))

    def perimeter(self) -> float:
        return 3.0 * self.side * (4.0 / 3.0) ** self.level

    def feature_length(self) -> float:
        """Edge length at this level; below it the boundary is straight."""
        return self.side / 3.0 ** self.level


def koch_vertices(level: int, side: float) -> np.ndarray:
    """Vertices of the Koch prefractal, counterclockwise."""
    z = np.array([0.0, side, side * (0.5 + 0.5j * math.sqrt(3.0))], dtype=complex)
    rot = complex(math.cos(math.pi / 3.0), -math.sin(math.pi / 3.0))
    for _ in range(level):
        a = z
        b = np.roll(z, -1)
        p1 = a + (b - a) / 3.0
        p2 = a + 2.0 * (b - a) / 3.0
        # Interior sits left of each directed edge, so the bump rotates
        # the middle third clockwise by sixty degrees (outward).
        apex = p1 + rot * (p2 - p1)
        z = np.column_stack([a, p1, apex, p2]).ravel()
    return np.column_stack([z.real, z.imag])


def _shoelace(verts: np.ndarray) -> float:
    x = verts[:, 0]
    y = verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _has_self_intersection(verts: np.ndarray) -> bool:
    """Quadratic check that non-adjacent edges do not cross."""
    m = verts.shape[0]
    b = np.roll(verts, -1, axis=0)
    for i in range(m):
        for j in range(i + 1, m):
            if j == i + 1 or (i == 0 and j == m - 1):
                continue
            if _segments_cross(verts[i], b[i], verts[j], b[j]):
                return True
    return False


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return int(v > 0) - int(v < 0)

    o1 = orient(p1, p2, q1)
    o2 = orient(p1, p2, q2)
    o3 = orient(q1, q2, p1)
    o4 = orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return False


def area(domain: PlanarDomain) -> float:
    return domain.area()


def perimeter(domain: PlanarDomain) -> float:
    return domain.perimeter()


def contains(domain: PlanarDomain, p) -> bool:
    return domain.contains(p)


def signed_distance(domain: PlanarDomain, p) -> float:
    return domain.signed_distance(p)


def sample_uniform(domain: PlanarDomain, rng: np.random.Generator):
    """One uniform point from the domain by bounding-box rejection."""
    xmin, xmax, ymin, ymax = domain.bounding_box()
    for _ in range(_REJECTION_CAP):
        p = rng.uniform((xmin, ymin), (xmax, ymax))
        if domain.contains(p):
            return (float(p[0]), float(p[1]))
    raise RuntimeError(
        f"rejection sampling failed after {_REJECTION_CAP} attempts; "
        "domain area is negligible inside its bounding box"
    )


def sample_uniform_many(domain: PlanarDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    """n uniform points, drawn by vectorized rejection in a fixed order."""
    if n <= 0:
        raise ValueError("n must be positive")
    xmin, xmax, ymin, ymax = domain.bounding_box()
    lo = np.array([xmin, ymin])
    hi = np.array([xmax, ymax])
    out = np.empty((n, 2))
    filled = 0
    for _ in range(_REJECTION_CAP):
        need = n - filled
        draw = rng.uniform(lo, hi, size=(need, 2))
        keep = draw[domain.contains_many(draw)]
        take = min(keep.shape[0], need)
        out[filled:filled + take] = keep[:take]
        filled += take
        if filled == n:
            return out
    raise RuntimeError(
        f"rejection sampling failed after {_REJECTION_CAP} rounds; "
        "domain area is negligible inside its bounding box"
    )


@dataclass(frozen=True)
class BoundaryNeighborhood:
    """Monte Carlo estimate of the area of {p : dist(p, boundary) < r}."""

    r: float
    area: float
    std_error: float
    n_samples: int


def boundary_neighborhood_area(
    domain: PlanarDomain,
    r: float,
    n_samples: int,
    rng: np.random.Generator,
) -> BoundaryNeighborhood:
    """Estimate the two-sided tube area around the boundary at radius r.

    Sampling happens on the bounding box inflated by r, which contains
    the whole tube, so box_area * hit_fraction is unbiased.
    """
    if r <= 0:
        raise ValueError("tube radius must be positive")
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    xmin, xmax, ymin, ymax = domain.bounding_box()
    lo = np.array([xmin - r, ymin - r])
    hi = np.array([xmax + r, ymax + r])
    box_area = (hi[0] - lo[0]) * (hi[1] - lo[1])
    hits = 0
    chunk = 65536
    remaining = n_samples
    while remaining > 0:
        take = min(chunk, remaining)
        pts = rng.uniform(lo, hi, size=(take, 2))
        d = domain.boundary_distance_many(pts)
        hits += int(np.count_nonzero(d < r))
        remaining -= take
    frac = hits / n_samples
    est = box_area * frac
    se = box_area * math.sqrt(max(frac * (1.0 - frac), 0.0) / n_samples)
    return BoundaryNeighborhood(r=float(r), area=est, std_error=se, n_samples=int(n_samples))


def minkowski_fit(neighborhoods) -> float:
    """Box-dimension estimate from tube areas: d = 2 - slope of
    log area against log r.  Requires at least three distinct radii and
    positive area estimates."""
    nbhds = list(neighborhoods)
    radii = np.array([nb.r for nb in nbhds])
    areas = np.array([nb.area for nb in nbhds])
    if np.unique(radii).size < 3:
        raise ValueError("need at least three distinct radii")
    if np.any(areas <= 0.0):
        raise ValueError("tube area estimates must be positive for the log fit")
    slope, _ = np.polyfit(np.log(radii), np.log(areas), 1)
    return float(2.0 - slope)
