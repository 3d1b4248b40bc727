"""Small 3D helpers shared by the scene and tracer modules.

All functions are pure and operate on float64 numpy arrays. Points are
row vectors; batched variants take (N, 3) arrays.
"""

from __future__ import annotations

import numpy as np

# Below this scale, segments/offsets are treated as degenerate.
HIT_TOL = 1e-6


def unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def is_unit(v: np.ndarray, tol: float = 1e-9) -> bool:
    return abs(np.linalg.norm(v) - 1.0) <= tol


def mirror_points(points: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Reflect point(s) across the plane x.n = offset (n unit)."""
    d = points @ normal - offset
    return points - 2.0 * np.multiply.outer(d, normal)


def plane_offset(normal: np.ndarray, point_on_plane: np.ndarray) -> float:
    return float(normal @ point_on_plane)


def signed_distance(points: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    return points @ normal - offset


def polygon_normal(vertices: np.ndarray) -> np.ndarray:
    """Unit normal from the first two edges of an ordered polygon."""
    e1 = vertices[1] - vertices[0]
    e2 = vertices[2] - vertices[1]
    n = np.cross(e1, e2)
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise ValueError("degenerate polygon: first two edges are parallel")
    return n / norm


def polygon_area(vertices: np.ndarray) -> float:
    n = polygon_normal(vertices)
    acc = np.zeros(3)
    for i in range(len(vertices)):
        acc += np.cross(vertices[i], vertices[(i + 1) % len(vertices)])
    return abs(float(acc @ n)) / 2.0


def coplanarity_residual(vertices: np.ndarray) -> float:
    """Max distance of the vertices from their best-fit plane."""
    centered = vertices - vertices.mean(axis=0)
    # Smallest right singular vector spans the best-fit plane normal.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return float(np.max(np.abs(centered @ vt[-1])))


def is_convex(vertices: np.ndarray, tol: float = 1e-12) -> bool:
    """True if the ordered coplanar polygon is convex and non-degenerate."""
    n = polygon_normal(vertices)
    m = len(vertices)
    signs = []
    for i in range(m):
        e1 = vertices[(i + 1) % m] - vertices[i]
        e2 = vertices[(i + 2) % m] - vertices[(i + 1) % m]
        signs.append(float(np.cross(e1, e2) @ n))
    signs = np.asarray(signs)
    return bool(np.all(signs > tol) or np.all(signs < -tol))


class ConvexPolygon:
    """Precomputed plane and edge data for fast point containment tests.

    Containment is evaluated as a conjunction of in-plane half-space
    tests against unit inward edge normals, so the margin argument is a
    distance in meters.
    """

    __slots__ = ("vertices", "normal", "offset", "edge_points", "edge_inward")

    def __init__(self, vertices: np.ndarray):
        self.vertices = np.asarray(vertices, dtype=float)
        self.normal = polygon_normal(self.vertices)
        self.offset = plane_offset(self.normal, self.vertices[0])
        m = len(self.vertices)
        edges = self.vertices[(np.arange(m) + 1) % m] - self.vertices
        inward = np.cross(self.normal, edges)
        inward /= np.linalg.norm(inward, axis=1, keepdims=True)
        centroid = self.vertices.mean(axis=0)
        # Flip so "inward" points at the centroid regardless of winding.
        side = np.einsum("ij,ij->i", centroid - self.vertices, inward)
        if np.all(side < 0):
            inward = -inward
        self.edge_points = self.vertices
        self.edge_inward = inward

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Vectorized in-polygon test for points assumed near the plane.

        margin > 0 requires points at least that far inside every edge;
        margin < 0 accepts points slightly outside.
        """
        points = np.atleast_2d(points)
        diff = points[:, None, :] - self.edge_points[None, :, :]
        d = np.einsum("nij,ij->ni", diff, self.edge_inward)
        return np.all(d >= margin, axis=1)

    def distance_to_plane(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.normal - self.offset

    def touches(self, point: np.ndarray, tol: float = HIT_TOL) -> bool:
        """True if the point lies on the polygon region within tol."""
        p = np.asarray(point, dtype=float)[None, :]
        on_plane = np.abs(self.distance_to_plane(p))[0] <= tol
        return bool(on_plane and self.contains(p, margin=-tol)[0])


def segment_hits_polygon(
    a: np.ndarray,
    b: np.ndarray,
    poly: ConvexPolygon,
    end_clearance: float = HIT_TOL,
    inside_margin: float = HIT_TOL,
) -> np.ndarray:
    """Vectorized occlusion test of segments a[i] -> b[i] against one polygon.

    A hit requires the crossing point to be farther than end_clearance
    from both endpoints and strictly inside the polygon by inside_margin,
    so segments that merely start or end on the polygon do not count.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    ab = b - a
    denom = ab @ poly.normal
    da = a @ poly.normal - poly.offset
    hits = np.zeros(len(a), dtype=bool)
    cross = np.abs(denom) > 1e-15
    if not np.any(cross):
        return hits
    t = np.empty(len(a))
    t[cross] = -da[cross] / denom[cross]
    seg_len = np.linalg.norm(ab, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = end_clearance / seg_len
    ok = cross & (t > lo) & (t < 1.0 - lo)
    if not np.any(ok):
        return hits
    pts = a[ok] + t[ok, None] * ab[ok]
    hits[ok] = poly.contains(pts, margin=inside_margin)
    return hits
