"""Small planar-geometry helpers shared by the street-model and cell samplers.

Everything works on plain numpy arrays in km. No geographic coordinates here;
projection lives in the territory module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle, coordinates in km."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0])

    @property
    def circumradius(self) -> float:
        return float(np.hypot(self.width, self.height)) / 2.0

    def expand(self, pad: float) -> "Box":
        return Box(self.xmin - pad, self.ymin - pad, self.xmax + pad, self.ymax + pad)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized point-in-box test, boundary inclusive."""
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] >= self.xmin)
            & (pts[:, 0] <= self.xmax)
            & (pts[:, 1] >= self.ymin)
            & (pts[:, 1] <= self.ymax)
        )

    @staticmethod
    def centered(center, width: float, height: float | None = None) -> "Box":
        cx, cy = float(center[0]), float(center[1])
        h = width if height is None else height
        return Box(cx - width / 2.0, cy - h / 2.0, cx + width / 2.0, cy + h / 2.0)


def poisson_points(box: Box, intensity: float, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson point sample in a box, intensity in points/km^2."""
    n = rng.poisson(intensity * box.area)
    pts = np.empty((n, 2))
    pts[:, 0] = rng.uniform(box.xmin, box.xmax, n)
    pts[:, 1] = rng.uniform(box.ymin, box.ymax, n)
    return pts


def clip_segments(p: np.ndarray, q: np.ndarray, box: Box):
    """Liang-Barsky clip of segments p->q against a box.

    Returns (keep, t0, t1): boolean mask of segments with a nonempty
    intersection and the parameter range [t0, t1] of the clipped part.
    """
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    d = q - p
    t0 = np.zeros(len(p))
    t1 = np.ones(len(p))
    keep = np.ones(len(p), dtype=bool)
    for axis, lo, hi in ((0, box.xmin, box.xmax), (1, box.ymin, box.ymax)):
        di = d[:, axis]
        pi = p[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            tlo = (lo - pi) / di
            thi = (hi - pi) / di
        tin = np.where(di >= 0, tlo, thi)
        tout = np.where(di >= 0, thi, tlo)
        parallel = di == 0
        inside = (pi >= lo) & (pi <= hi)
        keep &= ~(parallel & ~inside)
        tin = np.where(parallel, -np.inf, tin)
        tout = np.where(parallel, np.inf, tout)
        t0 = np.maximum(t0, tin)
        t1 = np.minimum(t1, tout)
    keep &= t0 <= t1
    return keep, t0, t1


def clip_segments_to_convex(p: np.ndarray, q: np.ndarray, polygon: np.ndarray):
    """Clip segments p->q against a convex polygon given as CCW vertices.

    Same contract as clip_segments: (keep, t0, t1).
    """
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    d = q - p
    t0 = np.zeros(len(p))
    t1 = np.ones(len(p))
    keep = np.ones(len(p), dtype=bool)
    nv = len(polygon)
    for i in range(nv):
        a = polygon[i]
        b = polygon[(i + 1) % nv]
        # inward normal of CCW edge a->b
        nx, ny = a[1] - b[1], b[0] - a[0]
        num = (p[:, 0] - a[0]) * nx + (p[:, 1] - a[1]) * ny
        den = d[:, 0] * nx + d[:, 1] * ny
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -num / den
        entering = den > 0
        exiting = den < 0
        parallel = den == 0
        t0 = np.where(entering, np.maximum(t0, t), t0)
        t1 = np.where(exiting, np.minimum(t1, t), t1)
        keep &= ~(parallel & (num < 0))
    keep &= t0 <= t1 + 1e-15
    return keep, t0, np.minimum(t1, 1.0)


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area; positive for CCW rings."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def order_ccw(vertices: np.ndarray) -> np.ndarray:
    """Order a star-shaped vertex set counter-clockwise around its centroid."""
    c = vertices.mean(axis=0)
    ang = np.arctan2(vertices[:, 1] - c[1], vertices[:, 0] - c[0])
    return vertices[np.argsort(ang)]


def rng_for(*key) -> np.random.Generator:
    """Deterministic generator derived from a tuple of non-negative ints."""
    flat = []
    for k in key:
        k = int(k)
        # SeedSequence wants non-negative entropy words
        flat.append(k & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(flat))
