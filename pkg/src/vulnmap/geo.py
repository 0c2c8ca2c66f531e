"""Geographic primitives: points, distances, polygon sampling and a kNN index.

Distances are on a sphere of radius :data:`EARTH_RADIUS_M`. The spatial index
searches in equirectangular-projected coordinates and re-ranks candidates by
haversine distance, so reported neighbours are exact.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegeneratePolygon, DuplicateId, EmptyInput, KTooLarge

EARTH_RADIUS_M = 6_371_000.0
MAX_CONSECUTIVE_REJECTIONS = 10_000


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, h)))


def haversine_array(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in meters (inputs in degrees, broadcastable)."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(1.0, h)))


def equirect_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Planar distance with a cos(latitude) correction taken at the midpoint.

    Within 1% of :func:`haversine_distance` for separations below 100 km away
    from the poles.
    """
    mid = math.radians((a.lat + b.lat) / 2)
    dx = math.radians(b.lon - a.lon) * math.cos(mid)
    dy = math.radians(b.lat - a.lat)
    return EARTH_RADIUS_M * math.hypot(dx, dy)


# ---------------------------------------------------------------------------
# Polygons
# ---------------------------------------------------------------------------

def _ring_array(ring) -> np.ndarray:
    pts = np.array([(p.lat, p.lon) if isinstance(p, GeoPoint) else (p[0], p[1]) for p in ring],
                   dtype=float)
    if len(pts) and not np.array_equal(pts[0], pts[-1]):
        pts = np.vstack([pts, pts[:1]])
    return pts


def _signed_area(ring: np.ndarray) -> float:
    y, x = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


@dataclass(frozen=True)
class PolygonGeom:
    """A polygon in (lat, lon) degrees with optional holes.

    Rings may be given open or closed; they are stored closed. Construction
    fails with :class:`DegeneratePolygon` when the exterior has fewer than 3
    distinct vertices or zero planar area.
    """

    exterior: tuple
    holes: tuple = ()
    _rings: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ext = _ring_array(self.exterior)
        if len({tuple(p) for p in ext}) < 3:
            raise DegeneratePolygon("exterior ring needs at least 3 distinct vertices")
        if _signed_area(ext) == 0.0:
            raise DegeneratePolygon("exterior ring has zero area")
        holes = tuple(_ring_array(h) for h in self.holes)
        object.__setattr__(self, "exterior", tuple(GeoPoint(*p) for p in ext))
        object.__setattr__(self, "holes", tuple(tuple(GeoPoint(*p) for p in h) for h in holes))
        object.__setattr__(self, "_rings", (ext,) + holes)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """(min_lat, min_lon, max_lat, max_lon) of the exterior ring."""
        ext = self._rings[0]
        return (float(ext[:, 0].min()), float(ext[:, 1].min()),
                float(ext[:, 0].max()), float(ext[:, 1].max()))

    def contains(self, lat: float, lon: float) -> bool:
        return point_in_polygon(lat, lon, self)


def _on_segment(lat, lon, a, b) -> bool:
    (y1, x1), (y2, x2) = a, b
    cross = (x2 - x1) * (lat - y1) - (y2 - y1) * (lon - x1)
    if cross != 0.0:
        return False
    return min(x1, x2) <= lon <= max(x1, x2) and min(y1, y2) <= lat <= max(y1, y2)


def point_in_polygon(lat: float, lon: float, poly: PolygonGeom) -> bool:
    """Even-odd ray casting over all rings. Boundary points count as outside."""
    inside = False
    for ring in poly._rings:
        for a, b in zip(ring[:-1], ring[1:]):
            if _on_segment(lat, lon, a, b):
                return False
            (y1, x1), (y2, x2) = a, b
            if (y1 > lat) != (y2 > lat):
                x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
                if lon < x_cross:
                    inside = not inside
    return inside


def derive_seed(master_seed: int, key: Hashable) -> int:
    """Stable 64-bit seed from a master seed and a key such as a radio id."""
    digest = hashlib.sha256(f"{int(master_seed)}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sample_points_in_polygon(poly: PolygonGeom | Sequence[PolygonGeom], k: int,
                             seed) -> list[GeoPoint]:
    """Draw ``k`` points uniformly inside ``poly`` by rejection from its bounding box.

    ``poly`` may also be a sequence of parts (a multipolygon); a point is
    accepted when it falls inside any part. ``seed`` is anything accepted by
    :func:`numpy.random.default_rng`.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    parts = [poly] if isinstance(poly, PolygonGeom) else list(poly)
    if not parts:
        raise DegeneratePolygon("empty multipolygon")
    boxes = np.array([p.bbox for p in parts])
    lat0, lon0 = boxes[:, 0].min(), boxes[:, 1].min()
    lat1, lon1 = boxes[:, 2].max(), boxes[:, 3].max()
    rng = np.random.default_rng(seed)
    out: list[GeoPoint] = []
    misses = 0
    while len(out) < k:
        lat = lat0 + (lat1 - lat0) * rng.random()
        lon = lon0 + (lon1 - lon0) * rng.random()
        if any(point_in_polygon(lat, lon, p) for p in parts):
            out.append(GeoPoint(lat, lon))
            misses = 0
        else:
            misses += 1
            if misses >= MAX_CONSECUTIVE_REJECTIONS:
                raise DegeneratePolygon(
                    f"{MAX_CONSECUTIVE_REJECTIONS} consecutive rejected draws")
    return out


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------

class SpatialIndex:
    """Immutable kNN index over (id, GeoPoint) pairs.

    Points are projected equirectangularly around the mean latitude and stored
    in a k-d tree. :meth:`query` pulls ``candidate_factor * k`` neighbours by
    projected distance and re-ranks them by haversine distance. When the
    projection distortion bound cannot certify that no better point was missed,
    the candidate set is widened until it can.
    """

    candidate_factor = 4

    def __init__(self, points: Iterable[tuple[Hashable, GeoPoint]]):
        points = list(points)
        if not points:
            raise EmptyInput("cannot index an empty point set")
        ids = [pid for pid, _ in points]
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DuplicateId(f"duplicate id {dup!r}")
        self.ids = ids
        self.lat = np.array([p.lat for _, p in points])
        self.lon = np.array([p.lon for _, p in points])
        self._cos0 = math.cos(math.radians(float(self.lat.mean())))
        self._tree = cKDTree(self._project(self.lat, self.lon))

    def __len__(self) -> int:
        return len(self.ids)

    def _project(self, lat, lon) -> np.ndarray:
        lat = np.radians(np.asarray(lat, dtype=float))
        lon = np.radians(np.asarray(lon, dtype=float))
        return np.column_stack([EARTH_RADIUS_M * lon * self._cos0,
                                EARTH_RADIUS_M * lat])

    def _distortion(self, q: GeoPoint) -> float:
        # Upper bound on projected/true distance inside the lat band spanned by
        # the data and the query, with slack for sphere curvature.
        lo = min(float(self.lat.min()), q.lat)
        hi = max(float(self.lat.max()), q.lat)
        cos_min = min(math.cos(math.radians(lo)), math.cos(math.radians(hi)))
        return max(1.0, self._cos0 / max(cos_min, 1e-6)) * 1.1

    def query(self, q: GeoPoint, k: int) -> list[tuple[Hashable, float]]:
        n = len(self.ids)
        if k < 1:
            raise ValueError("k must be >= 1")
        if k > n:
            raise KTooLarge(f"k={k} exceeds index size {n}")
        qxy = self._project([q.lat], [q.lon])[0]
        alpha = self._distortion(q)
        m = min(n, self.candidate_factor * k)
        while True:
            proj_d, idx = self._tree.query(qxy, k=m)
            idx = np.atleast_1d(idx)
            proj_d = np.atleast_1d(proj_d)
            true_d = haversine_array(q.lat, q.lon, self.lat[idx], self.lon[idx])
            ranked = sorted(zip(true_d.tolist(), idx.tolist()),
                            key=lambda t: (t[0], self.ids[t[1]]))[:k]
            if m == n or ranked[-1][0] * alpha < proj_d[-1]:
                return [(self.ids[i], d) for d, i in ranked]
            m = min(n, 2 * m)


def build_index(points: Iterable[tuple[Hashable, GeoPoint]]) -> SpatialIndex:
    return SpatialIndex(points)


def knn_query(index: SpatialIndex, q: GeoPoint, k: int) -> list[tuple[Hashable, float]]:
    """The ``k`` nearest entries to ``q`` as ``(id, meters)``, ascending."""
    return index.query(q, k)
