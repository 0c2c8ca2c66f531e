"""Walking-time accessibility from census radios to the nearest facility.

The street network is an undirected graph with edge lengths in meters.
Shortest paths come from Dijkstra; off-network legs (sampled point to its
nearest node, facility to its nearest node) are walked in a straight line.
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (DanglingEdge, DuplicateId, EmptyGraph, MalformedRow, NoDonorInDepartment,
                     NonPositiveLength, UnknownNode)
from .facilities import CATEGORIES
from .geo import (GeoPoint, PolygonGeom, SpatialIndex, derive_seed, knn_query,
                  sample_points_in_polygon)

log = logging.getLogger(__name__)

DEFAULT_SPEED_KMH = 5.0
DEFAULT_CANDIDATES = 3


def kmh_to_ms(kmh: float) -> float:
    return kmh * 1000.0 / 3600.0


class StreetGraph:
    """Undirected walking network.

    ``nodes`` maps integer node id to :class:`GeoPoint`; ``edges`` are
    ``(node_a, node_b, length_m)`` triples. Parallel edges are kept (Dijkstra
    uses the shortest).
    """

    def __init__(self, nodes: Mapping[int, GeoPoint], edges: Iterable[tuple[int, int, float]]):
        self.nodes = dict(nodes)
        self.adj: dict[int, list[tuple[int, float]]] = {n: [] for n in self.nodes}
        self.edges = []
        for a, b, length in edges:
            if a not in self.nodes or b not in self.nodes:
                raise DanglingEdge(f"edge ({a}, {b}) references a missing node")
            length = float(length)
            if not length > 0 or not math.isfinite(length):
                raise NonPositiveLength(f"edge ({a}, {b}) has length {length}")
            self.edges.append((a, b, length))
            self.adj[a].append((b, length))
            self.adj[b].append((a, length))
        self._index: SpatialIndex | None = None
        self._snap_cache: dict[GeoPoint, tuple[int, float]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def index(self) -> SpatialIndex:
        if self._index is None:
            if not self.nodes:
                raise EmptyGraph("graph has no nodes")
            self._index = SpatialIndex(sorted(self.nodes.items()))
        return self._index


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def load_graph(nodes_path, edges_path) -> StreetGraph:
    """Read ``node_id,lat,lon`` and ``node_a,node_b,length_m`` CSV files."""
    nodes: dict[int, GeoPoint] = {}
    for lineno, row in enumerate(_read_rows(nodes_path), start=2):
        try:
            nid = int(row["node_id"])
            point = GeoPoint(float(row["lat"]), float(row["lon"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRow(nodes_path, lineno, f"bad node row: {exc}") from None
        if nid in nodes:
            raise DuplicateId(f"{nodes_path}: duplicate node_id {nid}")
        nodes[nid] = point
    edges = []
    for lineno, row in enumerate(_read_rows(edges_path), start=2):
        try:
            edges.append((int(row["node_a"]), int(row["node_b"]), float(row["length_m"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRow(edges_path, lineno, f"bad edge row: {exc}") from None
    return StreetGraph(nodes, edges)


def snap_to_node(graph: StreetGraph, p: GeoPoint) -> tuple[int, float]:
    """Nearest node by haversine distance; ties go to the smaller node id."""
    cached = graph._snap_cache.get(p)
    if cached is None:
        cached = knn_query(graph.index, p, 1)[0]
        graph._snap_cache[p] = cached
    return cached


def shortest_path_lengths(graph: StreetGraph, source: int,
                          targets: Iterable[int] | None = None) -> dict[int, float]:
    """Dijkstra from ``source``. Stops once every node in ``targets`` is settled.

    Returns settled distances in meters; unreachable nodes are absent.
    """
    if source not in graph.adj:
        raise UnknownNode(source)
    remaining = None if targets is None else set(targets)
    if remaining is not None:
        for t in remaining:
            if t not in graph.adj:
                raise UnknownNode(t)
    dist = {source: 0.0}
    done: dict[int, float] = {}
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done[u] = d
        if remaining is not None:
            remaining.discard(u)
            if not remaining:
                break
        for v, w in graph.adj[u]:
            nd = d + w
            if v not in done and nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return done


def walk_time(graph: StreetGraph, origin: int, dest: int, speed: float) -> float | None:
    """Walking time in seconds along the shortest path, or ``None`` if unreachable."""
    if speed <= 0:
        raise ValueError("speed must be positive")
    lengths = shortest_path_lengths(graph, origin, [dest])
    if dest not in lengths:
        return None
    return lengths[dest] / speed


class FacilityLayer:
    """Facilities of one category with a kNN index and cached node snaps."""

    def __init__(self, graph: StreetGraph, facilities: Iterable[tuple[int, GeoPoint]]):
        self.graph = graph
        self.locations = dict(facilities)
        self.index = SpatialIndex(sorted(self.locations.items()))
        self._snaps: dict[int, tuple[int, float]] = {}

    def snap(self, facility_id: int) -> tuple[int, float]:
        if facility_id not in self._snaps:
            self._snaps[facility_id] = snap_to_node(self.graph, self.locations[facility_id])
        return self._snaps[facility_id]


def _candidates(layer: FacilityLayer, p: GeoPoint, candidates: int):
    k = min(candidates, len(layer.index))
    return [(fid, layer.snap(fid)) for fid, _ in knn_query(layer.index, p, k)]


def _best(cands, snap_dist: float, lengths: Mapping[int, float], speed: float):
    best = None
    for fid, (fnode, fsnap) in cands:
        if fnode not in lengths:
            continue
        t = (snap_dist + lengths[fnode] + fsnap) / speed
        if best is None or (t, fid) < (best[1], best[0]):
            best = (fid, t)
    return best


def nearest_facility_time(graph: StreetGraph, p: GeoPoint, facilities: FacilityLayer,
                          speed: float, candidates: int = DEFAULT_CANDIDATES
                          ) -> tuple[int, float] | None:
    """Route to the ``candidates`` haversine-nearest facilities; keep the fastest.

    Returns ``(facility_id, seconds)`` or ``None`` when no candidate is
    reachable. ``candidates=1`` routes only to the straight-line nearest one.
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    node, snap_dist = snap_to_node(graph, p)
    cands = _candidates(facilities, p, candidates)
    lengths = shortest_path_lengths(graph, node, {n for _, (n, _) in cands})
    return _best(cands, snap_dist, lengths, speed)


@dataclass(frozen=True)
class CensusRadio:
    radio_id: str
    fraction_id: str
    department_id: str
    province_id: str
    geometry: tuple[PolygonGeom, ...]
    properties: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("radio_id", "fraction_id", "department_id", "province_id"):
            if not str(getattr(self, name)).strip():
                raise ValueError(f"{name} must be nonempty")
        if isinstance(self.geometry, PolygonGeom):
            object.__setattr__(self, "geometry", (self.geometry,))

    @property
    def department_key(self) -> tuple[str, str]:
        return (self.province_id, self.department_id)


def median(values: Sequence[float]) -> float:
    """Middle order statistic, or the mean of the two central ones for even counts."""
    return statistics.median(values)


@dataclass(frozen=True)
class RadioAccess:
    """Per-radio walking times in seconds.

    ``point_times[category]`` holds one time per sampled point (``None`` when
    unreachable). ``delta_r`` is ``None`` while imputation is pending.
    """

    radio_id: str
    point_times: Mapping[str, tuple[float | None, ...]]
    delta_r: float | None
    imputed: bool = False

    @property
    def pending(self) -> bool:
        return self.delta_r is None

    def all_times(self) -> list[float | None]:
        return [t for c in CATEGORIES for t in self.point_times[c]]

    def mean_time(self, category: str) -> float | None:
        times = self.point_times[category]
        if any(t is None for t in times):
            return None
        return sum(times) / len(times)


def radio_access(graph: StreetGraph, radio: CensusRadio, layers: Mapping[str, FacilityLayer],
                 k_points: int = 5, seed: int = 0, speed: float = kmh_to_ms(DEFAULT_SPEED_KMH),
                 candidates: int = DEFAULT_CANDIDATES) -> RadioAccess:
    """Sample ``k_points`` points in the radio and time each to every category.

    Sampling is seeded from ``(seed, radio_id)``. ``delta_r`` is the median of
    all ``3 * k_points`` times; any unreachable time leaves it pending.
    """
    missing = [c for c in CATEGORIES if c not in layers]
    if missing:
        raise ValueError(f"missing facility layers: {missing}")
    points = sample_points_in_polygon(radio.geometry, k_points, derive_seed(seed, radio.radio_id))
    times: dict[str, list[float | None]] = {c: [] for c in CATEGORIES}
    for p in points:
        node, snap_dist = snap_to_node(graph, p)
        per_cat = {c: _candidates(layers[c], p, candidates) for c in CATEGORIES}
        targets = {n for cands in per_cat.values() for _, (n, _) in cands}
        lengths = shortest_path_lengths(graph, node, targets)
        for c in CATEGORIES:
            best = _best(per_cat[c], snap_dist, lengths, speed)
            times[c].append(None if best is None else best[1])
    frozen = {c: tuple(v) for c, v in times.items()}
    flat = [t for c in CATEGORIES for t in frozen[c]]
    delta = None if any(t is None for t in flat) else median(flat)
    return RadioAccess(radio.radio_id, frozen, delta)


def impute_unreachable(accesses: Sequence[RadioAccess], radios: Sequence[CensusRadio]
                       ) -> list[RadioAccess]:
    """Fill pending radios with the largest ``delta_r`` of their department.

    Departments are keyed by ``(province_id, department_id)``. Unreachable
    point times are set to the same value.
    """
    dept = {r.radio_id: r.department_key for r in radios}
    donors: dict[tuple[str, str], float] = {}
    for a in accesses:
        if not a.pending and not a.imputed:
            key = dept[a.radio_id]
            donors[key] = max(donors.get(key, -math.inf), a.delta_r)
    out = []
    for a in accesses:
        if not a.pending:
            out.append(a)
            continue
        key = dept[a.radio_id]
        if key not in donors:
            raise NoDonorInDepartment("/".join(key))
        fill = donors[key]
        filled = {c: tuple(fill if t is None else t for t in ts) for c, ts in a.point_times.items()}
        log.info("radio %s unreachable; imputed delta_r=%.1f s from department %s",
                 a.radio_id, fill, "/".join(key))
        out.append(replace(a, point_times=filled, delta_r=fill, imputed=True))
    return out


def compute_access(graph: StreetGraph, radios: Sequence[CensusRadio],
                   facilities: Iterable, k_points: int = 5, seed: int = 0,
                   speed: float = kmh_to_ms(DEFAULT_SPEED_KMH),
                   candidates: int = DEFAULT_CANDIDATES) -> list[RadioAccess]:
    """Access for every radio, imputed, ordered by radio id.

    ``facilities`` is an iterable of objects with ``facility_id``,
    ``location`` and ``category``.
    """
    by_cat: dict[str, list] = {c: [] for c in CATEGORIES}
    for f in facilities:
        by_cat[f.category].append((f.facility_id, f.location))
    empty = [c for c, fs in by_cat.items() if not fs]
    if empty:
        raise ValueError(f"no facilities for categories {empty}")
    layers = {c: FacilityLayer(graph, fs) for c, fs in by_cat.items()}
    ordered = sorted(radios, key=lambda r: r.radio_id)
    accesses = [radio_access(graph, r, layers, k_points, seed, speed, candidates) for r in ordered]
    return impute_unreachable(accesses, ordered)


ACCESS_COLUMNS = ("radio_id", "t_hospital_mean_s", "t_center_mean_s", "t_post_mean_s",
                  "delta_r_s", "imputed")


def write_access(path, accesses: Sequence[RadioAccess], header_lines: Sequence[str] = ()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ACCESS_COLUMNS)
        for a in sorted(accesses, key=lambda a: a.radio_id):
            means = [a.mean_time(c) for c in CATEGORIES]
            writer.writerow([a.radio_id, *(repr(m) if m is not None else "" for m in means),
                             repr(a.delta_r) if a.delta_r is not None else "",
                             "true" if a.imputed else "false"])


def read_access(path) -> dict[str, tuple[float, bool]]:
    """``radio_id -> (delta_r_s, imputed)`` from an access CSV."""
    out = {}
    for lineno, row in enumerate(_read_rows(path), start=2):
        try:
            out[row["radio_id"]] = (float(row["delta_r_s"]), row["imputed"] == "true")
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRow(path, lineno, str(exc)) from None
    return out
