"""Hand-built four-radio routing fixture and an exhaustive-enumeration oracle.

The street graph has a 2 x 5 main grid and a detached two-node island. Edge
lengths are multiples of 1/8 m so every path sum is exact in floating point.
Three radios sit on the grid; the fourth sits on the island, shares a
department with two grid radios and must be imputed.
"""

import csv
import json
import math
import statistics

from vulnmap.facilities import CATEGORIES, Facility, write_facilities
from vulnmap.geo import EARTH_RADIUS_M, GeoPoint, PolygonGeom, derive_seed, haversine_distance
from vulnmap.geo import sample_points_in_polygon

ORIGIN = GeoPoint(-31.4, -64.2)
M_PER_DEG = EARTH_RADIUS_M * math.pi / 180
SPEED = 5.0 * 1000 / 3600
K_POINTS = 5
CANDIDATES = 3
SEED = 2024


def xy(x, y):
    return GeoPoint(ORIGIN.lat + y / M_PER_DEG,
                    ORIGIN.lon + x / (M_PER_DEG * math.cos(math.radians(ORIGIN.lat))))


NODE_XY = {1: (0, 0), 2: (150, 0), 3: (300, 0), 4: (450, 0), 5: (600, 0),
           6: (0, 150), 7: (150, 150), 8: (300, 150), 9: (450, 150), 10: (600, 150),
           11: (2000, 0), 12: (2150, 0)}
NODES = {n: xy(*p) for n, p in NODE_XY.items()}
EDGES = [(1, 2, 161.5), (2, 3, 158.25), (3, 4, 170.0), (4, 5, 152.125),
         (6, 7, 157.875), (7, 8, 163.5), (8, 9, 151.0), (9, 10, 166.75),
         (1, 6, 155.0), (3, 8, 171.625), (5, 10, 150.5), (2, 7, 240.0),
         (11, 12, 160.0)]

# (radio_id, department, x0, y0, size)
RADIOS = [("A1", "D1", 0, 0, 150), ("A2", "D2", 300, 0, 150), ("A3", "D2", 450, 0, 150),
          ("A4", "D2", 2000, -50, 150)]

FACILITIES = [
    Facility(1, xy(10, 20), "Hospital", "fixture"),
    Facility(2, xy(590, 140), "Hospital", "fixture"),
    Facility(3, xy(300, 160), "Hospital", "fixture"),
    Facility(4, xy(160, 10), "HealthCenter", "fixture"),
    Facility(5, xy(440, 150), "HealthCenter", "fixture"),
    Facility(6, xy(0, 140), "HealthCenter", "fixture"),
    Facility(7, xy(600, 10), "HealthPost", "fixture"),
    Facility(8, xy(290, 5), "HealthPost", "fixture"),
    Facility(9, xy(150, 150), "HealthPost", "fixture"),
]


def radio_ring(x0, y0, size):
    return [xy(x0, y0), xy(x0 + size, y0), xy(x0 + size, y0 + size), xy(x0, y0 + size)]


def write_fixture(directory):
    """Write graph, radios, merged facilities and a config; return the config path."""
    d = directory
    with open(d / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "lat", "lon"])
        for n, p in NODES.items():
            w.writerow([n, repr(p.lat), repr(p.lon)])
    with open(d / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_a", "node_b", "length_m"])
        w.writerows(EDGES)
    features = []
    for rid, dept, x0, y0, size in RADIOS:
        ring = [[p.lon, p.lat] for p in radio_ring(x0, y0, size)]
        features.append({"type": "Feature",
                         "properties": {"radio_id": rid, "fraction_id": "F1",
                                        "department_id": dept, "province_id": "14"},
                         "geometry": {"type": "Polygon", "coordinates": [ring + [ring[0]]]}})
    (d / "radios.geojson").write_text(json.dumps({"type": "FeatureCollection",
                                                  "features": features}))
    out = d / "out"
    out.mkdir(exist_ok=True)
    write_facilities(out / "facilities.csv", FACILITIES, ["fixture"])
    cfg = d / "access.ini"
    cfg.write_text(f"[run]\nseed = {SEED}\noutput_dir = out\n\n[access]\nradios = radios.geojson\n"
                   "nodes = nodes.csv\nedges = edges.csv\nspeed_kmh = 5.0\n"
                   f"k_points = {K_POINTS}\ncandidates = {CANDIDATES}\n")
    return cfg


def _adjacency():
    adj = {n: [] for n in NODES}
    for a, b, w in EDGES:
        adj[a].append((b, w))
        adj[b].append((a, w))
    return adj


def all_simple_path_lengths(source):
    """Shortest length to every reachable node by enumerating every simple path."""
    adj = _adjacency()
    best = {}

    def walk(node, length, seen):
        if length < best.get(node, math.inf):
            best[node] = length
        for nxt, w in adj[node]:
            if nxt not in seen:
                seen.add(nxt)
                walk(nxt, length + w, seen)
                seen.remove(nxt)

    walk(source, 0.0, {source})
    return best


def brute_snap(p):
    return min((haversine_distance(p, q), n) for n, q in NODES.items())[::-1]


def oracle_point_times(radio_id):
    """Per-point times (category order) for one radio, ``None`` when unreachable."""
    rid, dept, x0, y0, size = next(r for r in RADIOS if r[0] == radio_id)
    ring = radio_ring(x0, y0, size)
    poly = PolygonGeom([(p.lat, p.lon) for p in ring])
    points = sample_points_in_polygon(poly, K_POINTS, derive_seed(SEED, rid))
    times = {c: [] for c in CATEGORIES}
    for p in points:
        node, snap = brute_snap(p)
        lengths = all_simple_path_lengths(node)
        for c in CATEGORIES:
            facs = sorted((haversine_distance(p, f.location), f.facility_id, f)
                          for f in FACILITIES if f.category == c)[:CANDIDATES]
            options = []
            for _, fid, f in facs:
                fnode, fsnap = brute_snap(f.location)
                if fnode in lengths:
                    options.append(((snap + lengths[fnode] + fsnap) / SPEED, fid))
            times[c].append(min(options)[0] if options else None)
    return times


def oracle_delta():
    """``radio_id -> (delta_r, imputed)`` with department-max imputation."""
    raw = {}
    for rid, *_ in RADIOS:
        flat = [t for c in CATEGORIES for t in oracle_point_times(rid)[c]]
        raw[rid] = None if None in flat else sorted(flat)[7]
        if raw[rid] is not None:
            assert raw[rid] == statistics.median(flat)
    dept = {r[0]: r[1] for r in RADIOS}
    out = {}
    for rid, value in raw.items():
        if value is None:
            donors = [v for r, v in raw.items() if dept[r] == dept[rid] and v is not None]
            out[rid] = (max(donors), True)
        else:
            out[rid] = (value, False)
    return out
