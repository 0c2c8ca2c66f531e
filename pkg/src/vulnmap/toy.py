"""Small self-contained dataset exercising every pipeline stage.

The layout is an 8 x 8 block of square radios over a street grid, plus one
detached radio whose only streets form an island, so its walking times are
unreachable and must be imputed from its department.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .autoencoder import OrdinalSchema
from .synthetic import one_factor_ordinal

ORIGIN = (-27.4600, -58.9900)
CELL_M = 250.0
GRID_RADIOS = 8
NODE_STEP_M = 125.0
HOUSEHOLDS_PER_RADIO = 30
ISLAND_RADIO = "R99"

SCHEMA = OrdinalSchema((("tenencia", 3), ("inmat", 4), ("servicios", 3),
                        ("hacinamiento", 4), ("educ_hogar", 5), ("condact", 3)))

MAPPING = [("hospital*", "Hospital"), ("centro de salud*", "HealthCenter"),
           ("caps*", "HealthCenter"), ("posta*", "HealthPost"),
           ("puesto sanitario*", "HealthPost"), ("geriatrico*", "Discard"),
           ("oficina*", "Discard")]


def _to_latlon(x_m: float, y_m: float) -> tuple[float, float]:
    lat0, lon0 = ORIGIN
    m_per_deg = math.pi / 180.0 * 6_371_000.0
    return lat0 + y_m / m_per_deg, lon0 + x_m / (m_per_deg * math.cos(math.radians(lat0)))


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _square(x0, y0, size):
    corners = [(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0)]
    return [[round(lon, 9), round(lat, 9)] for lat, lon in (_to_latlon(x, y) for x, y in corners)]


def write_toy_dataset(directory, seed: int = 7) -> Path:
    """Write all toy inputs and a ``vulnmap.ini`` into ``directory``; return the config path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    # street grid
    n_side = int(GRID_RADIOS * CELL_M / NODE_STEP_M) + 1
    node_ids = {}
    nodes = []
    for i in range(n_side):
        for j in range(n_side):
            nid = 1 + i * n_side + j
            node_ids[(i, j)] = nid
            lat, lon = _to_latlon(j * NODE_STEP_M, i * NODE_STEP_M)
            nodes.append((nid, round(lat, 9), round(lon, 9)))
    coords = {nid: (lat, lon) for nid, lat, lon in nodes}

    def length(a, b):
        from .geo import GeoPoint, haversine_distance
        return round(haversine_distance(GeoPoint(*coords[a]), GeoPoint(*coords[b])) * 1.15, 3)

    edges = []
    for (i, j), nid in node_ids.items():
        for di, dj in ((0, 1), (1, 0)):
            other = node_ids.get((i + di, j + dj))
            if other is not None:
                edges.append((nid, other, length(nid, other)))

    # detached island radio east of the grid with its own 4-node loop
    island_x0 = GRID_RADIOS * CELL_M + 1500.0
    island_y0 = 0.0
    base = 10_000
    for k, (dx, dy) in enumerate([(100, 100), (150, 100), (150, 150), (100, 150)]):
        lat, lon = _to_latlon(island_x0 + dx, island_y0 + dy)
        nodes.append((base + k, round(lat, 9), round(lon, 9)))
        coords[base + k] = (round(lat, 9), round(lon, 9))
    for k in range(4):
        a, b = base + k, base + (k + 1) % 4
        edges.append((a, b, length(a, b)))
    _write_csv(out / "nodes.csv", ["node_id", "lat", "lon"], nodes)
    _write_csv(out / "edges.csv", ["node_a", "node_b", "length_m"], edges)

    # radios
    features = []
    radio_xy = {}
    for r in range(GRID_RADIOS):
        for c in range(GRID_RADIOS):
            rid = f"R{r}{c}"
            dept = f"D{1 + (r >= GRID_RADIOS // 2) * 2 + (c >= GRID_RADIOS // 2)}"
            frac = f"F{r // 2}{c // 2}"
            radio_xy[rid] = (c * CELL_M + CELL_M / 2, r * CELL_M + CELL_M / 2)
            features.append({"type": "Feature",
                             "properties": {"radio_id": rid, "fraction_id": frac,
                                            "department_id": dept, "province_id": "22",
                                            "population": int(rng.integers(80, 400))},
                             "geometry": {"type": "Polygon",
                                          "coordinates": [_square(c * CELL_M, r * CELL_M, CELL_M)]}})
    radio_xy[ISLAND_RADIO] = (island_x0 + CELL_M / 2, island_y0 + CELL_M / 2)
    features.append({"type": "Feature",
                     "properties": {"radio_id": ISLAND_RADIO, "fraction_id": "F99",
                                    "department_id": "D2", "province_id": "22",
                                    "population": 40},
                     "geometry": {"type": "Polygon",
                                  "coordinates": [_square(island_x0, island_y0, CELL_M)]}})
    (out / "radios.geojson").write_text(
        json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n",
        encoding="utf-8")

    # facilities: master layer and one extra source
    span = GRID_RADIOS * CELL_M

    def spot():
        return rng.uniform(0.05 * span, 0.95 * span), rng.uniform(0.05 * span, 0.95 * span)

    master = []
    labels = (["Hospital Zonal"] * 2 + ["Centro de Salud"] * 4 + ["CAPS"] * 2
              + ["Posta Sanitaria"] * 3 + ["Puesto Sanitario"] * 2)
    for k, label in enumerate(labels, start=1):
        lat, lon = _to_latlon(*spot())
        master.append([f"S{k}", f"{label} {k}", label, f"{lat:.7f}", f"{lon:.7f}"])
    master.append(["S90", "Hogar de ancianos", "Geriátrico", *[f"{v:.7f}" for v in _to_latlon(*spot())]])
    master.append(["S91", "Sin coordenadas", "Centro de Salud", "", ""])
    _write_csv(out / "facilities_sisa.csv", ["source_row_id", "name", "raw_category", "lat", "lon"],
               master)

    mlat, mlon = float(master[0][3]), float(master[0][4])
    m_per_deg = math.pi / 180.0 * 6_371_000.0
    extra = [
        ["U1", "Hospital duplicado", "HOSPITAL zonal", f"{mlat + 50.0 / m_per_deg:.7f}", f"{mlon:.7f}", ""],
        ["U2", "Hospital vecino", "Hospital Municipal", f"{mlat - 150.0 / m_per_deg:.7f}", f"{mlon:.7f}", ""],
        ["U3", "Posta del barrio", "Posta Sanitaria", *[f"{v:.7f}" for v in _to_latlon(*spot())], ""],
        ["U4", "Centro geocodificado", "Centro de Salud", "", "", "Av. Sarmiento 1200"],
        ["U5", "Oficina central", "Oficina administrativa", *[f"{v:.7f}" for v in _to_latlon(*spot())], ""],
    ]
    _write_csv(out / "facilities_sumar.csv",
               ["source_row_id", "name", "raw_category", "lat", "lon", "address"], extra)
    glat, glon = _to_latlon(*spot())
    _write_csv(out / "geocode_cache.csv", ["address", "lat", "lon"],
               [["av. sarmiento 1200", f"{glat:.7f}", f"{glon:.7f}"]])
    _write_csv(out / "category_mapping.csv", ["pattern", "category"], MAPPING)

    # households: status falls with distance from the grid's south-west corner
    _write_csv(out / "schema.csv", ["variable", "K"], SCHEMA.variables)
    rows = []
    for rid in sorted(radio_xy):
        x, y = radio_xy[rid]
        level = 1.2 - 2.4 * min(1.0, math.hypot(x, y) / (span * math.sqrt(2)))
        latent = level + 0.6 * rng.standard_normal(HOUSEHOLDS_PER_RADIO)
        values, _ = one_factor_ordinal(len(latent), SCHEMA, seed=rng.integers(2 ** 32),
                                       latent=latent)
        for h, (v, z) in enumerate(zip(values, latent)):
            rows.append([f"{rid}-H{h:02d}", rid, *v.tolist(), f"{z:.6f}"])
    _write_csv(out / "households.csv", ["household_id", "radio_id", *SCHEMA.names, "latent"], rows)

    config = out / "vulnmap.ini"
    config.write_text(f"""\
# toy dataset generated by `vulnmap toy`
[run]
seed = {seed}
output_dir = out

[ingest]
sources = sisa=facilities_sisa.csv, sumar=facilities_sumar.csv
category_mapping = category_mapping.csv
geocode_cache = geocode_cache.csv
buffer_m = 100

[access]
radios = radios.geojson
nodes = nodes.csv
edges = edges.csv
speed_kmh = 5.0
k_points = 5
candidates = 3

[nse]
schema = schema.csv
households = households.csv
latent_column = latent

[fuse]
fraction_rollup = median
""", encoding="utf-8")
    return config
