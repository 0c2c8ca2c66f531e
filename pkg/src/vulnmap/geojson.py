"""Radio polygons in and choropleth-ready GeoJSON out."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

from .errors import InputError
from .geo import PolygonGeom
from .routing import CensusRadio

REQUIRED_PROPERTIES = ("radio_id", "fraction_id", "department_id", "province_id")


def _polygon(rings) -> PolygonGeom:
    # GeoJSON positions are [lon, lat]
    converted = [[(float(pos[1]), float(pos[0])) for pos in ring] for ring in rings]
    return PolygonGeom(tuple(converted[0]), tuple(tuple(r) for r in converted[1:]))


def read_radios(path) -> tuple[list[CensusRadio], dict]:
    """Parse a FeatureCollection of radio polygons.

    Returns the radios and the raw document (kept for writing enriched output).
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    if doc.get("type") != "FeatureCollection":
        raise InputError(f"{path}: expected a FeatureCollection")
    radios, seen = [], set()
    for n, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        missing = [k for k in REQUIRED_PROPERTIES if not str(props.get(k, "")).strip()]
        if missing:
            raise InputError(f"{path}: feature {n} lacks properties {missing}")
        geom = feat.get("geometry") or {}
        try:
            if geom.get("type") == "Polygon":
                parts = (_polygon(geom["coordinates"]),)
            elif geom.get("type") == "MultiPolygon":
                parts = tuple(_polygon(p) for p in geom["coordinates"])
            else:
                raise InputError(f"{path}: feature {n} has unsupported geometry {geom.get('type')!r}")
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: feature {n} has bad coordinates: {exc}") from None
        radio = CensusRadio(str(props["radio_id"]), str(props["fraction_id"]),
                            str(props["department_id"]), str(props["province_id"]), parts, props)
        if radio.radio_id in seen:
            raise InputError(f"{path}: duplicate radio_id {radio.radio_id!r}")
        seen.add(radio.radio_id)
        radios.append(radio)
    return radios, doc


def write_enriched(path, doc: dict, values: Mapping[str, float], key: str = "vs"):
    """Copy features whose radio has a value, adding it as a property."""
    features = []
    for feat in doc.get("features", []):
        rid = str(feat["properties"]["radio_id"])
        if rid not in values:
            continue
        props = dict(feat["properties"])
        props[key] = values[rid]
        features.append({"type": "Feature", "properties": props, "geometry": feat["geometry"]})
    features.sort(key=lambda f: str(f["properties"]["radio_id"]))
    out = {"type": "FeatureCollection", "features": features}
    Path(path).write_text(json.dumps(out, separators=(",", ":")) + "\n", encoding="utf-8")
