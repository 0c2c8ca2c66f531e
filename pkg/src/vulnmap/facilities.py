"""Facility ingestion: loading, geocoding from cache, classification and dedup.

Each source is a CSV with header ``source_row_id,name,raw_category,lat,lon``
(an optional ``address`` column is used to look up missing coordinates in a
geocode cache). The first source acts as the master layer; later sources only
add facilities lying farther than the dedup buffer from everything kept so far.
"""

from __future__ import annotations

import csv
import logging
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError, MalformedRow
from .geo import EARTH_RADIUS_M, GeoPoint, haversine_distance

log = logging.getLogger(__name__)

CATEGORIES = ("Hospital", "HealthCenter", "HealthPost")
DISCARD = "Discard"
FACILITY_COLUMNS = ("source_row_id", "name", "raw_category", "lat", "lon")


@dataclass(frozen=True)
class RawFacilityRecord:
    source: str
    source_row_id: str
    name: str
    raw_category: str
    location: GeoPoint | None
    address: str = ""


@dataclass(frozen=True)
class Facility:
    facility_id: int
    location: GeoPoint
    category: str
    source: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown facility category {self.category!r}")


@dataclass
class MergeReport:
    loaded: dict[str, int] = field(default_factory=dict)
    discarded_no_coords: int = 0
    discarded_category: int = 0
    dropped_duplicates: int = 0
    retained: int = 0

    @property
    def total_loaded(self) -> int:
        return sum(self.loaded.values())

    def is_balanced(self) -> bool:
        return (self.retained + self.dropped_duplicates + self.discarded_no_coords
                + self.discarded_category) == self.total_loaded

    def to_text(self) -> str:
        lines = [f"loaded[{src}] = {n}" for src, n in self.loaded.items()]
        lines += [
            f"loaded_total = {self.total_loaded}",
            f"discarded_no_coords = {self.discarded_no_coords}",
            f"discarded_category = {self.discarded_category}",
            f"dropped_duplicates = {self.dropped_duplicates}",
            f"retained = {self.retained}",
        ]
        return "\n".join(lines) + "\n"


def normalize_text(text: str) -> str:
    """Trim, lower-case, strip accents and collapse internal whitespace."""
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return " ".join(stripped.lower().split())


def _parse_coord(value: str) -> float | None:
    value = (value or "").strip()
    if not value:
        return None
    try:
        x = float(value)
    except ValueError:
        return None
    return x if math.isfinite(x) else None


def load_geocode_cache(path) -> dict[str, GeoPoint]:
    """Read an ``address,lat,lon`` CSV into a normalized-address lookup."""
    cache: dict[str, GeoPoint] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        if reader.fieldnames is None or not {"address", "lat", "lon"} <= set(reader.fieldnames):
            raise InputError(f"{path}: geocode cache needs columns address,lat,lon")
        for lineno, row in enumerate(reader, start=2):
            lat, lon = _parse_coord(row["lat"]), _parse_coord(row["lon"])
            if lat is None or lon is None:
                continue
            try:
                cache[normalize_text(row["address"])] = GeoPoint(lat, lon)
            except ValueError as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
    return cache


def load_source(path, source: str, geocode_cache: dict[str, GeoPoint] | None = None
                ) -> list[RawFacilityRecord]:
    """Read one facility CSV.

    Empty or non-numeric coordinates give ``location=None`` (unless the
    geocode cache resolves the row's address); numeric coordinates outside the
    valid range raise :class:`MalformedRow`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    records = []
    seen_ids = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        missing = set(FACILITY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise MalformedRow(path, 1, f"missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(row[c] is None for c in FACILITY_COLUMNS):
                raise MalformedRow(path, lineno, "wrong number of fields")
            row_id = row["source_row_id"].strip()
            if row_id in seen_ids:
                raise MalformedRow(path, lineno, f"duplicate source_row_id {row_id!r}")
            seen_ids.add(row_id)
            lat, lon = _parse_coord(row["lat"]), _parse_coord(row["lon"])
            location = None
            if lat is not None and lon is not None:
                try:
                    location = GeoPoint(lat, lon)
                except ValueError as exc:
                    raise MalformedRow(path, lineno, str(exc)) from None
            address = (row.get("address") or "").strip()
            if location is None and geocode_cache and address:
                location = geocode_cache.get(normalize_text(address))
            records.append(RawFacilityRecord(source, row_id, row["name"].strip(),
                                             row["raw_category"].strip(), location, address))
    return records


def drop_ungeocoded(records: Iterable[RawFacilityRecord]) -> tuple[list[RawFacilityRecord], int]:
    kept, dropped = [], 0
    for rec in records:
        if rec.location is None:
            dropped += 1
        else:
            kept.append(rec)
    return kept, dropped


class CategoryMapping:
    """Ordered ``pattern -> category`` rules; the first matching rule wins.

    Patterns are compared on normalized text and may end in a single ``*``
    wildcard (prefix match).
    """

    def __init__(self, rules: Sequence[tuple[str, str]]):
        self.rules = []
        for pattern, category in rules:
            if category not in CATEGORIES + (DISCARD,):
                raise InputError(f"unknown category {category!r} for pattern {pattern!r}")
            pattern = normalize_text(pattern)
            if "*" in pattern[:-1]:
                raise InputError(f"wildcard only allowed at the end: {pattern!r}")
            self.rules.append((pattern, category))

    @classmethod
    def from_csv(cls, path) -> CategoryMapping:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(row for row in fh if not row.startswith("#"))
            if reader.fieldnames is None or not {"pattern", "category"} <= set(reader.fieldnames):
                raise InputError(f"{path}: category mapping needs columns pattern,category")
            return cls([(r["pattern"], r["category"].strip()) for r in reader])

    def lookup(self, raw_category: str) -> str:
        label = normalize_text(raw_category)
        for pattern, category in self.rules:
            if pattern.endswith("*"):
                if label.startswith(pattern[:-1]):
                    return category
            elif label == pattern:
                return category
        log.info("unmapped facility category %r -> Discard", raw_category)
        return DISCARD


def classify_category(raw_category: str, mapping: CategoryMapping) -> str:
    return mapping.lookup(raw_category)


class _BufferGrid:
    """Bucket grid for "is anything within ``buffer`` meters" lookups."""

    def __init__(self, buffer_m: float):
        self.buffer = buffer_m
        self.cell = math.degrees(buffer_m / EARTH_RADIUS_M)
        self.cells: dict[tuple[int, int], list[GeoPoint]] = {}

    def add(self, p: GeoPoint):
        key = (math.floor(p.lat / self.cell), math.floor(p.lon / self.cell))
        self.cells.setdefault(key, []).append(p)

    def near(self, p: GeoPoint) -> bool:
        i, j = math.floor(p.lat / self.cell), math.floor(p.lon / self.cell)
        reach = max(abs(p.lat), *(abs(p.lat + s * self.cell) for s in (-1, 1)))
        cos_lat = math.cos(math.radians(min(reach, 89.9)))
        span = int(math.ceil(1.0 / cos_lat)) + 1
        for di in (-1, 0, 1):
            for dj in range(-span, span + 1):
                for q in self.cells.get((i + di, j + dj), ()):
                    if haversine_distance(p, q) <= self.buffer:
                        return True
        return False


def dedup_merge(master: Sequence[Facility], extra: Sequence[Facility],
                buffer: float = 100.0) -> tuple[list[Facility], MergeReport]:
    """Append extras lying farther than ``buffer`` meters from every kept facility.

    Extras are handled in input order and each accepted extra joins the
    comparison set, so near-duplicates inside ``extra`` also collapse.
    """
    if buffer <= 0:
        raise ValueError("buffer must be positive")
    grid = _BufferGrid(buffer)
    for f in master:
        grid.add(f.location)
    merged = list(master)
    dropped = 0
    for f in extra:
        if grid.near(f.location):
            dropped += 1
            continue
        merged.append(f)
        grid.add(f.location)
    report = MergeReport(dropped_duplicates=dropped, retained=len(merged))
    return merged, report


def ingest_sources(sources: Sequence[tuple[str, object]], mapping: CategoryMapping,
                   buffer: float = 100.0, geocode_cache: dict[str, GeoPoint] | None = None
                   ) -> tuple[list[Facility], MergeReport]:
    """Run load, geocode filter, classification and dedup over ordered sources.

    ``sources`` is a list of ``(source_name, path)``; the first is the master.
    Facility ids are assigned 1..n in merged order.
    """
    if not sources:
        raise InputError("no sources")
    report = MergeReport()
    layers: list[list[Facility]] = []
    for name, path in sources:
        records = load_source(path, name, geocode_cache)
        report.loaded[name] = report.loaded.get(name, 0) + len(records)
        kept, n_missing = drop_ungeocoded(records)
        report.discarded_no_coords += n_missing
        layer = []
        for rec in kept:
            category = classify_category(rec.raw_category, mapping)
            if category == DISCARD:
                report.discarded_category += 1
                continue
            layer.append(Facility(0, rec.location, category, rec.source))
        layers.append(layer)
    merged = layers[0]
    for layer in layers[1:]:
        merged, step = dedup_merge(merged, layer, buffer)
        report.dropped_duplicates += step.dropped_duplicates
    merged = [Facility(i, f.location, f.category, f.source) for i, f in enumerate(merged, start=1)]
    report.retained = len(merged)
    counts = Counter(f.category for f in merged)
    log.info("ingest retained %d facilities %s", len(merged), dict(counts))
    return merged, report


def write_facilities(path, facilities: Sequence[Facility], header_lines: Sequence[str] = ()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["facility_id", "lat", "lon", "category", "source"])
        for f in facilities:
            writer.writerow([f.facility_id, repr(f.location.lat), repr(f.location.lon),
                             f.category, f.source])


def read_facilities(path) -> list[Facility]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(Facility(int(row["facility_id"]),
                                    GeoPoint(float(row["lat"]), float(row["lon"])),
                                    row["category"], row["source"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
    return out
