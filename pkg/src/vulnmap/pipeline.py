"""Pipeline stages wired to files: ingest, access, nse, fuse, run.

Every ``cmd_*`` function returns a process exit code:

==== ===========================================
0    success
2    malformed or missing input / configuration
3    a department has no routable donor radio
4    autoencoder loss diverged
5    fewer than 50 radios joined for fusion
==== ===========================================
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import (OrdinalSchema, config_dict, error_metric, error_metric_max, load_model,
                          read_households, read_scores, save_model, score, train, write_scores)
from .config import ConfigError, PipelineConfig
from .errors import (DivergedLoss, InputError, NoDonorInDepartment, TooFewRadios, VulnmapError)
from .facilities import (CategoryMapping, ingest_sources, load_geocode_cache, read_facilities,
                         write_facilities)
from .fusion import fit_report, fuse, radio_indicators, spearman_rho, write_indicators, write_vs
from .geojson import read_radios, write_enriched
from .routing import compute_access, kmh_to_ms, load_graph, read_access, write_access

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_DONOR = 3
EXIT_DIVERGED = 4
EXIT_TOO_FEW = 5


def _header(cfg: PipelineConfig) -> list[str]:
    return [f"vulnmap {__version__}", f"seed={cfg.seed}", f"config_sha256={cfg.digest()}"]


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, NoDonorInDepartment):
        return EXIT_NO_DONOR
    if isinstance(exc, DivergedLoss):
        return EXIT_DIVERGED
    if isinstance(exc, TooFewRadios):
        return EXIT_TOO_FEW
    return EXIT_INPUT


def _guard(stage: str, fn, cfg: PipelineConfig, **kwargs) -> int:
    try:
        fn(cfg, **kwargs)
    except (VulnmapError, FileNotFoundError, ValueError, KeyError) as exc:
        code = _exit_code(exc)
        log.error("%s failed (exit %d): %s", stage, code, exc)
        return code
    return EXIT_OK


def _prepare(cfg: PipelineConfig):
    cfg.output_dir.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def run_ingest(cfg: PipelineConfig):
    if not cfg.sources:
        raise ConfigError("no sources")
    for name, path in cfg.sources:
        if not path.exists():
            raise ConfigError(f"[ingest] source {name}: file not found: {path}")
    mapping = CategoryMapping.from_csv(cfg.require("ingest", "category_mapping"))
    cache_path = cfg.input_path("ingest", "geocode_cache")
    cache = load_geocode_cache(cache_path) if cache_path else None
    facilities, report = ingest_sources(cfg.sources, mapping,
                                        cfg.number("ingest", "buffer_m"), cache)
    _prepare(cfg)
    write_facilities(cfg.output_path("facilities"), facilities, _header(cfg))
    cfg.output_path("merge_report").write_text(report.to_text(), encoding="utf-8")
    log.info("ingest: %d facilities retained", report.retained)
    return report


def cmd_ingest(cfg: PipelineConfig) -> int:
    return _guard("ingest", run_ingest, cfg)


# ---------------------------------------------------------------------------
# access
# ---------------------------------------------------------------------------

def run_access(cfg: PipelineConfig):
    radios_path = cfg.require("access", "radios")
    nodes, edges = cfg.require("access", "nodes"), cfg.require("access", "edges")
    fac_path = cfg.output_path("facilities")
    if not fac_path.exists():
        raise ConfigError(f"merged facilities not found (run ingest first): {fac_path}")
    radios, _ = read_radios(radios_path)
    graph = load_graph(nodes, edges)
    facilities = read_facilities(fac_path)
    speed = kmh_to_ms(cfg.number("access", "speed_kmh"))
    if speed <= 0:
        raise ConfigError("[access] speed_kmh must be positive")
    accesses = compute_access(graph, radios, facilities,
                              k_points=cfg.number("access", "k_points", int), seed=cfg.seed,
                              speed=speed, candidates=cfg.number("access", "candidates", int))
    _prepare(cfg)
    write_access(cfg.output_path("access"), accesses, _header(cfg))
    log.info("access: %d radios, %d imputed", len(accesses), sum(a.imputed for a in accesses))
    return accesses


def cmd_access(cfg: PipelineConfig) -> int:
    return _guard("access", run_access, cfg)


# ---------------------------------------------------------------------------
# nse
# ---------------------------------------------------------------------------

def _read_latent(path: Path, column: str) -> np.ndarray:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    try:
        return np.array([float(r[column]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: latent column {column!r}: {exc}") from None


def run_nse(cfg: PipelineConfig, load_model_path: Path | None = None):
    schema = OrdinalSchema.from_csv(cfg.require("nse", "schema"))
    households_path = cfg.require("nse", "households")
    records = read_households(households_path, schema)
    lines = [f"n_households = {len(records)}"]
    if load_model_path is not None:
        params, model_schema = load_model(load_model_path)
        if model_schema != schema:
            raise InputError(f"{load_model_path}: model schema does not match {cfg.get('nse', 'schema')}")
        lines.append("trained = false")
    else:
        tc = cfg.train_config()
        result = train(records, schema, tc)
        params = result.params
        lines += ["trained = true", f"epochs_run = {len(result.epoch_loss)}",
                  f"loss_first_epoch = {result.epoch_loss[0]!r}",
                  f"loss_last_epoch = {result.epoch_loss[-1]!r}",
                  f"train_config = {json.dumps(config_dict(tc), sort_keys=True)}"]
    scores = score(params, records, schema)
    err = error_metric(params, records, schema)
    err_max = error_metric_max(schema)
    lines += [f"orientation = {params.orientation:+.0f}",
              f"error_raw = {err!r}",
              f"error_max = {err_max!r}",
              f"error_normalized = {err / err_max!r}"]
    latent_col = cfg.get("nse", "latent_column")
    if latent_col:
        latent = _read_latent(households_path, latent_col)
        lines.append(f"spearman_s_latent = {spearman_rho(scores, latent)!r}")
    _prepare(cfg)
    if load_model_path is None:
        save_model(cfg.output_path("model"), params, schema)
    write_scores(cfg.output_path("scores"), records, scores, _header(cfg))
    cfg.output_path("nse_report").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return scores


def cmd_nse(cfg: PipelineConfig, load_model_path=None) -> int:
    return _guard("nse", run_nse, cfg, load_model_path=load_model_path)


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------

def rollup_fractions(radios, vs: dict[str, float], method: str = "median",
                     population_property: str = "population") -> list[tuple[str, float, int]]:
    """Fraction-level index from member radios: median, or population-weighted mean."""
    groups: dict[str, list] = {}
    for r in radios:
        if r.radio_id in vs:
            groups.setdefault(r.fraction_id, []).append(r)
    out = []
    for fid in sorted(groups):
        members = groups[fid]
        values = [vs[r.radio_id] for r in members]
        if method == "median":
            value = statistics.median(values)
        elif method == "weighted_mean":
            try:
                w = np.array([float(r.properties[population_property]) for r in members])
            except (KeyError, TypeError, ValueError):
                raise InputError(f"radios need a numeric {population_property!r} property "
                                 "for weighted_mean roll-up") from None
            value = float(np.average(values, weights=w)) if w.sum() > 0 else statistics.median(values)
        else:
            raise ConfigError(f"[fuse] fraction_rollup: unknown method {method!r}")
        out.append((fid, float(value), len(members)))
    return out


def run_fuse(cfg: PipelineConfig):
    radios, doc = read_radios(cfg.require("access", "radios"))
    scores_path, access_path = cfg.output_path("scores"), cfg.output_path("access")
    for p in (scores_path, access_path):
        if not p.exists():
            raise ConfigError(f"required stage output missing: {p}")
    known = {r.radio_id for r in radios}
    scores = [(rid, s) for _, rid, s in read_scores(scores_path) if rid in known]
    delta = {rid: d for rid, (d, _) in read_access(access_path).items() if rid in known}
    indicators = radio_indicators(scores, delta)
    result = fuse(indicators, (cfg.number("fuse", "knots_min", int),
                               cfg.number("fuse", "knots_max", int)))
    rho = spearman_rho([r.eta_r for r in indicators], [r.delta_r for r in indicators])
    vs = {r.radio_id: r.vs for r in result.records}
    fractions = rollup_fractions(radios, vs, cfg.get("fuse", "fraction_rollup"),
                                 cfg.get("fuse", "population_property"))
    _prepare(cfg)
    header = _header(cfg)
    write_indicators(cfg.output_path("indicators"), indicators, header)
    write_vs(cfg.output_path("vs"), result.records, header)
    cfg.output_path("fit_report").write_text(fit_report(result, rho), encoding="utf-8")
    with cfg.output_path("fractions").open("w", newline="", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction_id", "vs_fraction", "n_radios"])
        for fid, value, n in fractions:
            w.writerow([fid, repr(value), n])
    write_enriched(cfg.output_path("geojson"), doc, vs)
    return result


def cmd_fuse(cfg: PipelineConfig) -> int:
    return _guard("fuse", run_fuse, cfg)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _count_rows(path: Path) -> int | None:
    if not path.exists():
        return None
    with path.open(encoding="utf-8") as fh:
        return max(0, sum(1 for line in fh if not line.startswith("#")) - 1)


def cmd_run(cfg: PipelineConfig, load_model_path=None) -> int:
    """Run all four stages in order and write a manifest, stopping at the first failure."""
    stages = [("ingest", cmd_ingest, {}), ("access", cmd_access, {}),
              ("nse", cmd_nse, {"load_model_path": load_model_path}), ("fuse", cmd_fuse, {})]
    status, code = [], EXIT_OK
    for name, fn, kwargs in stages:
        code = fn(cfg, **kwargs)
        status.append({"stage": name, "status": "ok" if code == EXIT_OK else "failed",
                       "exit_code": code})
        if code != EXIT_OK:
            break
    inputs = {}
    for label, path in [*((f"source:{n}", p) for n, p in cfg.sources),
                        *((f"{s}.{k}", cfg.input_path(s, k)) for s, k in [
                            ("ingest", "category_mapping"), ("ingest", "geocode_cache"),
                            ("access", "radios"), ("access", "nodes"), ("access", "edges"),
                            ("nse", "schema"), ("nse", "households")])]:
        if path is not None and path.exists():
            inputs[label] = _sha256(path)
    counts = {}
    try:
        radios_path = cfg.input_path("access", "radios")
        if radios_path is not None and radios_path.exists():
            counts["radios_geojson"] = len(read_radios(radios_path)[0])
    except InputError:
        pass
    for key, label in [("facilities", "facilities"), ("access", "radios_access"),
                       ("scores", "households_scored"), ("indicators", "radios_joined"),
                       ("vs", "radios_vs"), ("fractions", "fractions")]:
        n = _count_rows(cfg.output_path(key))
        if n is not None:
            counts[label] = n
    manifest = {"tool": f"vulnmap {__version__}", "seed": cfg.seed,
                "config_sha256": cfg.digest(), "config": cfg.snapshot(),
                "inputs": inputs, "stages": status, "counts": counts}
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    cfg.output_path("manifest").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return code
