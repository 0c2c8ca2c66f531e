"""Pipeline configuration: an INI-style ``key = value`` file with sections.

Relative input paths resolve against the config file's directory; outputs go
under ``[run] output_dir``. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .autoencoder import TrainConfig
from .errors import InputError


class ConfigError(InputError):
    pass


DEFAULTS = {
    "run": {"seed": "0", "output_dir": "out"},
    "ingest": {"sources": "", "category_mapping": "", "geocode_cache": "", "buffer_m": "100"},
    "access": {"radios": "", "nodes": "", "edges": "", "speed_kmh": "5.0", "k_points": "5",
               "candidates": "3"},
    "nse": {"schema": "", "households": "", "learning_rate": "0.001", "batch_size": "256",
            "epochs": "50", "beta1": "0.9", "beta2": "0.999", "epsilon": "1e-8",
            "early_stop_tol": "1e-7", "early_stop_patience": "5", "hidden": "16,8,8,16",
            "dropout": "0.5", "latent_column": ""},
    "fuse": {"knots_min": "3", "knots_max": "10", "fraction_rollup": "median",
             "population_property": "population"},
    "outputs": {"facilities": "facilities.csv", "merge_report": "merge_report.txt",
                "access": "access.csv", "scores": "scores.csv", "model": "model.json",
                "nse_report": "nse_report.txt", "indicators": "indicators.csv", "vs": "vs.csv",
                "fit_report": "fit_report.txt", "fractions": "fractions.csv",
                "geojson": "radios_vs.geojson", "manifest": "manifest.json"},
}


@dataclass
class PipelineConfig:
    path: Path
    base_dir: Path
    values: dict[str, dict[str, str]]
    seed: int
    output_dir: Path
    sources: list[tuple[str, Path]] = field(default_factory=list)

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def input_path(self, section: str, key: str) -> Path | None:
        raw = self.get(section, key).strip()
        if not raw:
            return None
        return (self.base_dir / raw).resolve()

    def output_path(self, key: str) -> Path:
        return self.output_dir / self.get("outputs", key)

    def require(self, section: str, key: str) -> Path:
        path = self.input_path(section, key)
        if path is None:
            raise ConfigError(f"[{section}] {key} is required")
        if not path.exists():
            raise ConfigError(f"[{section}] {key}: file not found: {path}")
        return path

    def number(self, section: str, key: str, kind=float):
        raw = self.get(section, key)
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {raw!r}") from None

    def train_config(self) -> TrainConfig:
        try:
            hidden = tuple(int(h) for h in self.get("nse", "hidden").split(","))
            return TrainConfig(
                seed=self.seed,
                learning_rate=self.number("nse", "learning_rate"),
                batch_size=self.number("nse", "batch_size", int),
                epochs=self.number("nse", "epochs", int),
                beta1=self.number("nse", "beta1"),
                beta2=self.number("nse", "beta2"),
                epsilon=self.number("nse", "epsilon"),
                early_stop_tol=self.number("nse", "early_stop_tol"),
                early_stop_patience=self.number("nse", "early_stop_patience", int),
                hidden=hidden,
                dropout=self.number("nse", "dropout"),
            )
        except ValueError as exc:
            raise ConfigError(f"[nse] {exc}") from None

    def snapshot(self) -> dict:
        snap = {s: dict(kv) for s, kv in self.values.items()}
        snap["run"]["seed"] = str(self.seed)
        return snap

    def digest(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _parse_sources(raw: str, base: Path) -> list[tuple[str, Path]]:
    out = []
    for item in (s.strip() for s in raw.replace("\n", ",").split(",")):
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"[ingest] sources: expected name=path, got {item!r}")
        name, path = (p.strip() for p in item.split("=", 1))
        out.append((name, (base / path).resolve()))
    return out


def load_config(path, seed: int | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            values[section][key] = value.strip()
    base = path.resolve().parent
    try:
        cfg_seed = int(values["run"]["seed"]) if seed is None else int(seed)
    except ValueError:
        raise ConfigError("[run] seed must be an integer") from None
    if not 0 <= cfg_seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    out_dir = (base / values["run"]["output_dir"]).resolve()
    return PipelineConfig(path.resolve(), base, values, cfg_seed, out_dir,
                          _parse_sources(values["ingest"]["sources"], base))
