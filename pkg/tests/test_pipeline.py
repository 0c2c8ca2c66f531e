import csv
import json
import shutil
from pathlib import Path

import pytest

from vulnmap.autoencoder import read_scores
from vulnmap.cli import main
from vulnmap.config import ConfigError, load_config
from vulnmap.facilities import read_facilities
from vulnmap.fusion import read_indicators, trimean
from vulnmap.geo import PolygonGeom
from vulnmap.geojson import read_radios
from vulnmap.pipeline import (cmd_access, cmd_fuse, cmd_ingest, cmd_nse, cmd_run,
                              rollup_fractions)
from vulnmap.routing import CensusRadio, read_access
from vulnmap.toy import write_toy_dataset

from access_fixture import oracle_delta, write_fixture


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """One full toy run shared by the read-only tests below."""
    d = tmp_path_factory.mktemp("toyrun")
    cfg_path = write_toy_dataset(d)
    assert main(["run", "--config", str(cfg_path)]) == 0
    return d, load_config(cfg_path)


def test_ingest_report_and_row_count(toy_run):
    d, cfg = toy_run
    report = cfg.output_path("merge_report").read_text()
    assert "dropped_duplicates = 1" in report
    retained = int(next(l for l in report.splitlines() if l.startswith("retained")).split("=")[1])
    assert len(read_facilities(cfg.output_path("facilities"))) == retained


def test_ingest_without_sources(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[ingest]\nsources =\n")
    assert cmd_ingest(load_config(cfg)) == 2


def test_outputs_carry_metadata_header(toy_run):
    _, cfg = toy_run
    for key in ("facilities", "access", "scores", "indicators", "vs", "fractions"):
        head = cfg.output_path(key).read_text().splitlines()[:3]
        assert head == ["# vulnmap 0.1.0", f"# seed={cfg.seed}", f"# config_sha256={cfg.digest()}"]


def test_access_matches_exhaustive_oracle(tmp_path):
    cfg = load_config(write_fixture(tmp_path))
    assert cmd_access(cfg) == 0
    got = read_access(cfg.output_path("access"))
    assert got == oracle_delta()
    assert got["A4"][1] and got["A4"][0] == max(got["A2"][0], got["A3"][0])
    first = cfg.output_path("access").read_bytes()
    assert cmd_access(cfg) == 0
    assert cfg.output_path("access").read_bytes() == first


def test_access_without_donor_exits_3(tmp_path):
    cfg_path = write_fixture(tmp_path)
    doc = json.loads((tmp_path / "radios.geojson").read_text())
    doc["features"][-1]["properties"]["department_id"] = "D9"
    (tmp_path / "radios.geojson").write_text(json.dumps(doc))
    assert cmd_access(load_config(cfg_path)) == 3


def test_nse_load_model_reproduces_scores(toy_run, tmp_path):
    d, cfg = toy_run
    before = cfg.output_path("scores").read_bytes()
    model = tmp_path / "model.json"
    shutil.copy(cfg.output_path("model"), model)
    assert cmd_nse(cfg, load_model_path=model) == 0
    assert cfg.output_path("scores").read_bytes() == before
    report = cfg.output_path("nse_report").read_text()
    assert "trained = false" in report and "error_normalized" in report


def test_nse_report_latent_recovery(toy_run, tmp_path):
    d, cfg = toy_run
    cmd_nse(cfg)
    report = dict(l.split(" = ", 1) for l in cfg.output_path("nse_report").read_text().splitlines())
    assert abs(float(report["spearman_s_latent"])) >= 0.9
    assert 0 < float(report["error_normalized"]) <= 1


def test_nse_missing_schema(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[nse]\nschema = nope.csv\nhouseholds = nope.csv\n")
    assert cmd_nse(load_config(cfg)) == 2


def test_fuse_eta_is_trimean_of_scores(toy_run):
    _, cfg = toy_run
    by_radio = {}
    for _, rid, s in read_scores(cfg.output_path("scores")):
        by_radio.setdefault(rid, []).append(s)
    for row in read_indicators(cfg.output_path("indicators")):
        assert row.eta_r == trimean(by_radio[row.radio_id])
        assert row.n_households == len(by_radio[row.radio_id])


def test_fuse_geojson_contract(toy_run):
    d, cfg = toy_run
    radios, _ = read_radios(d / "radios.geojson")
    doc = json.loads(cfg.output_path("geojson").read_text())
    ids = [f["properties"]["radio_id"] for f in doc["features"]]
    assert sorted(ids) == sorted(r.radio_id for r in radios)
    assert all(0 <= f["properties"]["vs"] <= 1 for f in doc["features"])
    vs_rows = rows(cfg.output_path("vs"))
    assert [r["radio_id"] for r in vs_rows] == sorted(ids)


def test_fraction_median_rollup():
    sq = PolygonGeom([(0, 0), (0, 1), (1, 1), (1, 0)])
    radios = [CensusRadio(f"r{i}", "F", "D", "P", sq, {"population": p})
              for i, p in enumerate([10, 10, 80])]
    vs = {"r0": 0.2, "r1": 0.9, "r2": 0.4}
    assert rollup_fractions(radios, vs) == [("F", 0.4, 3)]
    (fid, value, n), = rollup_fractions(radios, vs, "weighted_mean")
    assert value == pytest.approx((0.2 * 10 + 0.9 * 10 + 0.4 * 80) / 100)


def test_fuse_too_few_radios(toy_run, tmp_path):
    d, cfg = toy_run
    work = tmp_path / "few"
    shutil.copytree(d, work)
    doc = json.loads((work / "radios.geojson").read_text())
    doc["features"] = doc["features"][:40]
    (work / "radios.geojson").write_text(json.dumps(doc))
    assert cmd_fuse(load_config(work / "vulnmap.ini")) == 5


def test_run_manifest(toy_run):
    d, cfg = toy_run
    manifest = json.loads(cfg.output_path("manifest").read_text())
    assert [s["stage"] for s in manifest["stages"]] == ["ingest", "access", "nse", "fuse"]
    assert all(s["status"] == "ok" for s in manifest["stages"])
    assert manifest["seed"] == cfg.seed
    assert manifest["counts"]["radios_vs"] == manifest["counts"]["radios_geojson"] == 65
    assert set(manifest["inputs"]) >= {"source:sisa", "access.edges", "nse.households"}


def test_run_aborts_on_corrupt_edges(tmp_path):
    cfg_path = write_toy_dataset(tmp_path)
    with open(tmp_path / "edges.csv", "a") as fh:
        fh.write("1,2,not-a-number\n")
    cfg = load_config(cfg_path)
    assert cmd_run(cfg) == 2
    assert cfg.output_path("facilities").exists()
    assert not cfg.output_path("access").exists()
    manifest = json.loads(cfg.output_path("manifest").read_text())
    assert [(s["stage"], s["exit_code"]) for s in manifest["stages"]] == [("ingest", 0), ("access", 2)]


def test_two_runs_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        cfg_path = write_toy_dataset(tmp_path / name)
        assert main(["run", "--config", str(cfg_path), "--seed", "99"]) == 0
        cfg = load_config(cfg_path, seed=99)
        outputs.append({k: cfg.output_path(k).read_bytes()
                        for k in ("facilities", "access", "scores", "vs", "fractions", "geojson")})
    assert outputs[0] == outputs[1]


def test_seed_changes_outputs(toy_run, tmp_path):
    d, cfg = toy_run
    cfg_path = write_toy_dataset(tmp_path)
    assert main(["access", "--config", str(cfg_path), "--seed", "1"]) == 2  # no facilities yet
    assert main(["run", "--config", str(cfg_path), "--seed", "1"]) == 0
    assert load_config(cfg_path, seed=1).output_path("access").read_bytes() != \
        cfg.output_path("access").read_bytes()


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[access]\nspeed_kmph = 4\n")
    with pytest.raises(ConfigError, match="speed_kmph"):
        load_config(cfg)
    assert main(["ingest", "--config", str(cfg)]) == 2
    cfg.write_text("[acess]\nspeed_kmh = 4\n")
    with pytest.raises(ConfigError, match="acess"):
        load_config(cfg)


def test_cli_rejects_bad_seed(capsys):
    with pytest.raises(SystemExit):
        main(["run", "--config", "x.ini", "--seed", "-1"])


def test_toy_subcommand(tmp_path, capsys):
    assert main(["toy", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "vulnmap.ini").exists()
    assert capsys.readouterr().out.strip().endswith("vulnmap.ini")


def test_bundled_toy_matches_generator(tmp_path):
    bundled = Path(__file__).resolve().parents[1] / "data" / "toy"
    write_toy_dataset(tmp_path)
    for f in sorted(p.name for p in tmp_path.iterdir()):
        assert (bundled / f).read_bytes() == (tmp_path / f).read_bytes(), f
