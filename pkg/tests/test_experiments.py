import json
import os

import pytest

from smaq.errors import ConfigError
from smaq.experiments import cli
from smaq.experiments.config import ScenarioConfig, load_config, parse_loss
from smaq.experiments.manifests import BUILTIN, HostFetch, PageManifest, builtin_pages, load_manifest
from smaq.experiments.metrics import MetricsRecord, crossings, relative_difference, spearman
from smaq.experiments.output import CSV_HEADER, csv_text, emit_outputs, read_csv
from smaq.experiments.runner import (
    bulk_run, campaign_configs, page_run, run_bulk, run_migration_time, run_webperf,
)
from smaq.experiments.scenario import World
from smaq.netem.scheduler import seconds
from smaq.netem.topology import DEFAULT_RATE, build_topology


# ---------------------------------------------------------------- config

def test_loss_parsing():
    assert parse_loss("0.1%") == pytest.approx(0.001)
    assert parse_loss("0.0001") == 0.0001
    for bad in ("lots", "150%", "-0.1"):
        with pytest.raises(ConfigError):
            parse_loss(bad)


@pytest.mark.parametrize("kwargs", [
    dict(repetitions=0),
    dict(mode="quic", pep_count=2),
    dict(mode="smaq-pep", pep_count=0),
    dict(experiment="migration-time", mode="quic"),
    dict(orbit="MEO"),
    dict(experiment="ping"),
    dict(checkpoints=()),
])
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kwargs)


def test_config_defaults_and_names():
    assert ScenarioConfig(mode="quic").pep_count == 0
    cfg = ScenarioConfig("bulk", "leo", "0.1%", "smaq-pep")
    assert cfg.pep_count == 2 and cfg.orbit == "LEO"
    assert cfg.name == "bulk-LEO-0.1pct-smaq-pep"
    assert cfg.with_mode("quic").name == "bulk-LEO-0.1pct-quic"
    assert ScenarioConfig(pep_count=1).name.endswith("-1pep")


def test_config_file(tmp_path):
    path = tmp_path / "s.ini"
    path.write_text("[scenario]\nexperiment = bulk ; comment\norbit = LEO\nloss = 0.01%\n"
                    "mode = quic\nrepetitions = 3\nseed = 9\ncheckpoints = 1, 2\n")
    cfg = load_config(str(path))
    assert (cfg.orbit, cfg.loss, cfg.mode, cfg.repetitions, cfg.seed, cfg.checkpoints) == \
        ("LEO", 0.0001, "quic", 3, 9, (1.0, 2.0))
    path.write_text("[scenario]\ncolour = red\n")
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text("[other]\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


# ---------------------------------------------------------------- manifests and metrics

def test_manifests():
    pages = builtin_pages()
    assert len(pages) == 10
    assert [p.bytes_per_connection for p in pages] == sorted(p.bytes_per_connection for p in pages)
    google = BUILTIN["google"]
    assert google.measured and len(google.connections) == 4 and google.bytes_per_connection == 170_000
    assert sum(p.measured for p in pages) == 1
    with pytest.raises(ConfigError):
        PageManifest("empty", ())
    with pytest.raises(ConfigError):
        PageManifest("nothing", (HostFetch("a", 1, 0),))
    with pytest.raises(ConfigError):
        PageManifest("bad", (HostFetch("a", 0, 10),))


def test_manifest_json(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"name": "p", "connections": [
        {"hostname": "a", "resources": 2, "bytes_per_resource": 1000}]}))
    page = load_manifest(str(path))
    assert page.total_bytes == 2000 and not page.measured
    assert load_manifest("google") is BUILTIN["google"]
    path.write_text("{")
    with pytest.raises(ConfigError):
        load_manifest(str(path))
    with pytest.raises(ConfigError):
        load_manifest(str(tmp_path / "missing.json"))


def test_metrics_helpers():
    rec = MetricsRecord("x")
    rec.add({"m": 1.0})
    rec.add({"m": 3.0})
    rec.fail("boom")
    assert rec.median("m") == 2.0 and rec.stdev("m") == pytest.approx(2 ** 0.5)
    assert rec.attempted == 3
    assert relative_difference(90, 100) == pytest.approx(-0.1)
    assert crossings([1, 2, 3, 4], [0, 1, 5, 6], [1, 2, 3, 4]) == [3]
    assert spearman([1, 2, 3], [2, 4, 9]) == pytest.approx(1.0)


# ---------------------------------------------------------------- runners

def test_migration_time_records_every_run():
    rec = run_migration_time(ScenarioConfig("migration-time", "LEO", 0.0001, repetitions=3))
    assert len(rec.runs) == 3 and not rec.failures
    assert 112 <= rec.median("migration_time_ms") <= 130


def test_zero_delay_topology_migrates_in_processing_time():
    topo = build_topology("GEO", 0.0, 2, client_pep_delay_ms=0, satellite_delay_ms=0, pep_server_delay_ms=0)
    world = World(topology=topo)
    session = world.connect(on_ready=lambda s: world.stop())
    world.run(seconds(5))
    assert session.handover.phase == "migrated"
    assert session.handover.migration_time < 1_000_000


def test_plain_page_load_matches_closed_form():
    size = 1000
    page = PageManifest("one", (HostFetch("a", 1, size),))
    for orbit in ("GEO", "LEO"):
        rtt_ms = build_topology(orbit).rtt() / 1e6
        aplt = page_run(ScenarioConfig("webperf", orbit, 0.0, "quic"), 0, page)
        # handshake, then request and response, plus one packet's serialization
        expected = 2 * rtt_ms + size * 8 / DEFAULT_RATE * 1e3
        assert expected <= aplt <= expected + 1.0


def test_tiny_single_host_page_costs_one_extra_rtt():
    page = PageManifest("one", (HostFetch("a", 1, 1),))
    for orbit in ("GEO", "LEO"):
        rtt_ms = build_topology(orbit).rtt() / 1e6
        quic = page_run(ScenarioConfig("webperf", orbit, 0.0, "quic"), 0, page)
        smaq = page_run(ScenarioConfig("webperf", orbit, 0.0, "smaq-pep"), 0, page)
        assert rtt_ms <= smaq - quic <= rtt_ms + 2.0


def test_webperf_one_value_per_page_and_run():
    page = PageManifest("p", (HostFetch("a", 2, 5000), HostFetch("b", 1, 3000)))
    rec = run_webperf(ScenarioConfig("webperf", "LEO", 0.0001, "smaq-pep", repetitions=2), page)
    assert len(rec.runs) == 2 and rec.metrics() == ["aplt_ms/p"]


@pytest.mark.parametrize("peps", [0, 1, 2])
def test_bulk_bytes_grow(peps):
    mode = "quic" if peps == 0 else "smaq-pep"
    out = bulk_run(ScenarioConfig("bulk", "LEO", 0.0001, mode, pep_count=peps, checkpoints=(1, 2, 3)), 0)
    assert list(out) == ["bytes_at_1s", "bytes_at_2s", "bytes_at_3s"]
    assert 0 < out["bytes_at_1s"] < out["bytes_at_2s"] < out["bytes_at_3s"]


# ---------------------------------------------------------------- outputs

def test_csv_format_and_determinism(tmp_path):
    cfg = ScenarioConfig("bulk", "LEO", 0.0001, "quic", repetitions=2, seed=5, checkpoints=(1, 2))
    a = csv_text(run_bulk(cfg))
    b = csv_text(run_bulk(cfg))
    assert a == b
    lines = a.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[-1] == "bulk-LEO-0.01pct-quic,all,failures,0"
    paths = emit_outputs([run_bulk(cfg)], str(tmp_path))
    rows = read_csv(paths[0])
    assert {r[1] for r in rows} == {"0", "1", "median", "stdev", "all"}


def test_empty_records_write_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(ValueError):
        emit_outputs([], str(out))
    assert not out.exists()


def test_unwritable_output_is_an_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rec = MetricsRecord("s", ScenarioConfig(mode="quic"))
    rec.add({"bytes_at_1s": 1})
    with pytest.raises(OSError):
        emit_outputs([rec], str(blocker / "sub"))


def test_bulk_campaign_outputs(tmp_path):
    configs = campaign_configs("bulk", checkpoints=(0.5, 1))
    assert len(configs) == 8
    records = [run_bulk(c) for c in configs]
    paths = emit_outputs(records, str(tmp_path))
    names = sorted(os.path.basename(p) for p in paths)
    assert sum(n.endswith(".csv") for n in names) == 8
    assert [n for n in names if n.endswith(".svg")] == ["bulk-GEO.svg", "bulk-LEO.svg"]
    again = emit_outputs(records, str(tmp_path / "again"))
    for p, q in zip(sorted(paths), sorted(again)):
        with open(p, "rb") as f1, open(q, "rb") as f2:
            assert f1.read() == f2.read()


def test_cli_runs_a_scenario(tmp_path, capsys):
    out = tmp_path / "res"
    rc = cli.main(["migration-time", "--orbit", "leo", "--repetitions", "2", "--output", str(out)])
    assert rc == 0
    assert (out / "migration-time-LEO-0.01pct-smaq-pep.csv").exists()
    assert "wrote" in capsys.readouterr().out


def test_cli_reports_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[scenario]\nexperiment = bulk\nmode = quic\npep_count = 2\n")
    assert cli.main(["bulk", "--config", str(path), "--output", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["bulk", "--loss", "many"])


def test_cli_webperf_campaign_with_manifest(tmp_path):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"name": "tiny", "connections": [
        {"hostname": "a", "resources": 1, "bytes_per_resource": 20000}]}))
    out = tmp_path / "res"
    rc = cli.main(["campaign", "webperf", "--orbit", "LEO", "--loss", "0.01%", "--manifest", str(manifest),
                   "--output", str(out)])
    assert rc == 0
    assert sorted(os.listdir(out)) == ["webperf-LEO-0.01pct-quic.csv", "webperf-LEO-0.01pct-smaq-pep.csv",
                                       "webperf-LEO.svg", "webperf-comparison.csv"]
