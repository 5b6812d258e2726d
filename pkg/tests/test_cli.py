import json

import pytest

from semnav.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARSE, EXIT_RUNTIME, EXIT_USAGE, main
from semnav.map_model import load_map


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({
        "schema_version": 1,
        "map": {"kind": "gap_corridor", "seed": 2, "size": 24},
        "regions": {"rows": 2, "cols": 2},
        "allocation": {"n_samples": 100, "batch_size": 128},
        "methods": ["lbc", "high"],
        "snr_db": [0.0, 6.0],
        "trials": 2,
        "seed": 1,
    }))
    return p


def test_gen_map_and_plan(tmp_path, capsys):
    out = tmp_path / "m.txt"
    assert main(["gen-map", "--seed", "3", "--width", "12", "--height", "10", "--regions", "2x2",
                 "--density", "0.0", "--out", str(out), "--mask-csv", str(tmp_path / "mask.csv")]) == EXIT_OK
    m = load_map(out)
    assert m.shape == (10, 12) and m.n_regions == 4
    assert main(["plan", "--map", str(out), "--source", "0,0", "--target", "9,11",
                 "--out", str(tmp_path / "p.csv")]) == EXIT_OK
    assert "weight" in capsys.readouterr().out
    assert (tmp_path / "p.csv").read_text().startswith("step,vertex,row,col")


def test_gen_gap_map_prints_endpoints(tmp_path, capsys):
    assert main(["gen-map", "--kind", "gap", "--out", str(tmp_path / "g.txt")]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("source ") and "target " in text


def test_transmit(tmp_path):
    src = tmp_path / "m.txt"
    main(["gen-map", "--seed", "1", "--width", "8", "--height", "8", "--out", str(src)])
    out = tmp_path / "r.txt"
    assert main(["transmit", "--map", str(src), "--snr", "0", "--delta", "0.5", "--out", str(out)]) == EXIT_OK
    assert load_map(out).shape == (8, 8)
    assert main(["transmit", "--map", str(src), "--snr", "0", "--delta", "0.5,0.5", "--out", str(out)]) == EXIT_USAGE


def test_usage_and_parse_errors(tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["plan", "--map", "x"]) == EXIT_USAGE
    assert main(["plan", "--map", str(tmp_path / "none.txt"), "--source", "0,0", "--target", "1,1"]) == EXIT_PARSE
    bad = tmp_path / "bad.txt"
    bad.write_text("garbage\n")
    assert main(["plan", "--map", str(bad), "--source", "0,0", "--target", "1,1"]) == EXIT_PARSE


def test_config_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schema_version": 7}))
    assert main(["sweep", "--config", str(p), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_unreachable_is_runtime(tmp_path):
    m = tmp_path / "m.txt"
    m.write_text("SEMNAV-GRIDMAP 1\nwidth 3\nheight 1\nrows 1\ncols 1\ntau_min 0.05\n1.0 0.0 1.0\n")
    assert main(["plan", "--map", str(m), "--source", "0,0", "--target", "0,2"]) == EXIT_RUNTIME


def test_scenario_commands(tmp_path, cfg_path, capsys):
    off = tmp_path / "off.lbc"
    assert main(["lbc-offline", "--config", str(cfg_path), "--out", str(off)]) == EXIT_OK
    assert main(["allocate", "--config", str(cfg_path), "--offline", str(off),
                 "--out", str(tmp_path / "r.csv")]) == EXIT_OK
    assert capsys.readouterr().out.count("region ") == 4
    assert main(["trial", "--config", str(cfg_path), "--method", "high", "--seed", "4"]) == EXIT_OK
    rec = json.loads(capsys.readouterr().out)
    assert rec["method"] == "high"


def test_sweep_outputs(tmp_path, cfg_path, monkeypatch):
    monkeypatch.setenv("SEMNAV_WORKERS", "1")
    out = tmp_path / "run"
    assert main(["sweep", "--config", str(cfg_path), "--out-dir", str(out)]) == EXIT_OK
    assert (out / "trials.csv").exists() and (out / "aggregate.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert {"config_sha256", "seed", "code_version"} <= set(man)


def test_verify_prop1(tmp_path, capsys):
    assert main(["verify-prop1", "--pairs", "10", "--out", str(tmp_path / "p.csv")]) == EXIT_OK
    assert "xi max analytic" in capsys.readouterr().out
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 11
