import json
import subprocess
import sys

import pytest

from byzgossip.cli import main
from byzgossip.config import preset_path
from byzgossip.graph import consensus_fixture_spec


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def fixture_cfg(tmp_path):
    return write(tmp_path / "fixture.json", {
        "topology": consensus_fixture_spec().to_dict(),
        "mixing": {"rule": "target_spectrum", "target_p": 0.01, "target_delta": 0.2, "fixed_edges": [[1, 2, 0.5]]},
        "aggregator": {"kind": "clipped_gossip", "params": {"tau_rule": {"kind": "oracle"}}},
        "attack": {"kind": "dissensus"},
        "init": {"values": [0, 0, 200, 200]}, "rounds": 10, "run_id": "fx"})


def test_inspect_complete_graph(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"topology": {"kind": "complete", "params": {"n": 4}}})
    assert main(["topology", "inspect", cfg]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "node_id,is_byzantine,degree,delta_i"
    assert out[1] == "0,0,3,0"
    assert out[-1].startswith("gamma=1 ") or out[-1].startswith("gamma=0.99999999999999")
    gamma = float(out[-1].split()[0].split("=")[1])
    assert gamma == pytest.approx(1.0, abs=1e-12)


def test_inspect_reports_configured_delta(fixture_cfg, capsys):
    assert main(["topology", "inspect", fixture_cfg]) == 0
    out = capsys.readouterr().out.splitlines()
    rows = {int(line.split(",")[0]): line.split(",") for line in out[1:7]}
    assert float(rows[1][3]) == pytest.approx(0.2) and float(rows[2][3]) == pytest.approx(0.2)
    assert rows[4][1] == "1" and rows[4][3] == ""
    assert out[7] == "n=6 n_regular=4 n_byzantine=2"
    assert "delta_max=0.2" in out[8]


def test_malformed_json_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["topology", "inspect", str(bad)]) == 2
    captured = capsys.readouterr()
    assert captured.out == "" and "byzgossip:" in captured.err


def test_invalid_spec_exit_2(tmp_path):
    cfg = write(tmp_path / "x.json", {"topology": {"kind": "ring", "params": {"n": 4}}, "aggregator": {"kind": "krum"}})
    assert main(["run", cfg, "--out", str(tmp_path / "o.csv")]) == 2


def test_disconnected_exit_3(tmp_path):
    cfg = write(tmp_path / "d.json", {"topology": {"kind": "custom", "params": {"n": 4, "edges": [[0, 1], [2, 3]]}}})
    assert main(["topology", "inspect", cfg]) == 3


def test_bad_arguments_exit_2(capsys):
    assert main(["run"]) == 2


def test_run_writes_csv(fixture_cfg, tmp_path):
    out = tmp_path / "run.csv"
    assert main(["run", fixture_cfg, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "run_id,round,grad_norm_sq,consensus_dist,mse_to_true_avg,suboptimality,mean_tau"
    assert lines[1].split(",")[4] == "10000"
    assert len(lines) == 12


def test_run_twice_identical(fixture_cfg, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", fixture_cfg, "--out", str(a)])
    main(["run", fixture_cfg, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_gossip_and_infinite_clip_csvs_identical(tmp_path):
    base = {"topology": {"kind": "torus", "params": {"rows": 3, "cols": 3}},
            "objective": {"kind": "quadratic", "params": {"d": 3, "center_spread": 1.0}, "noise_sigma": 0.3},
            "eta": 0.05, "alpha": 0.5, "rounds": 40, "run_id": "same"}
    g = write(tmp_path / "g.json", {**base, "aggregator": {"kind": "gossip"}})
    c = write(tmp_path / "c.json", {**base, "aggregator": {"kind": "clipped_gossip",
                                                           "params": {"tau_rule": {"kind": "fixed", "tau": "inf"}}}})
    main(["run", g, "--out", str(tmp_path / "g.csv")])
    main(["run", c, "--out", str(tmp_path / "c.csv")])
    assert (tmp_path / "g.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = write(tmp_path / "s.json", {"topology": {"kind": "ring", "params": {"n": 5}},
                                      "init": {"kind": "gaussian", "dim": 2}, "rounds": 3, "seed": 1, "run_id": "s"})

    def produce(name, *extra):
        p = tmp_path / name
        assert main(["run", cfg, "--out", str(p), *extra]) == 0
        return p.read_bytes()

    from_config = produce("c.csv")
    monkeypatch.setenv("BYZGOSSIP_SEED", "2")
    from_env = produce("e.csv")
    from_flag = produce("f.csv", "--seed", "1")
    assert from_env != from_config
    assert from_flag == from_config


def test_nonfinite_exit_4_with_partial_csv(tmp_path):
    cfg = write(tmp_path / "boom.json", {
        "topology": {"kind": "ring", "params": {"n": 4}},
        "objective": {"kind": "quadratic", "params": {"d": 2, "center_spread": 1.0}},
        "eta": 100.0, "rounds": 1000, "run_id": "boom"})
    out = tmp_path / "boom.csv"
    assert main(["run", cfg, "--out", str(out)]) == 4
    lines = out.read_text().splitlines()
    assert lines[-1].startswith("boom,") and lines[-1].endswith(",NonFiniteState,,,,")
    assert len(lines) > 3


def _small_sweep(tmp_path, repeats=1):
    return write(tmp_path / "sweep.json", {
        "base": {"topology": consensus_fixture_spec().to_dict(),
                 "mixing": {"rule": "target_spectrum", "target_p": 0.01, "target_delta": 0.1, "fixed_edges": [[1, 2, 0.5]]},
                 "aggregator": {"kind": "clipped_gossip", "params": {"tau_rule": {"kind": "oracle"}}},
                 "attack": {"kind": "dissensus"}, "init": {"values": [0, 0, 200, 200]}, "rounds": 5, "seed": 10},
        "axes": {"mixing.target_p": [0.06, 0.001], "mixing.target_delta": [0.1, 0.5]},
        "repeats": repeats})


def test_sweep_index_and_infeasible_points(tmp_path):
    spec = _small_sweep(tmp_path, repeats=3)
    out = tmp_path / "out"
    assert main(["sweep", spec, "--out-dir", str(out)]) == 0
    index = json.loads((out / "index.json").read_text())
    assert len(index) == 4 * 3
    assert {e["seed"] for e in index} == {10, 11, 12}
    skipped = [e for e in index if e["status"] == "infeasible"]
    assert skipped and all(e["file"] is None and e["reason"] for e in skipped)
    done = [e for e in index if e["status"] == "ok"]
    assert sorted(p.name for p in out.glob("*.csv")) == sorted(e["file"] for e in done)
    assert {e["params"]["mixing.target_delta"] for e in skipped} == {0.5}


def test_sweep_parallelism_invariant(tmp_path):
    spec = _small_sweep(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["sweep", spec, "--out-dir", str(a), "--parallel", "1"])
    main(["sweep", spec, "--out-dir", str(b), "--parallel", "8"])
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_sweep_spec_errors(tmp_path):
    bad = write(tmp_path / "bad.json", {"base": {"topology": {"kind": "ring", "params": {"n": 4}}}, "axes": {}})
    assert main(["sweep", bad, "--out-dir", str(tmp_path / "o")]) == 2
    bad = write(tmp_path / "bad2.json", {"base": {"topology": {"kind": "ring", "params": {"n": 4}}},
                                         "axes": {"eta": [0.1]}, "repeats": 0})
    assert main(["sweep", bad, "--out-dir", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "byzgossip", "topology", "inspect",
                           str(preset_path("ring_no_majority"))], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "n=16 n_regular=5 n_byzantine=11" in proc.stdout
    assert proc.stderr == ""
