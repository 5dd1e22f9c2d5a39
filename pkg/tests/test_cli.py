import csv
import json

import numpy as np
import pytest
import yaml

from percolab.cli import emit_plotdata, main, parse_floats, parse_graph, plotdata_rows, run_experiment
from percolab.errors import UsageError

MINIMAL = {"command": "sdp", "action": "theta", "graph": "rooted_tree:b=2,L=4",
           "p": 0.6, "delta": 0.0, "samples": 100, "seed": 1}


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


def write_config(tmp_path, cfg):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_minimal_config(tmp_path):
    cfg = dict(MINIMAL, out=str(tmp_path / "out"))
    assert main(["--config", write_config(tmp_path, cfg)]) == 0
    data = rows(tmp_path / "out" / "sdp-theta.csv")
    assert len(data) == 1 and data[0]["seed"] == "1" and data[0]["samples"] == "100"
    manifest = json.loads((tmp_path / "out" / "sdp-theta.manifest.json").read_text())
    assert manifest["config"]["p"] == 0.6 and manifest["version"]
    assert "wall_time_s" in manifest


def test_rerun_identical(tmp_path):
    for name in ("a", "b"):
        run_experiment(dict(MINIMAL, out=str(tmp_path / name), samples=2000))
    a = (tmp_path / "a" / "sdp-theta.csv").read_bytes()
    assert a == (tmp_path / "b" / "sdp-theta.csv").read_bytes()


def test_thread_count_does_not_change_output(tmp_path):
    cfg = dict(MINIMAL, command="sweep", grid="0:1:0.1", samples=50, stat="density")
    del cfg["action"], cfg["p"], cfg["delta"]
    run_experiment(dict(cfg, out=str(tmp_path / "a"), threads=1))
    run_experiment(dict(cfg, out=str(tmp_path / "b")))
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_invalid_probability_writes_nothing(tmp_path):
    out = tmp_path / "out"
    cfg = dict(MINIMAL, p=1.5, out=str(out))
    assert main(["--config", write_config(tmp_path, cfg)]) == 2
    assert not out.exists()


@pytest.mark.parametrize("bad", [{"bogus": 1}, {"samples": 0}, {"graph": "cube:n=3"},
                                 {"event": "maybe"}, {"graph": "rooted_tree:b=2"}])
def test_schema_errors(tmp_path, bad):
    cfg = dict(MINIMAL, out=str(tmp_path / "out"), **bad)
    assert main(["--config", write_config(tmp_path, cfg)]) == 2
    assert not (tmp_path / "out").exists()


def test_nested_config_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("command: sdp\nsampling:\n  n: 3\n")
    assert main(["--config", str(path)]) == 2


def test_unknown_flag():
    assert main(["sdp", "theta", "--graph", "rooted_tree:b=2,L=3", "--nope", "1"]) == 2


def test_command_line_overrides_config(tmp_path):
    cfg = dict(MINIMAL, out=str(tmp_path / "out"))
    assert main(["--config", write_config(tmp_path, cfg), "--seed", "5"]) == 0
    assert rows(tmp_path / "out" / "sdp-theta.csv")[0]["seed"] == "5"


def test_bracket_failure_exit_code(tmp_path):
    out = tmp_path / "out"
    code = main(["sdp", "removed-pc", "--graph", "rooted_tree:b=2,L=6", "--p", "1.0",
                 "--samples", "50", "--out", str(out)])
    assert code == 3 and not out.exists()


def test_regime_failure_exit_code(tmp_path):
    code = main(["mtp", "xi", "--graph", "rooted_tree:b=2,L=3", "--p", "0", "--samples", "1",
                 "--out", str(tmp_path)])
    assert code == 3


@pytest.mark.parametrize("argv,name,n_rows", [
    (["graph", "describe", "--graph", "torus:d=2,n=4"], "graph-describe", 1),
    (["graph", "iso", "--graph", "torus:d=1,n=8", "--family", "segments"], "graph-iso", 7),
    (["oracle", "theta", "--b", "2", "--p", "0.4,0.6", "--L", "5"], "oracle-theta", 2),
    (["oracle", "pc", "--b", "3"], "oracle-pc", 1),
    (["oracle", "enumerate", "--graph", "rooted_tree:b=2,L=2", "--p", "0.6", "--delta", "0.1",
      "--query", "distribution"], "oracle-enumerate", 8),
    (["sdp", "deltac", "--graph", "rooted_tree:b=2,L=6", "--p", "0.6", "--samples", "500"], "sdp-deltac", 1),
    (["sdp", "fresh-birth", "--graph", "rooted_tree:b=2,L=6", "--p", "0.52,0.55", "--delta", "0.1",
      "--samples", "500"], "sdp-fresh-birth", 2),
    (["sdp", "removed-pc", "--graph", "rooted_tree:b=2,L=6", "--p", "0.6", "--samples", "200"],
     "sdp-removed-pc", 1),
    (["mtp", "check", "--graph", "torus:d=1,n=6", "--functions", "5"], "mtp-check", 5),
    (["mtp", "encounter", "--graph", "regular_tree:d=3,L=3", "--p", "1", "--samples", "1"],
     "mtp-encounter", 10),
    (["mtp", "forest", "--graph", "regular_tree:d=3,L=3", "--p", "1", "--samples", "1"], "mtp-forest", 9),
    (["mtp", "eq2", "--graph", "regular_tree:d=3,L=5", "--p", "0.7", "--samples", "300"], "mtp-eq2", 3),
    (["mtp", "xi", "--graph", "rooted_tree:b=2,L=3", "--p", "1", "--samples", "1", "--radius", "0"],
     "mtp-xi", 15),
])
def test_subcommands(tmp_path, argv, name, n_rows):
    assert main(argv + ["--out", str(tmp_path)]) == 0
    assert len(rows(tmp_path / f"{name}.csv")) == n_rows


def test_mtp_outputs_carry_reading_flags(tmp_path):
    main(["mtp", "eq2", "--graph", "regular_tree:d=3,L=4", "--p", "0.7", "--samples", "50", "--out", str(tmp_path)])
    head = (tmp_path / "mtp-eq2.csv").read_text().splitlines()
    assert "# forest_distance=open-subgraph" in head
    assert any(ln.startswith("# boundary_of_K=") for ln in head)


def test_sweep_columns_trace_replicas(tmp_path):
    main(["sweep", "--graph", "rooted_tree:b=2,L=5", "--grid", "0,0.5,1", "--samples", "4",
          "--seed", "3", "--first-replica", "10", "--out", str(tmp_path)])
    data = rows(tmp_path / "sweep.csv")
    assert len(data) == 12
    assert sorted({int(r["replica"]) for r in data}) == [10, 11, 12, 13]
    assert {r["seed"] for r in data} == {"3"}


# plot data


def test_plotdata_empty_input(tmp_path):
    src = tmp_path / "empty.csv"
    src.write_text("p,value\n")
    out = emit_plotdata([src], "p", "value", tmp_path / "plot.csv")
    assert rows(out) == []


def test_plotdata_single_series(tmp_path):
    run_experiment({"command": "sdp", "action": "theta", "graph": "rooted_tree:b=2,L=4",
                    "p": "0.5,0.6,0.7", "delta": 0.2, "samples": 300, "out": str(tmp_path)})
    cols, out = plotdata_rows([tmp_path / "sdp-theta.csv"], "p", "value", "event")
    src = rows(tmp_path / "sdp-theta.csv")
    assert len({r[0] for r in out}) == 1 and len(out) == 3
    for o, s in zip(out, src):
        assert o[3] == float(s["ci_low"]) and o[4] == float(s["ci_high"])


def test_plotdata_mean_ci_by_hand(tmp_path):
    src = tmp_path / "reps.csv"
    src.write_text("replica,p,value\n0,0.5,1.0\n1,0.5,2.0\n2,0.5,6.0\n")
    _, out = plotdata_rows([src], "p", "value")
    name, x, y, lo, hi = out[0]
    # mean 3, sample sd sqrt(7), half width 1.96 * sqrt(7/3)
    half = 1.959963984540054 * np.sqrt(7 / 3)
    assert (name, x, y) == ("reps", 0.5, 3.0)
    assert lo == pytest.approx(3 - half) and hi == pytest.approx(3 + half)


def test_plotdata_missing_columns(tmp_path):
    src = tmp_path / "a.csv"
    src.write_text("p,value\n0.1,1\n")
    with pytest.raises(UsageError):
        plotdata_rows([src], "p", "theta")
    assert main(["report", "--input", str(src), "--x", "p", "--y", "theta", "--out", str(tmp_path)]) == 2


def test_report_command(tmp_path):
    main(["sweep", "--graph", "rooted_tree:b=2,L=5", "--grid", "0:1:0.5", "--samples", "5", "--out", str(tmp_path)])
    assert main(["report", "--input", str(tmp_path / "sweep.csv"), "--x", "p", "--y", "value",
                 "--series", "stat", "--out", str(tmp_path)]) == 0
    assert len(rows(tmp_path / "plotdata.csv")) == 3


def test_parsers():
    assert parse_floats("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_floats("0.1, 0.2") == [0.1, 0.2]
    assert parse_floats([1, 2]) == [1.0, 2.0]
    assert parse_graph("tree:b=2,L=3").vertex_count == 15
    with pytest.raises(UsageError):
        parse_floats("a:b")
    with pytest.raises(UsageError):
        parse_graph("torus:d=two,n=3")
