import csv
import json

import pytest

from lada.cli import ExperimentSpec, SpecError, main, parse_int_list, parse_rule, run_experiment


def _body(path):
    return "".join(line for line in open(path) if not line.startswith("#"))


def _rows(path):
    return list(csv.DictReader(line for line in open(path) if not line.startswith("#")))


def test_grid_sweep_outputs(tmp_path):
    assert main(["--algorithm", "grid-lada", "--k", "4,8,16", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "results.csv")
    assert [r["k"] for r in rows] == ["4", "8", "16"]
    assert all(r["status"] == "ok" for r in rows)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert 0.8 <= summary["scaling_fit"]["slope"] <= 1.3


def test_rerun_is_byte_identical(tmp_path):
    args = ["--algorithm", "lada", "--n", "150,250", "--seeds", "1-2", "--metrics", "stationary"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"])
    assert _body(tmp_path / "a" / "results.csv") == _body(tmp_path / "b" / "results.csv")


def test_rows_carry_parameters(tmp_path):
    main(["--algorithm", "baseline-metropolis", "--n", "120", "--seeds", "3", "--out", str(tmp_path)])
    (row,) = _rows(tmp_path / "results.csv")
    assert row["algorithm"] == "baseline-metropolis" and row["n"] == "120" and row["seed"] == "3"
    assert row["r_rule"] == "2sqrtlogn" and float(row["r"]) > 0 and row["eps"] == "0.001"


def test_paired_lada_and_baseline(tmp_path):
    for alg in ("lada", "baseline-metropolis"):
        main(["--algorithm", alg, "--n", "300", "--seeds", "1-2", "--out", str(tmp_path / alg)])
    lada = _rows(tmp_path / "lada" / "results.csv")
    base = _rows(tmp_path / "baseline-metropolis" / "results.csv")
    assert [r["r"] for r in lada] == [r["r"] for r in base]


def test_clada_message_columns(tmp_path):
    main(["--algorithm", "clada", "--n", "500", "--seeds", "1", "--out", str(tmp_path)])
    (row,) = _rows(tmp_path / "results.csv")
    assert row["status"] == "ok" and row["message_bound_ok"] == "True"
    assert int(row["messages_per_iter"]) <= int(row["message_bound"])


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("algorithm = grid-lada\nk = 4,8\neps = 1e-2\n")
    main(["--config", str(cfg), "--eps", "1e-3", "--out", str(tmp_path)])
    rows = _rows(tmp_path / "results.csv")
    assert len(rows) == 2 and rows[0]["eps"] == "0.001"


@pytest.mark.parametrize(
    "args,field",
    [
        (["--algorithm", "grid-lada", "--n", "50"], "k"),
        (["--algorithm", "clada", "--k", "4"], "n"),
        (["--n", "50", "--eps", "3"], "eps"),
        (["--n", "50", "--r-rule", "huge"], "r_rule"),
        (["--n", "50", "--metrics", "speed"], "metrics"),
        (["--n", "50", "--seeds", "a-b"], "seeds"),
    ],
)
def test_validation_names_field(args, field, capsys):
    with pytest.raises(SystemExit) as exc:
        main(args)
    assert exc.value.code == 2
    assert f"{field}:" in capsys.readouterr().err


def test_all_failed_runs_exit_nonzero(tmp_path):
    assert main(["--algorithm", "grid-lada", "--k", "8", "--max-iter", "2", "--out", str(tmp_path)]) == 1
    (row,) = _rows(tmp_path / "results.csv")
    assert row["status"] == "not-converged" and row["t_ave"] == ""


def test_dump_network(tmp_path):
    path = tmp_path / "net.json"
    assert main(["--n", "300", "--r-rule", "sqrt2logn", "--seeds", "7", "--dump-network", str(path)]) == 0
    doc = json.loads(path.read_text())
    assert len(doc["positions"]) == 300
    assert {"heads", "gateways", "assignment"} <= set(doc["clustering"])
    grid = tmp_path / "grid.json"
    main(["--algorithm", "grid-lada", "--k", "4", "--dump-network", str(grid)])
    doc = json.loads(grid.read_text())
    assert doc["kind"] == "grid" and len(doc["positions"]) == 16
    assert main(["--k", "4", "--algorithm", "grid-lada", "--dump-network", str(tmp_path / "no" / "x.json")]) == 2


def test_parsers():
    assert parse_int_list("1-3,7", "seeds") == [1, 2, 3, 7]
    assert parse_rule("fixed(0.25)", "r_rule", ("sqrt2logn",)) == ("fixed", 0.25)
    assert parse_rule("fixed:0.1", "p_rule", ()) == ("fixed", 0.1)
    with pytest.raises(SpecError):
        parse_rule("fixed(-1)", "p_rule", ())


def test_traces_and_worst_case(tmp_path):
    spec = ExperimentSpec(algorithm="grid-lada", k=[4], x0="worst", traces=True, out=str(tmp_path)).validate()
    rows, summary = run_experiment(spec)
    assert rows[0]["t_ave"] == 43
    assert rows[0]["_trace"].splitlines()[-1].startswith("43,")
    assert summary["scaling_fit"] is None
