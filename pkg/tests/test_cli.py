import json

import pytest

from sliceprobe.cli import ConfigError, main, parse_config
from sliceprobe.lattice import parse, render
from sliceprobe.schema import infer_schema, load_dataset
from sliceprobe.synthetic import make_dataset, make_null, write_csv


@pytest.fixture
def files(tmp_path):
    raw, pred = make_dataset(2000, 4, 3, planted=[{"f0": "v2", "f3": "v1"}], drop=0.5, seed=3)
    data, preds = tmp_path / "data.csv", tmp_path / "model.csv"
    write_csv(raw, pred, data, preds)
    return tmp_path, data, preds


def test_defaults():
    cfg = parse_config(["--data", "d.csv", "--predictions", "p.csv"])
    assert (cfg.max_cross_size, cfg.min_slice_size, cfg.alpha, cfg.replicates, cfg.top_j,
            cfg.num_bins) == (3, 1, 0.01, 20, 100, 10)
    assert cfg.strategy == "iterative" and cfg.mode.value == "vs_overall"


def test_priority_without_k_uses_default_rule():
    cfg = parse_config(["--data", "d", "--predictions", "p", "--strategy", "priority"])
    assert cfg.k_per_iter is None and cfg.search_config().k_per_iter is None


@pytest.mark.parametrize("flag,value", [("--alpha", "1.5"), ("--alpha", "0.0"), ("--replicates", "1"),
                                        ("--max-cross-size", "0"), ("--threshold", "1")])
def test_range_errors_name_the_field(flag, value):
    with pytest.raises(ConfigError) as err:
        parse_config(["--data", "d", "--predictions", "p", flag, value])
    assert err.value.field == flag[2:].replace("-", "_")


def test_missing_paths_exit_nonzero(capsys):
    assert main(["--predictions", "p.csv"]) == 2
    assert "data" in capsys.readouterr().err
    assert main(["--data", "d.csv"]) == 2


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"data": "x.csv", "predictions": "p.csv", "alpha": 0.05,
                                "max-cross-size": 2}))
    cfg = parse_config(["--config", str(conf), "--alpha", "0.001"])
    assert cfg.alpha == 0.001 and cfg.max_cross_size == 2 and cfg.data == "x.csv"
    conf.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        parse_config(["--config", str(conf)])


def test_run_reports_planted_slice(files, capsys):
    tmp, data, preds = files
    out = tmp / "r.jsonl"
    assert main(["--data", str(data), "--predictions", str(preds), "--output", str(out),
                 "--label-column", "label"]) == 0
    recs = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    slices = {r["slice"] for r in recs}
    assert any("f0=v2" in s or "f3=v1" in s for s in slices)
    assert all(r["significant"] and r["direction"] == "lower" for r in recs)
    summary = capsys.readouterr().out
    assert "significant slices:" in summary and "candidate slices:" in summary
    schema = infer_schema(load_dataset(data, "label"))
    for r in recs:
        assert render(schema, parse(schema, r["slice"])) == r["slice"]


def test_planted_predicate_string_in_report(tmp_path):
    # planted slice on two features whose marginals stay insignificant
    raw, pred = make_dataset(4000, 4, 6, planted=[{"f1": "v3", "f2": "v4"}], drop=0.6, seed=8)
    data, preds, out = tmp_path / "d.csv", tmp_path / "m.csv", tmp_path / "o.jsonl"
    write_csv(raw, pred, data, preds)
    assert main(["--data", str(data), "--predictions", str(preds), "--output", str(out),
                 "--strategy", "iterative", "--max-cross-size", "2"]) == 0
    slices = [json.loads(line)["slice"] for line in out.read_text(encoding="utf-8").splitlines()]
    assert any(s == "f1=v3 AND f2=v4" or s in ("f1=v3", "f2=v4") for s in slices)


def test_identical_baseline_reports_nothing(tmp_path, capsys):
    raw, pred = make_null(600, 3, 3, seed=1)
    data, p1, p2, out = (tmp_path / n for n in ("d.csv", "a.csv", "b.csv", "o.jsonl"))
    write_csv(raw, pred, data, p1, baseline=pred, baseline_path=p2)
    code = main(["--data", str(data), "--predictions", str(p1), "--baseline-predictions", str(p2),
                 "--output", str(out), "--direction", "any"])
    assert code == 0
    assert out.read_text() == ""
    assert "significant slices:    0" in capsys.readouterr().out


def test_verbose_and_progress(files, capsys):
    tmp, data, preds = files
    out = tmp / "v.jsonl"
    assert main(["--data", str(data), "--predictions", str(preds), "--output", str(out),
                 "--verbose", "--progress", "--max-cross-size", "2", "--metric", "auc"]) == 0
    recs = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert any(not r["significant"] for r in recs)
    err = capsys.readouterr().err
    progress = [json.loads(line) for line in err.splitlines()]
    assert [p["iteration"] for p in progress] == [1, 2]


def test_floats_use_nine_significant_digits(files):
    tmp, data, preds = files
    out = tmp / "f.jsonl"
    main(["--data", str(data), "--predictions", str(preds), "--output", str(out), "--verbose",
          "--max-cross-size", "1"])
    for line in out.read_text(encoding="utf-8").splitlines():
        for key in ("delta", "p_value", "t"):
            v = json.loads(line)[key]
            if v is not None and v != 0:
                assert len(f"{abs(v):.9e}".split("e")[0].replace(".", "").rstrip("0")) <= 9


def test_io_errors_exit_nonzero(tmp_path, capsys):
    assert main(["--data", str(tmp_path / "nope.csv"), "--predictions", "p.csv"]) == 1
    assert "error" in capsys.readouterr().err


def test_ingest_errors_exit_nonzero(files, capsys):
    tmp, data, preds = files
    short = tmp / "short.csv"
    short.write_text("row_index,score\n0,0.5\n")
    assert main(["--data", str(data), "--predictions", str(short), "--output", str(tmp / "x")]) == 1
    assert "no prediction" in capsys.readouterr().err


def test_deterministic_report_bytes(files):
    tmp, data, preds = files
    outs = []
    for name in ("a.jsonl", "b.jsonl"):
        main(["--data", str(data), "--predictions", str(preds), "--output", str(tmp / name),
              "--strategy", "priority", "--seed", "4", "--verbose"])
        outs.append((tmp / name).read_bytes())
    assert outs[0] == outs[1] and outs[0]
