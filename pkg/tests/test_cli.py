import json

import pytest

from shapleyvic import cli, synthetic
from shapleyvic.data import write_csv

TINY = {
    "arch": {"hidden": [6]},
    "train": {"lr": 0.05, "epochs": 4, "batch_size": 64},
    "rashomon": {"lambda_grid": [0, 1e-4, 1e-3], "seeds_per_lambda": 1, "target_size": 12},
    "shap": {"background_size": 20},
    "data": {"explain_count": 40},
    "master_seed": 3,
}

CSVS = [
    "vic.csv",
    "violin.csv",
    "ranks.csv",
    "ensemble_rank.csv",
    "rank_comparison.csv",
    "parsimony.csv",
    "shap/summary.csv",
    "shap/shap_values.csv",
]


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = synthetic.make_logistic_dataset(800, (1.5, 0.8, 0.0, 0.3), seed=2)
    schema = write_csv(ds, root / "data.csv")
    (root / "schema.json").write_text(json.dumps(schema.to_dict()))
    (root / "config.json").write_text(json.dumps(TINY))
    return root


def args(inputs, out, *extra, command="run", config="config.json"):
    return [
        command,
        "--data", str(inputs / "data.csv"),
        "--schema", str(inputs / "schema.json"),
        "--config", str(inputs / config),
        "--out", str(out),
        *extra,
    ]


@pytest.fixture(scope="module")
def run_dir(inputs):
    out = inputs / "run"
    assert cli.main(args(inputs, out)) == 0
    return out


def test_run_writes_every_output(run_dir, capsys):
    for name in CSVS + ["bar.svg", "violin.svg", "rank_comparison.svg", "parsimony.svg", "report.json"]:
        assert (run_dir / name).is_file(), name
    assert (run_dir / "ensemble" / "meta.json").is_file()


def test_stagewise_matches_run(inputs, run_dir):
    out = inputs / "stages"
    for command in ("fit", "sample", "explain"):
        assert cli.main(args(inputs, out, command=command)) == 0
    for command in ("pool", "rank"):
        assert cli.main([command, "--out", str(out), "--config", str(inputs / "config.json")]) == 0
    assert cli.main(args(inputs, out, command="report")) == 0
    for name in CSVS:
        assert (out / name).read_bytes() == (run_dir / name).read_bytes(), name


def test_seed_override_changes_split(inputs, run_dir):
    out = inputs / "other_seed"
    assert cli.main(args(inputs, out, "--seed", "4", command="fit")) == 0
    assert (out / "split.json").read_text() != (run_dir / "split.json").read_text()
    assert json.loads((out / "config.json").read_text())["master_seed"] == 4


def test_missing_data_file(inputs, tmp_path, capsys):
    argv = args(inputs, tmp_path / "o")
    argv[argv.index("--data") + 1] = str(tmp_path / "missing.csv")
    assert cli.main(argv) == 2
    assert "not found" in capsys.readouterr().err


def test_malformed_data(inputs, tmp_path):
    bad = inputs / "bad.csv"
    text = (inputs / "data.csv").read_text().splitlines()
    text[3] = ",".join([""] + text[3].split(",")[1:])
    bad.write_text("\n".join(text) + "\n")
    argv = args(inputs, tmp_path / "o")
    argv[argv.index("--data") + 1] = str(bad)
    assert cli.main(argv) == 2


def test_unknown_config_key(inputs, tmp_path):
    (inputs / "typo.json").write_text(json.dumps({"train": {"learning_rate": 0.1}}))
    assert cli.main(args(inputs, tmp_path / "o", config="typo.json")) == 2


def test_stage_out_of_order(inputs, tmp_path):
    assert cli.main(args(inputs, tmp_path / "empty", command="sample")) == 2


def test_divergence_exit_code(inputs, tmp_path, capsys):
    cfg = dict(TINY, train={"lr": 1e300, "epochs": 2})
    (inputs / "diverge.json").write_text(json.dumps(cfg))
    assert cli.main(args(inputs, tmp_path / "o", config="diverge.json", command="fit")) == 3
    assert "numerical" in capsys.readouterr().err
