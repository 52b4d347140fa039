import json
import os

import pytest

from segfree import cli
from segfree.exceptions import ConfigurationError, SessionError
from segfree.experiment import (
    ExperimentConfig,
    evaluate_outcomes,
    make_data,
    read_models,
    simulate,
    train_models,
    write_traces,
)
import segfree.experiment as experiment
from segfree.features import load_model

SMALL = {
    "n_train_docs": 8,
    "n_dev_docs": 3,
    "n_test_docs": 3,
    "sentences_per_doc": 4,
    "em_iterations": 3,
    "epochs": 20,
    "k_min": 1,
    "k_max": 2,
    "resamples": 50,
}


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
    config = tmp_path / "config.json"
    config.write_text(json.dumps(SMALL))

    def invoke(command, *extra):
        return cli.main([command, "--config", str(config), "--output-dir", "run", *extra])

    invoke.root = tmp_path / "run"
    invoke.config = config
    return invoke


def _tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_gen_data_is_byte_identical(run, tmp_path):
    assert run("gen-data") == 0
    first = _tree(run.root / "data")
    assert {"lexicon.tsv", "train/boundaries.tsv", "dev/doc000.tsv", "test/doc002.tsv"} <= set(first)
    assert run("gen-data") == 0
    assert _tree(run.root / "data") == first
    assert run("gen-data", "--seed", "2") == 0
    assert _tree(run.root / "data") != first


def test_full_pipeline(run, capsys):
    assert run("gen-data") == 0
    assert run("train") == 0
    assert run("simulate") == 0
    manifest = json.loads((run.root / "traces" / "manifest.json").read_text())
    # 3 modes x 2 values of k x 3 videos
    assert len(manifest) == 18
    assert all(m["status"] == "ok" for m in manifest)
    first = _tree(run.root / "traces")
    assert run("simulate") == 0
    assert _tree(run.root / "traces") == first

    assert run("evaluate") == 0
    report_bytes = (run.root / "eval" / "report.json").read_bytes()
    report = json.loads(report_bytes)
    assert report["status"] == "ok"
    oracle = [s for s in report["systems"] if s["system"] == "segmented-oracle"]
    assert len(oracle) == 2 and all(s["BLEU"] == pytest.approx(100.0) for s in oracle)
    assert {(s["a"], s["b"]) for s in report["significance"]} == {("segfree", "naive")}
    assert run("evaluate") == 0
    assert (run.root / "eval" / "report.json").read_bytes() == report_bytes

    out = run.root / "only.csv"
    assert run("curve", "--systems", "segfree", "--out", str(out)) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "system,k,AL,BLEU" and len(lines) == 3
    assert all(line.startswith("segfree,") for line in lines[1:])

    log = json.loads((run.root / "models" / "training_log.json").read_text())
    assert log["naive_ratio"] > 0 and log["final_loss"] <= log["initial_loss"]


def test_self_significance_is_one(run):
    assert run("gen-data") == 0
    assert run("simulate", "--modes", "segmented-oracle", "--k-max", "1") == 0
    assert run("evaluate", "--set", 'significance_pairs=[["segmented-oracle", "segmented-oracle"]]') == 0
    report = json.loads((run.root / "eval" / "report.json").read_text())
    assert [s["p_value"] for s in report["significance"]] == [1.0]


def test_zero_epochs_keeps_initial_weights(run):
    assert run("gen-data") == 0
    assert run("train", "--set", "epochs=0", "--set", "init_weight=0.5") == 0
    weights = load_model(str(run.root / "models" / "weights.json"))
    assert list(weights.values) == [0.5, 0.5]


def test_length_feature_learns_boundaries_on_dev():
    config = ExperimentConfig.from_dict({**SMALL, "features": ["linreg"], "grammar": {"fertility_mix": {"1": 1.0}}})
    models = train_models(config, make_data(config))
    assert models.dev_accuracy > 0.9


def test_missing_trace_gives_warning(run):
    assert run("gen-data") == 0
    assert run("simulate", "--modes", "segmented-oracle") == 0
    os.remove(run.root / "traces" / "segmented-oracle" / "k01" / "doc000.jsonl")
    assert run("evaluate") == 0
    report = json.loads((run.root / "eval" / "report.json").read_text())
    assert report["status"] == "warning"
    assert any("doc000" in p for p in report["problems"])
    assert len(report["systems"]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--k-min", "0"],
        ["no-such-command"],
        ["gen-data", "--set", "n_train_docs=0"],
        ["gen-data", "--set", "bogus_field=1"],
        ["gen-data", "--set", "novalue"],
    ],
)
def test_usage_errors_exit_one(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
    assert cli.main(argv) == 1
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "usage" and record["exit_code"] == 1


def test_missing_inputs_exit_two(run, capsys):
    assert run("train") == 2
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "data" and record["command"] == "train"
    assert run("curve") == 2
    assert cli.main(["gen-data", "--config", "/nonexistent.json"]) == 1


def test_runtime_errors_exit_three(run, monkeypatch, capsys):
    def boom(config):
        raise RuntimeError("kaput")

    monkeypatch.setitem(cli.COMMANDS, "gen-data", boom)
    assert run("gen-data") == 3
    assert json.loads(capsys.readouterr().err)["error"] == "runtime"


def test_aborted_session_is_recorded(tmp_path, monkeypatch):
    config = ExperimentConfig.from_dict({**SMALL, "modes": ["segmented-oracle"], "k_max": 1})
    data = make_data(config)
    real = experiment.run_session

    def flaky(mode, k, doc, lexicon, models, cfg):
        if doc.id == "doc001":
            raise SessionError("decoder fell over", None)
        return real(mode, k, doc, lexicon, models, cfg)

    monkeypatch.setattr(experiment, "run_session", flaky)
    outcomes = simulate(config, data, None)
    assert [o.error for o in outcomes] == [None, "decoder fell over", None]
    manifest = write_traces(outcomes, str(tmp_path))
    assert [m["status"] for m in manifest] == ["ok", "aborted", "ok"]
    report, results = evaluate_outcomes(config, data, outcomes)
    assert report["status"] == "warning"
    assert len(results[("segmented-oracle", 1)].per_video_AL) == 2


def test_config_roundtrip_and_seeds(tmp_path):
    config = ExperimentConfig.from_dict(SMALL)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(config.to_dict()))
    assert ExperimentConfig.from_json(str(path)) == config
    seeds = config.stage_seeds()
    assert set(seeds) == {"data", "train", "simulate"}
    assert seeds["data"].generate_state(1)[0] != seeds["train"].generate_state(1)[0]
    with pytest.raises(ConfigurationError):
        read_models(config, str(tmp_path / "models"))
