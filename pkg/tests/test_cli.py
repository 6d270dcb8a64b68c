"""End-to-end command-line behaviour: exit codes, config precedence, outputs."""

import json
import subprocess
import sys

import pytest

from cursorlab.bigru import load_checkpoint
from cursorlab.cli import main
from cursorlab.provenance import sha256_file
from cursorlab.sessions import parse_sessions


def run(argv):
    return main(list(argv))


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("CURSORLAB_INPUT", raising=False)
    monkeypatch.delenv("CURSORLAB_OUT", raising=False)


def make_synth(tmp_path, n=12, seed=3, extra=()):
    path = tmp_path / "sessions.jsonl"
    rc = run(["synth", "--n", str(n), "--seed", str(seed), "--out", str(path),
              "--len-mean", "40", "--len-sd", "8", "--len-min", "25", "--len-max", "60",
              *extra])
    assert rc == 0
    return path


def test_version_help_and_missing_command():
    assert run(["--version"]) == 0
    assert run(["--help"]) == 0
    assert run([]) == 1
    assert run(["sing"]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cursorlab", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.startswith("cursorlab ")


def test_synth_writes_sessions_and_manifest(tmp_path):
    path = make_synth(tmp_path, n=8)
    sessions, diags = parse_sessions(path)
    assert len(sessions) == 8
    assert diags == []

    manifest = json.loads((tmp_path / "sessions.jsonl.manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["outputs"][str(path)] == sha256_file(path)
    assert manifest["config"]["synth"]["n"] == 8


def test_synth_is_seed_deterministic(tmp_path):
    a = make_synth(tmp_path / "a", n=6, seed=5)
    b = make_synth(tmp_path / "b", n=6, seed=5)
    c = make_synth(tmp_path / "c", n=6, seed=6)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_synth_label_flag_controls_demographic(tmp_path):
    path = tmp_path / "aged.jsonl"
    assert run(["synth", "--n", "6", "--label", "age", "--out", str(path),
                "--len-mean", "30", "--len-min", "25", "--len-max", "40"]) == 0
    sessions, _ = parse_sessions(path)
    groups = [s.demographics.age_group for s in sessions]
    assert groups == ["adult", "young"] * 3


def test_ingest_round_trips_canonical(tmp_path):
    src = make_synth(tmp_path, n=5)
    out = tmp_path / "canonical.jsonl"
    assert run(["ingest", "--input", str(src), "--out", str(out)]) == 0
    assert out.read_bytes() == src.read_bytes()


def test_ingest_reads_raw_layout(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "participants.csv").write_text(
        "user_id,task,sex,age,screen_width,screen_height\n"
        "3,news,f,29,1280,800\n")
    (raw / "3.txt").write_text("timestamp xpos ypos event\n"
                               "100 10 10 move\n200 30 25 move\n350 50 40 move\n")
    out = tmp_path / "canon.jsonl"
    assert run(["ingest", "--input", str(raw), "--format", "attentive_cursor_raw",
                "--out", str(out)]) == 0
    sessions, _ = parse_sessions(out)
    assert len(sessions) == 1
    assert sessions[0].demographics.gender == "female"
    assert sessions[0].coordinate_count == 3


def test_features_csv_schema(tmp_path):
    src = make_synth(tmp_path, n=6)
    out = tmp_path / "features.csv"
    assert run(["features", "--input", str(src), "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header[:3] == ["id", "gender", "age"]
    assert len(header) == 3 + 161
    assert len(lines) == 1 + 6
    first = lines[1].split(",")
    float(first[10])  # numeric cells parse


def test_config_file_env_flag_precedence(tmp_path, monkeypatch):
    cfg_path = tmp_path / "conf.json"
    cfg_path.write_text(json.dumps({
        "seed": 5,
        "synth": {"n": 6, "len_mean": 30.0, "len_min": 25, "len_max": 40},
    }))

    # config file supplies n and seed
    out1 = tmp_path / "one.jsonl"
    assert run(["synth", "--config", str(cfg_path), "--out", str(out1)]) == 0
    sessions, _ = parse_sessions(out1)
    assert len(sessions) == 6
    assert sessions[0].id.startswith("synth-5-")

    # environment fills in the output path
    out2 = tmp_path / "two.jsonl"
    monkeypatch.setenv("CURSORLAB_OUT", str(out2))
    assert run(["synth", "--config", str(cfg_path)]) == 0
    assert out2.exists()
    assert out2.read_bytes() == out1.read_bytes()

    # flags beat both the file and the environment
    out3 = tmp_path / "three.jsonl"
    assert run(["synth", "--config", str(cfg_path), "--seed", "9",
                "--out", str(out3)]) == 0
    sessions3, _ = parse_sessions(out3)
    assert sessions3[0].id.startswith("synth-9-")


def test_unknown_config_key_is_a_usage_error(tmp_path, capsys):
    cfg_path = tmp_path / "conf.json"
    cfg_path.write_text(json.dumps({"bogus": 1}))
    rc = run(["synth", "--config", str(cfg_path), "--out", str(tmp_path / "x.jsonl")])
    assert rc == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_exit_codes(tmp_path, capsys):
    ok = make_synth(tmp_path, n=5)
    # missing output: usage error
    assert run(["features", "--input", str(ok)]) == 1
    # missing input file: data error
    assert run(["features", "--input", str(tmp_path / "nope.jsonl"),
                "--out", str(tmp_path / "f.csv")]) == 2
    # bad flag value: argparse usage error
    assert run(["synth", "--task", "income", "--out", str(tmp_path / "y.jsonl")]) == 1
    # missing model file: data error
    assert run(["eval", "--input", str(ok), "--model",
                str(tmp_path / "ghost.npz")]) == 2
    capsys.readouterr()


def test_error_json_is_machine_readable(tmp_path, capsys):
    rc = run(["features", "--input", str(tmp_path / "gone.jsonl"),
              "--out", str(tmp_path / "f.csv"), "--error-json"])
    assert rc == 2
    err_lines = capsys.readouterr().err.strip().splitlines()
    payload = json.loads(err_lines[-1])
    assert payload["error"]["exit_code"] == 2
    assert payload["error"]["type"] == "DataError"
    assert "gone.jsonl" in payload["error"]["message"]


def test_distort_inserts_events(tmp_path):
    src = make_synth(tmp_path, n=4)
    out = tmp_path / "cloaked.jsonl"
    assert run(["distort", "--input", str(src), "--out", str(out),
                "--spec", "fixed:0.5"]) == 0
    before, _ = parse_sessions(src)
    after, _ = parse_sessions(out)
    for a, b in zip(before, after):
        assert len(b.events) > len(a.events)

    # per-sequence radii: uniform spec parses too
    out2 = tmp_path / "cloaked2.jsonl"
    assert run(["distort", "--input", str(src), "--out", str(out2),
                "--spec", "uniform:0.1,0.9"]) == 0
    assert run(["distort", "--input", str(src), "--out", str(out2),
                "--spec", "banana:1"]) == 1
    assert run(["distort", "--input", str(src), "--out", str(out2),
                "--spec", "fixed:not-a-number"]) == 1


def test_distort_export_goldens(tmp_path):
    path = tmp_path / "fixtures" / "goldens.json"
    assert run(["distort", "--export-goldens", str(path), "--n-fixtures", "5",
                "--seed", "11"]) == 0
    payload = json.loads(path.read_text())
    assert len(payload["fixtures"]) == 5


def test_train_rf_and_eval(tmp_path, capsys):
    src = make_synth(tmp_path, n=16)
    model = tmp_path / "forest.npz"
    assert run(["train-rf", "--input", str(src), "--out", str(model),
                "--n-trees", "10"]) == 0
    assert model.exists()
    sidecar = json.loads(model.with_suffix(".filter.json").read_text())
    assert sidecar["task"] == "gender"
    assert sidecar["mask"]["kept"]

    capsys.readouterr()
    assert run(["eval", "--input", str(src), "--model", str(model)]) == 0
    table = capsys.readouterr().out
    assert "forest" in table and "auc" in table

    out_dir = tmp_path / "evalout"
    assert run(["eval", "--input", str(src), "--model", str(model),
                "--out", str(out_dir)]) == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert "forest" in report["classifiers"]
    assert (out_dir / "report.txt").exists()
    assert (out_dir / "manifest.json").exists()


def test_train_rnn_writes_checkpoint_and_history(tmp_path):
    src = make_synth(tmp_path, n=12)
    model = tmp_path / "rnn.npz"
    assert run(["train-rnn", "--input", str(src), "--out", str(model),
                "--hidden", "4", "--max-epochs", "2", "--patience", "2",
                "--max-len", "30"]) == 0
    back = load_checkpoint(model)
    assert back.config.hidden == 4
    assert len(back.history) == 2
    history = model.with_suffix(".history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,val_loss"
    assert len(history) == 3


def test_train_out_paths_are_taken_literally(tmp_path):
    # np.savez appends .npz to bare filenames; the save path must not drift
    # from what --out named, or the manifest step hashes a missing file
    src = make_synth(tmp_path, n=12)
    rnn = tmp_path / "rnn"
    assert run(["train-rnn", "--input", str(src), "--out", str(rnn),
                "--hidden", "2", "--max-epochs", "1", "--patience", "1",
                "--max-len", "30"]) == 0
    assert rnn.exists() and not rnn.with_suffix(".npz").exists()
    assert load_checkpoint(rnn).config.hidden == 2
    assert rnn.with_name("rnn.manifest.json").exists()

    rf = tmp_path / "forest"
    assert run(["train-rf", "--input", str(src), "--out", str(rf),
                "--n-trees", "4"]) == 0
    assert rf.exists() and not rf.with_suffix(".npz").exists()
    assert run(["eval", "--input", str(src), "--model", str(rf)]) == 0


EXPERIMENT_ARGS = ["experiment", "--synth-n", "40", "--seed", "3",
                   "--test-fraction", "0.25", "--hidden", "4",
                   "--max-epochs", "3", "--patience", "3"]


def test_experiment_end_to_end_and_determinism(tmp_path):
    run1 = tmp_path / "run1"
    run2 = tmp_path / "run2"
    run4t = tmp_path / "run4t"
    assert run([*EXPERIMENT_ARGS, "--out", str(run1)]) == 0
    assert run([*EXPERIMENT_ARGS, "--out", str(run2)]) == 0
    assert run([*EXPERIMENT_ARGS, "--out", str(run4t), "--threads", "4"]) == 0

    r1 = (run1 / "report.json").read_bytes()
    assert r1 == (run2 / "report.json").read_bytes()
    assert r1 == (run4t / "report.json").read_bytes()

    report = json.loads(r1)
    assert set(report["classifiers"]) == {"majority_rate", "random_forest", "bigru"}
    assert report["metadata"]["n_test"] == 10
    assert report["metadata"]["source"]["kind"] == "synth"
    assert len(report["metadata"]["config_sha256"]) == 64
    for name in ("report.txt", "rnn_history.csv", "manifest.json",
                 "models/rnn.npz", "models/rf.npz", "models/rf.filter.json",
                 "models/majority_rate.json"):
        assert (run1 / name).exists(), name

    manifest = json.loads((run1 / "manifest.json").read_text())
    assert manifest["outputs"]["report.json"] == sha256_file(run1 / "report.json")


def test_experiment_distort_flags_are_recorded(tmp_path):
    out = tmp_path / "cloak"
    assert run([*EXPERIMENT_ARGS, "--out", str(out),
                "--distort-test", "fixed:0.25"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["metadata"]["distort_test"] == "fixed:0.25"
    assert report["metadata"]["distort_train"] == "none"


def test_experiment_from_file_input(tmp_path):
    src = make_synth(tmp_path, n=24, seed=2)
    out = tmp_path / "fromfile"
    assert run(["experiment", "--input", str(src), "--seed", "2",
                "--test-fraction", "0.25", "--hidden", "4",
                "--max-epochs", "2", "--patience", "2", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["metadata"]["source"] == {"kind": "file", "path": str(src)}
    assert report["metadata"]["n_train"] == 18
