"""End-to-end command-line checks, all in-process via entrypoint().

Fleets are kept tiny (one or two short sessions, linear readouts, few
epochs) so the whole file runs in seconds; the full-scale pipeline runs
live in the acceptance suite.
"""

import numpy as np
import pytest

from locodec.cli import entrypoint
from locodec.sessions import ingest_session

BASE_CFG = {
    "run.seed": "5",
    "dataset.synthetic": "true",
    "dataset.synthetic.n_rats": "1",
    "dataset.synthetic.sessions_per_rat": "1",
    "dataset.synthetic.n_channels": "8",
    "dataset.synthetic.duration_s": "30.0",
    "dataset.synthetic.encoding": "linear",
    "dataset.synthetic.noise_scale": "0.2",
    "dataset.synthetic.speed_bias": "1.0",
    "decoder.family": "linear",
    "decoder.n_channels": "8",
    "train.max_epochs": "6",
    "train.patience": "3",
    "train.learning_rate": "3e-3",
}


def write_cfg(tmp_path, name: str = "run.cfg", **overrides):
    entries = dict(BASE_CFG)
    entries.update({k.replace("__", "."): v for k, v in overrides.items()})
    path = tmp_path / name
    path.write_text("".join(f"{k} = {v}\n" for k, v in entries.items()))
    return path


def rows_of(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    return lines[1], lines[2:]


def test_synth_writes_sessions_and_resolved_config(tmp_path):
    cfg = write_cfg(tmp_path, dataset__synthetic__n_rats="2")
    out = tmp_path / "fleet"
    assert entrypoint(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    files = sorted(p.name for p in out.glob("*.bin"))
    assert files == ["rat01_s01.bin", "rat02_s01.bin"]
    assert (out / "config.resolved").exists()
    session = ingest_session(out / "rat01_s01.bin")
    assert session.n_channels == 8
    assert session.n_samples == 3000


def test_synth_seed_flag_changes_the_fleet(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    entrypoint(["synth", "--config", str(cfg), "--out", str(a)])
    entrypoint(["synth", "--config", str(cfg), "--out", str(b), "--seed", "99"])
    entrypoint(["synth", "--config", str(cfg), "--out", str(c), "--seed", "99"])
    sa = ingest_session(a / "rat01_s01.bin")
    sb = ingest_session(b / "rat01_s01.bin")
    sc = ingest_session(c / "rat01_s01.bin")
    assert not np.array_equal(sa.eeg, sb.eeg)
    np.testing.assert_array_equal(sb.eeg, sc.eeg)


@pytest.fixture()
def ten_session_dir(tmp_path):
    cfg = write_cfg(
        tmp_path,
        name="fleet.cfg",
        dataset__synthetic__n_rats="5",
        dataset__synthetic__sessions_per_rat="2",
        dataset__synthetic__duration_s="20.0",
    )
    out = tmp_path / "raw"
    assert entrypoint(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    return out


def test_ingest_gate_report_and_idempotence(ten_session_dir, tmp_path):
    out = tmp_path / "canon"
    paths = sorted(str(p) for p in ten_session_dir.glob("*.bin"))
    assert entrypoint(["ingest", *paths, "--out", str(out)]) == 0
    report = out / "gate_report.csv"
    header, rows = rows_of(report)
    assert header == "session_id,iqr,threshold,included"
    assert len(rows) == 10
    excluded = [r for r in rows if r.endswith(",false")]
    assert len(excluded) == 1
    first = report.read_bytes()
    assert entrypoint(["ingest", *paths, "--out", str(out)]) == 0
    assert report.read_bytes() == first


def test_ingest_threshold_override_honored(ten_session_dir, tmp_path):
    out = tmp_path / "canon"
    paths = sorted(str(p) for p in ten_session_dir.glob("*.bin"))
    assert entrypoint(["ingest", *paths, "--out", str(out), "--iqr-threshold", "0.46"]) == 0
    _, rows = rows_of(out / "gate_report.csv")
    assert all(r.split(",")[2] == "0.46" for r in rows)


def test_ingest_malformed_input_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,session\n1,2,3\n")
    assert entrypoint(["ingest", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_train_then_eval_reproduces_the_row_bitwise(tmp_path):
    # Both commands must consume the same on-disk file: the canonical
    # binary stores float32 matrices, so a file round trip quantizes the
    # in-memory synthetic fleet and would shift r in the 8th decimal.
    cfg = write_cfg(tmp_path)
    fleet_dir, train_dir = tmp_path / "fleet", tmp_path / "trained"
    assert entrypoint(["synth", "--config", str(cfg), "--out", str(fleet_dir)]) == 0
    disk_cfg = write_cfg(
        tmp_path,
        name="disk.cfg",
        dataset__synthetic="false",
        dataset__paths=f"{fleet_dir}/*.bin",
    )
    assert entrypoint(["train", "--config", str(disk_cfg), "--out", str(train_dir)]) == 0
    model = train_dir / "rat01_s01.model"
    assert model.exists()
    assert (train_dir / "rat01_s01.report.jsonl").exists()
    _, train_rows = rows_of(train_dir / "results.csv")

    out_csv = tmp_path / "eval.csv"
    assert entrypoint(
        ["eval", str(model), str(fleet_dir / "rat01_s01.bin"), "--out", str(out_csv)]
    ) == 0
    _, eval_rows = rows_of(out_csv)
    assert eval_rows == train_rows


def test_eval_offset_flag_trims_windows(tmp_path):
    cfg = write_cfg(tmp_path)
    fleet_dir, train_dir = tmp_path / "fleet", tmp_path / "trained"
    entrypoint(["synth", "--config", str(cfg), "--out", str(fleet_dir)])
    entrypoint(["train", "--config", str(cfg), "--out", str(train_dir)])
    out_csv = tmp_path / "eval.csv"
    assert entrypoint(
        [
            "eval",
            str(train_dir / "rat01_s01.model"),
            str(fleet_dir / "rat01_s01.bin"),
            "--offset-ms",
            "200",
            "--out",
            str(out_csv),
        ]
    ) == 0
    _, (row,) = rows_of(out_csv)
    fields = row.split(",")
    assert fields[5] == "200"
    _, (row0,) = rows_of(train_dir / "results.csv")
    assert int(fields[9]) == int(row0.split(",")[9]) - 20


def test_experiment_baseline_outputs_and_input_hygiene(tmp_path):
    cfg = write_cfg(tmp_path, dataset__synthetic__sessions_per_rat="2")
    out = tmp_path / "exp"
    assert entrypoint(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
    header, rows = rows_of(out / "results.csv")
    assert header.startswith("session_id,")
    assert len(rows) == 2
    assert (out / "timings.csv").exists()
    assert (out / "config.resolved").exists()


def test_experiment_same_seed_is_bitwise_idempotent(tmp_path):
    cfg = write_cfg(tmp_path, dataset__synthetic__sessions_per_rat="2")
    out1, out2 = tmp_path / "e1", tmp_path / "e2"
    assert entrypoint(["experiment", "--config", str(cfg), "--out", str(out1), "--jobs", "1"]) == 0
    assert entrypoint(["experiment", "--config", str(cfg), "--out", str(out2), "--jobs", "1"]) == 0
    assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()


def test_experiment_never_mutates_input_files(ten_session_dir, tmp_path):
    paths = sorted(ten_session_dir.glob("*.bin"))
    before = [p.read_bytes() for p in paths]
    cfg_path = tmp_path / "disk.cfg"
    cfg_path.write_text(
        "run.seed = 5\n"
        f"dataset.paths = {ten_session_dir}/*.bin\n"
        "dataset.apply_gate = true\n"
        "decoder.family = linear\n"
        "decoder.n_channels = 8\n"
        "train.max_epochs = 4\n"
        "train.patience = 2\n"
    )
    out = tmp_path / "exp"
    assert entrypoint(["experiment", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert [p.read_bytes() for p in paths] == before
    header, rows = rows_of(out / "gate_report.csv")
    assert len(rows) == 10
    _, result_rows = rows_of(out / "results.csv")
    assert len(result_rows) == 9  # one session gated out


def test_experiment_strategy_mismatch_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, experiment__kind="transfer")
    assert entrypoint(["experiment", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "zeroshot" in capsys.readouterr().err


def test_report_single_variant_emits_no_tests(tmp_path):
    cfg = write_cfg(tmp_path, dataset__synthetic__sessions_per_rat="3")
    exp, rep = tmp_path / "exp", tmp_path / "rep"
    assert entrypoint(["experiment", "--config", str(cfg), "--out", str(exp)]) == 0
    assert entrypoint(["report", str(exp / "results.csv"), "--out", str(rep)]) == 0
    _, median_rows = rows_of(rep / "medians.csv")
    assert len(median_rows) == 1
    assert median_rows[0].split(",")[5] == "3"  # n_sessions
    _, test_rows = rows_of(rep / "tests.csv")
    assert test_rows == []
    _, curve_rows = rows_of(rep / "offset_curves.csv")
    assert len(curve_rows) == 1
    _, fit_rows = rows_of(rep / "offset_curve_fits.csv")
    assert fit_rows == []  # quadratic fit needs >= 3 offsets


def test_report_embeds_the_source_config_hash(tmp_path):
    cfg = write_cfg(tmp_path)
    exp, rep = tmp_path / "exp", tmp_path / "rep"
    entrypoint(["experiment", "--config", str(cfg), "--out", str(exp)])
    entrypoint(["report", str(exp / "results.csv"), "--out", str(rep)])
    src_head = (exp / "results.csv").read_text().splitlines()[0]
    rep_head = (rep / "medians.csv").read_text().splitlines()[0]
    assert rep_head == src_head


def test_env_seed_override(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "fleet"
    monkeypatch.setenv("LOCODEC_SEED", "31")
    assert entrypoint(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    assert "run.seed = 31" in (out / "config.resolved").read_text()


def test_missing_model_file_exits_2(tmp_path, capsys):
    missing = tmp_path / "no.model"
    session = tmp_path / "no.bin"
    assert entrypoint(["eval", str(missing), str(session)]) == 2
    assert "error" in capsys.readouterr().err
