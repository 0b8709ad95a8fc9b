import json

import numpy as np
import pytest

from eegtse import cli
from eegtse.data import preprocess_eeg, read_manifest, read_wav, synth_scene, write_eeg, write_wav
from eegtse.experiments import tiny_model_config
from eegtse.nn import functional as F
from eegtse.training import Checkpoint


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "synth"
    assert cli.main(["synth", "--out", str(root), "--scenes", "4", "--seed", "1"]) == 0
    return root


def write_config(tmp_path, data, **train):
    cfg = {"data": {"root": str(data), "eval_split": "test"},
           "model": tiny_model_config().to_dict(),
           "train": {"epochs": 1, "max_steps": 2, "crop_seconds": 1.0, "lr": 1e-3, **train},
           "run": {"root": str(tmp_path / "runs")}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


# ---------------------------------------------------------------- synth


def test_synth_split_counts_and_reproducibility(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", tmp_path / "a", "--scenes", 16, "--seed", 7)
    assert code == 0 and "train 12 / validation 2 / test 2" in out
    m = read_manifest(tmp_path / "a")
    assert (len(m.train), len(m.validation), len(m.test)) == (12, 2, 2)
    code, _, err = run(capsys, "synth", "--out", tmp_path / "a", "--scenes", 16, "--seed", 7)
    assert code == 1 and "--force" in err
    assert run(capsys, "synth", "--out", tmp_path / "b", "--scenes", 16, "--seed", 7, "--force")[0] == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_synth_rejects_bad_counts(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--out", tmp_path / "x", "--scenes", 0)
    assert code == 1 and "--scenes" in err
    assert not (tmp_path / "x").exists()
    assert run(capsys, "synth", "--out", tmp_path / "y")[0] == 1


# ---------------------------------------------------------------- train / eval / extract


def test_train_rejects_missing_dataset_and_lists_all_problems(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "nowhere")
    code, out, err = run(capsys, "train", "--config", cfg, "--override", "train.lr=-1",
                         "--override", "train.bogus=3")
    assert code == 1 and out == ""
    assert "nowhere" in err and "lr" in err and "bogus" in err
    assert not (tmp_path / "runs").exists()


def test_train_eval_extract_round_trip(tmp_path, dataset, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path, dataset)
    code, out, _ = run(capsys, "train", "--config", cfg, "--override", "run.name=\"r\"",
                       "--override", "separator.R=1")
    assert code == 0
    run_dir = tmp_path / "runs" / "r"
    echoed = json.loads(out[:out.rindex("}") + 1])
    assert echoed["model"]["separator"]["R"] == 1
    for name in ("best.ckpt", "config.json", "train_log.jsonl", "loss_trace.json", "report_test.json"):
        assert (run_dir / name).exists()
    assert run(capsys, "train", "--config", cfg, "--override", "run.name=\"r\"",
               "--override", "separator.R=1")[0] == 1

    ckpt = run_dir / "best.ckpt"
    code, table, _ = run(capsys, "eval", "--checkpoint", ckpt, "--out", tmp_path / "e1.json")
    assert code == 0 and "mixture" in table
    run(capsys, "eval", "--checkpoint", ckpt, "--out", tmp_path / "e2.json")
    assert (tmp_path / "e1.json").read_bytes() == (tmp_path / "e2.json").read_bytes()

    # the config without the R override describes a different model
    code, _, err = run(capsys, "eval", "--checkpoint", ckpt, "--config", cfg)
    assert code == 1 and "refusing" in err
    assert run(capsys, "eval", "--checkpoint", ckpt, "--config", cfg, "--override", "separator.R=1",
               "--out", tmp_path / "e3.json")[0] == 0

    scene = synth_scene(9)
    write_wav(tmp_path / "mix.wav", scene.mixture)
    write_eeg(tmp_path / "eeg.bin", scene.eeg)
    code, out, _ = run(capsys, "extract", "--checkpoint", ckpt, "--mixture", tmp_path / "mix.wav",
                       "--eeg", tmp_path / "eeg.bin", "--out", tmp_path / "est.wav")
    assert code == 0 and "2.000 s" in out
    est = read_wav(tmp_path / "est.wav")
    assert est.fs == scene.mixture.fs and est.samples.shape == scene.mixture.samples.shape
    np.testing.assert_allclose(est.samples, Checkpoint.load(ckpt).build_model().extract(
        scene.mixture.samples, preprocess_eeg(scene.eeg).data), atol=1e-6)


def test_corrupted_checkpoint_is_runtime_failure(tmp_path, capsys):
    (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "bad.ckpt", "--data", tmp_path)
    assert code == 2 and "failed" in err


def test_run_root_from_environment(tmp_path, dataset, capsys, monkeypatch):
    cfg = json.loads(write_config(tmp_path, dataset).read_text())
    cfg["run"]["root"] = ""
    (tmp_path / "env.json").write_text(json.dumps(cfg))
    monkeypatch.setenv(cli.RUN_ROOT_ENV, str(tmp_path / "envruns"))
    assert run(capsys, "train", "--config", tmp_path / "env.json", "--override", "train.max_steps=1")[0] == 0
    (run_dir,) = (tmp_path / "envruns").iterdir()
    assert run_dir.name.startswith("run-") and (run_dir / "best.ckpt").exists()


def test_sweep_writes_table(tmp_path, dataset, capsys):
    cfg = write_config(tmp_path, dataset, max_steps=1)
    code, out, _ = run(capsys, "train", "--config", cfg, "--sweep", "separator.R=1..2",
                       "--override", "run.name=\"sw\"")
    assert code == 0
    sweep_dir = tmp_path / "runs" / "sw"
    rows = json.loads((sweep_dir / "sweep.json").read_text())["rows"]
    assert [r["value"] for r in rows] == [1, 2]
    assert rows[0]["n_params"] < rows[1]["n_params"]
    assert (sweep_dir / "R1" / "best.ckpt").exists() and (sweep_dir / "R2" / "best.ckpt").exists()
    assert "| 2 |" in (sweep_dir / "sweep.md").read_text()
    code, _, err = run(capsys, "train", "--config", cfg, "--sweep", "separator.R=3..1")
    assert code == 1 and "empty" in err


# ---------------------------------------------------------------- gradcheck


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--ops", "conv1d", "gates", "si_sdr_loss")
    assert code == 0 and "3/3 passed" in out


def test_gradcheck_catches_broken_backward(capsys, monkeypatch):
    def bad_sigmoid(x):
        x = F.as_tensor(x)
        out = 1.0 / (1.0 + np.exp(-x.data))
        return F.make(out, (x,), lambda g: (g * out,), "sigmoid")

    monkeypatch.setattr(F, "sigmoid", bad_sigmoid)
    code, out, _ = run(capsys, "gradcheck", "--ops", "gates")
    assert code == 2 and "0/1 passed" in out


def test_gradcheck_unknown_op(capsys):
    assert run(capsys, "gradcheck", "--ops", "nope")[0] == 1
