"""End-to-end command line workflow on a small synthetic dataset."""

import json

import pytest

from vtryon.cli import main


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def gen_config_file(work):
    path = work / "config.json"
    path.write_text(
        json.dumps(
            {
                "gen": {
                    "num_frames": 6,
                    "height": 32,
                    "width": 32,
                    "patch_size": 4,
                    "garment_size": 16,
                    "pool_size": 3,
                    "train_samples": 3,
                    "eval_samples": 3,
                },
                "train": {"checkpoint_interval": 2},
            }
        )
    )
    return path


@pytest.fixture(scope="module")
def dataset(work, gen_config_file):
    rc = main(
        [
            "gen-data",
            "--config",
            str(gen_config_file),
            "--out",
            str(work),
            "--seed",
            "2",
        ]
    )
    assert rc == 0
    return work / "dataset"


@pytest.fixture(scope="module")
def checkpoint(work, dataset, gen_config_file):
    rc = main(
        [
            "train",
            "--config",
            str(gen_config_file),
            "--data",
            str(dataset),
            "--steps",
            "4",
            "--out",
            str(work),
        ]
    )
    assert rc == 0
    return work / "checkpoints" / "final"


def test_gen_data_writes_dataset(dataset):
    assert (dataset / "manifest.json").exists()


def test_train_writes_checkpoints(checkpoint, work):
    assert (checkpoint / "config.json").exists()
    assert (checkpoint / "training_state.json").exists()
    assert (work / "checkpoints" / "step_00002" / "config.json").exists()
    assert (work / "checkpoints" / "loss.csv").exists()


def test_train_resume_continues(work, dataset, checkpoint, capsys):
    rc = main(
        [
            "train",
            "--data",
            str(dataset),
            "--resume",
            str(work / "checkpoints" / "step_00002"),
            "--out",
            str(work / "resumed"),
        ]
    )
    assert rc == 0
    assert "trained to step 4" in capsys.readouterr().out
    assert (work / "resumed" / "checkpoints" / "final" / "config.json").exists()


def test_sample_writes_video(work, dataset, checkpoint, capsys):
    rc = main(
        [
            "sample",
            "--data",
            str(dataset),
            "--checkpoint",
            str(checkpoint),
            "--steps",
            "2",
            "--out",
            str(work),
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "called 1x" in out and "assembled 1x" in out
    sample_dirs = list((work / "samples").iterdir())
    assert len(sample_dirs) == 1
    files = {p.name for p in sample_dirs[0].iterdir()}
    assert "video.tns" in files and "edited_frame.tns" in files
    assert "frame_0000.ppm" in files and "gray_0000.pgm" in files


def test_sample_with_external_editor(work, dataset, checkpoint, tmp_path, capsys):
    script = tmp_path / "editor.py"
    script.write_text(
        "import shutil, sys\n"
        "from pathlib import Path\n"
        "d = Path(sys.argv[1])\n"
        "shutil.copyfile(d / 'i0.tns', d / 'ir.tns')\n"
    )
    rc = main(
        [
            "sample",
            "--data",
            str(dataset),
            "--checkpoint",
            str(checkpoint),
            "--steps",
            "1",
            "--editor-cmd",
            f"python3 {script}",
            "--out",
            str(work / "ext"),
        ]
    )
    assert rc == 0
    assert "editor 'external' called 1x" in capsys.readouterr().out


def test_sample_rejects_unknown_garment(work, dataset, checkpoint, capsys):
    rc = main(
        [
            "sample",
            "--data",
            str(dataset),
            "--checkpoint",
            str(checkpoint),
            "--garment",
            "99",
            "--out",
            str(work),
        ]
    )
    assert rc == 2
    assert "not in pool" in capsys.readouterr().err


def test_eval_writes_report(work, dataset, checkpoint, capsys):
    rc = main(
        [
            "eval",
            "--data",
            str(dataset),
            "--checkpoint",
            str(checkpoint),
            "--steps",
            "2",
            "--out",
            str(work),
        ]
    )
    assert rc == 0
    assert "paired eval on 3 samples" in capsys.readouterr().out
    blob = json.loads((work / "reports" / "report.json").read_text())
    assert blob["setting"] == "paired"
    assert (work / "reports" / "metrics.csv").exists()


def test_eval_missing_checkpoint_is_runtime_error(work, dataset, capsys):
    rc = main(
        [
            "eval",
            "--data",
            str(dataset),
            "--checkpoint",
            str(work / "nowhere"),
            "--out",
            str(work),
        ]
    )
    assert rc == 1
    assert "no config.json" in capsys.readouterr().err


def test_ablate_writes_table(work, dataset, gen_config_file, capsys):
    rc = main(
        [
            "ablate",
            "--config",
            str(gen_config_file),
            "--data",
            str(dataset),
            "--steps",
            "2",
            "--variants",
            "full",
            "--seeds",
            "0",
            "--out",
            str(work / "ablation"),
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "full seed 0" in out
    lines = (work / "ablation" / "ablation.csv").read_text().strip().splitlines()
    assert lines[0].startswith("variant,seed,steps")
    assert len(lines) == 2


def test_ablate_rejects_bad_seeds(dataset, work, capsys):
    rc = main(
        ["ablate", "--data", str(dataset), "--seeds", "zero", "--out", str(work)]
    )
    assert rc == 2
    assert "bad --seeds" in capsys.readouterr().err


def test_profile_writes_efficiency_report(work, capsys):
    config = work / "profile_config.json"
    config.write_text(
        json.dumps(
            {
                "model": {
                    "d": 16,
                    "n_blocks": 1,
                    "n_heads": 2,
                    "frames": 2,
                    "height": 8,
                    "width": 8,
                    "patch_size": 2,
                },
                "lora": {"rank": 2},
            }
        )
    )
    rc = main(
        [
            "profile",
            "--config",
            str(config),
            "--timing-runs",
            "5",
            "--out",
            str(work / "prof"),
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "params" in out.lower()
    blob = json.loads((work / "prof" / "reports" / "efficiency.json").read_text())
    assert blob["format_version"] == "1"


def test_config_file_errors(work, capsys):
    rc = main(["gen-data", "--config", str(work / "missing.json"), "--out", str(work)])
    assert rc == 2
    assert "cannot read config file" in capsys.readouterr().err

    bad = work / "bad.json"
    bad.write_text("{nope")
    rc = main(["gen-data", "--config", str(bad), "--out", str(work)])
    assert rc == 2
    assert "not valid JSON" in capsys.readouterr().err

    lst = work / "list.json"
    lst.write_text("[1, 2]")
    rc = main(["gen-data", "--config", str(lst), "--out", str(work)])
    assert rc == 2
    assert "JSON object" in capsys.readouterr().err

    unknown = work / "unknown.json"
    unknown.write_text(json.dumps({"gen": {"bogus_field": 1}}))
    rc = main(["gen-data", "--config", str(unknown), "--out", str(work)])
    assert rc == 2
    assert "unknown keys" in capsys.readouterr().err


def test_bad_gen_value_is_config_error(work, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen": {"num_frames": 0}}))
    rc = main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 2


def test_missing_subcommand_exits(capsys):
    with pytest.raises(SystemExit):
        main([])
    with pytest.raises(SystemExit):
        main(["train"])  # --data is required
