"""End-to-end command-line tests, run in process through main()."""

import json
import logging
from pathlib import Path

import pytest

from emtune.cli import main
from emtune.model import load_checkpoint


@pytest.fixture(autouse=True)
def _fresh_logging():
    # main() calls basicConfig against the stderr active at call time;
    # clearing handlers keeps later tests off earlier capture streams
    root = logging.getLogger()
    saved = root.handlers[:]
    root.handlers[:] = []
    yield
    root.handlers[:] = saved


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    lines = [line for line in captured.out.strip().splitlines() if line.strip()]
    try:
        payload = json.loads(lines[-1]) if lines else None
    except json.JSONDecodeError:  # --help output is prose, not JSON
        payload = None
    return code, payload, captured


def _tree_bytes(root):
    root = Path(root)
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


@pytest.fixture(scope="module")
def pipeline(cli_dataset_dir, tmp_path_factory):
    """Encoder plus adapter checkpoints trained once over the CLI."""
    out = tmp_path_factory.mktemp("cli_pipeline")
    manifest = str(cli_dataset_dir / "manifest.jsonl")
    encoder = str(out / "encoder.ckpt")
    full = str(out / "full.ckpt")
    code = main(
        [
            "train-encoder",
            "--manifest", manifest,
            "--out", encoder,
            "--log", str(out / "encoder_log.jsonl"),
            "--hidden-dims", "8",
            "--bottleneck-dim", "4",
            "--batch-size", "8",
            "--epochs", "3",
        ]
    )
    assert code == 0
    code = main(
        [
            "train-adapter",
            "--manifest", manifest,
            "--encoder-checkpoint", encoder,
            "--out", full,
            "--adapter-hidden", "16",
            "--batch-size", "8",
            "--epochs", "3",
        ]
    )
    assert code == 0
    return {"manifest": manifest, "encoder": encoder, "full": full, "dir": out}


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_dataset_and_reports_it(tmp_path, capsys):
    out = tmp_path / "data"
    code, payload, _ = _run(
        capsys,
        "synth", "--out", str(out),
        "--classes", "3", "--per-class", "6", "--dim", "8",
        "--frames-min", "3", "--frames-max", "5", "--seed", "1",
    )
    assert code == 0
    assert payload == {"classes": 3, "manifest": str(out / "manifest.jsonl"), "samples": 18}
    assert (out / "manifest.jsonl").is_file()
    assert len(list((out / "features").glob("*.feat"))) == 18


def test_synth_reruns_are_byte_identical(tmp_path, capsys):
    flags = ["--classes", "2", "--per-class", "6", "--dim", "4", "--frames-min", "2",
             "--frames-max", "3", "--seed", "9"]
    code_a, _, _ = _run(capsys, "synth", "--out", str(tmp_path / "a"), *flags)
    code_b, _, _ = _run(capsys, "synth", "--out", str(tmp_path / "b"), *flags)
    assert code_a == 0 and code_b == 0
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


# ---------------------------------------------------------------------------
# training commands


def test_train_encoder_outputs_and_log(pipeline, tmp_path, capsys):
    out = tmp_path / "enc.ckpt"
    log = tmp_path / "log.jsonl"
    code, payload, _ = _run(
        capsys,
        "train-encoder", "--manifest", pipeline["manifest"],
        "--out", str(out), "--log", str(log),
        "--hidden-dims", "8", "--bottleneck-dim", "4",
        "--batch-size", "8", "--epochs", "2", "--loss", "contrastive",
    )
    assert code == 0
    assert payload["checkpoint"] == str(out)
    assert payload["loss_mode"] == "contrastive"
    assert payload["epochs"] == 2
    assert payload["final_train_loss"] >= 0.0
    checkpoint = load_checkpoint(out)
    assert checkpoint.loss_mode == "contrastive"
    assert checkpoint.adapter_params is None
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [row["epoch"] for row in rows[:-1]] == [1, 2]
    assert rows[-1] == {"checkpoint": str(out)}


def test_train_encoder_rerun_is_byte_identical(pipeline, tmp_path, capsys):
    flags = ["--manifest", pipeline["manifest"], "--hidden-dims", "8",
             "--bottleneck-dim", "4", "--batch-size", "8", "--epochs", "2"]
    code_a, _, _ = _run(capsys, "train-encoder", "--out", str(tmp_path / "a.ckpt"), *flags)
    code_b, _, _ = _run(capsys, "train-encoder", "--out", str(tmp_path / "b.ckpt"), *flags)
    assert code_a == 0 and code_b == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_task_preset_sets_margin_and_explicit_margin_wins(pipeline, tmp_path, capsys):
    flags = ["--manifest", pipeline["manifest"], "--hidden-dims", "8",
             "--bottleneck-dim", "4", "--batch-size", "8", "--epochs", "2"]
    _, ser, _ = _run(capsys, "train-encoder", "--out", str(tmp_path / "ser.ckpt"),
                     "--task-preset", "ser", *flags)
    _, age, _ = _run(capsys, "train-encoder", "--out", str(tmp_path / "age.ckpt"),
                     "--task-preset", "age", *flags)
    _, pinned, _ = _run(capsys, "train-encoder", "--out", str(tmp_path / "pin.ckpt"),
                        "--task-preset", "age", "--margin", "1.0", *flags)
    # the age preset widens the margin; pinning --margin restores the ser run
    assert age["final_train_loss"] != ser["final_train_loss"]
    assert pinned["final_train_loss"] == ser["final_train_loss"]
    assert (tmp_path / "pin.ckpt").read_bytes() == (tmp_path / "ser.ckpt").read_bytes()


def test_train_adapter_reports_dev_accuracy(pipeline, capsys):
    code, payload, _ = _run(
        capsys,
        "train-adapter", "--manifest", pipeline["manifest"],
        "--encoder-checkpoint", pipeline["encoder"],
        "--out", str(pipeline["dir"] / "adapter_again.ckpt"),
        "--adapter-hidden", "16", "--batch-size", "8", "--epochs", "2",
    )
    assert code == 0
    assert 0.0 <= payload["dev_accuracy"] <= 1.0
    checkpoint = load_checkpoint(pipeline["dir"] / "adapter_again.ckpt")
    assert checkpoint.adapter_params is not None
    assert checkpoint.adapter_config.num_classes == 3


def test_train_e2e_reports_dev_accuracy(pipeline, tmp_path, capsys):
    code, payload, _ = _run(
        capsys,
        "train-e2e", "--manifest", pipeline["manifest"],
        "--out", str(tmp_path / "e2e.ckpt"),
        "--hidden-dims", "8", "--bottleneck-dim", "4", "--adapter-hidden", "16",
        "--batch-size", "8", "--epochs", "2",
    )
    assert code == 0
    assert payload["final_train_loss"] >= 0.0
    assert 0.0 <= payload["dev_accuracy"] <= 1.0
    checkpoint = load_checkpoint(tmp_path / "e2e.ckpt")
    assert checkpoint.loss_mode == "end2end"


# ---------------------------------------------------------------------------
# evaluation and export commands


def test_evaluate_scores_the_test_split(pipeline, capsys):
    code, payload, _ = _run(
        capsys, "evaluate", "--manifest", pipeline["manifest"], "--checkpoint", pipeline["full"],
    )
    assert code == 0
    assert payload["split"] == "test"
    assert payload["count"] == 9
    assert 0.0 <= payload["accuracy"] <= 1.0
    assert payload["mae"] is None


def test_embed_writes_csv(pipeline, tmp_path, capsys):
    out = tmp_path / "emb.csv"
    code, payload, _ = _run(
        capsys, "embed", "--manifest", pipeline["manifest"],
        "--checkpoint", pipeline["encoder"], "--out", str(out),
    )
    assert code == 0
    assert payload == {"out": str(out), "rows": 9, "dim": 4}
    lines = out.read_text().splitlines()
    assert lines[0] == "id,label,e0,e1,e2,e3"
    assert len(lines) == 10
    assert all(line.split(",")[1].startswith("class_") for line in lines[1:])


def test_report_writes_csv_json_and_figure(pipeline, tmp_path, capsys):
    out = tmp_path / "report.csv"
    code, payload, _ = _run(
        capsys, "report", "--manifest", pipeline["manifest"],
        "--checkpoint", pipeline["encoder"], "--out", str(out),
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "label,count,invariant_distance"
    assert [line.split(",")[0] for line in lines[1:]] == ["class_00", "class_01", "class_02"]
    assert all(line.split(",")[1] == "3" for line in lines[1:])
    assert payload["split"] == "test"
    assert set(payload["per_class"]) == {"class_00", "class_01", "class_02"}
    assert payload["davies_bouldin"] > 0.0
    assert payload["mean_invariant_distance"] > 0.0
    figure = Path(payload["figure"])
    assert figure == tmp_path / "report.png"
    assert figure.stat().st_size > 0


def test_report_no_figure(pipeline, tmp_path, capsys):
    out = tmp_path / "report.csv"
    code, payload, _ = _run(
        capsys, "report", "--manifest", pipeline["manifest"],
        "--checkpoint", pipeline["encoder"], "--out", str(out), "--no-figure",
    )
    assert code == 0
    assert payload["figure"] is None
    assert not (tmp_path / "report.png").exists()


def test_project_pca_writes_csv_and_figure(pipeline, tmp_path, capsys):
    out = tmp_path / "proj.csv"
    code, payload, _ = _run(
        capsys, "project", "--manifest", pipeline["manifest"],
        "--checkpoint", pipeline["encoder"], "--out", str(out), "--method", "pca",
    )
    assert code == 0
    assert payload["method"] == "pca"
    assert payload["rows"] == 9
    lines = out.read_text().splitlines()
    assert lines[0] == "id,label,x,y"
    assert len(lines) == 10
    for line in lines[1:]:
        _, _, x, y = line.split(",")
        float(x), float(y)
    assert (tmp_path / "proj.png").stat().st_size > 0


def test_project_tsne_small_split(pipeline, tmp_path, capsys):
    out = tmp_path / "tsne.csv"
    code, payload, _ = _run(
        capsys, "project", "--manifest", pipeline["manifest"],
        "--checkpoint", pipeline["encoder"], "--out", str(out),
        "--method", "tsne", "--perplexity", "2", "--iterations", "300", "--no-figure",
    )
    assert code == 0
    assert payload["method"] == "tsne"
    assert len(out.read_text().splitlines()) == 10


def test_gradcheck_passes_default_tolerance(capsys):
    code, payload, captured = _run(capsys, "gradcheck")
    assert code == 0
    assert payload["ok"] is True
    assert payload["max_rel_error"] < payload["tolerance"] == 1e-4
    names = [json.loads(line)["check"] for line in captured.out.strip().splitlines()[:-1]]
    assert len(names) == len(set(names)) >= 4


# ---------------------------------------------------------------------------
# exit codes


def test_usage_errors_exit_2(pipeline, tmp_path, capsys):
    code, _, captured = _run(
        capsys, "train-encoder", "--manifest", pipeline["manifest"],
        "--out", str(tmp_path / "x.ckpt"), "--epochs", "0",
    )
    assert code == 2
    assert "usage error:" in captured.err

    code, _, captured = _run(
        capsys, "train-encoder", "--manifest", pipeline["manifest"],
        "--out", str(tmp_path / "x.ckpt"), "--hidden-dims", "abc",
    )
    assert code == 2
    assert "usage error:" in captured.err


def test_argparse_errors_exit_2(capsys):
    assert _run(capsys, "synth")[0] == 2  # missing required --out
    assert _run(capsys, "synth", "--out", "x", "--bogus")[0] == 2
    assert _run(capsys)[0] == 2  # missing subcommand
    assert _run(capsys, "train-adapter", "--manifest", "m", "--out", "o")[0] == 2


def test_help_exits_0_and_documents_defaults(capsys):
    code, _, captured = _run(capsys, "train-encoder", "--help")
    assert code == 0
    assert "--batch-size" in captured.out
    assert "default: 32" in captured.out
    assert "default: combined" in captured.out


def test_runtime_errors_exit_1(tmp_path, capsys):
    code, _, captured = _run(
        capsys, "evaluate", "--manifest", str(tmp_path / "missing.jsonl"),
        "--checkpoint", str(tmp_path / "missing.ckpt"),
    )
    assert code == 1
    assert "error:" in captured.err
