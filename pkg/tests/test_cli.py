import csv
import hashlib
import json

import pytest

from sce import cli
from sce.solver import RESULTS_HEADER, TRANSFER_HEADER


def run(*argv):
    return cli.main([str(a) for a in argv])


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_solve_full_grid_schema(tmp_path, capsys):
    assert run("solve", "--model", "mcpc", "--tests", 2, "--seed", 1, "--threads", 1, "--out", tmp_path) == 0
    table = rows(tmp_path / "results.csv")
    assert tuple(table[0]) == RESULTS_HEADER and len(table) == 65
    assert {r[1] for r in table[1:]} == {"size", "shade", "number", "shape"}
    assert "total accuracy" in capsys.readouterr().out


@pytest.mark.parametrize("argv, name", [
    (["solve", "--grid", "easy-hard", "--tests", 3], "results.csv"),
    (["pretrain-matrix", "--episodes", 2, "--tests", 2, "--reps", 2,
      "--train-conditions", "size-easy,shape-hard", "--test-conditions", "size-easy,size-hard"], "transfer.csv"),
    (["anomaly", "--synthetic", "--num-frames", 16, "--break-at", 10, "--runs", 2, "--sigma", 1], "anomaly.csv"),
])
def test_byte_identical_across_runs_and_threads(tmp_path, argv, name):
    outputs = []
    for i, threads in enumerate((1, 1, 4, 4)):
        out = tmp_path / f"run{i}"
        assert run(*argv, "--seed", 5, "--threads", threads, "--out", out) == 0
        outputs.append((out / name).read_bytes())
    assert len(set(outputs)) == 1


def test_manifest_digests(tmp_path):
    assert run("solve", "--predictive", "size", "--tests", 2, "--svg", "--threads", 1, "--out", tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest) == {"command", "config", "seed", "tool_version", "started_at", "finished_at", "outputs"}
    assert set(manifest["outputs"]) == {"results.csv", "results.svg"}
    for name, digest in manifest["outputs"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    text = (tmp_path / "manifest.json").read_text()
    assert text == json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def test_svg_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run("solve", "--predictive", "color", "--tests", 2, "--svg", "--threads", 1, "--out", tmp_path / d) == 0
    assert (tmp_path / "a" / "results.svg").read_bytes() == (tmp_path / "b" / "results.svg").read_bytes()


def test_transfer_without_pretraining_rows_equal_naive(tmp_path):
    assert run("pretrain-matrix", "--episodes", 0, "--tests", 3, "--reps", 1, "--threads", 1,
               "--out", tmp_path) == 0
    table = rows(tmp_path / "transfer.csv")
    assert tuple(table[0]) == TRANSFER_HEADER and len(table) == 1 + 9 * 8
    naive = {r[1]: r[2] for r in table[1:] if r[0] == "naive"}
    assert all(r[2] == naive[r[1]] for r in table[1:])


@pytest.mark.parametrize("argv", [
    ["solve", "--tests", 0],
    ["solve", "--model", "nope"],
    ["solve", "--predictive", "positions"],
    ["solve", "--predictive", "size", "--distractors", "shape,weight"],
    ["solve", "--predictive", "size", "--distractors", "size"],
    ["solve", "--distractors", "number"],
    ["anomaly"],
    ["pretrain-matrix", "--test-conditions", "size-medium"],
    ["bench", "--threads", 0],
    ["frobnicate"],
])
def test_usage_errors_exit_2(tmp_path, argv):
    if argv == ["frobnicate"]:
        assert run(*argv) == 2
        return
    assert run(*argv, "--out", tmp_path / "x") == 2
    assert not (tmp_path / "x").exists()


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SCE_SEED", "17")
    assert run("gradcheck", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 17
    monkeypatch.setenv("SCE_SEED", "abc")
    assert run("gradcheck", "--out", tmp_path / "y") == 2


def test_config_file_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("SCE_SEED", "3")
    conf = tmp_path / "run.conf"
    conf.write_text("# defaults\nseed = 11\ntests = 2\npredictive = size\nthreads = 1\n")
    assert run("solve", "--config", conf, "--out", tmp_path / "a") == 0
    cfg = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert cfg["seed"] == 11 and cfg["config"]["tests"] == 2
    assert run("solve", "--config", conf, "--seed", 4, "--tests", 3, "--out", tmp_path / "b") == 0
    cfg = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert cfg["seed"] == 4 and cfg["config"]["tests"] == 3
    conf.write_text("bogus = 1\n")
    assert run("solve", "--config", conf, "--out", tmp_path / "c") == 2
    conf.write_text("predictive = positions\n")
    assert run("solve", "--config", conf, "--out", tmp_path / "c") == 2


def test_partial_outputs_removed_on_failure(tmp_path, monkeypatch):
    def broken(path, stats, timing=False):
        path.write_text("partial")
        raise OSError("disk full")

    monkeypatch.setattr(cli, "write_results_csv", broken)
    out = tmp_path / "run"
    assert run("solve", "--predictive", "size", "--tests", 1, "--threads", 1, "--out", out) == 2
    assert not out.exists()


def test_gen_and_solve_from_corpus(tmp_path):
    assert run("gen", "--grid", "easy", "--tests", 2, "--seed", 2, "--out", tmp_path / "c") == 0
    corpus = json.loads((tmp_path / "c" / "corpus.json").read_text())
    assert len(corpus) == 8 and len(list((tmp_path / "c" / "images").glob("*.pgm"))) == 72
    args = ["solve", "--grid", "easy", "--tests", 2, "--seed", 2, "--threads", 1]
    assert run(*args, "--corpus", tmp_path / "c" / "corpus.json", "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    assert run("solve", "--grid", "hard", "--tests", 1, "--corpus", tmp_path / "c" / "corpus.json",
               "--out", tmp_path / "d") == 2


def test_ablate_writes_totals(tmp_path):
    assert run("ablate", "--grid", "easy", "--models", "mcpc,rn", "--tests", 2, "--threads", 1,
               "--out", tmp_path) == 0
    totals = rows(tmp_path / "totals.csv")
    assert [r[0] for r in totals[1:]] == ["mcpc", "rn"]
    assert len(rows(tmp_path / "results.csv")) == 1 + 8


def test_check_mode_exit_codes(tmp_path):
    assert run("gradcheck", "--check", "--out", tmp_path / "g") == 0
    # two tests per condition cannot clear the easy-condition floors at p < 0.001
    assert run("solve", "--grid", "easy", "--tests", 2, "--check", "--threads", 1, "--out", tmp_path / "s") == 1


def test_bench_output(tmp_path):
    assert run("bench", "--tests", 2, "--repeats", 1, "--threads", 1, "--out", tmp_path) == 0
    table = rows(tmp_path / "bench.csv")
    assert table[0][:5] == ["variant", "threads", "num_tests", "seconds", "tests_per_sec"]
    assert [r[0] for r in table[1:]] == ["mcpc", "lstm-cpc"]


def test_anomaly_on_frame_directory(tmp_path, capsys):
    from PIL import Image
    from sce.anomaly import synthetic_break_video
    frames, _ = synthetic_break_video(12, t_break=8, seed=0)
    d = tmp_path / "frames"
    d.mkdir()
    for i, f in enumerate(frames):
        padded = Image.new("L", (64, 94), 255)
        padded.paste(Image.fromarray(f), (0, 30))
        padded.save(d / f"frame_{i}.png")
    assert run("anomaly", "--frames", d, "--pattern", r"frame_(\d+)", "--runs", 1, "--sigma", 1,
               "--onset", 8, "--threads", 1, "--out", tmp_path / "o") == 0
    assert "before onset" in capsys.readouterr().out
    assert len(rows(tmp_path / "o" / "anomaly.csv")) == 1 + 7
