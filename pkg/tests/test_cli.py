import json
import subprocess
import sys

import numpy as np
import pytest

from blurkit.cli import main, parse_intervals
from blurkit.dataset import ClipManifest, load_task
from blurkit.errors import ConfigurationError
from blurkit.imageio import write_png

CORPUS = {"height": 16, "width": 16, "present_targets": [2, 4], "present_frames_per_target": [1]}
DENOISER = {"height": 16, "width": 16, "patch": 4, "dim": 32, "depth": 1, "heads": 2,
            "encoder": {"out_dim": 32, "max_frames": 8}}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def tree_bytes(root, exclude=("config.json",)):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in exclude}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_json(root / "gen.json", {"n": 3, "corpus": CORPUS})
    assert main(["gen-data", "--config", cfg, "--seed", "5", "--out", str(root / "corpus")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(corpus):
    cfg = write_json(corpus / "train.json", {"denoiser": DENOISER, "train": {"batch_size": 2}})
    out = corpus / "run"
    assert main(["train", "--config", cfg, "--corpus", str(corpus / "corpus"), "--steps", "3",
                 "--out", str(out)]) == 0
    return out


def make_clip(root, n, fps=240.0, color_space="srgb"):
    rng = np.random.default_rng(0)
    names = []
    for i in range(n):
        names.append(f"{i:04d}.png")
        write_png(root / names[-1], rng.random((8, 8, 3)))
    ClipManifest(root, fps, names, color_space).save()
    return root


class TestGenData:
    def test_layout(self, corpus):
        index = json.loads((corpus / "corpus" / "index.json").read_text())
        assert len(index["tasks"]) == 3
        t = load_task(corpus / "corpus" / index["tasks"][0]["dir"])
        assert t.targets is not None and (corpus / "corpus" / "config.json").is_file()

    def test_same_seed_same_index(self, corpus, tmp_path):
        snap = str(corpus / "corpus" / "config.json")
        assert main(["gen-data", "--config", snap, "--out", str(tmp_path / "again")]) == 0
        assert tree_bytes(corpus / "corpus") == tree_bytes(tmp_path / "again")

    def test_single_task(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"n": 1, "corpus": CORPUS})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "one")]) == 0
        assert len(list((tmp_path / "one" / "tasks").iterdir())) == 1

    def test_bad_mix_exit_2(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path / "x"), "--mode", "0.5,0.5,0.5"]) == 2
        assert "mode_mix" in capsys.readouterr().err

    def test_unknown_key_exit_2(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"n": 1, "colour": "red"})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        cfg = write_json(tmp_path / "d.json", {"n": 1, "corpus": {"hieght": 3}})
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "y")]) == 2


class TestMakeBlur:
    def test_present(self, tmp_path):
        clip = make_clip(tmp_path / "clip", 16)
        assert main(["make-blur", "--clip", str(clip), "--out", str(tmp_path / "t")]) == 0
        task = load_task(tmp_path / "t")
        assert task.n_frames == 16 and task.fps_native == 240.0
        assert task.intervals[0].start == -0.5 and task.intervals[-1].end == 0.5

    def test_linear_clip(self, tmp_path):
        clip = make_clip(tmp_path / "clip", 4, color_space="linear")
        assert main(["make-blur", "--clip", str(clip), "--n-targets", "2", "--out", str(tmp_path / "t")]) == 0
        task = load_task(tmp_path / "t")
        assert task.color_space == "linear"
        # linear data is averaged directly: blur equals the plain mean of the 8-bit frames
        frames = np.stack([np.asarray(task.targets[0]), np.asarray(task.targets[1])])
        np.testing.assert_allclose(task.blur, frames.mean(axis=0), atol=1 / 255)

    def test_dead_time_too_short(self, tmp_path):
        clip = make_clip(tmp_path / "clip", 7)
        assert main(["make-blur", "--clip", str(clip), "--mode", "long_blur",
                     "--out", str(tmp_path / "t")]) == 2

    def test_missing_manifest_runtime_error(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["make-blur", "--clip", str(tmp_path / "empty"), "--out", str(tmp_path / "t")]) == 1


class TestTrain:
    def test_outputs(self, trained):
        lines = (trained / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert set(json.loads(lines[0])) == {"step", "loss", "lr", "dropout_draws_hash"}
        assert (trained / "model.ckpt").is_file()

    def test_reproducible(self, trained, tmp_path):
        assert main(["train", "--config", str(trained / "config.json"), "--out", str(tmp_path / "r")]) == 0
        assert tree_bytes(trained) == tree_bytes(tmp_path / "r")

    def test_resume_continues_counter(self, trained, corpus, tmp_path):
        out = tmp_path / "resumed"
        assert main(["train", "--corpus", str(corpus / "corpus"), "--resume", str(trained / "model.ckpt"),
                     "--steps", "2", "--out", str(out)]) == 0
        steps = [json.loads(x)["step"] for x in (out / "train_log.jsonl").read_text().splitlines()]
        assert steps == [3, 4]

    def test_missing_corpus(self, tmp_path):
        assert main(["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
                     "--config", write_json(tmp_path / "c.json", {"denoiser": DENOISER})]) == 2


class TestSample:
    def run(self, trained, corpus, out, *extra):
        blur = corpus / "corpus" / "tasks" / "00000" / "blur.png"
        return main(["sample", "--checkpoint", str(trained / "model.ckpt"), "--blur", str(blur),
                     "--steps", "4", "--out", str(out), *extra])

    def test_four_frames(self, trained, corpus, tmp_path):
        ivs = "[[-0.5,-0.25],[-0.25,0],[0,0.25],[0.25,0.5]]"
        assert self.run(trained, corpus, tmp_path / "s", "--intervals", ivs, "--grid") == 0
        assert len(list((tmp_path / "s" / "frames").glob("*.png"))) == 4
        assert (tmp_path / "s" / "grid.png").is_file()
        meta = json.loads((tmp_path / "s" / "task.json").read_text())
        assert meta["intervals"] == [[-0.5, -0.25], [-0.25, 0.0], [0.0, 0.25], [0.25, 0.5]]

    def test_reproducible(self, trained, corpus, tmp_path):
        assert self.run(trained, corpus, tmp_path / "a", "--intervals", "[[-1,0],[0,1]]", "--seed", "3") == 0
        assert main(["sample", "--config", str(tmp_path / "a" / "config.json"), "--out", str(tmp_path / "b")]) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_interval_file(self, trained, corpus, tmp_path):
        f = write_json(tmp_path / "iv.json", {"intervals": [[-0.5, 0.5]]})
        assert self.run(trained, corpus, tmp_path / "s", "--intervals", f) == 0

    def test_bad_interval_names_pair(self, trained, corpus, tmp_path, capsys):
        assert self.run(trained, corpus, tmp_path / "s", "--intervals", "[[-0.5,0],[0.3,0.1]]") == 2
        assert "#1" in capsys.readouterr().err


class TestEval:
    def test_identity_and_reversed(self, corpus, tmp_path):
        gt = corpus / "corpus"
        assert main(["eval", "--pred", str(gt), "--gt", str(gt), "--out", str(tmp_path / "e")]) == 0
        report = json.loads((tmp_path / "e" / "report.json").read_text())
        assert report["aggregates"]["psnr_p"] == 100.0
        assert (tmp_path / "e" / "report.csv").is_file()
        # reversed predictions: copy one task with its frames in reverse order
        t = load_task(gt / "tasks" / "00000")
        rev = tmp_path / "rev" / "00000"
        for i, fr in enumerate(t.targets[::-1]):
            write_png(rev / "frames" / f"{i:03d}.png", fr)
        (rev / "task.json").write_text(json.dumps({"intervals": [iv.as_pair() for iv in t.intervals]}))
        assert main(["eval", "--pred", str(rev), "--gt", str(gt / "tasks" / "00000"),
                     "--out", str(tmp_path / "r")]) == 0
        assert json.loads((tmp_path / "r" / "report.json").read_text())["aggregates"]["psnr_p"] == 100.0

    def test_reproducible(self, corpus, tmp_path):
        gt = str(corpus / "corpus")
        assert main(["eval", "--pred", gt, "--gt", gt, "--patch", "2", "--out", str(tmp_path / "a")]) == 0
        assert main(["eval", "--config", str(tmp_path / "a" / "config.json"), "--out", str(tmp_path / "b")]) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_mismatched_counts(self, corpus, tmp_path):
        gt = corpus / "corpus"
        assert main(["eval", "--pred", str(gt / "tasks" / "00000"), "--gt", str(gt),
                     "--out", str(tmp_path / "e")]) == 2


def test_parse_intervals():
    assert parse_intervals("[[0, 1], [1, 2]]") == [(0.0, 1.0), (1.0, 2.0)]
    for bad in ("[]", "[[0]]", "[[1, 0]]", "not json", '[["a", 1]]'):
        with pytest.raises(ConfigurationError):
            parse_intervals(bad)


def test_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "blurkit.cli", "--version"], capture_output=True, text=True)
    assert ok.returncode == 0 and "blurkit" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "blurkit.cli", "gen-data", "--out", str(tmp_path / "x"),
                          "--mode", "1,1,1"], capture_output=True, text=True)
    assert bad.returncode == 2
