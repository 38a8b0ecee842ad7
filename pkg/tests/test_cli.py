import shutil

import numpy as np
import pytest

from topseg.cli import main
from topseg.labels import labels_from_intervals, read_intervals
from topseg.signal import load_wav

FAST = """
[decoder]
channels = 8
epochs = 3
[run]
jobs = 1
"""


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Four short synthetic recordings with a warm feature cache."""
    root = tmp_path_factory.mktemp("corpus")
    data = root / "data"
    assert main(["synth", "--out-dir", str(data), "--n", "4", "--seed", "3", "--duration", "6"]) == 0
    cfg = root / "fast.ini"
    cfg.write_text(FAST)
    assert main(["extract", "--data-dir", str(data), "--cache-dir", str(root / "cache"),
                 "--config", str(cfg)]) == 0
    return root, data, root / "cache", cfg


def test_synth_layout_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["synth", "--out-dir", str(d), "--n", "2", "--seed", "5", "--duration", "3"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["manifest.csv", "synth000.txt", "synth000.wav", "synth001.txt", "synth001.wav"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    rec = load_wav(a / "synth000.wav")
    assert rec.sample_rate == 2000 and len(rec) == 6000
    assert read_intervals(a / "synth000.txt")[0][0] == 0.0


def test_extract_empty_dir(tmp_path, capsys):
    assert main(["extract", "--data-dir", str(tmp_path), "--cache-dir", str(tmp_path / "c")]) == 0
    assert "0 recordings" in capsys.readouterr().out


def test_extract_warm_cache_and_partial_failure(corpus, tmp_path):
    root, data, cache, cfg = corpus
    stamps = {p.name: p.stat().st_mtime_ns for p in cache.glob("*.tseg")}
    assert len(stamps) == 4
    assert main(["extract", "--data-dir", str(data), "--cache-dir", str(cache), "--config", str(cfg)]) == 0
    assert stamps == {p.name: p.stat().st_mtime_ns for p in cache.glob("*.tseg")}
    # a corrupt file next to good ones: good ones still processed, exit 1
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    shutil.copy(data / "synth000.wav", mixed / "good.wav")
    (mixed / "bad.wav").write_bytes(b"RIFF....WAVEjunk")
    shutil.copy(cache / "calibration.json", tmp_path / "calibration.json")
    mixed_cache = tmp_path
    assert main(["extract", "--data-dir", str(mixed), "--cache-dir", str(mixed_cache),
                 "--config", str(cfg)]) == 1
    assert (mixed_cache / "good.tseg").exists() and not (mixed_cache / "bad.tseg").exists()


def test_train_segment_eval(corpus, tmp_path):
    root, data, cache, cfg = corpus
    model = tmp_path / "m.tsegm"
    args = ["--data-dir", str(data), "--cache-dir", str(cache), "--config", str(cfg)]
    assert main(["train", *args, "--model", str(model), "--budget", "50", "--seed", "1"]) == 0
    first = model.read_bytes()
    assert main(["train", *args, "--model", str(model), "--budget", "50", "--seed", "1"]) == 0
    assert model.read_bytes() == first
    log = model.with_suffix(".log").read_text()
    assert "best_epoch=" in log and "epoch 0 train_loss" in log

    out_ref, out_raw = tmp_path / "ref", tmp_path / "raw"
    assert main(["segment", *args, "--model", str(model), "--out-dir", str(out_ref)]) == 0
    assert main(["segment", *args, "--model", str(model), "--out-dir", str(out_raw), "--no-refine"]) == 0
    post_ref = np.loadtxt(out_ref / "synth000.post")
    post_raw = np.loadtxt(out_raw / "synth000.post")
    assert post_ref.shape == (360, 8) and post_raw.shape == (360, 4)
    assert np.array_equal(post_ref[:, :4], post_raw)  # refinement is the only difference
    assert np.allclose(post_ref[:, 4:].sum(axis=1), 1.0, atol=1e-6)
    iv = read_intervals(out_ref / "synth000.txt")
    lab = labels_from_intervals(iv, 60.0, 360)
    assert len(lab) == 360 and iv[-1][1] == pytest.approx(6.0)

    metrics = tmp_path / "m.txt"
    assert main(["eval", "--pred-dir", str(out_ref), "--truth-dir", str(data),
                 "--metrics-file", str(metrics)]) == 0
    kv = dict(line.split("=", 1) for line in metrics.read_text().splitlines())
    assert 0.0 <= float(kv["macro_f1"]) <= 1.0 and kv["n_recordings"] == "4"


def test_eval_identity_and_tolerance(corpus, tmp_path):
    _, data, _, _ = corpus
    m = tmp_path / "id.txt"
    assert main(["eval", "--pred-dir", str(data), "--truth-dir", str(data), "--metrics-file", str(m)]) == 0
    assert "macro_f1=1.000000" in m.read_text().splitlines()

    shifted = tmp_path / "shifted"
    shifted.mkdir()
    for p in data.glob("*.txt"):
        iv = read_intervals(p)
        shifted.joinpath(p.name).write_text(
            "".join(f"{min(a + 0.03, 6.0)} {min(b + 0.03, 6.0)} {k + 1}\n" for a, b, k in iv))
    f = {}
    for tol in ("0", "0.060"):
        out = tmp_path / f"t{tol}.txt"
        assert main(["eval", "--pred-dir", str(shifted), "--truth-dir", str(data), "--tol", tol,
                     "--metrics-file", str(out)]) == 0
        f[tol] = float(dict(l.split("=") for l in out.read_text().splitlines())["macro_f1"])
    assert f["0"] <= f["0.060"]


def test_eval_id_mismatches(corpus, tmp_path):
    _, data, _, _ = corpus
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["eval", "--pred-dir", str(empty), "--truth-dir", str(data)]) == 2
    partial = tmp_path / "partial"
    partial.mkdir()
    shutil.copy(data / "synth000.txt", partial / "synth000.txt")
    shutil.copy(data / "synth000.txt", partial / "stray.txt")
    assert main(["eval", "--pred-dir", str(partial), "--truth-dir", str(data),
                 "--metrics-file", str(tmp_path / "x.txt")]) == 1


def test_error_exits(corpus, tmp_path, capsys):
    _, data, cache, cfg = corpus
    assert main(["segment", "--data-dir", str(data), "--cache-dir", str(cache),
                 "--model", str(tmp_path / "missing.tsegm"), "--out-dir", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err
    nolab = tmp_path / "nolab"
    nolab.mkdir()
    shutil.copy(data / "synth000.wav", nolab / "x.wav")
    assert main(["train", "--data-dir", str(nolab), "--cache-dir", str(cache)]) == 2
    assert main(["train", "--data-dir", str(data), "--budget", "0"]) == 2
    assert main(["extract", "--data-dir", str(tmp_path / "absent")]) == 2


def test_cli_flags_override_config(corpus, tmp_path):
    root, data, cache, _ = corpus
    cfg = tmp_path / "c.ini"
    cfg.write_text(FAST + f"model = {tmp_path / 'from_file.tsegm'}\nbudget = 50\n")
    assert main(["train", "--data-dir", str(data), "--cache-dir", str(cache), "--config", str(cfg),
                 "--model", str(tmp_path / "from_flag.tsegm")]) == 0
    assert (tmp_path / "from_flag.tsegm").exists() and not (tmp_path / "from_file.tsegm").exists()
    assert "budget=50" in (tmp_path / "from_flag.log").read_text()
