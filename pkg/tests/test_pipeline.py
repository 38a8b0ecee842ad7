import numpy as np
import pytest

from topseg import pipeline
from topseg.features import FrameFeatureMatrix, frame_times
from topseg.labels import DIASTOLE, S1, S2, SYSTOLE
from topseg.pipeline import (PipelineConfig, featurize_recording, inference_view,
                             training_chunks, truth_labels)
from topseg.signal import Recording


@pytest.fixture
def stubbed(monkeypatch):
    """Identity preprocessing and a 'feature' that is the time stamp stored in the signal."""
    monkeypatch.setattr(pipeline, "preprocess", lambda rec, cfg: rec.with_samples(rec.samples, 600.0))

    def fake_extract(rec, cfg):
        T = int(round(rec.duration * cfg.frame_rate))
        idx = np.floor(frame_times(T, cfg.frame_rate) * rec.sample_rate + 1e-6).astype(int)
        return FrameFeatureMatrix(rec.samples[idx][:, None], cfg.frame_rate, rec.id, {"sig": 1})

    monkeypatch.setattr(pipeline, "extract_features", fake_extract)


def clock(seconds):
    """Signal whose value is its own time stamp."""
    n = int(round(seconds * 600))
    return Recording("r", np.arange(n) / 600.0, 600.0)


def test_inference_view_covers_the_recording(stubbed):
    fm = featurize_recording(clock(25.0), PipelineConfig())
    assert fm.meta["n_chunks"] == 3 and fm.meta["full_chunks"] == 2
    assert fm.meta["n_frames"] == 1500 and fm.T == 1800
    X = inference_view(fm)
    assert X.shape == (1500, 1)
    assert np.allclose(X[:, 0], frame_times(1500, 60.0), atol=1 / 600)


def test_training_chunks_align_labels(stubbed):
    fm = featurize_recording(clock(25.0), PipelineConfig())
    intervals = [(0, 12.0, S1), (12.0, 25.0, SYSTOLE)]
    chunks = training_chunks(fm, intervals)
    assert len(chunks) == 2  # trailing 5 s dropped for training
    X1, y1 = chunks[1]
    assert np.allclose(X1[:, 0], 10 + frame_times(600, 60.0), atol=1 / 600)
    assert np.all(y1[X1[:, 0] < 12.0] == S1) and np.all(y1[X1[:, 0] > 12.0] == SYSTOLE)


def test_short_recording_loops_labels(stubbed):
    fm = featurize_recording(clock(4.0), PipelineConfig())
    assert fm.meta["n_frames"] == 240 and fm.T == 600
    (X, y), = training_chunks(fm, [(0, 1.0, S1), (1.0, 2.0, S2), (2.0, 4.0, DIASTOLE)])
    # features and labels both wrap around every 4 s
    assert np.allclose(X[240:480, 0], X[:240, 0])
    assert np.array_equal(y[240:480], y[:240]) and np.array_equal(y[480:], y[:120])
    assert y[:60].tolist() == [S1] * 60


def test_truth_labels_length():
    assert len(truth_labels([(0, 2.5, S1)], 2.5, 60.0)) == 150
