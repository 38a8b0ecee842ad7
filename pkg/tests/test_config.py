import pytest

from topseg.config import CACHE_ENV, load_config
from topseg.errors import ConfigError


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


def test_defaults_without_file():
    run = load_config(None)
    assert run.pipeline.features.d_topo == 3840
    assert run.pipeline.refine.n_iter == 8
    assert run.paths.budget == 100.0


def test_sections_are_applied(tmp_path):
    p = write(tmp_path, """
[preprocess]
filter_order = 6
[features]
K = 3
q = 0.9
[scales.Meso]
dim = 11
[refine]
lambda = 0.03
lambda_s = 0.005
min_duration.S1 = 0.06
[decoder]
arch = mlp
dilations = 1, 2, 4, 8
epochs = 7
[run]
budget = 10
seed = 3
""")
    run = load_config(p)
    pipe = run.pipeline
    assert pipe.preprocess.filter_order == 6
    assert pipe.features.K == 3 and pipe.features.q == 0.9
    assert pipe.features.scale("Meso").dim == 11
    assert pipe.features.scale("Fine").dim == 11  # untouched default
    assert pipe.refine.lam == 0.03 and pipe.refine.lambda_s == 0.005
    assert pipe.refine.min_durations["S1"] == 0.06
    assert pipe.refine.min_durations["diastole"] == 0.15
    assert pipe.decoder.arch == "mlp" and pipe.decoder.epochs == 7
    assert pipe.decoder.dilations == (1, 2, 4, 8)
    assert (run.paths.budget, run.paths.seed) == (10.0, 3)


@pytest.mark.parametrize("text", [
    "[features]\nZ = 1\n",
    "[nonsense]\na = 1\n",
    "[scales.Huge]\ndim = 3\n",
    "[features]\nK = many\n",
    "[refine]\nmin_duration.S3 = 0.1\n",
    "[features]\nq = 2.0\n",
])
def test_bad_files(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_cache_dir_resolution(tmp_path, monkeypatch):
    run = load_config(write(tmp_path, f"[run]\ndata_dir = {tmp_path}\n"))
    monkeypatch.delenv(CACHE_ENV, raising=False)
    assert run.paths.resolved_cache_dir() == tmp_path / "cache"
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "env"))
    assert run.paths.resolved_cache_dir() == tmp_path / "env"
