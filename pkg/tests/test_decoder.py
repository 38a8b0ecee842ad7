import numpy as np
import pytest

from topseg.decoder import (Decoder, DecoderConfig, forward_logits, grad_check, init_params,
                            load_model, loss_and_grad, save_model, train)
from topseg.errors import CacheInvalidError, ConfigError, ModelInputError, TrainingError

SMALL_TCN = DecoderConfig(arch="tcn", channels=6, blocks=3, dilations=(1, 2, 4), seed=3)
SMALL_MLP = DecoderConfig(arch="mlp", mlp_hidden=8, seed=3)


def identity_model(cfg, params, D):
    return Decoder(cfg, params, np.zeros(D), np.ones(D))


def test_receptive_field():
    assert DecoderConfig().receptive_field == 31
    assert DecoderConfig(arch="mlp").receptive_field == 1


def test_config_validation():
    with pytest.raises(ConfigError):
        DecoderConfig(arch="rnn")
    with pytest.raises(ConfigError):
        DecoderConfig(blocks=2, dilations=(1, 2, 4))
    with pytest.raises(ConfigError):
        DecoderConfig(kernel=4)


@pytest.mark.parametrize("cfg", [SMALL_TCN, SMALL_MLP])
def test_zero_parameters_give_uniform_posteriors(cfg, rng):
    params = {k: np.zeros_like(v) for k, v in init_params(cfg, 5).items()}
    P = identity_model(cfg, params, 5).forward(rng.standard_normal((20, 5))).P
    assert np.allclose(P, 0.25)


@pytest.mark.parametrize("cfg", [SMALL_TCN, SMALL_MLP])
def test_rows_on_simplex(cfg, rng):
    m = identity_model(cfg, init_params(cfg, 5), 5)
    P = m.forward(100 * rng.standard_normal((50, 5))).P
    assert np.all(P >= 0) and np.allclose(P.sum(axis=1), 1, atol=1e-6)


def test_mlp_permutation_equivariance(rng):
    m = identity_model(SMALL_MLP, init_params(SMALL_MLP, 4), 4)
    X = rng.standard_normal((30, 4))
    perm = rng.permutation(30)
    assert np.array_equal(m.forward(X[perm]).P, m.forward(X).P[perm])


def test_tcn_shift_equivariance_and_receptive_field(rng):
    cfg = DecoderConfig(channels=5, seed=1)
    m = identity_model(cfg, init_params(cfg, 3), 3)
    X = rng.standard_normal((120, 3))
    base = m.forward(X).P
    shifted = m.forward(np.roll(X, 7, axis=0)).P
    half = cfg.receptive_field // 2
    assert np.allclose(shifted[7 + half: -half], base[half: -half - 7], atol=1e-12)
    # a single-frame perturbation reaches exactly +-15 frames
    X2 = X.copy()
    X2[60] += 1.0
    changed = np.flatnonzero(np.any(np.abs(m.forward(X2).P - base) > 0, axis=1))
    assert changed.min() == 60 - half and changed.max() == 60 + half


@pytest.mark.parametrize("cfg", [SMALL_TCN, SMALL_MLP])
def test_gradient_check_random_init(cfg, rng):
    params = init_params(cfg, 7)
    for k in params:
        if k.startswith("b"):
            params[k] = 0.1 * rng.standard_normal(params[k].shape)
    errs = grad_check(params, rng.standard_normal((24, 7)), rng.integers(0, 4, 24), cfg)
    assert set(errs) == {"conv", "bias", "head"}
    assert max(errs.values()) < 1e-3


def test_gradient_at_zero_parameters(rng):
    cfg = SMALL_MLP
    params = {k: np.zeros_like(v) for k, v in init_params(cfg, 4).items()}
    y = rng.integers(0, 4, 10)
    _, g, _ = loss_and_grad(params, rng.standard_normal((10, 4)), y, cfg)
    # at uniform posteriors the head bias gradient is sum_t (1/4 - onehot)
    assert np.allclose(g["b2"], 10 * 0.25 - np.bincount(y, minlength=4))
    assert max(grad_check(params, rng.standard_normal((10, 4)), y, cfg).values()) < 1e-3


def test_grad_check_size_limit(rng):
    with pytest.raises(ValueError):
        grad_check(init_params(SMALL_MLP, 20), rng.standard_normal((10, 20)), np.zeros(10, int), SMALL_MLP)


def separable_toy(rng, n=400):
    y = rng.integers(0, 4, n)
    centers = np.array([[2, 0], [0, 2], [-2, 0], [0, -2]], float)
    X = centers[y] + rng.uniform(-0.45, 0.45, (n, 2))
    return X, y


def test_separable_toy_is_learned(rng):
    X, y = separable_toy(rng)
    cfg = DecoderConfig(arch="mlp", mlp_hidden=16, epochs=200, lr=0.05, seed=0)
    m = train([(X, y)], cfg)
    acc = np.mean(m.forward(X).P.argmax(axis=1) == y)
    assert acc >= 0.99


def test_training_is_deterministic(rng):
    X, y = separable_toy(rng, 120)
    cfg = DecoderConfig(arch="tcn", channels=8, epochs=5, seed=4)
    a = train([(X, y), (X[::-1], y[::-1])], cfg)
    b = train([(X, y), (X[::-1], y[::-1])], cfg)
    assert a.info["train_loss"] == b.info["train_loss"]
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_single_recording_overfit(rng):
    T = 200
    y = (np.arange(T) // 10) % 4
    X = rng.standard_normal((T, 6)) + np.eye(4)[y] @ rng.standard_normal((4, 6))
    cfg = DecoderConfig(channels=16, epochs=300, lr=0.05, weight_decay=0.0, seed=0)
    m = train([(X, y)], cfg)
    P = m.forward(X).P
    ce = -np.mean(np.log(P[np.arange(T), y]))
    assert ce < 0.1


def test_early_stopping_records_best_epoch(rng):
    X, y = separable_toy(rng, 100)
    noise = (rng.standard_normal((100, 2)), rng.integers(0, 4, 100))
    cfg = DecoderConfig(arch="mlp", mlp_hidden=32, epochs=300, lr=0.1, patience=10, seed=0)
    m = train([(X, rng.permutation(y))], cfg, validation=[noise])
    assert m.info["epochs_run"] < 300
    assert m.info["best_epoch"] == int(np.argmin(m.info["val_loss"]))
    assert m.info["epochs_run"] == m.info["best_epoch"] + 1 + cfg.patience


def test_training_errors(rng):
    X = rng.standard_normal((10, 3))
    X[0, 0] = np.nan
    with pytest.raises(TrainingError):
        train([(X, np.zeros(10, int))], DecoderConfig(arch="mlp", epochs=2))
    with pytest.raises(TrainingError):
        train([], DecoderConfig())
    with pytest.raises(ModelInputError):
        train([(np.zeros((5, 3)), np.zeros(5, int)), (np.zeros((5, 4)), np.zeros(5, int))],
              DecoderConfig(arch="mlp"))


def test_width_mismatch(rng):
    m = identity_model(SMALL_MLP, init_params(SMALL_MLP, 4), 4)
    with pytest.raises(ModelInputError):
        m.forward(np.zeros((3, 5)))


@pytest.mark.parametrize("cfg", [SMALL_TCN, SMALL_MLP])
def test_model_file_round_trip(cfg, rng, tmp_path):
    X, y = separable_toy(rng, 60)
    m = train([(X, y)], DecoderConfig(**{**cfg.__dict__, "epochs": 2}))
    save_model(m, tmp_path / "m.tsegm")
    back = load_model(tmp_path / "m.tsegm")
    assert np.array_equal(back.forward(X).P, m.forward(X).P)
    save_model(back, tmp_path / "m2.tsegm")
    assert (tmp_path / "m.tsegm").read_bytes() == (tmp_path / "m2.tsegm").read_bytes()
    raw = (tmp_path / "m.tsegm").read_bytes()
    (tmp_path / "bad.tsegm").write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(CacheInvalidError):
        load_model(tmp_path / "bad.tsegm")
    (tmp_path / "short.tsegm").write_bytes(raw[:-16])
    with pytest.raises(CacheInvalidError):
        load_model(tmp_path / "short.tsegm")
