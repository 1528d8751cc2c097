import numpy as np
import pytest

from gridcast import autodiff as ad
from gridcast.errors import HeadDivisibility, SingularSystem, TooFewSamples
from gridcast.ingest import SplitDataset
from gridcast.models import (ModelSpec, PersistenceModel, build_model, linreg_fit, linreg_predict,
                             load_checkpoint, persistence_forecast, save_checkpoint)
from gridcast.models.neural import LSTMLayer, causal_mask, sinusoidal_encoding
from gridcast.errors import CheckpointFormatError
from gridcast.synthetic import make_periodic_dataset
from gridcast.windows import enumerate_samples

from conftest import hourly


def test_mlp_parameter_count():
    for h in (24, 96, 720):
        m = build_model(ModelSpec("mlp", "global", 168, h), 0)
        expected = 177 * 1024 + 1024 + 1024 * 1024 + 1024 + 1024 * h + h
        assert m.n_parameters() == expected


def test_mlp_zero_weights_give_zero_output():
    m = build_model(ModelSpec("mlp", "local", 168, 24, hidden=8), 0)
    for p in m.parameters():
        p.data[...] = 0.0
    y = m(np.random.default_rng(0).normal(size=(4, 177)))
    assert y.shape == (4, 24, 1)
    np.testing.assert_array_equal(y.data, 0.0)


def test_lstm_gate_semantics():
    # forget gate pinned to 1 and input gate to 0: the cell state never changes
    rng = np.random.default_rng(0)
    layer = LSTMLayer(3, 4, rng)
    H = 4
    layer.bias.data[:H] = -1e3        # input gate -> 0
    layer.bias.data[H:2 * H] = 1e3    # forget gate -> 1
    c0 = rng.normal(size=(2, H))
    h0 = np.zeros((2, H))
    x = rng.normal(size=(2, 6, 3))
    _, cells = layer(x, state=(h0, c0), return_cells=True)
    for t in range(6):
        np.testing.assert_allclose(cells.data[:, t], c0, atol=1e-12)


def test_lstm_manual_single_step():
    rng = np.random.default_rng(1)
    layer = LSTMLayer(2, 3, rng)
    x = rng.normal(size=(1, 1, 2))
    z = x[0, 0] @ layer.w_x.data + layer.bias.data
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:3]), sig(z[3:6]), np.tanh(z[6:9]), sig(z[9:])
    c = i * g
    h = o * np.tanh(c)
    out = layer(x)
    np.testing.assert_allclose(out.data[0, 0], h, rtol=1e-12)


def test_lstm_and_transformer_shapes():
    for strategy, d_out in (("global", 1), ("multivariate", 5)):
        lstm = build_model(ModelSpec("lstm", strategy, 12, 4, n_clients=5), 0)
        enc = np.zeros((2, 12, lstm.spec.input_size))
        assert lstm(enc).shape == (2, 4, d_out)
        tr = build_model(ModelSpec("transformer", strategy, 12, 4, n_clients=5, d_model=8, heads=2,
                                   layers=1), 0)
        dec = np.zeros((2, 4, tr.spec.input_size))
        assert tr(enc, dec).shape == (2, 4, d_out)


def test_head_divisibility():
    with pytest.raises(HeadDivisibility):
        ModelSpec("transformer", "global", 10, 2, d_model=10, heads=3)


def test_univariate_families_reject_multivariate():
    for fam in ("persistence", "linreg", "mlp"):
        with pytest.raises(ValueError):
            ModelSpec(fam, "multivariate", 168, 24)


def test_causal_mask():
    m = causal_mask(3)
    assert m[0, 1] == -np.inf and m[1, 0] == 0 and m[2, 2] == 0


def test_sinusoidal_encoding():
    pe = sinusoidal_encoding(10, 8)
    np.testing.assert_allclose(pe[0, 0::2], 0.0)
    np.testing.assert_allclose(pe[0, 1::2], 1.0)


def test_encoder_permutation_equivariance_without_positions():
    spec = ModelSpec("transformer", "global", 6, 3, d_model=8, heads=2, layers=1,
                     positional="none", dropout=0.0)
    m = build_model(spec, 0).eval()
    rng = np.random.default_rng(2)
    enc = rng.normal(size=(2, 6, spec.input_size))
    dec = rng.normal(size=(2, 3, spec.input_size))
    perm = rng.permutation(6)
    with ad.no_grad():
        a = m(enc, dec).data
        b = m(enc[:, perm], dec).data
        mem_a = m.encode(ad.Tensor(enc)).data
        mem_b = m.encode(ad.Tensor(enc[:, perm])).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(mem_a[:, perm], mem_b, atol=1e-12)


def test_causal_decoder_ignores_future_positions():
    spec = ModelSpec("transformer", "global", 6, 4, d_model=8, heads=2, layers=1,
                     causal_decoder=True, dropout=0.0)
    m = build_model(spec, 0).eval()
    rng = np.random.default_rng(3)
    enc = rng.normal(size=(1, 6, spec.input_size))
    dec = rng.normal(size=(1, 4, spec.input_size))
    dec2 = dec.copy()
    dec2[:, 3] += 5.0
    with ad.no_grad():
        a, b = m(enc, dec).data, m(enc, dec2).data
    np.testing.assert_allclose(a[:, :3], b[:, :3], atol=1e-12)
    assert not np.allclose(a[:, 3], b[:, 3])


def test_direct_multi_step_single_pass():
    spec = ModelSpec("transformer", "global", 6, 5, d_model=8, heads=2, layers=1, dropout=0.0)
    m = build_model(spec, 0).eval()
    rng = np.random.default_rng(4)
    enc = rng.normal(size=(1, 6, spec.input_size))
    dec = np.zeros((1, 5, spec.input_size))
    with ad.no_grad():
        y = m(enc, dec)
    assert y.shape == (1, 5, 1)


def test_persistence_on_periodic_series_is_exact():
    ds = make_periodic_dataset(n_clients=2, n_weeks=6)
    split = SplitDataset(ds, int(0.7 * ds.n_hours), int(0.8 * ds.n_hours))
    F = np.zeros((ds.n_hours, 9))
    spec = ModelSpec("persistence", "local", 168, 24)
    test = enumerate_samples(spec.window, "test", split, F)
    pred = PersistenceModel(spec).predict(test, np.arange(len(test)))
    np.testing.assert_array_equal(pred, test.targets())


def test_persistence_forecast_function():
    s = np.arange(1000.0)
    np.testing.assert_array_equal(persistence_forecast(s, 500, 3, 168), s[333:336])
    with pytest.raises(ValueError):
        persistence_forecast(s, 500, 200, 168)
    assert ModelSpec("persistence", "local", 168, 720).lag == 720
    assert ModelSpec("persistence", "local", 168, 96).lag == 168


def test_linreg_matches_pinv():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 20))
    Y = rng.normal(size=(500, 4))
    W = linreg_fit(X, Y, ridge=0.0)
    Xb = np.hstack([X, np.ones((500, 1))])
    np.testing.assert_allclose(W, np.linalg.pinv(Xb) @ Y, atol=1e-10)


def test_linreg_recovers_planted_model():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 10))
    W_true = rng.normal(size=(11, 3))
    Y = np.hstack([X, np.ones((400, 1))]) @ W_true
    W = linreg_fit(X, Y)
    np.testing.assert_allclose(W, W_true, atol=1e-6)
    np.testing.assert_allclose(linreg_predict(W, X), Y, atol=1e-6)


def test_linreg_errors():
    rng = np.random.default_rng(2)
    with pytest.raises(TooFewSamples):
        linreg_fit(rng.normal(size=(5, 10)), rng.normal(size=(5, 2)))
    X = rng.normal(size=(50, 3))
    X = np.hstack([X, X[:, :1]])
    with pytest.raises(SingularSystem):
        linreg_fit(X, rng.normal(size=(50, 1)), ridge=0.0)
    linreg_fit(X, rng.normal(size=(50, 1)), ridge=1e-6)


def test_linreg_model_on_windows(prepared):
    split, _, F = prepared
    spec = ModelSpec("linreg", "local", 48, 6)
    train = enumerate_samples(spec.window, "train", split, F).partition()
    model = build_model(spec)
    part = next(iter(train.values()))
    model.fit(part)
    X = part.lagged_inputs(np.arange(len(part)), 48)
    W = linreg_fit(X, part.targets()[..., 0])
    np.testing.assert_allclose(model.weights, W, atol=1e-8)
    assert model.weights.shape == (48 + 9 + 1, 6)


@pytest.mark.parametrize("family", ["mlp", "lstm", "transformer", "linreg"])
def test_checkpoint_round_trip(tmp_path, prepared, family):
    split, _, F = prepared
    kwargs = dict(hidden=8) if family in ("mlp", "lstm") else {}
    if family == "transformer":
        kwargs = dict(d_model=8, heads=2, layers=1)
    spec = ModelSpec(family, "global", 24, 6, n_clients=3, **kwargs)
    model = build_model(spec, 5)
    samples = enumerate_samples(spec.window, "test", split, F)
    if family == "linreg":
        model.fit(enumerate_samples(spec.window, "train", split, F))
    save_checkpoint(tmp_path / "ck", spec, model.state_dict(), seed=5)
    spec2, state, manifest = load_checkpoint(tmp_path / "ck")
    assert spec2 == spec and manifest["seed"] == 5
    clone = build_model(spec2, 99)
    clone.load_state_dict(state)
    idx = np.arange(10)
    assert np.array_equal(model.predict(samples, idx), clone.predict(samples, idx))


def test_checkpoint_bad_magic(tmp_path):
    spec = ModelSpec("mlp", "global", 24, 6, hidden=4)
    save_checkpoint(tmp_path / "ck", spec, build_model(spec, 0).state_dict())
    blob = tmp_path / "ck.bin"
    raw = bytearray(blob.read_bytes())
    raw[:8] = b"NOTMAGIC"
    blob.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "ck")


def test_same_seed_same_init():
    spec = ModelSpec("transformer", "global", 12, 4, d_model=8, heads=2, layers=1)
    a, b = build_model(spec, 7).state_dict(), build_model(spec, 7).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = build_model(spec, 8).state_dict()
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_mlp_single_sample_overfit():
    from gridcast.benchmarks import memorization_batch, memorize
    spec = ModelSpec("mlp", "global", 168, 24, dropout=0.0)
    r = memorize(spec, memorization_batch(spec, 1), 1e-4, max_steps=2000, threshold=1e-6)
    assert r.reached, r
