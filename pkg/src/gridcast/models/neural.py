"""Trainable forecasters: MLP, stacked LSTM and encoder-decoder Transformer.

All three produce the full ``h``-step forecast in a single forward pass and
return a ``(B, h, d_out)`` tensor.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import HeadDivisibility
from .base import LayerNorm, Linear, Module, glorot_uniform
from .spec import ModelSpec


class NeuralModel(Module):
    trainable = True

    def __init__(self, spec: ModelSpec, seed=0):
        self.spec = spec
        self.seed = seed
        # dropout stream, reseeded by the trainer
        self.rng = np.random.default_rng(seed)

    def inputs(self, samples, idx):
        enc, dec, _ = samples.batch(idx)
        return enc, dec

    def forward(self, *inputs):
        raise NotImplementedError

    def __call__(self, *inputs):
        return self.forward(*inputs)

    def predict(self, samples, idx, batch_size=512):
        idx = np.asarray(idx, dtype=np.int64)
        was_training = self.training
        self.eval()
        out = []
        with ad.no_grad():
            for start in range(0, len(idx), batch_size):
                out.append(self.forward(*self.inputs(samples, idx[start:start + batch_size])).data)
        self.train(was_training)
        if not out:
            return np.zeros((0, self.spec.horizon, self.spec.output_size))
        return np.concatenate(out)


class MLP(NeuralModel):
    """Two ReLU hidden layers on ``n_lags`` loads plus the origin hour's features."""

    def __init__(self, spec: ModelSpec, seed=0):
        super().__init__(spec, seed)
        rng = np.random.default_rng(seed)
        n_in = spec.n_lags + 9
        self.fc1 = Linear(n_in, spec.hidden, rng)
        self.fc2 = Linear(spec.hidden, spec.hidden, rng)
        self.out = Linear(spec.hidden, spec.horizon, rng)

    @property
    def n_inputs(self):
        return self.spec.n_lags + 9

    def inputs(self, samples, idx):
        return (samples.lagged_inputs(idx, self.spec.n_lags),)

    def forward(self, x):
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ad.ShapeMismatch(f"MLP expects (B, {self.n_inputs}) input, got {x.shape}")
        z = ad.relu(self.fc1(x))
        z = ad.relu(self.fc2(z))
        y = self.out(z)
        return ad.reshape(y, (x.shape[0], self.spec.horizon, 1))


class LSTMLayer(Module):
    """One LSTM layer with gate blocks ordered input, forget, candidate, output."""

    def __init__(self, n_in, n_hidden, rng):
        H = n_hidden
        self.n_hidden = H
        self.w_x = Tensor(glorot_uniform(rng, n_in, 4 * H), requires_grad=True)
        self.w_h = Tensor(glorot_uniform(rng, H, 4 * H), requires_grad=True)
        self.bias = Tensor(np.zeros(4 * H), requires_grad=True)

    def __call__(self, x, state=None, return_cells=False):
        """Run over ``x`` of shape (B, T, n_in); returns hidden states (B, T, H)."""
        B, T, _ = x.shape
        H = self.n_hidden
        if state is None:
            h = Tensor(np.zeros((B, H)))
            c = Tensor(np.zeros((B, H)))
        else:
            h, c = (ad.as_tensor(s) for s in state)
        # input projections for all steps in one product
        xs = ad.matmul(x, self.w_x) + self.bias
        hs, cs = [], []
        for t in range(T):
            z = xs[:, t, :] + ad.matmul(h, self.w_h)
            i = ad.sigmoid(z[:, :H])
            f = ad.sigmoid(z[:, H:2 * H])
            g = ad.tanh(z[:, 2 * H:3 * H])
            o = ad.sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            h = o * ad.tanh(c)
            hs.append(h)
            cs.append(c)
        out = ad.stack(hs, axis=1)
        if return_cells:
            return out, ad.stack(cs, axis=1)
        return out


class LSTM(NeuralModel):
    """Stacked LSTM over the encoder block; the last hidden state feeds a
    linear layer emitting all ``h x d_out`` values."""

    def __init__(self, spec: ModelSpec, seed=0):
        super().__init__(spec, seed)
        rng = np.random.default_rng(seed)
        sizes = [spec.input_size] + [spec.hidden] * spec.lstm_layers
        self.cells = [LSTMLayer(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.head = Linear(spec.hidden, spec.horizon * spec.output_size, rng)

    def inputs(self, samples, idx):
        enc, _, _ = samples.batch(idx)
        return (enc,)

    def forward(self, enc):
        enc = ad.as_tensor(enc)
        if enc.ndim != 3 or enc.shape[2] != self.spec.input_size:
            raise ad.ShapeMismatch(
                f"LSTM expects (B, L, {self.spec.input_size}) input, got {enc.shape}")
        x = enc
        for cell in self.cells:
            x = cell(x)
        last = x[:, -1, :]
        y = self.head(last)
        return ad.reshape(y, (enc.shape[0], self.spec.horizon, self.spec.output_size))


def sinusoidal_encoding(length, d_model):
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def causal_mask(n):
    """Additive mask: ``-inf`` above the diagonal, zero elsewhere."""
    return np.triu(np.full((n, n), -np.inf), k=1)


class MultiHeadAttention(Module):
    def __init__(self, d_model, heads, dropout, rng):
        if d_model % heads:
            raise HeadDivisibility(f"d_model {d_model} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = d_model // heads
        self.dropout = dropout
        self.q = Linear(d_model, d_model, rng)
        # a key bias shifts every score in a row equally, so softmax ignores it
        self.k = Linear(d_model, d_model, rng, bias=False)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)
        self.last_weights = None

    def _split(self, x):
        B, T, _ = x.shape
        return ad.transpose(ad.reshape(x, (B, T, self.heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, query, memory, mask=None, rng=None):
        B, Tq, d = query.shape
        q, k, v = self._split(self.q(query)), self._split(self.k(memory)), self._split(self.v(memory))
        scores = ad.matmul(q, ad.transpose(k)) * (1.0 / np.sqrt(self.d_head))
        if mask is not None:
            scores = scores + mask
        weights = ad.softmax(scores, axis=-1)
        self.last_weights = weights.data
        weights = ad.dropout(weights, self.dropout, self.training, rng)
        ctx = ad.matmul(weights, v)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, Tq, d))
        return self.o(ctx)


class FeedForward(Module):
    def __init__(self, d_model, ff_dim, dropout, rng):
        self.fc1 = Linear(d_model, ff_dim, rng)
        self.fc2 = Linear(ff_dim, d_model, rng)
        self.dropout = dropout

    def __call__(self, x, rng=None):
        z = ad.dropout(ad.relu(self.fc1(x)), self.dropout, self.training, rng)
        return self.fc2(z)


class EncoderLayer(Module):
    """Self-attention and feed-forward sublayers, each followed by residual + layer norm."""

    def __init__(self, spec, rng):
        self.attn = MultiHeadAttention(spec.d_model, spec.heads, spec.dropout, rng)
        self.norm1 = LayerNorm(spec.d_model)
        self.ff = FeedForward(spec.d_model, spec.ff_dim, spec.dropout, rng)
        self.norm2 = LayerNorm(spec.d_model)
        self.dropout = spec.dropout

    def __call__(self, x, rng=None):
        drop = lambda t: ad.dropout(t, self.dropout, self.training, rng)  # noqa: E731
        x = self.norm1(x + drop(self.attn(x, x, rng=rng)))
        return self.norm2(x + drop(self.ff(x, rng)))


class DecoderLayer(Module):
    def __init__(self, spec, rng):
        self.self_attn = MultiHeadAttention(spec.d_model, spec.heads, spec.dropout, rng)
        self.norm1 = LayerNorm(spec.d_model)
        self.cross_attn = MultiHeadAttention(spec.d_model, spec.heads, spec.dropout, rng)
        self.norm2 = LayerNorm(spec.d_model)
        self.ff = FeedForward(spec.d_model, spec.ff_dim, spec.dropout, rng)
        self.norm3 = LayerNorm(spec.d_model)
        self.dropout = spec.dropout

    def __call__(self, x, memory, self_mask=None, rng=None):
        drop = lambda t: ad.dropout(t, self.dropout, self.training, rng)  # noqa: E731
        x = self.norm1(x + drop(self.self_attn(x, x, self_mask, rng)))
        x = self.norm2(x + drop(self.cross_attn(x, memory, rng=rng)))
        return self.norm3(x + drop(self.ff(x, rng)))


class Transformer(NeuralModel):
    """Encoder-decoder Transformer for direct multi-step forecasting.

    The encoder reads the ``L`` lookback rows, the decoder reads ``h`` rows of
    calendar features with zeroed loads, and a final linear layer maps each
    decoder output to ``d_out`` loads.
    """

    def __init__(self, spec: ModelSpec, seed=0):
        super().__init__(spec, seed)
        rng = np.random.default_rng(seed)
        d = spec.d_model
        self.enc_in = Linear(spec.input_size, d, rng)
        self.dec_in = Linear(spec.input_size, d, rng)
        self.encoder = [EncoderLayer(spec, rng) for _ in range(spec.layers)]
        self.decoder = [DecoderLayer(spec, rng) for _ in range(spec.layers)]
        self.out = Linear(d, spec.output_size, rng)
        if spec.positional == "learned":
            self.enc_pos = Tensor(rng.normal(0, 0.02, (spec.lookback, d)), requires_grad=True)
            self.dec_pos = Tensor(rng.normal(0, 0.02, (spec.horizon, d)), requires_grad=True)
        elif spec.positional == "sinusoidal":
            self._enc_pe = sinusoidal_encoding(spec.lookback, d)
            self._dec_pe = sinusoidal_encoding(spec.horizon, d)

    def _positions(self, which, n):
        if self.spec.positional == "learned":
            return (self.enc_pos if which == "enc" else self.dec_pos)[:n]
        if self.spec.positional == "sinusoidal":
            return (self._enc_pe if which == "enc" else self._dec_pe)[:n]
        return None

    def encode(self, enc, rng=None):
        x = self.enc_in(enc)
        pe = self._positions("enc", enc.shape[1])
        if pe is not None:
            x = x + pe
        x = ad.dropout(x, self.spec.dropout, self.training, rng)
        for layer in self.encoder:
            x = layer(x, rng)
        return x

    def forward(self, enc, dec):
        enc, dec = ad.as_tensor(enc), ad.as_tensor(dec)
        s = self.spec
        if enc.ndim != 3 or enc.shape[2] != s.input_size or dec.ndim != 3 or dec.shape[2] != s.input_size:
            raise ad.ShapeMismatch(
                f"Transformer expects (B, L, {s.input_size}) and (B, h, {s.input_size}), "
                f"got {enc.shape} and {dec.shape}")
        rng = self.rng if self.training else None
        memory = self.encode(enc, rng)
        y = self.dec_in(dec)
        pe = self._positions("dec", dec.shape[1])
        if pe is not None:
            y = y + pe
        y = ad.dropout(y, s.dropout, self.training, rng)
        mask = causal_mask(dec.shape[1]) if s.causal_decoder else None
        for layer in self.decoder:
            y = layer(y, memory, mask, rng)
        return self.out(y)


def build_model(spec: ModelSpec, seed=0):
    from .baselines import LinearRegressionModel, PersistenceModel
    from .spec import Family

    cls = {
        Family.PERSISTENCE: PersistenceModel,
        Family.LINREG: LinearRegressionModel,
        Family.MLP: MLP,
        Family.LSTM: LSTM,
        Family.TRANSFORMER: Transformer,
    }[spec.family]
    if spec.family.trainable:
        return cls(spec, seed)
    return cls(spec)
