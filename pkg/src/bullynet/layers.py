"""Differentiable layers: embedding, dense, 1-D convolution, max-pool,
dropout, LSTM cell, bidirectional LSTM, and residual addition.

Every layer is a stateless transform over (input, params): forward caches
what its own backward needs, backward consumes the cache exactly once,
accumulates parameter gradients into `.grads`, and returns the gradient with
respect to its input. There is no tape; the model graph composes backwards
explicitly in reverse order. Params are immutable during a forward/backward
pair; the training loop is their only writer between optimizer steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Rng, Tensor, relu, sigmoid


class Layer:
    """Base class: named parameters, matching gradients, forward/backward."""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grads(self) -> None:
        for key, value in self.params.items():
            self.grads[key] = np.zeros_like(value)

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())


class Embedding(Layer):
    """Row gather from a trainable table; gradients scatter into touched rows."""

    def __init__(self, name: str, vocab: int, dim: int, rng: Rng | None = None,
                 table: Tensor | None = None, dtype=np.float32):
        super().__init__(name)
        if table is not None:
            if table.shape != (vocab, dim):
                raise ShapeError(f"embedding table shape {table.shape} != ({vocab}, {dim})")
            self.params["table"] = np.ascontiguousarray(table, dtype=dtype)
        else:
            self.params["table"] = rng.glorot((vocab, dim), vocab, dim, dtype=dtype)
        self.vocab = vocab
        self.dim = dim
        self._ids = None

    def forward(self, ids, training: bool = False) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab):
            bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
            raise IndexError(f"embedding id {bad} outside [0, {self.vocab})")
        self._ids = ids
        return self.params["table"][ids]

    def backward(self, dout):
        np.add.at(self.grads["table"], self._ids.reshape(-1),
                  dout.reshape(-1, self.dim))
        return None  # integer ids carry no gradient


class Dense(Layer):
    """Affine map y = x W + b on the last axis, with optional ReLU."""

    def __init__(self, name: str, in_dim: int, out_dim: int, rng: Rng | None = None,
                 activation: str | None = None, dtype=np.float32):
        super().__init__(name)
        if activation not in (None, "relu"):
            raise ValueError(f"dense supports relu or no activation, got {activation!r}")
        if rng is not None:
            self.params["W"] = rng.glorot((in_dim, out_dim), in_dim, out_dim, dtype=dtype)
        else:
            self.params["W"] = np.zeros((in_dim, out_dim), dtype=dtype)
        self.params["b"] = np.zeros(out_dim, dtype=dtype)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self._x = None
        self._mask = None

    def forward(self, x, training: bool = False) -> Tensor:
        x = np.asarray(x)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"{self.name}: input last dim {x.shape} != ({self.in_dim}, ...)")
        self._x = x
        y = x.reshape(-1, self.in_dim) @ self.params["W"] + self.params["b"]
        y = y.reshape(*x.shape[:-1], self.out_dim)
        if self.activation == "relu":
            self._mask = y > 0
            y = y * self._mask
        return y

    def backward(self, dout) -> Tensor:
        if self.activation == "relu":
            dout = dout * self._mask
        d2 = dout.reshape(-1, self.out_dim)
        x2 = self._x.reshape(-1, self.in_dim)
        self.grads["W"] += x2.T @ d2
        self.grads["b"] += d2.sum(axis=0)
        return (d2 @ self.params["W"].T).reshape(self._x.shape)


class Conv1d(Layer):
    """Valid (no padding) cross-correlation over [batch, len, ch_in].

    out[b, j, co] = sum_{ci, d} x[b, j*stride + d, ci] * K[co, ci, d] + bias[co]
    with out_len = floor((len - k) / stride) + 1.
    """

    def __init__(self, name: str, ch_in: int, ch_out: int, k: int, stride: int = 1,
                 rng: Rng | None = None, activation: str | None = "relu", dtype=np.float32):
        super().__init__(name)
        fan_in, fan_out = ch_in * k, ch_out * k
        if rng is not None:
            self.params["K"] = rng.glorot((ch_out, ch_in, k), fan_in, fan_out, dtype=dtype)
        else:
            self.params["K"] = np.zeros((ch_out, ch_in, k), dtype=dtype)
        self.params["b"] = np.zeros(ch_out, dtype=dtype)
        self.ch_in = ch_in
        self.ch_out = ch_out
        self.k = k
        self.stride = stride
        self.activation = activation
        self._patches = None
        self._in_shape = None
        self._mask = None

    def out_len(self, length: int) -> int:
        if length < self.k:
            raise ShapeError(f"{self.name}: input length {length} < kernel {self.k}")
        return (length - self.k) // self.stride + 1

    def forward(self, x, training: bool = False) -> Tensor:
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[2] != self.ch_in:
            raise ShapeError(f"{self.name}: expected [batch, len, {self.ch_in}], got {x.shape}")
        batch, length, _ = x.shape
        ol = self.out_len(length)
        idx = np.arange(ol)[:, None] * self.stride + np.arange(self.k)[None, :]
        # [b, j, d, ci] -> [b, j, ci, d] so the flat axis matches K.reshape(ch_out, -1)
        patches = x[:, idx, :].transpose(0, 1, 3, 2).reshape(batch, ol, self.ch_in * self.k)
        self._patches = patches
        self._in_shape = x.shape
        kmat = self.params["K"].reshape(self.ch_out, -1)
        y = patches @ kmat.T + self.params["b"]
        if self.activation == "relu":
            self._mask = y > 0
            y = y * self._mask
        return y

    def backward(self, dout) -> Tensor:
        if self.activation == "relu":
            dout = dout * self._mask
        batch, ol, _ = dout.shape
        d2 = dout.reshape(-1, self.ch_out)
        p2 = self._patches.reshape(-1, self.ch_in * self.k)
        self.grads["K"] += (d2.T @ p2).reshape(self.params["K"].shape)
        self.grads["b"] += d2.sum(axis=0)
        kmat = self.params["K"].reshape(self.ch_out, -1)
        dpatch = (dout @ kmat).reshape(batch, ol, self.ch_in, self.k)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        # windows overlap when stride < k, so accumulate per kernel offset
        for d in range(self.k):
            stop = d + (ol - 1) * self.stride + 1
            dx[:, d:stop:self.stride, :] += dpatch[:, :, :, d]
        return dx


class MaxPool1d(Layer):
    """Non-overlapping window max over [batch, len, ch]; remainder dropped.

    The gradient routes to each window's argmax; ties go to the lowest index.
    """

    def __init__(self, name: str, window: int):
        super().__init__(name)
        self.window = window
        self._argmax = None
        self._in_shape = None

    def out_len(self, length: int) -> int:
        if length < self.window:
            raise ShapeError(f"{self.name}: input length {length} < window {self.window}")
        return length // self.window

    def forward(self, x, training: bool = False) -> Tensor:
        x = np.asarray(x)
        batch, length, ch = x.shape
        ol = self.out_len(length)
        windows = x[:, :ol * self.window, :].reshape(batch, ol, self.window, ch)
        self._argmax = windows.argmax(axis=2)  # first maximum on ties
        self._in_shape = x.shape
        return windows.max(axis=2)

    def backward(self, dout) -> Tensor:
        batch, ol, ch = dout.shape
        dwin = np.zeros((batch, ol, self.window, ch), dtype=dout.dtype)
        np.put_along_axis(dwin, self._argmax[:, :, None, :], dout[:, :, None, :], axis=2)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        dx[:, :ol * self.window, :] = dwin.reshape(batch, ol * self.window, ch)
        return dx


class Dropout(Layer):
    """Inverted dropout: zero with probability `rate`, scale survivors by
    1/(1-rate) in training mode; identity in eval mode."""

    def __init__(self, name: str, rate: float, rng: Rng | None = None):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, training: bool = False) -> Tensor:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) >= self.rate) / keep
        return x * self._mask.astype(x.dtype)

    def backward(self, dout) -> Tensor:
        if self._mask is None:
            return dout
        return dout * self._mask.astype(dout.dtype)


class Flatten(Layer):
    """[batch, len, ch] -> [batch, len*ch] (row-major)."""

    def __init__(self, name: str = "flatten"):
        super().__init__(name)
        self._in_shape = None

    def forward(self, x, training: bool = False) -> Tensor:
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout) -> Tensor:
        return dout.reshape(self._in_shape)


class OneHot(Layer):
    """Integer ids [batch, len] -> one-hot floats [batch, len, depth].

    Id 0 is the unknown/padding bucket and maps to the all-zero vector;
    ids 1..depth map to basis vectors.
    """

    def __init__(self, name: str, depth: int, dtype=np.float32):
        super().__init__(name)
        self.depth = depth
        self.dtype = dtype

    def forward(self, ids, training: bool = False) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() > self.depth):
            bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
            raise IndexError(f"{self.name}: id {bad} outside [0, {self.depth}]")
        out = np.zeros((*ids.shape, self.depth), dtype=self.dtype)
        hot = ids > 0
        out[(*np.nonzero(hot), ids[hot] - 1)] = 1.0
        return out

    def backward(self, dout):
        return None  # integer ids carry no gradient


# ---------------------------------------------------------------------------
# LSTM

@dataclass
class LstmCellParams:
    """Per-gate weights over the concatenation [h_prev, x_t] plus biases.

    Each W_* has shape [hidden, hidden+input]; each b_* has length hidden.
    The gate order everywhere is forget, input, candidate, output.
    """

    W_f: Tensor
    W_i: Tensor
    W_c: Tensor
    W_o: Tensor
    b_f: Tensor
    b_i: Tensor
    b_c: Tensor
    b_o: Tensor

    def __post_init__(self):
        shapes = {self.W_f.shape, self.W_i.shape, self.W_c.shape, self.W_o.shape}
        if len(shapes) != 1:
            raise ShapeError(f"gate weight shapes differ: {sorted(shapes)}")
        hidden = self.W_f.shape[0]
        for b in (self.b_f, self.b_i, self.b_c, self.b_o):
            if b.shape != (hidden,):
                raise ShapeError(f"bias shape {b.shape} != ({hidden},)")

    @property
    def hidden(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: Rng, dtype=np.float32) -> "LstmCellParams":
        def w():
            return rng.glorot((hidden, hidden + input_dim), hidden + input_dim, hidden, dtype=dtype)

        def b():
            return np.zeros(hidden, dtype=dtype)

        params = cls(W_f=w(), W_i=w(), W_c=w(), W_o=w(), b_f=b(), b_i=b(), b_c=b(), b_o=b())
        params.b_f[:] = 1.0  # keep the forget gate open early in training
        return params

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}_{k}": getattr(self, k)
                for k in ("W_f", "W_i", "W_c", "W_o", "b_f", "b_i", "b_c", "b_o")}


@dataclass
class LstmState:
    """Hidden output h and cell state C after a step."""

    h: Tensor
    C: Tensor


def _lstm_step_batch(x_t: Tensor, h_prev: Tensor, C_prev: Tensor, p: LstmCellParams):
    """One gated step on a batch. Returns (h, C, cache for backward)."""
    z = np.concatenate([h_prev, x_t], axis=-1)
    f = sigmoid(z @ p.W_f.T + p.b_f)
    i = sigmoid(z @ p.W_i.T + p.b_i)
    c = np.tanh(z @ p.W_c.T + p.b_c)
    o = sigmoid(z @ p.W_o.T + p.b_o)
    C = f * C_prev + i * c
    tanh_C = np.tanh(C)
    h = o * tanh_C
    return h, C, (z, f, i, c, o, C_prev, tanh_C)


def lstm_step(x_t: Tensor, prev: LstmState, p: LstmCellParams) -> LstmState:
    """Single-vector gated step: forget, input, candidate, cell, output.

    f = sigmoid(W_f [h, x] + b_f), i likewise, candidate c = tanh(...),
    C = f*C_prev + i*c, o = sigmoid(...), h = o * tanh(C).
    """
    x_t = np.asarray(x_t)
    if x_t.shape != (p.input_dim,):
        raise ShapeError(f"lstm_step input shape {x_t.shape} != ({p.input_dim},)")
    if prev.h.shape != (p.hidden,) or prev.C.shape != (p.hidden,):
        raise ShapeError(f"lstm_step state shapes {prev.h.shape}/{prev.C.shape} != ({p.hidden},)")
    h, C, _ = _lstm_step_batch(x_t[None, :], prev.h[None, :], prev.C[None, :], p)
    return LstmState(h=h[0], C=C[0])


class BiLstm(Layer):
    """Two LSTMs over a sequence in opposite directions.

    `sequence` mode returns per-step concatenated outputs [batch, len, 2*hidden];
    `final` mode returns [batch, 2*hidden] built from the forward pass's last
    state and the backward pass's last state (the one after reading step 0).
    """

    def __init__(self, name: str, input_dim: int, hidden: int, mode: str = "final",
                 rng: Rng | None = None, dtype=np.float32,
                 fwd: LstmCellParams | None = None, bwd: LstmCellParams | None = None):
        super().__init__(name)
        if mode not in ("sequence", "final"):
            raise ValueError(f"mode must be sequence or final, got {mode!r}")
        self.input_dim = input_dim
        self.hidden = hidden
        self.mode = mode
        self.fwd = fwd if fwd is not None else LstmCellParams.init(input_dim, hidden, rng, dtype)
        self.bwd = bwd if bwd is not None else LstmCellParams.init(input_dim, hidden, rng, dtype)
        self.params = {**self.fwd.named("fwd"), **self.bwd.named("bwd")}
        self._caches = None
        self._in_shape = None

    def _run(self, x: Tensor, p: LstmCellParams, reverse: bool):
        batch, length, _ = x.shape
        h = np.zeros((batch, self.hidden), dtype=x.dtype)
        C = np.zeros((batch, self.hidden), dtype=x.dtype)
        hs = np.empty((batch, length, self.hidden), dtype=x.dtype)
        caches = [None] * length
        order = range(length - 1, -1, -1) if reverse else range(length)
        for t in order:
            h, C, caches[t] = _lstm_step_batch(x[:, t, :], h, C, p)
            hs[:, t, :] = h
        return hs, caches

    def forward(self, x, training: bool = False) -> Tensor:
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeError(f"{self.name}: expected [batch, len, {self.input_dim}], got {x.shape}")
        if x.shape[1] < 1:
            raise ShapeError(f"{self.name}: empty sequence")
        hs_f, caches_f = self._run(x, self.fwd, reverse=False)
        hs_b, caches_b = self._run(x, self.bwd, reverse=True)
        self._caches = (caches_f, caches_b)
        self._in_shape = x.shape
        if self.mode == "sequence":
            return np.concatenate([hs_f, hs_b], axis=-1)
        # final: last forward state ++ last backward state
        return np.concatenate([hs_f[:, -1, :], hs_b[:, 0, :]], axis=-1)

    def _bptt(self, p: LstmCellParams, prefix: str, caches, dh_ext: Tensor,
              reverse: bool, dx: Tensor) -> None:
        batch, length, _ = dx.shape
        H = self.hidden
        dh_rec = np.zeros((batch, H), dtype=dx.dtype)
        dC_rec = np.zeros((batch, H), dtype=dx.dtype)
        # walk opposite to this direction's processing order
        order = range(length) if reverse else range(length - 1, -1, -1)
        gW = {g: self.grads[f"{prefix}_W_{g}"] for g in "fico"}
        gb = {g: self.grads[f"{prefix}_b_{g}"] for g in "fico"}
        for t in order:
            z, f, i, c, o, C_prev, tanh_C = caches[t]
            dh = dh_ext[:, t, :] + dh_rec
            do = dh * tanh_C
            dC = dC_rec + dh * o * (1.0 - tanh_C * tanh_C)
            pre = {
                "f": dC * C_prev * f * (1.0 - f),
                "i": dC * c * i * (1.0 - i),
                "c": dC * i * (1.0 - c * c),
                "o": do * o * (1.0 - o),
            }
            dz = None
            for g, W in (("f", p.W_f), ("i", p.W_i), ("c", p.W_c), ("o", p.W_o)):
                gW[g] += pre[g].T @ z
                gb[g] += pre[g].sum(axis=0)
                dz = pre[g] @ W if dz is None else dz + pre[g] @ W
            dh_rec = dz[:, :H]
            dx[:, t, :] += dz[:, H:]
            dC_rec = dC * f

    def backward(self, dout) -> Tensor:
        batch, length, _ = self._in_shape
        H = self.hidden
        dh_f = np.zeros((batch, length, H), dtype=dout.dtype)
        dh_b = np.zeros((batch, length, H), dtype=dout.dtype)
        if self.mode == "sequence":
            dh_f[:] = dout[:, :, :H]
            dh_b[:] = dout[:, :, H:]
        else:
            dh_f[:, -1, :] = dout[:, :H]
            dh_b[:, 0, :] = dout[:, H:]
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        caches_f, caches_b = self._caches
        self._bptt(self.fwd, "fwd", caches_f, dh_f, reverse=False, dx=dx)
        self._bptt(self.bwd, "bwd", caches_b, dh_b, reverse=True, dx=dx)
        return dx


def residual_add(block_out: Tensor, block_in: Tensor, projection: Dense | None = None,
                 training: bool = False) -> Tensor:
    """Skip connection: block_out + block_in, projecting block_in when shapes
    differ. The skip contributes an identity gradient path to block_in."""
    if projection is None:
        if block_out.shape != block_in.shape:
            raise ShapeError(
                f"residual_add shapes differ ({block_out.shape} vs {block_in.shape}) "
                f"and no projection was given")
        return block_out + block_in
    return block_out + projection.forward(block_in, training=training)
