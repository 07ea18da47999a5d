"""The three classifier architectures, built declaratively.

A ModelSpec is an ordered list of layer descriptors plus input sizes; a Model
binds the spec to parameter tensors and hard-codes the forward/backward
composition for its kind (the graphs are fixed, so there is no generic tape).
`count_parameters` computes per-layer counts from the descriptors alone,
which the tests cross-check against the actual parameter arrays.

Architectures (defaults reproduce the published per-layer counts):
  word      embedding(V x 100) -> BiLSTM(512, final) -> Dense(1024->32, relu)
            -> Dense(32->5) -> softmax
  char      one-hot(69) over 1014 chars -> Conv(256,k7)+Pool3 -> Conv(256,k7)
            +Pool3 -> 4x Conv(256,k3) -> Pool3 -> flatten(8704)
            -> Dense(1024,relu)+Dropout(0.5) x2 -> Dense(32,relu) -> Dense(5)
  combined  word branch: embedding -> 4 residual BiLSTM(512, sequence) blocks
            (dense 100->1024 projection shortcut on the first) -> BiLSTM(64,
            final); char branch: the conv stack -> 34x256 feature sequence ->
            BiLSTM(64, final); concat(128++128) -> Dense(32,relu) -> Dense(5)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .layers import (BiLstm, Conv1d, Dense, Dropout, Embedding, Flatten, Layer,
                     MaxPool1d, OneHot)
from .tensor import Rng, Tensor, softmax


@dataclass(frozen=True)
class LayerDesc:
    """One layer of a model: kind plus the hyperparameters that size it."""

    name: str
    kind: str
    cfg: dict

    def param_count(self) -> int:
        c = self.cfg
        if self.kind == "embedding":
            return c["vocab"] * c["dim"]
        if self.kind == "dense":
            return c["in"] * c["out"] + c["out"]
        if self.kind == "conv1d":
            return c["ch_out"] * c["ch_in"] * c["k"] + c["ch_out"]
        if self.kind == "bilstm":
            h, i = c["hidden"], c["input"]
            return 2 * 4 * (h * (h + i) + h)
        return 0  # onehot, maxpool1d, flatten, dropout


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one architecture."""

    kind: str  # word | char | combined
    inputs: dict
    layers: tuple[LayerDesc, ...]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "inputs": dict(self.inputs),
            "layers": [{"name": d.name, "kind": d.kind, "cfg": dict(d.cfg)} for d in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        layers = tuple(LayerDesc(d["name"], d["kind"], dict(d["cfg"])) for d in data["layers"])
        return cls(kind=data["kind"], inputs=dict(data["inputs"]), layers=layers)


@dataclass
class ParamTable:
    """Per-layer parameter counts and their sum."""

    rows: list[tuple[str, str, int]]  # (name, kind, count)
    total: int

    def nonzero(self) -> list[int]:
        return [count for _, _, count in self.rows if count > 0]

    def render(self) -> str:
        width = max(len(name) for name, _, _ in self.rows)
        lines = [f"{name:<{width}}  {kind:<9}  {count:>12,}"
                 for name, kind, count in self.rows]
        lines.append(f"{'total':<{width}}  {'':<9}  {self.total:>12,}")
        return "\n".join(lines)


def count_parameters(spec: ModelSpec) -> ParamTable:
    """Exact integer parameter counts per layer, from the spec alone."""
    rows = [(d.name, d.kind, d.param_count()) for d in spec.layers]
    return ParamTable(rows=rows, total=sum(c for _, _, c in rows))


@dataclass
class Batch:
    """Encoded inputs for one forward pass; models read what they need."""

    word_ids: np.ndarray | None = None
    char_ids: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        for a in (self.word_ids, self.char_ids, self.labels):
            if a is not None:
                return a.shape[0]
        return 0

    def take(self, idx) -> "Batch":
        pick = lambda a: None if a is None else a[idx]
        return Batch(pick(self.word_ids), pick(self.char_ids), pick(self.labels))


class Model:
    """A spec bound to parameters, with explicit forward/backward wiring."""

    def __init__(self, spec: ModelSpec, layers: list[Layer]):
        self.spec = spec
        self.layers = layers
        self._by_name = {l.name: l for l in layers}
        self._trace: list[tuple[str, tuple[int, ...]]] | None = None

    def layer(self, name: str) -> Layer:
        return self._by_name[name]

    def params(self) -> dict[str, Tensor]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params.items()}

    def grads(self) -> dict[str, Tensor]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.grads.items()}

    def zero_grads(self) -> None:
        for l in self.layers:
            l.zero_grads()

    def param_count(self) -> int:
        return sum(l.param_count() for l in self.layers)

    def _rec(self, name: str, out) -> None:
        if self._trace is not None and out is not None:
            self._trace.append((name, tuple(out.shape)))

    def trace_shapes(self, batch) -> list[tuple[str, tuple[int, ...]]]:
        """Forward pass that records every layer's output shape."""
        self._trace = []
        try:
            self.forward(batch, training=False)
            return self._trace
        finally:
            self._trace = None

    def forward(self, batch, training: bool = False) -> Tensor:
        raise NotImplementedError

    def backward(self, dlogits: Tensor) -> None:
        raise NotImplementedError


def _as_batch(batch) -> Batch:
    if isinstance(batch, Batch):
        return batch
    return Batch(word_ids=np.asarray(batch))


class WordModel(Model):
    ORDER = ("embed", "bilstm", "dense_1", "output")

    def forward(self, batch, training: bool = False) -> Tensor:
        b = _as_batch(batch)
        x = b.word_ids
        for name in self.ORDER:
            x = self.layer(name).forward(x, training=training)
            self._rec(name, x)
        probs = softmax(x)
        self._rec("softmax", probs)
        return probs

    def backward(self, dlogits: Tensor) -> None:
        d = dlogits
        for name in reversed(self.ORDER):
            d = self.layer(name).backward(d)


class CharModel(Model):
    ORDER = ("onehot", "conv_1", "pool_1", "conv_2", "pool_2", "conv_3", "conv_4",
             "conv_5", "conv_6", "pool_3", "flatten", "dense_1", "drop_1",
             "dense_2", "drop_2", "dense_3", "output")

    def forward(self, batch, training: bool = False) -> Tensor:
        b = _as_batch(batch)
        x = b.char_ids if b.char_ids is not None else b.word_ids
        for name in self.ORDER:
            x = self.layer(name).forward(x, training=training)
            self._rec(name, x)
        probs = softmax(x)
        self._rec("softmax", probs)
        return probs

    def backward(self, dlogits: Tensor) -> None:
        d = dlogits
        for name in reversed(self.ORDER):
            d = self.layer(name).backward(d)


class CombinedModel(Model):
    """Word and char branches merged through a concatenation head.

    The word branch stacks four sequence-mode BiLSTMs with residual skips:
    the first block's input (the raw embedding) goes through a dense
    projection shortcut, later blocks use identity skips.
    """

    RES_BLOCKS = ("word_bilstm_1", "word_bilstm_2", "word_bilstm_3", "word_bilstm_4")
    CONV_STACK = ("onehot", "conv_1", "pool_1", "conv_2", "pool_2", "conv_3",
                  "conv_4", "conv_5", "conv_6", "pool_3")
    CHAR_DENSE = ("flatten", "dense_1", "drop_1", "dense_2", "drop_2")

    def __init__(self, spec: ModelSpec, layers: list[Layer]):
        super().__init__(spec, layers)
        self.char_dense_features = bool(spec.inputs.get("char_dense_features", False))

    def _word_branch(self, word_ids, training: bool) -> Tensor:
        emb = self.layer("embed").forward(word_ids, training=training)
        self._rec("embed", emb)
        y = self.layer("word_bilstm_1").forward(emb, training=training)
        skip = self.layer("word_skip_proj").forward(emb, training=training)
        x = y + skip
        self._rec("word_bilstm_1", x)
        for name in self.RES_BLOCKS[1:]:
            x = self.layer(name).forward(x, training=training) + x
            self._rec(name, x)
        out = self.layer("word_bilstm_out").forward(x, training=training)
        self._rec("word_bilstm_out", out)
        return out

    def _word_branch_back(self, d: Tensor) -> None:
        d = self.layer("word_bilstm_out").backward(d)
        for name in reversed(self.RES_BLOCKS[1:]):
            d = self.layer(name).backward(d) + d
        demb = self.layer("word_bilstm_1").backward(d)
        demb = demb + self.layer("word_skip_proj").backward(d)
        self.layer("embed").backward(demb)

    def _char_branch(self, char_ids, training: bool) -> Tensor:
        x = char_ids
        for name in self.CONV_STACK:
            x = self.layer(name).forward(x, training=training)
            self._rec(name, x)
        if self.char_dense_features:
            for name in self.CHAR_DENSE:
                x = self.layer(name).forward(x, training=training)
                self._rec(name, x)
            x = x[:, None, :]  # length-1 feature sequence
        out = self.layer("char_bilstm_out").forward(x, training=training)
        self._rec("char_bilstm_out", out)
        return out

    def _char_branch_back(self, d: Tensor) -> None:
        d = self.layer("char_bilstm_out").backward(d)
        if self.char_dense_features:
            d = d[:, 0, :]
            for name in reversed(self.CHAR_DENSE):
                d = self.layer(name).backward(d)
        for name in reversed(self.CONV_STACK):
            d = self.layer(name).backward(d)

    def forward(self, batch, training: bool = False) -> Tensor:
        b = _as_batch(batch)
        wvec = self._word_branch(b.word_ids, training)
        cvec = self._char_branch(b.char_ids, training)
        h = np.concatenate([wvec, cvec], axis=-1)
        self._rec("concat", h)
        h = self.layer("dense_head").forward(h, training=training)
        self._rec("dense_head", h)
        logits = self.layer("output").forward(h, training=training)
        self._rec("output", logits)
        probs = softmax(logits)
        self._rec("softmax", probs)
        self._split = self.layer("word_bilstm_out").hidden * 2
        return probs

    def backward(self, dlogits: Tensor) -> None:
        d = self.layer("output").backward(dlogits)
        d = self.layer("dense_head").backward(d)
        self._word_branch_back(d[:, :self._split])
        self._char_branch_back(d[:, self._split:])


_MODEL_CLASSES = {"word": WordModel, "char": CharModel, "combined": CombinedModel}


def _build_layer(desc: LayerDesc, rng: Rng, dtype, embed_table=None) -> Layer:
    c = desc.cfg
    child = rng.child(desc.name)
    if desc.kind == "embedding":
        return Embedding(desc.name, c["vocab"], c["dim"], rng=child, table=embed_table, dtype=dtype)
    if desc.kind == "onehot":
        return OneHot(desc.name, c["depth"], dtype=dtype)
    if desc.kind == "dense":
        return Dense(desc.name, c["in"], c["out"], rng=child, activation=c.get("activation"), dtype=dtype)
    if desc.kind == "conv1d":
        return Conv1d(desc.name, c["ch_in"], c["ch_out"], c["k"], stride=c.get("stride", 1),
                      rng=child, activation=c.get("activation"), dtype=dtype)
    if desc.kind == "maxpool1d":
        return MaxPool1d(desc.name, c["window"])
    if desc.kind == "flatten":
        return Flatten(desc.name)
    if desc.kind == "dropout":
        return Dropout(desc.name, c["rate"], rng=child)
    if desc.kind == "bilstm":
        return BiLstm(desc.name, c["input"], c["hidden"], mode=c["mode"], rng=child, dtype=dtype)
    raise ValueError(f"unknown layer kind {desc.kind!r}")


def model_from_spec(spec: ModelSpec, rng: Rng, dtype=np.float32,
                    embed_table: Tensor | None = None) -> Model:
    """Instantiate parameters for a spec. Layer inits derive per-layer rng
    children, so construction order never changes the draw."""
    layers = []
    for desc in spec.layers:
        table = embed_table if desc.kind == "embedding" else None
        layers.append(_build_layer(desc, rng, dtype, embed_table=table))
    cls = _MODEL_CLASSES[spec.kind]
    return cls(spec, layers)


# ---------------------------------------------------------------------------
# Spec builders

def word_spec(vocab: int, embed_dim: int = 100, hidden: int = 512,
              dense_units: int = 32, classes: int = 5, word_len: int = 100) -> ModelSpec:
    layers = (
        LayerDesc("embed", "embedding", {"vocab": vocab, "dim": embed_dim}),
        LayerDesc("bilstm", "bilstm", {"input": embed_dim, "hidden": hidden, "mode": "final"}),
        LayerDesc("dense_1", "dense", {"in": 2 * hidden, "out": dense_units, "activation": "relu"}),
        LayerDesc("output", "dense", {"in": dense_units, "out": classes, "activation": None}),
    )
    inputs = {"vocab": vocab, "embed_dim": embed_dim, "word_len": word_len, "classes": classes}
    return ModelSpec(kind="word", inputs=inputs, layers=layers)


_CHAR_KERNELS = (7, 7, 3, 3, 3, 3)  # conv kernels; pools of 3 follow convs 1, 2 and 6


def _conv_geometry(char_len: int) -> list[int]:
    """Sequence lengths after each conv/pool stage, validated positive."""
    lengths = []
    n = char_len
    stages = [("conv", 7), ("pool", 3), ("conv", 7), ("pool", 3),
              ("conv", 3), ("conv", 3), ("conv", 3), ("conv", 3), ("pool", 3)]
    for op, size in stages:
        n = n - size + 1 if op == "conv" else n // size
        if n < 1:
            raise ShapeError(f"char input length {char_len} collapses to {n} mid-stack")
        lengths.append(n)
    return lengths


def char_conv_descs(alphabet: int, channels: int) -> list[LayerDesc]:
    descs = [LayerDesc("onehot", "onehot", {"depth": alphabet})]
    conv_idx = 0
    pool_idx = 0
    for op, size in [("conv", 7), ("pool", 3), ("conv", 7), ("pool", 3),
                     ("conv", 3), ("conv", 3), ("conv", 3), ("conv", 3), ("pool", 3)]:
        if op == "conv":
            conv_idx += 1
            ch_in = alphabet if conv_idx == 1 else channels
            descs.append(LayerDesc(f"conv_{conv_idx}", "conv1d",
                                   {"ch_in": ch_in, "ch_out": channels, "k": size,
                                    "stride": 1, "activation": "relu"}))
        else:
            pool_idx += 1
            descs.append(LayerDesc(f"pool_{pool_idx}", "maxpool1d", {"window": size}))
    return descs


def char_spec(alphabet: int = 69, char_len: int = 1014, channels: int = 256,
              dense_units: int = 1024, head_units: int = 32, classes: int = 5,
              dropout: float = 0.5) -> ModelSpec:
    final_len = _conv_geometry(char_len)[-1]
    flat = final_len * channels
    layers = char_conv_descs(alphabet, channels)
    layers += [
        LayerDesc("flatten", "flatten", {}),
        LayerDesc("dense_1", "dense", {"in": flat, "out": dense_units, "activation": "relu"}),
        LayerDesc("drop_1", "dropout", {"rate": dropout}),
        LayerDesc("dense_2", "dense", {"in": dense_units, "out": dense_units, "activation": "relu"}),
        LayerDesc("drop_2", "dropout", {"rate": dropout}),
        LayerDesc("dense_3", "dense", {"in": dense_units, "out": head_units, "activation": "relu"}),
        LayerDesc("output", "dense", {"in": head_units, "out": classes, "activation": None}),
    ]
    inputs = {"alphabet": alphabet, "char_len": char_len, "classes": classes}
    return ModelSpec(kind="char", inputs=inputs, layers=tuple(layers))


def combined_spec(vocab: int, embed_dim: int = 100, word_len: int = 100,
                  res_hidden: int = 512, branch_hidden: int = 64,
                  alphabet: int = 69, char_len: int = 1014, channels: int = 256,
                  dense_units: int = 1024, head_units: int = 32, classes: int = 5,
                  dropout: float = 0.5, char_dense_features: bool = False) -> ModelSpec:
    seq_dim = 2 * res_hidden
    layers = [
        LayerDesc("embed", "embedding", {"vocab": vocab, "dim": embed_dim}),
        LayerDesc("word_bilstm_1", "bilstm",
                  {"input": embed_dim, "hidden": res_hidden, "mode": "sequence"}),
        LayerDesc("word_skip_proj", "dense",
                  {"in": embed_dim, "out": seq_dim, "activation": None}),
        LayerDesc("word_bilstm_2", "bilstm",
                  {"input": seq_dim, "hidden": res_hidden, "mode": "sequence"}),
        LayerDesc("word_bilstm_3", "bilstm",
                  {"input": seq_dim, "hidden": res_hidden, "mode": "sequence"}),
        LayerDesc("word_bilstm_4", "bilstm",
                  {"input": seq_dim, "hidden": res_hidden, "mode": "sequence"}),
        LayerDesc("word_bilstm_out", "bilstm",
                  {"input": seq_dim, "hidden": branch_hidden, "mode": "final"}),
    ]
    layers += char_conv_descs(alphabet, channels)
    if char_dense_features:
        final_len = _conv_geometry(char_len)[-1]
        flat = final_len * channels
        layers += [
            LayerDesc("flatten", "flatten", {}),
            LayerDesc("dense_1", "dense", {"in": flat, "out": dense_units, "activation": "relu"}),
            LayerDesc("drop_1", "dropout", {"rate": dropout}),
            LayerDesc("dense_2", "dense", {"in": dense_units, "out": dense_units, "activation": "relu"}),
            LayerDesc("drop_2", "dropout", {"rate": dropout}),
        ]
        char_feat_dim = dense_units
    else:
        char_feat_dim = channels
    layers += [
        LayerDesc("char_bilstm_out", "bilstm",
                  {"input": char_feat_dim, "hidden": branch_hidden, "mode": "final"}),
        LayerDesc("dense_head", "dense",
                  {"in": 4 * branch_hidden, "out": head_units, "activation": "relu"}),
        LayerDesc("output", "dense", {"in": head_units, "out": classes, "activation": None}),
    ]
    inputs = {"vocab": vocab, "embed_dim": embed_dim, "word_len": word_len,
              "alphabet": alphabet, "char_len": char_len, "classes": classes,
              "char_dense_features": char_dense_features}
    return ModelSpec(kind="combined", inputs=inputs, layers=tuple(layers))


# ---------------------------------------------------------------------------
# Model builders

def build_word_model(vocab: int, embed_table: Tensor | None = None, rng: Rng | None = None,
                     dtype=np.float32, **spec_kwargs) -> Model:
    spec = word_spec(vocab, **spec_kwargs)
    return model_from_spec(spec, rng or Rng(0), dtype=dtype, embed_table=embed_table)


def build_char_model(rng: Rng | None = None, dtype=np.float32, **spec_kwargs) -> Model:
    spec = char_spec(**spec_kwargs)
    return model_from_spec(spec, rng or Rng(0), dtype=dtype)


def build_combined_model(vocab: int, embed_table: Tensor | None = None,
                         rng: Rng | None = None, dtype=np.float32, **spec_kwargs) -> Model:
    spec = combined_spec(vocab, **spec_kwargs)
    return model_from_spec(spec, rng or Rng(0), dtype=dtype, embed_table=embed_table)


def spec_for(kind: str, vocab: int = 27064, **kwargs) -> ModelSpec:
    if kind == "word":
        return word_spec(vocab, **kwargs)
    if kind == "char":
        return char_spec(**kwargs)
    if kind == "combined":
        return combined_spec(vocab, **kwargs)
    raise ValueError(f"unknown model kind {kind!r}")


def init_combined_from_pretrained(combined: Model, word: Model | None,
                                  char: Model | None) -> list[str]:
    """Copy branch weights trained separately into a combined model.

    The word model donates its embedding and its BiLSTM (same shapes as the
    first residual block); the char model donates every conv layer. Returns
    the names of the layers that were initialized.
    """
    copied = []
    pairs = []
    if word is not None:
        pairs += [("embed", word, "embed"), ("word_bilstm_1", word, "bilstm")]
    if char is not None:
        pairs += [(f"conv_{i}", char, f"conv_{i}") for i in range(1, 7)]
        if combined.spec.inputs.get("char_dense_features"):
            pairs += [("dense_1", char, "dense_1"), ("dense_2", char, "dense_2")]
    for dst_name, src_model, src_name in pairs:
        dst, src = combined.layer(dst_name), src_model.layer(src_name)
        for key, value in src.params.items():
            if dst.params[key].shape != value.shape:
                raise ShapeError(
                    f"pretrained {src_name}.{key} shape {value.shape} does not fit "
                    f"{dst_name}.{key} {dst.params[key].shape}")
            dst.params[key][...] = value
        copied.append(dst_name)
    return copied
