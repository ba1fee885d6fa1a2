"""Chunked candidate-scoring encoder.

Each chunk ``<s> context </s> <q> question </q> <ent> e1 </ent> ...`` is encoded
independently.  The hidden states at the five opening ``<ent>`` tokens are
averaged over chunks and scored against one trainable vector.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import AttentionParams, ScoreCounter, build_pattern, dense_attention, global_augmented_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .data import ENT_OPEN, NUM_OPTIONS, Q_OPEN, SPECIAL_TOKENS, ChunkSet, Vocab
from .tensor import ContractError, Tensor

ATTENTION_MODES = ("dense", "windowed", "windowed+global")
MAX_LEN = {"dense": 512, "windowed": 4096, "windowed+global": 4096}


class ModelConfigError(ValueError):
    pass


class MalformedInputError(ValueError):
    pass


class IncompatibleCheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    width: int = 64
    layers: int = 2
    heads: int = 4
    ffn_width: int = 128
    max_seq_len: int | None = None
    attention_mode: str = "windowed+global"
    window: int = 33
    global_projections: bool = True
    global_layers: str = "last"
    dropout: float = 0.0
    init_std: float = 0.02
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.attention_mode not in ATTENTION_MODES:
            raise ModelConfigError(f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}")
        cap = MAX_LEN[self.attention_mode]
        if self.max_seq_len is None:
            self.max_seq_len = cap
        if not 1 <= self.max_seq_len <= cap:
            raise ModelConfigError(f"max_seq_len {self.max_seq_len} outside 1..{cap} for {self.attention_mode} mode")
        if self.width % self.heads:
            raise ModelConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.window < 1 or self.window % 2 == 0:
            raise ModelConfigError(f"window must be odd and positive, got {self.window}")
        if self.vocab_size < len(SPECIAL_TOKENS):
            raise ModelConfigError("vocab_size smaller than the special-token block")
        if self.global_layers not in ("last", "all"):
            raise ModelConfigError(f"global_layers must be 'last' or 'all', got {self.global_layers!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def uses_global_projections(self) -> bool:
        return self.attention_mode == "windowed+global" and self.global_projections

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in creation order."""
    d, f = config.width, config.ffn_width
    shapes = {
        "embed.tokens": (config.vocab_size, d),
        "embed.positions": (config.max_seq_len, d),
        "embed.ln.gain": (d,),
        "embed.ln.bias": (d,),
    }
    attn = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"]
    if config.uses_global_projections:
        attn += ["gwq", "gbq", "gwk", "gbk", "gwv", "gbv"]
    for i in range(config.layers):
        p = f"layers.{i}."
        for name in attn:
            shapes[p + "attn." + name] = (d, d) if name.startswith(("w", "gw")) else (d,)
        shapes.update({
            p + "ln1.gain": (d,), p + "ln1.bias": (d,),
            p + "ffn.w1": (d, f), p + "ffn.b1": (f,),
            p + "ffn.w2": (f, d), p + "ffn.b2": (d,),
            p + "ln2.gain": (d,), p + "ln2.bias": (d,),
        })
    shapes["head.v"] = (d,)
    return shapes


_BIASES = {"bias", "b1", "b2", "bq", "bk", "bv", "bo", "gbq", "gbk", "gbv"}


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Normal(0, init_std) weights, zero biases, unit layer-norm gains.

    Each tensor draws from its own generator seeded by ``(seed, crc32(name))``,
    so a tensor's values do not depend on which other tensors exist.  Rows are
    drawn in row-major order, so the position table's leading rows do not
    depend on ``max_seq_len``.
    """
    arrays = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            arrays[name] = np.ones(shape)
        elif leaf in _BIASES:
            arrays[name] = np.zeros(shape)
        else:
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            arrays[name] = rng.normal(0.0, config.init_std, shape)
    return arrays


@dataclass
class ChunkEncoding:
    states: Tensor
    ent_positions: tuple[int, ...]
    a_start: int


@dataclass
class SampleOutput:
    logits: Tensor
    probabilities: np.ndarray
    answer: int


class RecamModel:
    def __init__(self, config: ModelConfig, seed: int = 0, arrays: dict[str, np.ndarray] | None = None):
        self.config = config
        self.seed = seed
        arrays = init_params(config, seed) if arrays is None else arrays
        expected = param_shapes(config)
        if set(arrays) != set(expected):
            raise IncompatibleCheckpointError(
                f"parameter names differ from config: missing {sorted(set(expected) - set(arrays))}, "
                f"unexpected {sorted(set(arrays) - set(expected))}"
            )
        self.params: dict[str, Tensor] = {}
        for name, shape in expected.items():
            value = np.array(arrays[name], dtype=np.float64)
            if value.shape != shape:
                raise IncompatibleCheckpointError(f"{name}: shape {value.shape} != expected {shape}")
            self.params[name] = Tensor(value, grad_enabled=True, name=name)

    def attention_params(self, layer: int) -> AttentionParams:
        p = f"layers.{layer}.attn."
        names = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"]
        if self.config.uses_global_projections:
            names += ["gwq", "gbq", "gwk", "gbk", "gwv", "gbv"]
        return AttentionParams(heads=self.config.heads, **{n: self.params[p + n] for n in names})

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            t.data = np.array(arrays[name], dtype=np.float64)

    def save(self, path, vocab: Vocab, extra: dict | None = None) -> None:
        header = {"model_config": self.config.to_dict(), "seed": self.seed, "vocab": vocab.itos}
        if extra:
            header.update(extra)
        save_checkpoint(path, self.arrays(), header)

    @classmethod
    def load(cls, path) -> tuple[RecamModel, Vocab, dict]:
        header, arrays = load_checkpoint(path)
        if "model_config" not in header or "vocab" not in header:
            raise IncompatibleCheckpointError(f"{path}: checkpoint lacks model config or vocabulary")
        config = ModelConfig(**header["model_config"])
        try:
            vocab = Vocab.from_list(header["vocab"])
        except ValueError as exc:
            raise IncompatibleCheckpointError(f"{path}: {exc}") from None
        if len(vocab) != config.vocab_size:
            raise IncompatibleCheckpointError(
                f"{path}: vocabulary has {len(vocab)} entries but the model expects {config.vocab_size}"
            )
        return cls(config, header.get("seed", 0), arrays), vocab, header


# ------------------------------------------------------------------- forward


def _layer(model: RecamModel, i: int, x: Tensor, global_idx: Sequence[int], rng, counter) -> Tensor:
    cfg = model.config
    p = model.params
    pre = f"layers.{i}."
    attn = model.attention_params(i)
    n = x.shape[0]
    if cfg.attention_mode == "dense":
        a = dense_attention(x, attn, build_pattern(n, "full"), counter)
    elif cfg.attention_mode == "windowed":
        a = global_augmented_attention(x, attn, build_pattern(n, cfg.window), counter)
    elif cfg.global_layers == "all" or i == cfg.layers - 1:
        a = global_augmented_attention(x, attn, build_pattern(n, cfg.window, global_idx), counter)
    else:
        a = global_augmented_attention(x, attn, build_pattern(n, cfg.window), counter)
    x = T.layer_norm(x + T.dropout(a, cfg.dropout, rng), p[pre + "ln1.gain"], p[pre + "ln1.bias"], cfg.layer_norm_eps)
    h = T.gelu(T.matmul(x, p[pre + "ffn.w1"]) + p[pre + "ffn.b1"])
    h = T.matmul(h, p[pre + "ffn.w2"]) + p[pre + "ffn.b2"]
    return T.layer_norm(x + T.dropout(h, cfg.dropout, rng), p[pre + "ln2.gain"], p[pre + "ln2.bias"], cfg.layer_norm_eps)


def encode_chunk(model: RecamModel, ids: Sequence[int], a_start: int | None = None,
                 rng: np.random.Generator | None = None, counter: ScoreCounter | None = None) -> ChunkEncoding:
    """Hidden states for one chunk; the answer segment gets global attention."""
    cfg = model.config
    ids = list(ids)
    if len(ids) > cfg.max_seq_len:
        raise ContractError(f"chunk of {len(ids)} tokens exceeds max_seq_len {cfg.max_seq_len}")
    ents = tuple(i for i, t in enumerate(ids) if t == ENT_OPEN)
    if len(ents) != NUM_OPTIONS:
        raise MalformedInputError(f"chunk has {len(ents)} <ent> tokens, expected {NUM_OPTIONS}")
    if a_start is None:
        if Q_OPEN not in ids:
            raise MalformedInputError("chunk has no <q> token")
        a_start = ids.index(Q_OPEN)
    if ents[0] < a_start:
        raise MalformedInputError("<ent> token found inside the context segment")
    p = model.params
    n = len(ids)
    x = T.embedding_gather(p["embed.tokens"], ids) + T.getitem(p["embed.positions"], slice(0, n))
    x = T.dropout(T.layer_norm(x, p["embed.ln.gain"], p["embed.ln.bias"], cfg.layer_norm_eps), cfg.dropout, rng)
    global_idx = range(a_start, n)
    for i in range(cfg.layers):
        x = _layer(model, i, x, global_idx, rng, counter)
    return ChunkEncoding(x, ents, a_start)


def extract_candidate_states(enc: ChunkEncoding) -> Tensor:
    return T.getitem(enc.states, np.asarray(enc.ent_positions, dtype=np.int64))


def aggregate_chunks(states: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of per-chunk candidate states."""
    if not states:
        raise ContractError("aggregate_chunks needs at least one chunk")
    if len(states) == 1:
        return states[0]
    return T.mean(T.stack(states), axis=0)


def score_candidates(x: Tensor, v: Tensor) -> Tensor:
    if x.shape[-1] != v.shape[0]:
        raise T.DimensionError(f"candidate states {x.shape} vs scoring vector {v.shape}")
    return T.reshape(T.matmul(x, T.reshape(v, (v.shape[0], 1))), (x.shape[0],))


def predict(logits) -> tuple[np.ndarray, int]:
    """Softmax probabilities and the lowest index attaining the maximum."""
    f = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    z = np.exp(f - f.max())
    probs = z / z.sum()
    return probs, int(np.argmax(probs))


def loss(logits: Tensor, gold: int) -> Tensor:
    if not 0 <= gold < logits.shape[0]:
        raise ValueError(f"gold label {gold} outside 0..{logits.shape[0] - 1}")
    return T.cross_entropy(logits, gold)


def forward_sample(model: RecamModel, chunks: ChunkSet, rng: np.random.Generator | None = None,
                   counter: ScoreCounter | None = None) -> SampleOutput:
    states = [
        extract_candidate_states(encode_chunk(model, ids, a, rng, counter))
        for ids, a in zip(chunks.chunks, chunks.a_starts)
    ]
    f = score_candidates(aggregate_chunks(states), model.params["head.v"])
    probs, answer = predict(f)
    return SampleOutput(f, probs, answer)
