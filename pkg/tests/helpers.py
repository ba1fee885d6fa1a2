"""Shared fixtures and pure-Python oracles for the model-level tests."""

import math
from fractions import Fraction as F

import numpy as np

from recam import data as D
from recam.model import ModelConfig, RecamModel, forward_sample


def tiny_model(vocab_size, seed=0, **overrides):
    kw = dict(vocab_size=vocab_size, width=8, layers=2, heads=2, ffn_width=16, window=5, init_std=0.3)
    kw.update(overrides)
    return RecamModel(ModelConfig(**kw), seed=seed)


def toy_sample(passage_len=12, seed=0):
    return D.generate_synthetic(1, vocab_size=6, passage_len=passage_len, seed=seed,
                                rule=D.SyntheticRule(placement="passage"))[0]


# ---------------------------------------------------------------- scalar walk-through


def _vec_mat(v, m):
    return [sum(v[k] * m[k][j] for k in range(len(v))) for j in range(len(m[0]))]


def _layer_norm(v, gain, bias, eps):
    mu = sum(v) / len(v)
    var = sum((a - mu) ** 2 for a in v) / len(v)
    return [(a - mu) / math.sqrt(var + eps) * g + b for a, g, b in zip(v, gain, bias)]


def _gelu(a):
    return 0.5 * a * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (a + 0.044715 * a**3)))


def scalar_dense_encode(arrays, ids, eps):
    """One-layer, one-head, full-attention encoder evaluated with Python floats."""
    P = {k: v.tolist() for k, v in arrays.items()}
    x = [_layer_norm([t + p for t, p in zip(P["embed.tokens"][i], P["embed.positions"][pos])],
                     P["embed.ln.gain"], P["embed.ln.bias"], eps) for pos, i in enumerate(ids)]
    a = "layers.0.attn."

    def proj(v, w, b):
        return [s + c for s, c in zip(_vec_mat(v, P[a + w]), P[a + b])]

    q = [proj(v, "wq", "bq") for v in x]
    k = [proj(v, "wk", "bk") for v in x]
    val = [proj(v, "wv", "bv") for v in x]
    d = len(x[0])
    out = []
    for i in range(len(x)):
        s = [sum(qi * kj for qi, kj in zip(q[i], k[j])) / math.sqrt(d) for j in range(len(x))]
        m = max(s)
        e = [math.exp(z - m) for z in s]
        w = [z / sum(e) for z in e]
        mix = [sum(w[j] * val[j][c] for j in range(len(x))) for c in range(d)]
        attn = proj(mix, "wo", "bo")
        h = _layer_norm([xi + ai for xi, ai in zip(x[i], attn)], P["layers.0.ln1.gain"], P["layers.0.ln1.bias"], eps)
        f = [_gelu(z + b) for z, b in zip(_vec_mat(h, P["layers.0.ffn.w1"]), P["layers.0.ffn.b1"])]
        f = [s + c for s, c in zip(_vec_mat(f, P["layers.0.ffn.w2"]), P["layers.0.ffn.b2"])]
        out.append(_layer_norm([hi + fi for hi, fi in zip(h, f)], P["layers.0.ln2.gain"], P["layers.0.ln2.bias"], eps))
    return out


# ---------------------------------------------------------------- equivariance


def permutation_deviation(model, chunkset, order):
    """Largest |f'_j - f_order[j]| and gold-probability change under a candidate permutation."""
    base = forward_sample(model, chunkset)
    moved = forward_sample(model, chunkset.permuted(order))
    f_dev = float(np.max(np.abs(moved.logits.data - base.logits.data[list(order)])))
    gold = chunkset.sample.label
    p_dev = abs(float(moved.probabilities[list(order).index(gold)]) - float(base.probabilities[gold]))
    return f_dev, p_dev


# ---------------------------------------------------------------- metric scenarios

# (gold, pred, accuracy, macro_f1, weighted_f1), worked out by hand from the confusion matrices
METRIC_SCENARIOS = {
    "perfect": ([0, 1, 2, 3, 4, 0, 1, 2, 3, 4], [0, 1, 2, 3, 4, 0, 1, 2, 3, 4], F(1), F(1), F(1)),
    # per-class F1 = 2/3, 4/5, 2/3, 2/3, 2/3 with supports 3, 2, 2, 1, 2
    "mixed": ([0, 0, 0, 1, 1, 2, 2, 3, 4, 4], [0, 0, 1, 1, 1, 2, 3, 3, 4, 0], F(7, 10), F(52, 75), F(52, 75)),
    # class 4 never occurs: it contributes F1 = 0 to the macro mean but nothing to the weighted mean
    "absent_class": ([0, 1, 2, 3, 0, 1, 2, 3], [0, 1, 2, 3, 0, 1, 2, 3], F(1), F(4, 5), F(1)),
    # constant prediction: class 0 has P = 1/5, R = 1, F1 = 1/3; every other class has no predictions
    "constant": ([0, 0, 1, 1, 2, 2, 3, 3, 4, 4], [0] * 10, F(1, 5), F(1, 15), F(1, 15)),
    "all_wrong": ([0, 1, 2, 3, 4], [1, 2, 3, 4, 0], F(0), F(0), F(0)),
}
