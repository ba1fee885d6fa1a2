"""Random configurations for every differentiable operation, shared by the
unit tests and the acceptance gate."""

import numpy as np

from recam import attention as A
from recam import tensor as T


def _u(rng, *shape):
    return rng.uniform(-1.0, 1.0, shape)


def case_add(rng):
    m, n = rng.integers(1, 5, 2)
    return lambda a, b: T.add(a, b), [_u(rng, m, n), _u(rng, n)]


def case_mul(rng):
    m, n = rng.integers(1, 5, 2)
    return lambda a, b: T.mul(a, b), [_u(rng, m, n), _u(rng, m, n)]


def case_neg_sub(rng):
    n = int(rng.integers(1, 6))
    return lambda a, b: a - b * 0.5, [_u(rng, n), _u(rng, n)]


def case_where(rng):
    m, n = rng.integers(1, 5, 2)
    cond = rng.random((m, n)) < 0.5
    return lambda a, b: T.where(cond, a, b), [_u(rng, m, n), _u(rng, m, n)]


def case_matmul(rng):
    m, k, n = rng.integers(1, 6, 3)
    return T.matmul, [_u(rng, m, k), _u(rng, k, n)]


def case_batched_matmul(rng):
    b, m, k, n = rng.integers(1, 4, 4)
    return T.matmul, [_u(rng, b, m, k), _u(rng, b, k, n)]


def case_transpose(rng):
    shape = tuple(rng.integers(1, 4, 3))
    axes = tuple(rng.permutation(3))
    return lambda a: T.mul(T.transpose(a, axes), T.transpose(a, axes)), [_u(rng, *shape)]


def case_reshape(rng):
    m, n = rng.integers(1, 5, 2)
    return lambda a: T.reshape(a, (n, m)) * 2.0, [_u(rng, m, n)]


def case_getitem(rng):
    n = int(rng.integers(2, 7))
    idx = rng.integers(0, n, size=n + 2)
    return lambda a: T.getitem(a, idx), [_u(rng, n, 3)]


def case_concat(rng):
    m, n1, n2 = rng.integers(1, 4, 3)
    return lambda a, b: T.concat([a, b], axis=-1), [_u(rng, m, n1), _u(rng, m, n2)]


def case_stack(rng):
    n = int(rng.integers(1, 5))
    return lambda a, b: T.stack([a, b]), [_u(rng, n), _u(rng, n)]


def case_scatter_rows(rng):
    n = int(rng.integers(3, 7))
    idx = rng.choice(n, size=2, replace=False)
    return lambda a, b: T.scatter_rows(a, idx, b), [_u(rng, n, 3), _u(rng, 2, 3)]


def case_sum(rng):
    shape = tuple(rng.integers(1, 4, 3))
    axis = int(rng.integers(0, 3))
    return lambda a: T.sum(T.mul(a, a), axis=axis), [_u(rng, *shape)]


def case_mean(rng):
    m, n = rng.integers(1, 5, 2)
    return lambda a: T.mean(T.mul(a, a), axis=0), [_u(rng, m, n)]


def case_softmax(rng):
    m, n = rng.integers(1, 6, 2)
    return T.softmax_rows, [_u(rng, m, n)]


def case_log_softmax(rng):
    m, n = rng.integers(1, 6, 2)
    return T.log_softmax_rows, [_u(rng, m, n)]


def case_layer_norm(rng):
    m, d = int(rng.integers(1, 5)), int(rng.integers(2, 7))
    return lambda x, g, b: T.layer_norm(x, g, b, 1e-5), [_u(rng, m, d), _u(rng, d), _u(rng, d)]


def case_gelu(rng):
    n = int(rng.integers(1, 8))
    return T.gelu, [rng.uniform(-3, 3, n)]


def case_embedding(rng):
    v, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    ids = rng.integers(0, v, size=int(rng.integers(1, 8)))
    return lambda t: T.embedding_gather(t, ids), [_u(rng, v, d)]


def case_cross_entropy(rng):
    gold = int(rng.integers(0, 5))
    return lambda f: T.cross_entropy(f, gold), [_u(rng, 5) * 3]


def case_banded_scores(rng):
    h, n, dh = int(rng.integers(1, 3)), int(rng.integers(1, 9)), int(rng.integers(1, 4))
    half = int(rng.integers(0, 4))
    return lambda q, k: A.banded_scores(q, k, half), [_u(rng, h, n, dh), _u(rng, h, n, dh)]


def case_banded_mix(rng):
    h, n, dh = int(rng.integers(1, 3)), int(rng.integers(1, 9)), int(rng.integers(1, 4))
    half = int(rng.integers(0, 4))
    return lambda p, v: A.banded_mix(p, v, half), [_u(rng, h, n, 2 * half + 1), _u(rng, h, n, dh)]


def _attention_case(kernel):
    def case(rng):
        heads = int(rng.integers(1, 3))
        d = 2 * heads
        n = int(rng.integers(2, 10))
        window = int(rng.choice([1, 3, 5]))
        g = int(rng.integers(0, 3)) if kernel == "global" else 0
        globals_ = tuple(rng.choice(n, size=min(g, n), replace=False))
        shared = bool(rng.integers(0, 2))
        names = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"]
        if not shared:
            names += ["gwq", "gbq", "gwk", "gbk", "gwv", "gbv"]
        shapes = [(d, d) if nm.startswith(("w", "gw")) else (d,) for nm in names]

        def fn(x, *ws):
            params = A.AttentionParams(heads=heads, **dict(zip(names, ws)))
            if kernel == "dense":
                pattern = A.build_pattern(n, window if rng_pattern else "full", globals_)
                return A.dense_attention(x, params, pattern)
            if kernel == "windowed":
                return A.windowed_attention(x, params, window)
            return A.global_augmented_attention(x, params, A.build_pattern(n, window, globals_))

        rng_pattern = bool(rng.integers(0, 2))
        return fn, [_u(rng, n, d)] + [rng.normal(0, 0.7, s) for s in shapes]

    return case


OP_CASES = {
    "add": case_add,
    "mul": case_mul,
    "neg_sub": case_neg_sub,
    "where": case_where,
    "matmul": case_matmul,
    "batched_matmul": case_batched_matmul,
    "transpose": case_transpose,
    "reshape": case_reshape,
    "getitem": case_getitem,
    "concat": case_concat,
    "stack": case_stack,
    "scatter_rows": case_scatter_rows,
    "sum": case_sum,
    "mean": case_mean,
    "softmax_rows": case_softmax,
    "log_softmax_rows": case_log_softmax,
    "layer_norm": case_layer_norm,
    "gelu": case_gelu,
    "embedding_gather": case_embedding,
    "cross_entropy": case_cross_entropy,
    "banded_scores": case_banded_scores,
    "banded_mix": case_banded_mix,
    "dense_attention": _attention_case("dense"),
    "windowed_attention": _attention_case("windowed"),
    "global_augmented_attention": _attention_case("global"),
}
