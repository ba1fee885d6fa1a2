"""ReCAM-style samples: loading, tokenization, vocabulary, answer sequences and chunking."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, BOS, EOS, Q_OPEN, Q_CLOSE, ENT_OPEN, ENT_CLOSE, PLACEHOLDER = range(9)
SPECIAL_TOKENS = ("<pad>", "<unk>", "<s>", "</s>", "<q>", "</q>", "<ent>", "</ent>", "@placeholder")
NUM_OPTIONS = 5

_TOKEN_RE = re.compile(r"</?(?:s|q|ent|pad|unk)>|@placeholder|\w+|[^\w\s]")
_PLACEHOLDER_RE = re.compile(r"@placeholder", re.IGNORECASE)


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class SchemaError(DataError):
    pass


class SampleError(DataError):
    pass


class UnchunkableSampleError(DataError):
    pass


class FrozenVocabError(RuntimeError):
    pass


@dataclass(frozen=True)
class RecamSample:
    passage: str
    question: str
    options: tuple[str, ...]
    label: int | None = None

    def __post_init__(self):
        n = len(_PLACEHOLDER_RE.findall(self.question))
        if n != 1:
            raise SampleError(f"question must contain exactly one placeholder, found {n}: {self.question!r}")
        if len(self.options) != NUM_OPTIONS:
            raise SampleError(f"expected {NUM_OPTIONS} options, got {len(self.options)}")
        for opt in self.options:
            if not tokenize(opt):
                raise SampleError(f"option {opt!r} has no tokens")
        if self.label is not None and not (isinstance(self.label, int) and 0 <= self.label < NUM_OPTIONS):
            raise SampleError(f"label {self.label!r} outside 0..{NUM_OPTIONS - 1}")


def tokenize(text: str) -> list[str]:
    """Lowercased word-level tokens with punctuation split off."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIAL_TOKENS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        self.frozen = False
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token in self.stoi:
            return self.stoi[token]
        if self.frozen:
            raise FrozenVocabError(f"cannot add {token!r} to a frozen vocabulary")
        self.stoi[token] = len(self.itos)
        self.itos.append(token)
        return self.stoi[token]

    def freeze(self) -> Vocab:
        self.frozen = True
        return self

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def encode_text(self, text: str) -> list[int]:
        return self.encode(tokenize(text))

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> Vocab:
        if tuple(itos[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise DataError("vocabulary does not start with the special tokens")
        return cls(itos[len(SPECIAL_TOKENS) :]).freeze()


def build_vocab(samples: Sequence[RecamSample], min_count: int = 1) -> Vocab:
    """Frozen vocabulary of tokens seen at least ``min_count`` times."""
    if not samples:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for s in samples:
        counts.update(tokenize(s.passage))
        counts.update(tokenize(s.question))
        for opt in s.options:
            counts.update(tokenize(opt))
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIAL_TOKENS),
                  key=lambda t: (-counts[t], t))
    return Vocab(kept).freeze()


# ------------------------------------------------------------------------ I/O


def _normalize_question(q: str) -> str:
    return _PLACEHOLDER_RE.sub("@placeholder", q)


def sample_from_record(record: dict) -> RecamSample:
    missing = [k for k in ("article", "question", *(f"option_{i}" for i in range(NUM_OPTIONS))) if k not in record]
    if missing:
        raise SchemaError(f"missing field(s): {', '.join(missing)}")
    article = record["article"]
    if isinstance(article, list):
        article = " ".join(article)
    label = record.get("label")
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise SchemaError(f"label must be an integer, got {label!r}")
    return RecamSample(
        passage=article,
        question=_normalize_question(record["question"]),
        options=tuple(str(record[f"option_{i}"]) for i in range(NUM_OPTIONS)),
        label=label,
    )


def sample_to_record(sample: RecamSample) -> dict:
    rec = {"article": sample.passage, "question": sample.question}
    for i, opt in enumerate(sample.options):
        rec[f"option_{i}"] = opt
    if sample.label is not None:
        rec["label"] = sample.label
    return rec


def load_jsonl(path) -> list[RecamSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise ParseError(path, line_no, "expected a JSON object")
            try:
                samples.append(sample_from_record(record))
            except DataError as exc:
                raise type(exc)(f"{path}:{line_no}: {exc}") from None
    return samples


def write_jsonl(samples: Iterable[RecamSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), ensure_ascii=False) + "\n")


# ------------------------------------------------------------ model sequences


def build_answer_sequence(sample: RecamSample, vocab: Vocab) -> list[int]:
    """``<q> question </q>`` followed by ``<ent> option </ent>`` for each option."""
    seq = [Q_OPEN, *vocab.encode_text(sample.question), Q_CLOSE]
    for opt in sample.options:
        seq += [ENT_OPEN, *vocab.encode_text(opt), ENT_CLOSE]
    return seq


@dataclass
class ChunkSet:
    """One sample split into model-length sequences ``<s> piece </s> + a``."""

    chunks: list[list[int]]
    a_starts: list[int]
    ent_positions: list[tuple[int, ...]]
    sample: RecamSample | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.chunks)

    def passage_pieces(self) -> list[list[int]]:
        return [c[1 : a - 1] for c, a in zip(self.chunks, self.a_starts)]

    def answer_segments(self) -> list[list[int]]:
        return [c[a:] for c, a in zip(self.chunks, self.a_starts)]

    def permuted(self, order: Sequence[int]) -> ChunkSet:
        """Same chunks with candidate segments reordered; ``order[j]`` is the old index of new slot j."""
        chunks, a_starts, ents = [], [], []
        for c, a, pos in zip(self.chunks, self.a_starts, self.ent_positions):
            bounds = list(pos) + [len(c)]
            segs = [c[bounds[j] : bounds[j + 1]] for j in range(NUM_OPTIONS)]
            head = c[: pos[0]]
            new = list(head)
            new_pos = []
            for j in order:
                new_pos.append(len(new))
                new += segs[j]
            chunks.append(new)
            a_starts.append(a)
            ents.append(tuple(new_pos))
        return ChunkSet(chunks, a_starts, ents, self.sample)


def ent_positions(ids: Sequence[int]) -> tuple[int, ...]:
    return tuple(i for i, t in enumerate(ids) if t == ENT_OPEN)


def build_chunks(sample: RecamSample, vocab: Vocab, max_seq_len: int) -> ChunkSet:
    a = build_answer_sequence(sample, vocab)
    piece = max_seq_len - len(a) - 2
    if piece < 1:
        raise UnchunkableSampleError(
            f"answer sequence of {len(a)} tokens leaves no room for context within {max_seq_len} "
            f"(question {sample.question!r})"
        )
    passage = vocab.encode_text(sample.passage)
    n_chunks = max(1, math.ceil(len(passage) / piece))
    chunks, a_starts, ents = [], [], []
    for i in range(n_chunks):
        body = passage[i * piece : (i + 1) * piece]
        b = [BOS, *body, EOS, *a]
        chunks.append(b)
        a_starts.append(len(body) + 2)
        ents.append(ent_positions(b))
    return ChunkSet(chunks, a_starts, ents, sample)


# ------------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class SyntheticRule:
    """Trigger words (hyponyms) each pointing at one category word (hypernym).

    ``placement`` puts the trigger right after the placeholder in the question
    ("question") or at a random passage position ("passage").
    """

    n_categories: int = 5
    triggers_per_category: int = 1
    placement: str = "question"

    def __post_init__(self):
        if self.placement not in ("question", "passage"):
            raise ValueError(f"placement must be 'question' or 'passage', got {self.placement!r}")

    def category(self, k: int) -> str:
        return f"cat{k}"

    def trigger(self, k: int, j: int) -> str:
        return f"sub{k}x{j}"

    def trigger_map(self) -> dict[str, str]:
        return {self.trigger(k, j): self.category(k)
                for k in range(self.n_categories) for j in range(self.triggers_per_category)}

    def answer(self, sample: RecamSample) -> int | None:
        """Option index selected by the rule, or ``None`` when no single trigger category occurs."""
        tmap = self.trigger_map()
        tokens = tokenize(sample.question) + tokenize(sample.passage)
        cats = {tmap[t] for t in tokens if t in tmap}
        if len(cats) != 1:
            return None
        (cat,) = cats
        return sample.options.index(cat) if cat in sample.options else None


def generate_synthetic(count: int, vocab_size: int = 200, passage_len: int = 40, seed: int = 0,
                       rule: SyntheticRule = SyntheticRule()) -> list[RecamSample]:
    """Labeled cloze samples whose answer is the category of the one trigger word.

    Passages are ``passage_len`` filler words drawn from ``vocab_size`` distinct fillers.
    """
    if passage_len < 10:
        raise ValueError("passage_len must be at least 10")
    if vocab_size < 1:
        raise ValueError("vocab_size must be positive")
    if rule.n_categories < NUM_OPTIONS:
        raise ValueError(f"need at least {NUM_OPTIONS} categories")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        label = int(rng.integers(NUM_OPTIONS))
        cats = rng.permutation(rule.n_categories)[:NUM_OPTIONS]
        gold = int(cats[0])
        others = [int(c) for c in cats[1:]]
        options = others[:label] + [gold] + others[label:]
        trigger = rule.trigger(gold, int(rng.integers(rule.triggers_per_category)))
        words = [f"w{i}" for i in rng.integers(vocab_size, size=passage_len)]
        if rule.placement == "passage":
            words[int(rng.integers(passage_len))] = trigger
            question = "the @placeholder of " + " ".join(f"w{i}" for i in rng.integers(vocab_size, size=2))
        else:
            question = f"the @placeholder of {trigger}"
        samples.append(RecamSample(
            passage=" ".join(words) + " .",
            question=question,
            options=tuple(rule.category(c) for c in options),
            label=label,
        ))
    return samples


def dataset_stats(samples: Sequence[RecamSample]) -> dict:
    """Sample count, token-length maxima and label histogram."""
    passage_lens = [len(tokenize(s.passage)) for s in samples]
    question_lens = [len(tokenize(s.question)) for s in samples]
    hist = [0] * NUM_OPTIONS
    unlabeled = 0
    for s in samples:
        if s.label is None:
            unlabeled += 1
        else:
            hist[s.label] += 1
    return {
        "samples": len(samples),
        "max_passage_tokens": max(passage_lens, default=0),
        "mean_passage_tokens": float(np.mean(passage_lens)) if samples else 0.0,
        "max_question_tokens": max(question_lens, default=0),
        "label_histogram": hist,
        "unlabeled": unlabeled,
    }
