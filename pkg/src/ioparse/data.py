"""Corpus ingestion, vocabulary, embeddings, sampling, and batching.

Corpora are plain UTF-8 text, one whitespace-tokenized sentence per line.
Embeddings use the common text layout of one `token f1 ... fD` row per
line; any token without a row receives a deterministic pseudo-random
vector derived from hashing the token together with the run seed, so an
open vocabulary never breaks reproducibility.
"""

from __future__ import annotations

import hashlib

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def read_corpus(path: str) -> list[list[str]]:
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split()
            if tokens:
                sentences.append(tokens)
    if not sentences:
        raise DataError(f"corpus {path} contains no sentences")
    return sentences


class Vocab:
    """Dense token ids plus corpus frequencies, in first-seen order."""

    def __init__(self):
        self._ids: dict[str, int] = {}
        self._tokens: list[str] = []
        self._freqs: list[int] = []

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def add(self, token: str) -> int:
        idx = self._ids.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._ids[token] = idx
            self._tokens.append(token)
            self._freqs.append(0)
        self._freqs[idx] += 1
        return idx

    def id(self, token: str) -> int:
        return self._ids[token]

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def freq(self, token: str) -> int:
        return self._freqs[self._ids[token]]

    def tokens(self) -> list[str]:
        return list(self._tokens)

    def frequencies(self) -> np.ndarray:
        return np.asarray(self._freqs, dtype=np.float64)


def build_vocab(corpus: list[list[str]]) -> Vocab:
    if not corpus:
        raise DataError("cannot build a vocabulary from an empty corpus")
    vocab = Vocab()
    for sentence in corpus:
        for token in sentence:
            if not token:
                raise DataError("empty token in corpus")
            vocab.add(token)
    return vocab


def _fallback_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x1f{token}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.uniform(-0.1, 0.1, dim)


class EmbeddingTable:
    """Token -> input vector, total over any token.

    File rows win; everything else falls back to the seeded hash vector.
    """

    def __init__(self, dim: int, seed: int, rows: dict[str, np.ndarray], path: str | None):
        self.dim = dim
        self.seed = seed
        self.rows = rows
        self.path = path
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def fallback_only(cls, dim: int, seed: int) -> "EmbeddingTable":
        return cls(dim, seed, {}, None)

    @classmethod
    def from_file(cls, path: str, dim: int, seed: int) -> "EmbeddingTable":
        rows: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                token, values = parts[0], parts[1:]
                if len(values) != dim:
                    raise DataError(
                        f"{path}:{lineno}: expected {dim} values for "
                        f"{token!r}, got {len(values)}"
                    )
                try:
                    rows[token] = np.array([float(v) for v in values])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: malformed row: {exc}") from None
        return cls(dim, seed, rows, path)

    def is_fallback(self, token: str) -> bool:
        return token not in self.rows

    def vector(self, token: str) -> np.ndarray:
        vec = self.rows.get(token)
        if vec is not None:
            return vec
        vec = self._cache.get(token)
        if vec is None:
            vec = _fallback_vector(token, self.dim, self.seed)
            self._cache[token] = vec
        return vec

    def matrix(self, tokens: list[str]) -> np.ndarray:
        return np.stack([self.vector(t) for t in tokens])


def load_embeddings(path: str, vocab: Vocab, dim: int, seed: int = 0) -> EmbeddingTable:
    """Read an embedding file and check it resolves the whole vocabulary."""
    table = EmbeddingTable.from_file(path, dim, seed)
    for token in vocab.tokens():
        table.vector(token)
    return table


class NegativeSampler:
    """Frequency-proportional token draws from a seeded stream.

    The exponent reshapes the distribution (freq ** exponent); 1.0 keeps
    raw frequencies.
    """

    def __init__(self, vocab: Vocab, seed: int = 0, exponent: float = 1.0):
        if len(vocab) == 0:
            raise DataError("cannot sample from an empty vocabulary")
        self.vocab = vocab
        weights = vocab.frequencies() ** exponent
        self.cumulative = np.cumsum(weights)
        self.cumulative /= self.cumulative[-1]
        self.rng = np.random.default_rng(seed)

    def sample(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one sample")
        u = self.rng.random(n)
        return np.searchsorted(self.cumulative, u, side="right")

    def sample_tokens(self, n: int) -> list[str]:
        return [self.vocab.token(i) for i in self.sample(n)]


def batch_by_length(corpus: list[list[str]], batch_size: int) -> list[list[int]]:
    """Partition sentence indices into length-uniform batches.

    Every sentence lands in exactly one batch; batches never mix lengths.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    by_length: dict[int, list[int]] = {}
    for idx, sentence in enumerate(corpus):
        by_length.setdefault(len(sentence), []).append(idx)
    batches = []
    for length in sorted(by_length):
        group = by_length[length]
        for i in range(0, len(group), batch_size):
            batches.append(group[i : i + batch_size])
    return batches
