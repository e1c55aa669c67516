"""Pretrained word embeddings: loading, serialization, and document lookup.

Only the word2vec *text* format is supported: a header line
``<vocab_size> <dim>`` followed by one ``word v1 ... v_dim`` line per word.
Vectors are stored as float32. Tables are immutable after load; lookups are
pure, so everything here is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import TokenSeq
from .errors import DataError


@dataclass
class EmbeddingTable:
    name: str
    dim: int
    vocab: dict = field(repr=False)
    vectors: np.ndarray = field(repr=False)  # (len(vocab), dim) float32


@dataclass
class DocMatrix:
    """One document as a (length x dim) float32 matrix.

    Rows for PAD positions and out-of-vocabulary tokens are exactly zero.
    """

    values: np.ndarray
    real_length: int


def load_embeddings(path, name: str) -> EmbeddingTable:
    """Parse a word2vec text file; errors carry the offending line number."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read embeddings {path}: {exc}") from exc
    with fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise DataError(f"{path}: malformed header line (want '<vocab_size> <dim>')")
        try:
            vocab_size, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{path}: non-integer header fields {header!r}") from None
        if vocab_size < 0 or dim < 1:
            raise DataError(f"{path}: invalid header values {vocab_size} {dim}")

        vocab: dict = {}
        vectors = np.empty((vocab_size, dim), dtype=np.float32)
        lineno = 1
        for line in fh:
            lineno += 1
            fields = line.split()
            if not fields:
                continue
            if len(vocab) >= vocab_size:
                raise DataError(
                    f"{path}: more words than the header's {vocab_size} at line {lineno}"
                )
            word = fields[0]
            if len(fields) - 1 != dim:
                raise DataError(f"{path}: expected {dim} components at line {lineno}")
            if word in vocab:
                raise DataError(f"{path}: duplicate word {word!r} at line {lineno}")
            try:
                vectors[len(vocab)] = [float(v) for v in fields[1:]]
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric component at line {lineno}"
                ) from None
            vocab[word] = len(vocab)
        if len(vocab) != vocab_size:
            raise DataError(
                f"{path}: header promises {vocab_size} words, file has {len(vocab)}"
            )
    return EmbeddingTable(name=name, dim=dim, vocab=vocab, vectors=vectors)


def write_embeddings(table: EmbeddingTable, path) -> None:
    """Serialize in the same text format, value-exact at float32 precision."""
    words = sorted(table.vocab, key=table.vocab.get)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"{len(words)} {table.dim}\n")
        for word in words:
            row = table.vectors[table.vocab[word]]
            fh.write(word + " " + " ".join(str(v) for v in row) + "\n")


def lookup_doc(table: EmbeddingTable, seq: TokenSeq) -> DocMatrix:
    """Map a token sequence onto its embedding rows.

    Unknown tokens and PAD positions get the zero vector, so they contribute
    nothing to convolution sums.
    """
    out = np.zeros((len(seq.tokens), table.dim), dtype=np.float32)
    for i in range(seq.real_length):
        row = table.vocab.get(seq.tokens[i])
        if row is not None:
            out[i] = table.vectors[row]
    return DocMatrix(out, seq.real_length)


def lookup_docs(table: EmbeddingTable, seqs: Sequence[TokenSeq]) -> np.ndarray:
    """Stack lookup_doc over a corpus into one (N, L, dim) float32 array."""
    if not seqs:
        return np.zeros((0, 0, table.dim), dtype=np.float32)
    out = np.zeros((len(seqs), len(seqs[0].tokens), table.dim), dtype=np.float32)
    for n, seq in enumerate(seqs):
        out[n] = lookup_doc(table, seq).values
    return out
