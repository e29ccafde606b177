"""Text vectorization: one-hot encoding, embedding lookup, GloVe loading.

The embedding matrix stores one column per vocabulary token (dimension x
vocab size), so looking a token up is selecting the column its one-hot
indicator points at; the sparse lookup and the dense matrix-vector product
agree exactly (tested).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tn
from .textdata import DataError, Vocabulary


@dataclass
class OneHot:
    """Indicator of a single vocabulary slot: all zeros except ``index``."""
    index: int
    dim: int

    def dense(self) -> np.ndarray:
        v = np.zeros(self.dim)
        v[self.index] = 1.0
        return v


class EmbeddingMatrix:
    """Per-token embedding columns, optionally trained with everything else.

    weights: Tensor of shape [n, vocab size]. ``coverage`` is the fraction
    of vocabulary tokens that came from a pretrained file (1.0 for fully
    pretrained, 0.0 for random init).
    """

    def __init__(self, weights: tn.Tensor, vocab: Vocabulary, trainable: bool = True,
                 coverage: float = 0.0):
        n, cols = weights.shape
        if cols != len(vocab):
            raise ValueError(f"embedding has {cols} columns for a vocabulary of {len(vocab)}")
        if n < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.weights = weights
        self.vocab = vocab
        self.trainable = trainable
        self.coverage = coverage
        weights.requires_grad = trainable
        if trainable and weights.grad is None:
            weights.grad = np.zeros_like(weights.data)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


def one_hot(token: str, vocab: Vocabulary) -> OneHot:
    """One-hot indicator for a token; unknown tokens hit the reserved slot 0."""
    return OneHot(index=vocab.index(token), dim=len(vocab))


def lookup(emb: EmbeddingMatrix, eps: OneHot) -> tn.Tensor:
    """The embedding column selected by a one-hot indicator.

    Gradient flows into that single column when the matrix is trainable.
    """
    if eps.dim != len(emb.vocab):
        raise ValueError(f"one-hot dimension {eps.dim} != vocabulary size {len(emb.vocab)}")
    if not 0 <= eps.index < eps.dim:
        raise IndexError(f"one-hot index {eps.index} out of range [0, {eps.dim})")
    w = emb.weights
    t = eps.index

    def build(out):
        def bwd():
            if w.requires_grad:
                w.grad[:, t] += out.grad
        return bwd

    return tn.make_op("lookup", w.data[:, t].copy(), (w,), build)


def embed_sequence(emb: EmbeddingMatrix, indices) -> tn.Tensor:
    """Embeddings of a token-index sequence, stacked as an [m, n] matrix."""
    ids = np.asarray(indices, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot embed an empty token sequence")
    w = emb.weights

    def build(out):
        def bwd():
            if w.requires_grad:
                np.add.at(w.grad, (slice(None), ids), out.grad.T)
        return bwd

    return tn.make_op("embed_sequence", w.data[:, ids].T.copy(), (w,), build)


def init_gaussian(vocab: Vocabulary, n: int, seed: int = 0,
                  trainable: bool = True) -> EmbeddingMatrix:
    """Standard-normal columns for every token, deterministic per seed."""
    if n < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    weights = tn.Tensor(rng.standard_normal((n, len(vocab))))
    return EmbeddingMatrix(weights, vocab, trainable=trainable, coverage=0.0)


def load_glove(path, vocab: Vocabulary, n: int, seed: int = 0,
               trainable: bool = True) -> EmbeddingMatrix:
    """Fill embedding columns from a GloVe-format text file.

    Lines are ``token v1 ... vn`` (space separated). Vocabulary tokens
    missing from the file get seeded standard-normal columns, drawn in
    vocabulary-index order so the result is insensitive to the file's line
    order. ``coverage`` on the result reports the matched fraction.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read embedding file {path}: {e}") from e

    wanted = vocab.token_to_index
    found: dict[int, np.ndarray] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.rstrip().split(" ")
        token, values = parts[0], parts[1:]
        if len(values) != n:
            raise DataError(
                f"{path}:{lineno}: expected {n} values for {token!r}, found {len(values)}")
        idx = wanted.get(token)
        if idx is not None:
            try:
                found[idx] = np.array(values, dtype=np.float64)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: non-numeric value ({e})") from e

    rng = np.random.default_rng(seed)
    data = np.empty((n, len(vocab)))
    for idx in range(len(vocab)):
        if idx in found:
            data[:, idx] = found[idx]
        else:
            data[:, idx] = rng.standard_normal(n)
    coverage = len(found) / len(vocab)
    return EmbeddingMatrix(tn.Tensor(data), vocab, trainable=trainable, coverage=coverage)
