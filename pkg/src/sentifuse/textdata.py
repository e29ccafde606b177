"""Tokenization, vocabulary construction, corpus loading and split generation.

Two on-disk formats are supported:

* two-file polarity: one sentence per line in ``<base>.pos`` / ``<base>.neg``
  (MR / CR / Subj convention, two classes, evaluated by cross-validation)
* labeled tsv: ``label<TAB>sentence`` lines (SST-2 convention); either a
  single file, or a directory holding ``train.tsv`` / ``test.tsv`` and an
  optional ``dev.tsv``, which yields a fixed split.

A small separable toy corpus (40 sentences, 2 classes) ships with the
package for tests and smoke runs; see ``toy_corpus``.
"""

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


class DataError(ValueError):
    """Unreadable or malformed corpus input; message carries the location."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word and punctuation tokens.

    Words are runs of word characters (apostrophes allowed inside); every
    other non-space character becomes its own token. Deterministic, and
    idempotent under join-then-retokenize.
    """
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Bijective token <-> index map with index 0 reserved for unknowns."""

    def __init__(self, tokens):
        self.index_to_token = [UNK_TOKEN, *tokens]
        self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}
        if len(self.token_to_index) != len(self.index_to_token):
            raise ValueError("duplicate tokens passed to Vocabulary")

    def __len__(self):
        return len(self.index_to_token)

    def __contains__(self, token):
        return token in self.token_to_index

    def index(self, token: str) -> int:
        """Index of a token; unknown tokens map to the reserved slot 0."""
        return self.token_to_index.get(token, 0)

    def encode(self, tokens) -> list[int]:
        return [self.index(t) for t in tokens]

    def decode(self, indices) -> list[str]:
        return [self.index_to_token[i] for i in indices]


def build_vocab(texts, min_count: int = 1) -> Vocabulary:
    """Vocabulary over all tokens appearing >= min_count times.

    Indices are assigned by descending frequency, ties broken
    lexicographically; everything rarer maps to the unknown slot.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    n_texts = 0
    for text in texts:
        n_texts += 1
        counts.update(tokenize(text))
    if n_texts == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class LabeledExample:
    tokens: list[int]          # vocabulary indices, non-empty
    label: int                 # class index in [0, num_classes)
    raw_text: str
    labeled: bool = True       # False: reconstruction-only (no class loss)


@dataclass
class SplitSpec:
    """How a corpus is evaluated: k-fold CV or a fixed file-given partition."""
    kind: str = "cv"                       # "cv" | "fixed"
    folds: int = 10
    seed: int = 0
    train_idx: list[int] = field(default_factory=list)
    dev_idx: list[int] = field(default_factory=list)
    test_idx: list[int] = field(default_factory=list)


@dataclass
class LabeledCorpus:
    examples: list[LabeledExample]
    num_classes: int
    name: str
    split_spec: SplitSpec
    vocab: Vocabulary

    def __len__(self):
        return len(self.examples)

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def stats(self) -> dict:
        lengths = [len(ex.tokens) for ex in self.examples]
        dist = Counter(ex.label for ex in self.examples)
        return {
            "name": self.name,
            "size": len(self.examples),
            "num_classes": self.num_classes,
            "avg_sentence_length": float(np.mean(lengths)) if lengths else 0.0,
            "label_counts": {int(k): int(v) for k, v in sorted(dist.items())},
            "vocab_size": len(self.vocab),
        }


def _read_lines(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return text.splitlines()


def _corpus_from_pairs(pairs, name, num_classes, split_spec, min_count):
    vocab = build_vocab((text for text, _ in pairs), min_count=min_count)
    examples = []
    for text, label in pairs:
        toks = vocab.encode(tokenize(text))
        if not toks:
            continue  # blank lines carry no example
        examples.append(LabeledExample(tokens=toks, label=label, raw_text=text))
    if not examples:
        raise DataError(f"corpus {name!r} contains no usable sentences")
    return LabeledCorpus(examples=examples, num_classes=num_classes, name=name,
                         split_spec=split_spec, vocab=vocab)


def _load_polarity(base: Path, min_count):
    pos, neg = Path(f"{base}.pos"), Path(f"{base}.neg")
    pairs = [(line, 0) for line in _read_lines(neg) if line.strip()]
    pairs += [(line, 1) for line in _read_lines(pos) if line.strip()]
    return _corpus_from_pairs(pairs, base.name, 2, SplitSpec(kind="cv"), min_count)


def _parse_tsv(path: Path, offset: int = 0):
    pairs = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: expected 'label<TAB>sentence'")
        label_tok, text = line.split("\t", 1)
        if not label_tok.strip().isdigit():
            raise DataError(f"{path}:{lineno}: unknown label token {label_tok!r}")
        pairs.append((text, int(label_tok)))
    return pairs


def _load_tsv(path: Path, min_count):
    if path.is_dir():
        train = _parse_tsv(path / "train.tsv")
        dev = _parse_tsv(path / "dev.tsv") if (path / "dev.tsv").exists() else []
        test = _parse_tsv(path / "test.tsv")
        pairs = train + dev + test
        n_train, n_dev = len(train), len(dev)
        spec = SplitSpec(
            kind="fixed",
            train_idx=list(range(n_train)),
            dev_idx=list(range(n_train, n_train + n_dev)),
            test_idx=list(range(n_train + n_dev, len(pairs))),
        )
    else:
        pairs = _parse_tsv(path)
        spec = SplitSpec(kind="cv")
    if not pairs:
        raise DataError(f"no labeled lines found under {path}")
    num_classes = max(label for _, label in pairs) + 1
    return _corpus_from_pairs(pairs, path.name, num_classes, spec, min_count)


def load_corpus(path, fmt: str, min_count: int = 1) -> LabeledCorpus:
    """Load a corpus from disk.

    fmt='two-file-polarity': ``path`` is the base name of a ``.pos``/``.neg``
    pair. fmt='labeled-tsv': ``path`` is a tsv file or a split directory.
    The vocabulary is built over every loaded sentence with the given
    ``min_count``; observed counts are whatever the files contain (no
    hard-coded expected sizes).
    """
    path = Path(path)
    if fmt == "two-file-polarity":
        return _load_polarity(path, min_count)
    if fmt == "labeled-tsv":
        return _load_tsv(path, min_count)
    raise DataError(f"unknown corpus format {fmt!r}")


def save_tsv(corpus: LabeledCorpus, path) -> None:
    """Serialize as labeled-tsv; loading the result preserves example count
    and label distribution."""
    lines = [f"{ex.label}\t{ex.raw_text}" for ex in corpus.examples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_splits(corpus: LabeledCorpus, spec: SplitSpec | None = None):
    """Train/test index partitions for each evaluation round.

    CV: seeded shuffle, k near-equal folds (sizes differ by at most one),
    fold i serving as the test set of round i. Fixed: the single declared
    partition (dev indices, if any, stay out of both sides).
    """
    spec = spec or corpus.split_spec
    n = len(corpus)
    if spec.kind == "fixed":
        return [(list(spec.train_idx), list(spec.test_idx))]
    k = spec.folds
    if k < 2:
        raise ValueError(f"cross-validation needs k >= 2, got {k}")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} examples")
    order = np.random.default_rng(spec.seed).permutation(n)
    folds = np.array_split(order, k)
    rounds = []
    for i in range(k):
        test = folds[i]
        train = np.concatenate([folds[j] for j in range(k) if j != i])
        rounds.append((train.tolist(), [int(x) for x in test]))
    return rounds


def toy_corpus(min_count: int = 1) -> LabeledCorpus:
    """The bundled 40-sentence, 2-class synthetic corpus.

    Polarity words are disjoint between classes, so the corpus is exactly
    learnable; filler vocabulary is shared to keep trees non-trivial.  Each
    polarity word recurs in six or seven sentences, so every cross-validation
    fold still sees trained sentiment words at test time.
    """
    data = resources.files("sentifuse.data")
    pairs = [(line, 0) for line in (data / "toy.neg").read_text().splitlines() if line.strip()]
    pairs += [(line, 1) for line in (data / "toy.pos").read_text().splitlines() if line.strip()]
    return _corpus_from_pairs(pairs, "toy", 2, SplitSpec(kind="cv", folds=5), min_count)
