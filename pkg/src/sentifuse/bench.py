"""Wall-clock benchmarks.

``run_bench`` times full training epochs of the classifier variants on one
corpus under one shared configuration fingerprint (embedding size, hidden
size, corpus size, seed); the headline comparison is the SRU-based channel
against the LSTM baseline. The first epoch of every variant is a warmup
(jit compilation, allocator) and is excluded from statistics.
``compare_backends`` times the raw scan kernels under every importable
backend (jitted vs pure numpy).

All clocks are ``perf_counter``. Measured times vary run to run; the
computed losses do not (same seed, same numbers).
"""

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .dualchannel import init_fusion, train_fusion
from .embeddings import init_gaussian


@dataclass
class BenchResult:
    """Per-variant epoch timing plus the shared config fingerprint."""
    variant: str
    epochs: int                  # timed epochs (warmup excluded)
    mean_ms: float
    median_ms: float
    stddev_ms: float
    tokens_per_sec: float
    n: int                       # embedding dimension
    d: int                       # recurrent hidden dimension
    corpus_size: int
    seed: int
    failed: bool = False

    def fingerprint(self):
        return (self.n, self.d, self.corpus_size, self.seed)


_CSV_COLUMNS = ["variant", "mean_ms", "median_ms", "stddev_ms",
                "tokens_per_sec", "n", "d", "corpus", "seed"]


def run_bench(corpus, variants=("full", "bilstm_backend"), embed_dim: int = 50,
              hidden_dim: int = 64, attn_dim: int = 64, filters_per_width: int = 32,
              epochs: int = 2, lr: float = 0.01, batch_size: int = 1,
              seed: int = 0) -> list[BenchResult]:
    """Per-epoch training wall time for each variant, fastest first.

    Every variant starts from a fresh model with the same seed, so all see
    identical data, update counts, and embedding draws; only the
    architecture differs. ``epochs`` counts timed epochs (>= 2); one extra
    warmup epoch is run and discarded. A variant that raises during training
    is reported with ``failed=True`` and NaN times instead of aborting the
    whole run.
    """
    examples = list(corpus.examples)
    if not examples:
        raise ValueError("run_bench needs a non-empty corpus")
    if epochs < 2:
        raise ValueError(f"need >= 2 timed epochs, got {epochs}")
    tokens_per_epoch = sum(len(ex.tokens) for ex in examples)
    results = []
    for variant in variants:
        try:
            emb = init_gaussian(corpus.vocab, embed_dim, seed=seed)
            model = init_fusion(emb, filters_per_width=filters_per_width,
                                hidden_dim=hidden_dim, attn_dim=attn_dim,
                                num_classes=corpus.num_classes, variant=variant,
                                seed=seed)
            history = train_fusion(examples, model, epochs=epochs + 1, lr=lr,
                                   batch_size=batch_size, seed=seed)
            times_ms = np.array([h.seconds for h in history[1:]]) * 1000.0
            mean_ms = float(times_ms.mean())
            results.append(BenchResult(
                variant=variant, epochs=epochs, mean_ms=mean_ms,
                median_ms=float(np.median(times_ms)),
                stddev_ms=float(times_ms.std()),
                tokens_per_sec=tokens_per_epoch / (mean_ms / 1000.0),
                n=embed_dim, d=hidden_dim, corpus_size=len(examples), seed=seed))
        except Exception:
            results.append(BenchResult(
                variant=variant, epochs=0, mean_ms=math.nan, median_ms=math.nan,
                stddev_ms=math.nan, tokens_per_sec=math.nan, n=embed_dim,
                d=hidden_dim, corpus_size=len(examples), seed=seed, failed=True))
    ok = sorted((r for r in results if not r.failed), key=lambda r: r.mean_ms)
    return ok + [r for r in results if r.failed]


@dataclass
class KernelTiming:
    backend: str
    mean_ms: float
    stddev_ms: float
    repeats: int


def compare_backends(seq_len: int = 128, hidden_dim: int = 64, repeats: int = 20,
                     seed: int = 0) -> list[KernelTiming]:
    """Time one forward+backward of both scan kernels under each backend."""
    rng = np.random.default_rng(seed)
    xh = rng.standard_normal((seq_len, hidden_dim))
    f = 1.0 / (1.0 + np.exp(-rng.standard_normal((seq_len, hidden_dim))))
    dc = rng.standard_normal((seq_len, hidden_dim))
    xp = rng.standard_normal((seq_len, 4 * hidden_dim))
    u = rng.standard_normal((4 * hidden_dim, hidden_dim)) * 0.1
    dh = rng.standard_normal((seq_len, hidden_dim))

    results = []
    for backend, table in sorted(kernels.available_backends().items()):
        def episode(table=table):
            c = table["sru_scan_fwd"](xh, f)
            table["sru_scan_bwd"](xh, f, c, dc)
            h, cc, gates = table["lstm_scan_fwd"](xp, u)
            table["lstm_scan_bwd"](xp, u, h, cc, gates, dh)

        episode()  # warmup: compilation
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            episode()
            samples.append((time.perf_counter() - t0) * 1000.0)
        results.append(KernelTiming(backend=backend, mean_ms=float(np.mean(samples)),
                                    stddev_ms=float(np.std(samples)), repeats=repeats))
    return results


def _variant_row(r: BenchResult) -> list[str]:
    if r.failed:
        return [r.variant, "FAILED", "-", "-", "-"]
    return [r.variant, f"{r.mean_ms:.3f}", f"{r.median_ms:.3f}",
            f"{r.stddev_ms:.3f}", f"{r.tokens_per_sec:.0f}"]


def report_bench(results) -> str:
    """Aligned text table (model, time/ms columns); header only when empty."""
    table = [["model", "mean_ms", "median_ms", "stddev_ms", "tokens/s"]]
    table += [_variant_row(r) for r in results]
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                     for row in table)


def report_kernels(results: list[KernelTiming]) -> str:
    table = [["backend", "mean_ms", "stddev_ms", "repeats"]]
    table += [[r.backend, f"{r.mean_ms:.3f}", f"{r.stddev_ms:.3f}", str(r.repeats)]
              for r in results]
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                     for row in table)


def write_csv(results, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for r in results:
            writer.writerow([r.variant, repr(r.mean_ms), repr(r.median_ms),
                             repr(r.stddev_ms), repr(r.tokens_per_sec),
                             r.n, r.d, r.corpus_size, r.seed])


def read_csv(path) -> list[dict]:
    """Parse a benchmark CSV back into typed rows."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != _CSV_COLUMNS:
        raise ValueError(f"{path} is not a benchmark CSV (bad header)")
    out = []
    for variant, mean, median, std, tps, n, d, corpus, seed in rows[1:]:
        out.append({"variant": variant, "mean_ms": float(mean),
                    "median_ms": float(median), "stddev_ms": float(std),
                    "tokens_per_sec": float(tps), "n": int(n), "d": int(d),
                    "corpus": int(corpus), "seed": int(seed)})
    return out
