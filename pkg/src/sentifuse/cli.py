"""Command line entry point.

Subcommands: train, eval, cv, sweep-dim, gradcheck, tree, bench. Settings
come from defaults, overridden by a JSON config file (--config), overridden
by explicit flags; the output directory can additionally be set by the
SENTIFUSE_OUTDIR environment variable (an explicit --out-dir still wins).
Every run appends JSON lines to <out_dir>/metrics.jsonl.

Exit codes: 0 success, 1 bad usage or configuration (every violated
field is reported, not just the first), 2 runtime failure (bad data, failed
check, training abort).
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import checkpoint, dualchannel, kernels, optim, rae, textdata
from .dualchannel import VARIANTS
from .embeddings import init_gaussian, load_glove
from .textdata import DataError, LabeledExample, SplitSpec, tokenize

EMBED_DIM_MENU = (50, 100, 200, 300)
CORPUS_FORMATS = ("labeled-tsv", "two-file-polarity")
VARIANT_ALIASES = {"cnn": "cnn_only", "bisru": "bisru_only",
                   "bilstm": "bilstm_backend"}


@dataclass
class RunConfig:
    """Everything a run needs; ``validate`` returns all problems at once."""
    model: str = "fusion"                    # "rae" | "fusion"
    variant: str = "full"
    data: str | None = None                 # corpus path; None = bundled toy set
    data_format: str = "labeled-tsv"
    min_count: int = 1
    embed_dim: int = 50
    glove: str | None = None                # pretrained vectors, else random init
    trainable_embeddings: bool = True
    hidden_dim: int = 64
    attn_dim: int = 64
    kernel_widths: tuple = (3, 4, 5)
    filters_per_width: int = 100
    rec_weight: float = 0.2
    l2_penalty: float = 1e-4
    max_iter: int = 200
    tol: float = 1e-5
    epochs: int = 10
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 1
    folds: int = 10
    jobs: int = 1
    seed: int = 0
    out_dir: str = "runs"

    def validate(self) -> list[str]:
        problems = []

        def bad(field_name, message):
            problems.append(f"{field_name}: {message}")

        if self.model not in ("rae", "fusion"):
            bad("model", f"must be 'rae' or 'fusion', got {self.model!r}")
        if self.variant not in VARIANTS:
            bad("variant", f"must be one of {VARIANTS}, got {self.variant!r}")
        if self.data_format not in CORPUS_FORMATS:
            bad("data_format", f"must be one of {CORPUS_FORMATS}, got {self.data_format!r}")
        if self.embed_dim not in EMBED_DIM_MENU:
            bad("embed_dim", f"must be one of {EMBED_DIM_MENU}, got {self.embed_dim}")
        for name in ("min_count", "hidden_dim", "attn_dim", "filters_per_width",
                     "max_iter", "epochs", "batch_size", "jobs"):
            if getattr(self, name) < 1:
                bad(name, f"must be >= 1, got {getattr(self, name)}")
        for name in ("data", "glove"):
            value = getattr(self, name)
            if value is not None and "{dim}" not in str(value):
                path = Path(value)
                base_ok = path.exists() or Path(f"{value}.pos").exists()
                if not base_ok:
                    bad(name, f"path does not exist: {value}")
        if not self.kernel_widths or any(k < 1 for k in self.kernel_widths):
            bad("kernel_widths", f"need widths >= 1, got {self.kernel_widths}")
        if not 0.0 <= self.rec_weight <= 1.0:
            bad("rec_weight", f"must lie in [0, 1], got {self.rec_weight}")
        if self.l2_penalty < 0.0:
            bad("l2_penalty", f"must be >= 0, got {self.l2_penalty}")
        if self.tol <= 0.0:
            bad("tol", f"must be > 0, got {self.tol}")
        if self.lr < 0.0:
            bad("lr", f"must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            bad("momentum", f"must lie in [0, 1), got {self.momentum}")
        if self.folds < 2:
            bad("folds", f"must be >= 2, got {self.folds}")
        if self.seed < 0:
            bad("seed", f"must be >= 0, got {self.seed}")
        return problems


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 1."""


def _parse_widths(text):
    try:
        return tuple(int(p) for p in str(text).split(",") if p.strip())
    except ValueError:
        raise UsageError(f"kernel_widths: expected comma-separated ints, got {text!r}")


def build_config(args) -> RunConfig:
    """defaults < JSON config file < SENTIFUSE_OUTDIR < explicit flags."""
    values = asdict(RunConfig())
    known = set(values)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {path}: {e}")
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise UsageError(f"unknown config keys in {path}: {', '.join(unknown)}")
        values.update(loaded)
    env_out = os.environ.get("SENTIFUSE_OUTDIR")
    if env_out:
        values["out_dir"] = env_out
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    if isinstance(values["kernel_widths"], str):
        values["kernel_widths"] = _parse_widths(values["kernel_widths"])
    else:
        values["kernel_widths"] = tuple(values["kernel_widths"])
    values["variant"] = VARIANT_ALIASES.get(values["variant"], values["variant"])
    cfg = RunConfig(**values)
    problems = cfg.validate()
    if problems:
        raise UsageError("invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--model", choices=("rae", "fusion"))
    p.add_argument("--variant", choices=VARIANTS + tuple(VARIANT_ALIASES))
    p.add_argument("--data", help="corpus path (omit to use the bundled toy corpus)")
    p.add_argument("--data-format", dest="data_format", choices=CORPUS_FORMATS)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--glove", help="GloVe-format text file for embedding init")
    p.add_argument("--trainable-embeddings", dest="trainable_embeddings",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--attn-dim", dest="attn_dim", type=int)
    p.add_argument("--kernel-widths", dest="kernel_widths",
                   help="comma-separated widths, e.g. 3,4,5")
    p.add_argument("--filters-per-width", dest="filters_per_width", type=int)
    p.add_argument("--rec-weight", dest="rec_weight", type=float)
    p.add_argument("--l2-penalty", dest="l2_penalty", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--jobs", type=int, help="parallel fold workers for cv/sweep-dim")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")


def _load_corpus(cfg: RunConfig):
    if cfg.data is None:
        return textdata.toy_corpus(min_count=cfg.min_count)
    return textdata.load_corpus(cfg.data, cfg.data_format, min_count=cfg.min_count)


def _init_embeddings(cfg: RunConfig, vocab):
    if cfg.glove:
        return load_glove(cfg.glove, vocab, cfg.embed_dim, seed=cfg.seed,
                          trainable=cfg.trainable_embeddings)
    return init_gaussian(vocab, cfg.embed_dim, seed=cfg.seed,
                         trainable=cfg.trainable_embeddings)


def _metrics_path(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / "metrics.jsonl"


def _append_metrics(path: Path, record: dict):
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def _train_split(corpus):
    """Indices used for fitting: the fixed train partition when the corpus
    carries one, else everything."""
    spec = corpus.split_spec
    if spec.kind == "fixed" and spec.train_idx:
        return list(spec.train_idx)
    return list(range(len(corpus)))


def _train_one(cfg: RunConfig, corpus, train_examples, metrics=None, tag=None):
    """Fit one model per cfg; returns (kind, model_or_params, history)."""
    emb = _init_embeddings(cfg, corpus.vocab)
    note = {"event": "train_start", "model": cfg.model, "examples": len(train_examples)}
    if tag is not None:
        note["tag"] = tag
    if metrics:
        _append_metrics(metrics, note)
    if cfg.model == "rae":
        hyper = rae.RaeHyper(rec_weight=cfg.rec_weight, l2_penalty=cfg.l2_penalty,
                             num_classes=corpus.num_classes)
        params = rae.init_rae_params(emb, hyper, seed=cfg.seed)
        trace = rae.train_rae(train_examples, params, max_iter=cfg.max_iter, tol=cfg.tol)
        if metrics:
            for it, value, gnorm in trace:
                _append_metrics(metrics, {"event": "iteration", "tag": tag,
                                          "iter": it, "objective": value,
                                          "grad_norm": gnorm})
        return "rae", params, trace
    model = dualchannel.init_fusion(
        emb, kernel_widths=cfg.kernel_widths, filters_per_width=cfg.filters_per_width,
        hidden_dim=cfg.hidden_dim, attn_dim=cfg.attn_dim,
        num_classes=corpus.num_classes, variant=cfg.variant, seed=cfg.seed)

    def on_epoch(stats):
        if metrics:
            _append_metrics(metrics, {"event": "epoch", "tag": tag,
                                      "epoch": stats.epoch, "mean_loss": stats.mean_loss,
                                      "train_accuracy": stats.train_accuracy})

    history = dualchannel.train_fusion(train_examples, model, epochs=cfg.epochs,
                                       lr=cfg.lr, momentum=cfg.momentum,
                                       batch_size=cfg.batch_size, seed=cfg.seed,
                                       callback=on_epoch)
    return "fusion", model, history


def _evaluate(kind, fitted, examples) -> float:
    if kind == "rae":
        return rae.evaluate(examples, fitted)
    return dualchannel.evaluate(examples, fitted)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = build_config(args)
    corpus = _load_corpus(cfg)
    metrics = _metrics_path(cfg)
    train_examples = [corpus.examples[i] for i in _train_split(corpus)]
    kind, fitted, _ = _train_one(cfg, corpus, train_examples, metrics=metrics, tag="train")
    train_acc = _evaluate(kind, fitted, train_examples)
    summary = {"event": "train_done", "model": kind, "train_accuracy": train_acc,
               "examples": len(train_examples)}
    spec = corpus.split_spec
    if spec.kind == "fixed" and spec.test_idx:
        summary["test_accuracy"] = _evaluate(
            kind, fitted, [corpus.examples[i] for i in spec.test_idx])
    ckpt = Path(cfg.out_dir) / f"{kind}.npz"
    if kind == "rae":
        checkpoint.save_rae(ckpt, fitted, extra={"corpus": corpus.name})
    else:
        checkpoint.save_fusion(ckpt, fitted, extra={"corpus": corpus.name})
    summary["checkpoint"] = str(ckpt)
    _append_metrics(metrics, summary)
    print(json.dumps(summary))
    return 0


def _reencode(corpus, vocab):
    """Re-tokenize a corpus under a (checkpoint's) vocabulary."""
    out = []
    for ex in corpus.examples:
        toks = vocab.encode(tokenize(ex.raw_text))
        if toks:
            out.append(LabeledExample(tokens=toks, label=ex.label,
                                      raw_text=ex.raw_text, labeled=ex.labeled))
    return out


def _per_class_metrics(labels, preds, num_classes: int) -> dict:
    """Precision and recall per class (0.0 where a class has no predictions
    or no instances)."""
    out = {}
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        predicted = int(np.sum(preds == c))
        actual = int(np.sum(labels == c))
        out[str(c)] = {
            "precision": tp / predicted if predicted else 0.0,
            "recall": tp / actual if actual else 0.0,
            "support": actual,
        }
    return out


def cmd_eval(args) -> int:
    cfg = build_config(args)
    meta, _ = checkpoint._load(args.checkpoint)
    if meta["model"] == "rae":
        fitted, _ = checkpoint.load_rae(args.checkpoint)
    else:
        fitted, _ = checkpoint.load_fusion(args.checkpoint)
    corpus = _load_corpus(cfg)
    examples = _reencode(corpus, fitted.emb.vocab)
    spec = corpus.split_spec
    if spec.kind == "fixed" and spec.test_idx:
        examples = [examples[i] for i in spec.test_idx]
    if not examples:
        raise DataError("no evaluable examples in the dataset")
    if meta["model"] == "rae":
        preds = [rae.predict_sentence(ex.tokens, fitted) for ex in examples]
    else:
        preds = [dualchannel.predict(ex.tokens, fitted) for ex in examples]
    labels = [ex.label for ex in examples]
    acc = float(np.mean(np.asarray(preds) == np.asarray(labels)))
    result = {"event": "eval", "model": meta["model"], "accuracy": acc,
              "examples": len(examples),
              "per_class": _per_class_metrics(labels, preds, corpus.num_classes)}
    _append_metrics(_metrics_path(cfg), result)
    print(json.dumps(result))
    return 0


def _run_fold(payload):
    """Train/test one CV fold; top-level so process pools can import it."""
    cfg = RunConfig(**payload["cfg"])
    cfg = RunConfig(**{**asdict(cfg), "kernel_widths": tuple(cfg.kernel_widths)})
    corpus = _load_corpus(cfg)
    train_idx, test_idx = payload["train_idx"], payload["test_idx"]
    kind, fitted, _ = _train_one(cfg, corpus,
                                 [corpus.examples[i] for i in train_idx])
    acc = _evaluate(kind, fitted, [corpus.examples[i] for i in test_idx])
    return {"fold": payload["fold"], "accuracy": acc,
            "train_size": len(train_idx), "test_size": len(test_idx)}


def _cv_accuracies(cfg: RunConfig, metrics=None) -> list[dict]:
    corpus = _load_corpus(cfg)
    spec = SplitSpec(kind="cv", folds=cfg.folds, seed=cfg.seed)
    splits = textdata.make_splits(corpus, spec)
    payloads = [{"cfg": asdict(cfg), "fold": k, "train_idx": list(map(int, tr)),
                 "test_idx": list(map(int, te))}
                for k, (tr, te) in enumerate(splits)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_run_fold, payloads))
    else:
        rows = [_run_fold(p) for p in payloads]
    if metrics:
        for row in rows:
            _append_metrics(metrics, {"event": "fold", **row})
    return rows


def cmd_cv(args) -> int:
    cfg = build_config(args)
    metrics = _metrics_path(cfg)
    rows = _cv_accuracies(cfg, metrics=metrics)
    accs = np.array([r["accuracy"] for r in rows])
    summary = {"event": "cv_done", "model": cfg.model, "folds": cfg.folds,
               "mean_accuracy": float(accs.mean()), "std_accuracy": float(accs.std()),
               "fold_accuracies": [float(a) for a in accs]}
    _append_metrics(metrics, summary)
    print(json.dumps(summary))
    return 0


def cmd_sweep_dim(args) -> int:
    cfg = build_config(args)
    dims = _parse_widths(args.dims) if args.dims else EMBED_DIM_MENU
    bad = [d for d in dims if d not in EMBED_DIM_MENU]
    if bad:
        raise UsageError(f"dims: {bad} not in the supported menu {EMBED_DIM_MENU}")
    metrics = _metrics_path(cfg)
    rows = []
    for dim in dims:
        glove = cfg.glove.format(dim=dim) if cfg.glove else None
        if glove and not Path(glove).exists():
            print(f"warning: no embedding file for dim {dim} ({glove}); skipped",
                  file=sys.stderr)
            continue
        dim_cfg = RunConfig(**{**asdict(cfg), "embed_dim": dim, "glove": glove})
        folds = _cv_accuracies(dim_cfg, metrics=metrics)
        accs = np.array([r["accuracy"] for r in folds])
        row = {"embed_dim": dim, "mean_accuracy": float(accs.mean()),
               "std_accuracy": float(accs.std())}
        rows.append(row)
        _append_metrics(metrics, {"event": "sweep_point", **row})
    if not rows:
        raise DataError("no dimension could be swept (all embedding files missing)")
    best = max(rows, key=lambda r: r["mean_accuracy"])
    summary = {"event": "sweep_done", "points": rows, "best_dim": best["embed_dim"],
               "best_accuracy": best["mean_accuracy"]}
    _append_metrics(metrics, summary)
    print(json.dumps(summary))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = build_config(args)
    corpus = _load_corpus(cfg)
    examples = corpus.examples[:args.sentences]
    if cfg.model == "rae":
        emb = _init_embeddings(cfg, corpus.vocab)
        hyper = rae.RaeHyper(rec_weight=cfg.rec_weight, l2_penalty=cfg.l2_penalty,
                             num_classes=corpus.num_classes)
        params = rae.init_rae_params(emb, hyper, seed=cfg.seed)
        trees = rae.build_trees(examples, params)
        fn = rae.make_objective(examples, params, frozen_trees=trees)
        x0, _ = optim.flatten(params.parameters())
    else:
        emb = _init_embeddings(cfg, corpus.vocab)
        model = dualchannel.init_fusion(
            emb, kernel_widths=cfg.kernel_widths,
            filters_per_width=cfg.filters_per_width, hidden_dim=cfg.hidden_dim,
            attn_dim=cfg.attn_dim, num_classes=corpus.num_classes,
            variant=cfg.variant, seed=cfg.seed)
        fn = dualchannel.make_objective(examples, model)
        x0, _ = optim.flatten(model.parameters())
    samples = args.coords if args.coords else None
    # skip coordinates whose slope is too small for central differences to
    # decide at this tolerance; they would only report rounding noise
    floor = optim.conditioning_floor(fn(x0)[0], tol=args.gc_tol)
    report = optim.grad_check(fn, x0, samples=samples, seed=cfg.seed,
                              tol=args.gc_tol, fd_floor=floor)
    informative = report.num_checked - report.num_small
    print(report.to_json() if args.json else report.format_text())
    if report.passed and informative == 0:
        print("no coordinate had enough signal at this tolerance; "
              "verification inconclusive", file=sys.stderr)
        return 2
    return 0 if report.passed else 2


def cmd_tree(args) -> int:
    cfg = build_config(args)
    words = tokenize(args.sentence)
    if not words:
        raise DataError("sentence produced no tokens")
    if args.checkpoint:
        params, _ = checkpoint.load_rae(args.checkpoint)
    else:
        vocab = textdata.Vocabulary(sorted(set(words)))
        emb = _init_embeddings(cfg, vocab)
        hyper = rae.RaeHyper(rec_weight=cfg.rec_weight, l2_penalty=cfg.l2_penalty)
        params = rae.init_rae_params(emb, hyper, seed=cfg.seed)
    tokens = params.emb.vocab.encode(words)
    tree = rae.greedy_build_tree(rae.leaf_matrix(tokens, params), params)
    print(rae.format_tree(tree, words))
    if args.checkpoint:
        print(json.dumps({"predicted_class": rae.predict_sentence(tokens, params)}))
    return 0


def cmd_bench(args) -> int:
    cfg = build_config(args)
    print(f"kernel backend: {kernels.active_backend()}")
    if args.what in ("variants", "both"):
        corpus = _load_corpus(cfg)
        variants = tuple(VARIANT_ALIASES.get(v, v) for v in args.variants.split(","))
        results = bench_mod.run_bench(
            corpus, variants=variants, embed_dim=cfg.embed_dim,
            hidden_dim=cfg.hidden_dim, attn_dim=cfg.attn_dim,
            filters_per_width=cfg.filters_per_width, epochs=max(2, cfg.epochs),
            lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed)
        print(bench_mod.report_bench(results))
        if args.csv:
            bench_mod.write_csv(results, args.csv)
    if args.what in ("kernels", "both"):
        timings = bench_mod.compare_backends(repeats=args.repeats, seed=cfg.seed)
        print(bench_mod.report_kernels(timings))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sentifuse",
        description="Sentence sentiment models: recursive autoencoder and "
                    "dual-channel CNN + bidirectional SRU fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a corpus")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross validation")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_cv)

    p = sub.add_parser("sweep-dim", help="cross-validate over embedding sizes")
    _add_config_flags(p)
    p.add_argument("--dims", help=f"comma-separated subset of {EMBED_DIM_MENU}")
    p.set_defaults(fn=cmd_sweep_dim)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_config_flags(p)
    p.add_argument("--sentences", type=int, default=2,
                   help="corpus sentences in the objective")
    p.add_argument("--coords", type=int, default=150,
                   help="random coordinates to probe (0 = all)")
    p.add_argument("--gc-tol", type=float, default=1e-5)
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("tree", help="print the greedy merge tree of a sentence")
    _add_config_flags(p)
    p.add_argument("--sentence", required=True)
    p.add_argument("--checkpoint", help="trained autoencoder checkpoint")
    p.set_defaults(fn=cmd_tree)

    p = sub.add_parser("bench", help="training-time and kernel benchmarks")
    _add_config_flags(p)
    p.add_argument("--what", choices=("variants", "kernels", "both"), default="variants")
    p.add_argument("--variants", default="full,bilstm_backend",
                   help="comma-separated model variants to time")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--csv", help="also write results to this CSV file")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, checkpoint.CheckpointError, optim.OptimError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
