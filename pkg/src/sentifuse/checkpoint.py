"""Model persistence: one ``.npz`` file per model.

The archive holds every parameter array under its manifest name plus a
``__meta__`` JSON string carrying the format version, model kind, the full
vocabulary, and the hyperparameters needed to rebuild the model object.
Loading validates the version and every array shape, so a stale or truncated
file fails loudly instead of silently mis-shaping a model.
"""

import json
from pathlib import Path

import numpy as np

from . import tensor as tn
from .dualchannel import FusionModel, init_fusion
from .embeddings import EmbeddingMatrix
from .rae import RaeHyper, RaeParams
from .textdata import UNK_TOKEN, Vocabulary

FORMAT_VERSION = 1
_META_KEY = "__meta__"


class CheckpointError(RuntimeError):
    """Unreadable, mismatched, or incomplete checkpoint file."""


def _embedding_meta(emb: EmbeddingMatrix) -> dict:
    return {
        "dim": emb.dim,
        "trainable": emb.trainable,
        "coverage": emb.coverage,
        "vocab": list(emb.vocab.index_to_token),
    }


def _save(path, kind: str, named_arrays: dict, extra_meta: dict) -> Path:
    path = Path(path)
    meta = {"format_version": FORMAT_VERSION, "model": kind, **extra_meta}
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **named_arrays, **{_META_KEY: np.array(json.dumps(meta))})
    # np.savez appends .npz when missing; report the real file
    return path if path.suffix == ".npz" else path.with_name(path.name + ".npz")


def _load(path):
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if _META_KEY not in archive:
        raise CheckpointError(f"{path} is not a model checkpoint (no metadata entry)")
    meta = json.loads(str(archive[_META_KEY]))
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {version}, this build reads {FORMAT_VERSION}")
    arrays = {k: archive[k] for k in archive.files if k != _META_KEY}
    return meta, arrays


def _rebuild_embedding(meta: dict, arrays: dict) -> EmbeddingMatrix:
    em = meta["embedding"]
    tokens = em["vocab"]
    if not tokens or tokens[0] != UNK_TOKEN:
        raise CheckpointError("checkpoint vocabulary does not start with the unknown token")
    vocab = Vocabulary(tokens[1:])
    if "embeddings" not in arrays:
        raise CheckpointError("checkpoint is missing the embedding matrix")
    weights = tn.Tensor(arrays["embeddings"])
    return EmbeddingMatrix(weights, vocab, trainable=em["trainable"],
                           coverage=em["coverage"])


def _write_into(model_params, arrays, path) -> None:
    for name, p in model_params:
        if name not in arrays:
            raise CheckpointError(f"{path} is missing parameter {name!r}")
        arr = arrays[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {arr.shape}, expected {p.data.shape}")
        p.data[...] = arr


# ---------------------------------------------------------------------------
# recursive autoencoder


def save_rae(path, params: RaeParams, extra: dict | None = None) -> Path:
    arrays = {name: p.data for name, p in params.parameters()}
    arrays["embeddings"] = params.emb.weights.data
    meta = {
        "hyper": {
            "rec_weight": params.hyper.rec_weight,
            "l2_penalty": params.hyper.l2_penalty,
            "num_classes": params.hyper.num_classes,
        },
        "embedding": _embedding_meta(params.emb),
        "extra": extra or {},
    }
    return _save(path, "rae", arrays, meta)


def load_rae(path) -> tuple[RaeParams, dict]:
    meta, arrays = _load(path)
    if meta["model"] != "rae":
        raise CheckpointError(f"{path} holds a {meta['model']!r} model, not 'rae'")
    emb = _rebuild_embedding(meta, arrays)
    hyper = RaeHyper(**meta["hyper"])
    need = ("compose.w", "compose.b", "reconstruct.w", "reconstruct.b", "classify.w")
    for name in need:
        if name not in arrays:
            raise CheckpointError(f"{path} is missing parameter {name!r}")
    params = RaeParams(
        tn.Tensor(arrays["compose.w"]), tn.Tensor(arrays["compose.b"]),
        tn.Tensor(arrays["reconstruct.w"]), tn.Tensor(arrays["reconstruct.b"]),
        tn.Tensor(arrays["classify.w"]), emb, hyper)
    return params, meta


# ---------------------------------------------------------------------------
# dual-channel fusion model


def save_fusion(path, model: FusionModel, extra: dict | None = None) -> Path:
    arrays = {name: p.data for name, p in model.parameters()}
    arrays["embeddings"] = model.emb.weights.data
    meta = {
        "hyper": {
            "variant": model.variant,
            "num_classes": model.num_classes,
            "kernel_widths": [f.width for f in model.conv],
            "filters_per_width": int(model.conv[0].weights.data.shape[0]),
            "hidden_dim": model.sru_fwd.hidden_dim,
            "attn_dim": int(model.attention.v_score.data.shape[0]),
        },
        "embedding": _embedding_meta(model.emb),
        "extra": extra or {},
    }
    return _save(path, "fusion", arrays, meta)


def load_fusion(path) -> tuple[FusionModel, dict]:
    meta, arrays = _load(path)
    if meta["model"] != "fusion":
        raise CheckpointError(f"{path} holds a {meta['model']!r} model, not 'fusion'")
    emb = _rebuild_embedding(meta, arrays)
    h = meta["hyper"]
    model = init_fusion(emb, kernel_widths=tuple(h["kernel_widths"]),
                        filters_per_width=h["filters_per_width"],
                        hidden_dim=h["hidden_dim"], attn_dim=h["attn_dim"],
                        num_classes=h["num_classes"], variant=h["variant"], seed=0)
    _write_into([(n, p) for n, p in model.parameters() if n != "embeddings"],
                arrays, path)
    return model, meta
