"""Dual-channel sentence classifier: convolution features fused with a
bidirectional simple recurrent unit.

One channel slides tanh convolution filters of several widths over the word
vectors and max-pools each filter over time. The other runs a forward and a
backward simple recurrent unit (SRU) whose only step-to-step state is an
elementwise cell vector; per-step gates depend on the current input alone,
so all gate projections are batched matmuls and the remaining sequential
scan is a cheap elementwise kernel (see ``kernels``). The SRU states are
pooled two ways, by attention and by max over time, and both summaries are
concatenated with the convolution features before a softmax layer.

Variants reuse the same parameters: ``full`` fuses both channels,
``cnn_only`` and ``bisru_only`` drop one, and ``bilstm_backend`` swaps the
recurrent channel for a bidirectional LSTM whose hidden-to-hidden matmul
stays inside the sequential loop (the slow baseline the benchmark measures
against).
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import optim
from . import tensor as tn
from .embeddings import EmbeddingMatrix, embed_sequence

VARIANTS = ("full", "cnn_only", "bisru_only", "bilstm_backend")


def _param(arr) -> tn.Tensor:
    t = arr if isinstance(arr, tn.Tensor) else tn.Tensor(arr)
    t.requires_grad = True
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t


@dataclass
class ConvFilter:
    """One bank of convolution filters of a single width: weights are
    [filters, width * embed_dim] over flattened windows."""
    width: int
    weights: tn.Tensor
    bias: tn.Tensor

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"kernel width must be >= 1, got {self.width}")
        if self.weights.data.shape[0] != self.bias.data.shape[0]:
            raise ValueError("one bias per filter required")


@dataclass
class SruCell:
    """Input-only gate maps: transform [d,n], forget [d,n]+[d], reset [d,n]+[d]."""
    w_transform: tn.Tensor
    w_forget: tn.Tensor
    b_forget: tn.Tensor
    w_reset: tn.Tensor
    b_reset: tn.Tensor

    @property
    def hidden_dim(self) -> int:
        return self.w_transform.data.shape[0]


@dataclass
class LstmCell:
    """Standard LSTM maps with gate order (input, forget, output, candidate):
    w [4d,n], u [4d,d], b [4d]. The u matmul runs once per time step."""
    w: tn.Tensor
    u: tn.Tensor
    b: tn.Tensor

    @property
    def hidden_dim(self) -> int:
        return self.u.data.shape[1]


@dataclass
class AttentionParams:
    """Additive scoring: e_i = v . tanh(W h_i + b)."""
    w_score: tn.Tensor
    b_score: tn.Tensor
    v_score: tn.Tensor


@dataclass
class FusionModel:
    emb: EmbeddingMatrix
    conv: list[ConvFilter]
    sru_fwd: SruCell
    sru_bwd: SruCell
    lstm_fwd: LstmCell
    lstm_bwd: LstmCell
    attention: AttentionParams
    w_out: tn.Tensor
    b_out: tn.Tensor
    variant: str = "full"
    num_classes: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def max_kernel_width(self) -> int:
        return max(f.width for f in self.conv)

    def parameters(self):
        """Ordered (name, Tensor) pairs covering every component, so
        checkpoints and flat vectors are variant-independent."""
        out = []
        for f in self.conv:
            out.append((f"conv{f.width}.w", f.weights))
            out.append((f"conv{f.width}.b", f.bias))
        for tag, cell in (("sru_fwd", self.sru_fwd), ("sru_bwd", self.sru_bwd)):
            out += [(f"{tag}.w_transform", cell.w_transform),
                    (f"{tag}.w_forget", cell.w_forget), (f"{tag}.b_forget", cell.b_forget),
                    (f"{tag}.w_reset", cell.w_reset), (f"{tag}.b_reset", cell.b_reset)]
        for tag, cell in (("lstm_fwd", self.lstm_fwd), ("lstm_bwd", self.lstm_bwd)):
            out += [(f"{tag}.w", cell.w), (f"{tag}.u", cell.u), (f"{tag}.b", cell.b)]
        out += [("attention.w", self.attention.w_score),
                ("attention.b", self.attention.b_score),
                ("attention.v", self.attention.v_score),
                ("out.w", self.w_out), ("out.b", self.b_out)]
        if self.emb.trainable:
            out.append(("embeddings", self.emb.weights))
        return out

    def zero_grads(self):
        for _, p in self.parameters():
            p.zero_grad()


def fusion_dim(variant: str, filters_total: int, hidden_dim: int) -> int:
    """Width of the fused feature vector fed to the output layer."""
    if variant == "cnn_only":
        return filters_total
    if variant == "bisru_only":
        return 4 * hidden_dim  # attention summary + max summary, each 2d
    return filters_total + 4 * hidden_dim


def init_fusion(emb: EmbeddingMatrix, kernel_widths=(3, 4, 5), filters_per_width: int = 100,
                hidden_dim: int = 64, attn_dim: int = 64, num_classes: int = 2,
                variant: str = "full", seed: int = 0, scale: float = 0.1) -> FusionModel:
    if len(kernel_widths) == 0:
        raise ValueError("need at least one kernel width")
    n = emb.dim
    rng = np.random.default_rng(seed)

    def w(*shape):
        return _param(rng.standard_normal(shape) * scale)

    conv = [ConvFilter(width=k, weights=w(filters_per_width, k * n),
                       bias=w(filters_per_width)) for k in kernel_widths]

    def sru():
        return SruCell(w(hidden_dim, n), w(hidden_dim, n), w(hidden_dim),
                       w(hidden_dim, n), w(hidden_dim))

    def lstm():
        return LstmCell(w(4 * hidden_dim, n), w(4 * hidden_dim, hidden_dim),
                        w(4 * hidden_dim))

    attention = AttentionParams(w(attn_dim, 2 * hidden_dim), w(attn_dim), w(attn_dim))
    fuse = fusion_dim(variant, filters_per_width * len(kernel_widths), hidden_dim)
    return FusionModel(emb=emb, conv=conv, sru_fwd=sru(), sru_bwd=sru(),
                       lstm_fwd=lstm(), lstm_bwd=lstm(), attention=attention,
                       w_out=w(num_classes, fuse), b_out=w(num_classes),
                       variant=variant, num_classes=num_classes)


# ---------------------------------------------------------------------------
# scan ops: the only sequential loops, dispatched to the active kernel backend


def sru_scan(xh: tn.Tensor, f: tn.Tensor) -> tn.Tensor:
    """Cell recurrence c_t = f_t * c_{t-1} + (1 - f_t) * xh_t with c_{-1} = 0."""
    fwd = kernels.get("sru_scan_fwd")
    bwd = kernels.get("sru_scan_bwd")
    c = fwd(xh.data, f.data)

    def builder(out):
        def backward():
            dxh, df = bwd(xh.data, f.data, out.data, out.grad)
            if xh.requires_grad:
                xh.grad += dxh
            if f.requires_grad:
                f.grad += df
        return backward

    return tn.make_op("sru_scan", c, (xh, f), builder)


def lstm_scan(xp: tn.Tensor, u: tn.Tensor):
    """LSTM recurrence over precomputed input projections xp = X W^T + b.

    The hidden-to-hidden product with u happens inside the time loop, which
    is exactly what makes this the slow baseline.
    """
    fwd = kernels.get("lstm_scan_fwd")
    bwd = kernels.get("lstm_scan_bwd")
    h, c, gates = fwd(xp.data, u.data)

    def builder(out):
        def backward():
            dxp, du = bwd(xp.data, u.data, h, c, gates, out.grad)
            if xp.requires_grad:
                xp.grad += dxp
            if u.requires_grad:
                u.grad += du
        return backward

    return tn.make_op("lstm_scan", h, (xp, u), builder)


# ---------------------------------------------------------------------------
# channels


def cnn_channel(x: tn.Tensor, conv: list[ConvFilter]) -> tn.Tensor:
    """Convolution features of one sentence matrix [m, n].

    Sentences shorter than the widest kernel are zero-padded (this padding
    never reaches the recurrent channel). Each width contributes a
    max-over-time tanh response per filter; widths are concatenated in order.
    """
    widest = max(f.width for f in conv)
    if x.data.shape[0] < widest:
        x = tn.pad_rows(x, widest)
    parts = []
    for f in conv:
        win = tn.windows(x, f.width)                   # [m-k+1, k*n]
        act = tn.tanh_act(tn.add(tn.matmul(win, tn.transpose(f.weights)), f.bias))
        parts.append(tn.max_over_rows(act))            # [filters]
    return tn.concat(parts)


def sru_forward(x: tn.Tensor, cell: SruCell) -> tn.Tensor:
    """Hidden states [m, d] of one direction. All gate projections are
    batched over the whole sentence before the elementwise scan."""
    xh = tn.matmul(x, tn.transpose(cell.w_transform))
    f = tn.sigmoid(tn.add(tn.matmul(x, tn.transpose(cell.w_forget)), cell.b_forget))
    r = tn.sigmoid(tn.add(tn.matmul(x, tn.transpose(cell.w_reset)), cell.b_reset))
    c = sru_scan(xh, f)
    return tn.mul(r, tn.tanh_act(c))


def bisru(x: tn.Tensor, fwd: SruCell, bwd: SruCell) -> tn.Tensor:
    """Concatenated forward and reversed-backward states, [m, 2d]."""
    h_f = sru_forward(x, fwd)
    h_b = tn.reverse_rows(sru_forward(tn.reverse_rows(x), bwd))
    return tn.hstack(h_f, h_b)


def lstm_forward(x: tn.Tensor, cell: LstmCell) -> tn.Tensor:
    xp = tn.add(tn.matmul(x, tn.transpose(cell.w)), cell.b)
    return lstm_scan(xp, cell.u)


def bilstm(x: tn.Tensor, fwd: LstmCell, bwd: LstmCell) -> tn.Tensor:
    h_f = lstm_forward(x, fwd)
    h_b = tn.reverse_rows(lstm_forward(tn.reverse_rows(x), bwd))
    return tn.hstack(h_f, h_b)


def attention_pool(h: tn.Tensor, params: AttentionParams) -> tn.Tensor:
    """Softmax-weighted sum of the rows of h, scores from additive attention."""
    keys = tn.tanh_act(tn.add(tn.matmul(h, tn.transpose(params.w_score)), params.b_score))
    scores = tn.matmul(keys, params.v_score)           # [m]
    alpha = tn.softmax(scores)
    return tn.matmul(alpha, h)                         # [2d]


def max_pool_seq(h: tn.Tensor) -> tn.Tensor:
    """Columnwise max over time, [2d]."""
    return tn.max_over_rows(h)


# ---------------------------------------------------------------------------
# full forward pass, loss, training


def fuse_and_classify(model: FusionModel, tokens) -> tn.Tensor:
    """Class distribution for one token-id sequence under the model's variant."""
    if len(tokens) == 0:
        raise ValueError("cannot classify an empty sentence")
    x = embed_sequence(model.emb, tokens)
    parts = []
    if model.variant in ("full", "cnn_only", "bilstm_backend"):
        parts.append(cnn_channel(x, model.conv))
    if model.variant in ("full", "bisru_only"):
        h = bisru(x, model.sru_fwd, model.sru_bwd)
        parts.append(attention_pool(h, model.attention))
        parts.append(max_pool_seq(h))
    elif model.variant == "bilstm_backend":
        h = bilstm(x, model.lstm_fwd, model.lstm_bwd)
        parts.append(attention_pool(h, model.attention))
        parts.append(max_pool_seq(h))
    fused = parts[0] if len(parts) == 1 else tn.concat(parts)
    return tn.softmax(tn.add(tn.matmul(model.w_out, fused), model.b_out))


def sentence_nll(tokens, label: int, model: FusionModel) -> tn.Tensor:
    probs = fuse_and_classify(model, tokens)
    return tn.scale(tn.log_clamped(tn.pick(probs, label)), -1.0)


def predict(tokens, model: FusionModel) -> int:
    """Most probable class; ties resolve to the lowest index."""
    return int(np.argmax(fuse_and_classify(model, tokens).data))


def evaluate(examples, model: FusionModel) -> float:
    examples = list(examples)
    if not examples:
        raise ValueError("evaluate needs at least one example")
    hits = sum(predict(ex.tokens, model) == ex.label for ex in examples)
    return hits / len(examples)


def dataset_nll(examples, model: FusionModel) -> tn.Tensor:
    """Mean cross-entropy over a set of examples (taped)."""
    examples = list(examples)
    if not examples:
        raise ValueError("dataset_nll needs at least one example")
    total = None
    for ex in examples:
        loss = sentence_nll(ex.tokens, ex.label, model)
        total = loss if total is None else tn.add(total, loss)
    return tn.scale(total, 1.0 / len(examples))


def make_objective(examples, model: FusionModel):
    """Flat-vector oracle x -> (mean nll, gradient) over all parameters."""
    examples = list(examples)
    named = model.parameters()

    def fn(x):
        optim.write_flat(named, x)
        model.zero_grads()
        with tn.Graph() as g:
            loss = dataset_nll(examples, model)
            tn.backward(g, loss)
        grad, _ = optim.flatten([(n, tn.Tensor(p.grad)) for n, p in named])
        return loss.item(), grad

    return fn


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    train_accuracy: float
    seconds: float = 0.0


def train_fusion(examples, model: FusionModel, epochs: int = 10, lr: float = 0.05,
                 momentum: float = 0.9, batch_size: int = 1, seed: int = 0,
                 shuffle: bool = True, callback=None) -> list[EpochStats]:
    """Mini-batch momentum SGD on the mean cross-entropy loss.

    The example order is reshuffled each epoch from a seeded generator, so a
    rerun with the same seed walks the identical sequence of updates. A
    non-finite batch loss aborts with a diagnostic rather than training on.
    """
    import time

    examples = list(examples)
    if not examples:
        raise ValueError("train_fusion needs at least one example")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    named = model.parameters()
    velocities = None
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(examples)) if shuffle else np.arange(len(examples))
        t0 = time.perf_counter()
        total = 0.0
        for lo in range(0, len(order), batch_size):
            batch = [examples[int(i)] for i in order[lo:lo + batch_size]]
            model.zero_grads()
            with tn.Graph() as g:
                loss = dataset_nll(batch, model)
                tn.backward(g, loss)
            if not np.isfinite(loss.item()):
                raise optim.OptimError(
                    f"non-finite loss {loss.item()} in epoch {epoch}, "
                    f"batch starting at {lo} (diverged?)")
            total += loss.item() * len(batch)
            velocities = optim.sgd_step(named, lr=lr, momentum=momentum,
                                        velocities=velocities)
        stats = EpochStats(epoch=epoch, mean_loss=total / len(examples),
                           train_accuracy=evaluate(examples, model),
                           seconds=time.perf_counter() - t0)
        history.append(stats)
        if callback is not None:
            callback(stats)
    return history
