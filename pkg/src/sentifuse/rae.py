"""Semi-supervised recursive autoencoder with greedy tree induction.

A sentence's words are merged pairwise into a binary tree. Each internal
node composes its children into one vector (tanh of a linear map, then
unit-normalized so repeated merging cannot shrink vectors away), and is
scored by how well a linear reconstruction recovers the children, weighted
by how many words each child spans. Tree structure is chosen greedily:
always merge the adjacent pair with the lowest weighted reconstruction
error. Every internal node also feeds a softmax classifier; the training
objective mixes reconstruction and classification losses per node, averages
over sentences, and adds an L2 penalty over all parameters.

Structure search runs in plain numpy (it is not differentiated); losses and
gradients are computed by replaying the frozen structure through the tape in
``tensor``. Gradients therefore treat the discrete structure as constant,
and the finite-difference checks in the tests freeze the same structure.
"""

from dataclasses import dataclass

import numpy as np

from . import optim
from . import tensor as tn
from .embeddings import EmbeddingMatrix, OneHot, lookup

NORM_EPS = 1e-12


@dataclass
class RaeHyper:
    """Loss mix and regularization: ``rec_weight`` in [0,1] scales the
    reconstruction term (1 - rec_weight scales classification);
    ``l2_penalty`` >= 0 multiplies the half squared norm of all parameters."""
    rec_weight: float = 0.2
    l2_penalty: float = 1e-4
    num_classes: int = 2

    def __post_init__(self):
        if not 0.0 <= self.rec_weight <= 1.0:
            raise ValueError(f"rec_weight must lie in [0, 1], got {self.rec_weight}")
        if self.l2_penalty < 0.0:
            raise ValueError(f"l2_penalty must be >= 0, got {self.l2_penalty}")
        if self.num_classes < 2:
            raise ValueError(f"need >= 2 classes, got {self.num_classes}")


class RaeParams:
    """All trainable pieces: composition map, reconstruction map, per-node
    classifier, and the embedding matrix."""

    def __init__(self, w_compose, b_compose, w_reconstruct, b_reconstruct,
                 w_class, emb: EmbeddingMatrix, hyper: RaeHyper):
        n = emb.dim
        t = hyper.num_classes
        expect = {
            "w_compose": (n, 2 * n), "b_compose": (n,),
            "w_reconstruct": (2 * n, n), "b_reconstruct": (2 * n,),
            "w_class": (t, n),
        }
        for name, tens in (("w_compose", w_compose), ("b_compose", b_compose),
                           ("w_reconstruct", w_reconstruct),
                           ("b_reconstruct", b_reconstruct), ("w_class", w_class)):
            if tens.shape != expect[name]:
                raise ValueError(f"{name} has shape {tens.shape}, expected {expect[name]}")
            tens.requires_grad = True
            if tens.grad is None:
                tens.grad = np.zeros_like(tens.data)
        self.w_compose = w_compose
        self.b_compose = b_compose
        self.w_reconstruct = w_reconstruct
        self.b_reconstruct = b_reconstruct
        self.w_class = w_class
        self.emb = emb
        self.hyper = hyper

    @property
    def dim(self) -> int:
        return self.emb.dim

    def parameters(self):
        """Ordered (name, Tensor) pairs; this order is the flattening manifest."""
        out = [("compose.w", self.w_compose), ("compose.b", self.b_compose),
               ("reconstruct.w", self.w_reconstruct), ("reconstruct.b", self.b_reconstruct),
               ("classify.w", self.w_class)]
        if self.emb.trainable:
            out.append(("embeddings", self.emb.weights))
        return out

    def zero_grads(self):
        for _, p in self.parameters():
            p.zero_grad()


def init_rae_params(emb: EmbeddingMatrix, hyper: RaeHyper, seed: int = 0,
                    scale: float = 0.1) -> RaeParams:
    n, t = emb.dim, hyper.num_classes
    rng = np.random.default_rng(seed)

    def w(*shape):
        return tn.Tensor(rng.standard_normal(shape) * scale)

    return RaeParams(w(n, 2 * n), w(n), w(2 * n, n), w(2 * n), w(t, n), emb, hyper)


@dataclass
class RaeNode:
    """One tree node. Leaves carry a word vector; internal nodes carry the
    composed, unit-normalized vector plus the weighted reconstruction error
    of their merge."""
    vec: np.ndarray
    word_count: int
    left: "RaeNode | None" = None
    right: "RaeNode | None" = None
    leaf_index: int | None = None
    rec_error: float | None = None
    class_dist: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class RaeTree:
    root: RaeNode
    num_leaves: int

    def internal_nodes(self) -> list[RaeNode]:
        """All internal nodes, post-order (children before parents)."""
        out = []

        def walk(node):
            if node.is_leaf:
                return
            walk(node.left)
            walk(node.right)
            out.append(node)

        walk(self.root)
        return out

    def total_rec_error(self) -> float:
        return float(sum(n.rec_error for n in self.internal_nodes()))


# ---------------------------------------------------------------------------
# node-level operations (Tensor in, Tensor out; taped when a graph is active)


def compose_parent(z1, z2, params: RaeParams) -> tn.Tensor:
    """Parent vector of two children: tanh(W [z1; z2] + b), unit-normalized.

    When the pre-normalization norm falls below 1e-12 the vector is returned
    unnormalized instead of dividing by ~0.
    """
    z = tn.concat([z1, z2])
    f = tn.tanh_act(tn.add(tn.matmul(params.w_compose, z), params.b_compose))
    return tn.unit_norm(f, eps=NORM_EPS)


def reconstruct(f, params: RaeParams):
    """Linear reconstruction of both children from a parent vector,
    split into its two halves."""
    z = tn.add(tn.matmul(params.w_reconstruct, f), params.b_reconstruct)
    n = params.dim
    return tn.slice_vec(z, 0, n), tn.slice_vec(z, n, 2 * n)


def weighted_rec_error(z1, z2, z1p, z2p, n1: int, n2: int) -> tn.Tensor:
    """Reconstruction error with children weighted by their word counts:
    n1/(n1+n2) * ||z1 - z1'||^2 + n2/(n1+n2) * ||z2 - z2'||^2."""
    if n1 < 1 or n2 < 1:
        raise ValueError(f"word counts must be >= 1, got {n1}, {n2}")
    total = n1 + n2
    e1 = tn.scale(tn.l2_norm_sq(tn.sub(z1, z1p)), n1 / total)
    e2 = tn.scale(tn.l2_norm_sq(tn.sub(z2, z2p)), n2 / total)
    return tn.add(e1, e2)


def unweighted_rec_error(z, zp) -> tn.Tensor:
    """Plain half squared Euclidean distance between a node pair and its
    reconstruction."""
    return tn.scale(tn.l2_norm_sq(tn.sub(z, zp)), 0.5)


def classify_node(f, params: RaeParams) -> tn.Tensor:
    """Class distribution at a node: softmax of the classifier map."""
    return tn.softmax(tn.matmul(params.w_class, f))


def cross_entropy_loss(h, label: int) -> tn.Tensor:
    """-log h[label], with h clamped at 1e-15."""
    return tn.scale(tn.log_clamped(tn.pick(h, label)), -1.0)


def node_loss(node: RaeNode, label: int, params: RaeParams) -> float:
    """Per-node mixed loss: rec_weight * reconstruction + (1 - rec_weight) *
    cross entropy, from the node's stored error and class distribution."""
    theta = params.hyper.rec_weight
    if node.class_dist is None:
        node.class_dist = classify_node(tn.Tensor(node.vec), params).data
    ce = -np.log(max(node.class_dist[label], 1e-15))
    return theta * float(node.rec_error) + (1.0 - theta) * ce


# ---------------------------------------------------------------------------
# greedy structure search (plain numpy; never differentiated)


def _batch_candidates(z1s, z2s, n1s, n2s, params):
    """Weighted reconstruction error for each candidate adjacent pair.

    Columns of z1s/z2s are the candidate children; returns (errors, parents)
    with parents already normalized. Vectorized equivalent of calling
    compose_parent / reconstruct / weighted_rec_error per pair.
    """
    w_g, b_g = params.w_compose.data, params.b_compose.data
    w_r, b_r = params.w_reconstruct.data, params.b_reconstruct.data
    n = params.dim
    z = np.vstack([z1s, z2s])                       # [2n, P]
    f = np.tanh(w_g @ z + b_g[:, None])
    norms = np.linalg.norm(f, axis=0)
    parents = f / np.where(norms < NORM_EPS, 1.0, norms)[None, :]
    zp = w_r @ parents + b_r[:, None]
    d1 = np.sum((z1s - zp[:n]) ** 2, axis=0)
    d2 = np.sum((z2s - zp[n:]) ** 2, axis=0)
    total = n1s + n2s
    errors = (n1s / total) * d1 + (n2s / total) * d2
    return errors, parents


def greedy_build_tree(leaf_vectors, params: RaeParams) -> RaeTree:
    """Induce a binary tree by repeatedly merging the adjacent pair with the
    smallest weighted reconstruction error (leftmost pair wins ties).

    ``leaf_vectors`` is an [m, n] array, one row per word in order. Each
    internal node records the error of its own merge, evaluated when the
    merge happened.
    """
    leaf_vectors = np.asarray(leaf_vectors, dtype=np.float64)
    if leaf_vectors.ndim != 2 or leaf_vectors.shape[0] == 0:
        raise ValueError("greedy_build_tree needs at least one leaf vector")
    m = leaf_vectors.shape[0]
    nodes = [RaeNode(vec=leaf_vectors[i].copy(), word_count=1, leaf_index=i)
             for i in range(m)]
    while len(nodes) > 1:
        z1s = np.stack([nd.vec for nd in nodes[:-1]], axis=1)
        z2s = np.stack([nd.vec for nd in nodes[1:]], axis=1)
        n1s = np.array([nd.word_count for nd in nodes[:-1]], dtype=np.float64)
        n2s = np.array([nd.word_count for nd in nodes[1:]], dtype=np.float64)
        errors, parents = _batch_candidates(z1s, z2s, n1s, n2s, params)
        j = int(np.argmin(errors))  # first minimum = leftmost pair
        merged = RaeNode(vec=parents[:, j].copy(),
                         word_count=nodes[j].word_count + nodes[j + 1].word_count,
                         left=nodes[j], right=nodes[j + 1],
                         rec_error=float(errors[j]))
        nodes[j:j + 2] = [merged]
    return RaeTree(root=nodes[0], num_leaves=m)


def enumerate_tree_errors(leaf_vectors, params: RaeParams, max_leaves: int = 6):
    """Total weighted reconstruction error of every binary bracketing.

    Exhaustive reference for short sentences (Catalan growth; capped). Used
    to check that the greedy tree's total error upper-bounds the true
    minimum. Returns the list of per-structure totals.
    """
    leaf_vectors = np.asarray(leaf_vectors, dtype=np.float64)
    m = leaf_vectors.shape[0]
    if m > max_leaves:
        raise ValueError(f"exhaustive enumeration capped at {max_leaves} leaves, got {m}")

    def span(i, j):
        # every (vector, word_count, total_error) reachable for words i..j
        if j - i == 1:
            return [(leaf_vectors[i], 1, 0.0)]
        results = []
        for k in range(i + 1, j):
            for v1, c1, e1 in span(i, k):
                for v2, c2, e2 in span(k, j):
                    err, parent = _batch_candidates(
                        v1[:, None], v2[:, None],
                        np.array([float(c1)]), np.array([float(c2)]), params)
                    results.append((parent[:, 0], c1 + c2, e1 + e2 + float(err[0])))
        return results

    if m == 1:
        return [0.0]
    return [total for _, _, total in span(0, m)]


def min_tree_error(leaf_vectors, params: RaeParams) -> float:
    return min(enumerate_tree_errors(leaf_vectors, params))


# ---------------------------------------------------------------------------
# losses and training objective


def leaf_tensors(tokens, params: RaeParams) -> list[tn.Tensor]:
    vocab_size = len(params.emb.vocab)
    return [lookup(params.emb, OneHot(index=t, dim=vocab_size)) for t in tokens]


def leaf_matrix(tokens, params: RaeParams) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    return params.emb.weights.data[:, ids].T


def sentence_loss(tokens, label: int, params: RaeParams,
                  tree: RaeTree | None = None, labeled: bool = True) -> tn.Tensor:
    """Summed per-node loss of one sentence over its (greedy) tree.

    Builds the tree greedily at the current parameters unless one is passed
    in; the structure is then treated as fixed while the losses are replayed
    through the tape. Unlabeled sentences keep only the reconstruction part.
    A one-word sentence has no internal nodes and contributes zero.
    """
    if len(tokens) == 0:
        raise ValueError("cannot score an empty sentence")
    if tree is None:
        tree = greedy_build_tree(leaf_matrix(tokens, params), params)
    if tree.num_leaves != len(tokens):
        raise ValueError(f"tree has {tree.num_leaves} leaves for {len(tokens)} tokens")
    if tree.root.is_leaf:
        return tn.Tensor(0.0)

    theta = params.hyper.rec_weight
    leaves = leaf_tensors(tokens, params)
    losses = []

    def replay(node) -> tn.Tensor:
        if node.is_leaf:
            return leaves[node.leaf_index]
        z1 = replay(node.left)
        z2 = replay(node.right)
        parent = compose_parent(z1, z2, params)
        z1p, z2p = reconstruct(parent, params)
        rec = weighted_rec_error(z1, z2, z1p, z2p,
                                 node.left.word_count, node.right.word_count)
        node.rec_error = rec.item()
        piece = tn.scale(rec, theta)
        if labeled:
            probs = classify_node(parent, params)
            node.class_dist = probs.data.copy()
            piece = tn.add(piece, tn.scale(cross_entropy_loss(probs, label), 1.0 - theta))
        losses.append(piece)
        return parent

    replay(tree.root)
    total = losses[0]
    for piece in losses[1:]:
        total = tn.add(total, piece)
    return total


def regularizer(params: RaeParams) -> tn.Tensor:
    """l2_penalty / 2 times the squared norm of every parameter entry."""
    total = None
    for _, p in params.parameters():
        sq = tn.l2_norm_sq(p)
        total = sq if total is None else tn.add(total, sq)
    return tn.scale(total, params.hyper.l2_penalty / 2.0)


def dataset_objective(examples, params: RaeParams,
                      trees: list[RaeTree] | None = None) -> tn.Tensor:
    """Mean sentence loss over the corpus plus the L2 penalty."""
    examples = list(examples)
    if not examples:
        raise ValueError("dataset_objective needs at least one example")
    if trees is not None and len(trees) != len(examples):
        raise ValueError("one frozen tree per example required")
    total = None
    for i, ex in enumerate(examples):
        loss = sentence_loss(ex.tokens, ex.label, params,
                             tree=None if trees is None else trees[i],
                             labeled=ex.labeled)
        total = loss if total is None else tn.add(total, loss)
    return tn.add(tn.scale(total, 1.0 / len(examples)), regularizer(params))


def build_trees(examples, params: RaeParams) -> list[RaeTree]:
    return [greedy_build_tree(leaf_matrix(ex.tokens, params), params) for ex in examples]


def objective_gradient(examples, params: RaeParams,
                       trees: list[RaeTree] | None = None):
    """Objective value and its analytic gradient through fixed tree
    structures (built greedily at the current parameters when not given).

    Returns (value, flat gradient) where the flat layout follows
    ``params.parameters()`` order; includes the l2_penalty * delta term.
    """
    examples = list(examples)
    if trees is None:
        trees = build_trees(examples, params)
    params.zero_grads()
    with tn.Graph() as g:
        obj = dataset_objective(examples, params, trees=trees)
        tn.backward(g, obj)
    grad, _ = optim.flatten([(name, tn.Tensor(p.grad)) for name, p in params.parameters()])
    return obj.item(), grad


def make_objective(examples, params: RaeParams, frozen_trees=None):
    """Flat-vector oracle x -> (value, gradient) for the optimizer.

    With ``frozen_trees`` the structures never change (the mode used for
    finite-difference validation); otherwise trees are re-induced greedily
    at every evaluation, so the structure tracks the parameters during
    training.
    """
    examples = list(examples)
    named = params.parameters()

    def fn(x):
        optim.write_flat(named, x)
        value, grad = objective_gradient(examples, params, trees=frozen_trees)
        return value, grad

    return fn


def train_rae(examples, params: RaeParams, max_iter: int = 200, tol: float = 1e-5,
              history: int = 10):
    """Fit all parameters with the limited-memory quasi-Newton optimizer.

    Mutates ``params`` in place and returns the optimizer trace.
    """
    x0, _ = optim.flatten(params.parameters())
    fn = make_objective(examples, params)
    x_star, trace = optim.lbfgs_minimize(fn, x0, max_iter=max_iter, tol=tol,
                                         history=history)
    optim.write_flat(params.parameters(), x_star)
    return trace


def predict_sentence(tokens, params: RaeParams) -> int:
    """Class index at the tree root (the leaf itself for one-word
    sentences); ties resolve to the lowest index."""
    if len(tokens) == 0:
        raise ValueError("cannot classify an empty sentence")
    tree = greedy_build_tree(leaf_matrix(tokens, params), params)
    probs = classify_node(tn.Tensor(tree.root.vec), params)
    return int(np.argmax(probs.data))


def evaluate(examples, params: RaeParams) -> float:
    """Fraction of examples whose root prediction matches the label."""
    examples = list(examples)
    if not examples:
        raise ValueError("evaluate needs at least one example")
    hits = sum(predict_sentence(ex.tokens, params) == ex.label for ex in examples)
    return hits / len(examples)


def format_tree(tree: RaeTree, token_strings) -> str:
    """Parenthesized rendering of the merge structure, e.g.
    "((the movie) rocks)"."""
    def render(node):
        if node.is_leaf:
            return token_strings[node.leaf_index]
        return f"({render(node.left)} {render(node.right)})"

    return render(tree.root)
