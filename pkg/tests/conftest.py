"""Shared test helpers: finite-difference oracles and op-level gradient checks."""

import numpy as np
import pytest

from sentifuse import tensor as tn


def fd_gradient(fn, x, eps=1e-6):
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        g[i] = (fn(x + step) - fn(x - step)) / (2.0 * eps)
    return g


def max_rel_error(analytic, numeric, floor=1e-10):
    """Worst relative disagreement, skipping coordinates where both slopes
    are negligible (no usable finite-difference signal there)."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    worst = 0.0
    for a, f in zip(analytic, numeric):
        scale = max(abs(a), abs(f))
        if scale <= floor:
            continue
        worst = max(worst, abs(a - f) / scale)
    return worst


def weighted_sum(out, probe):
    """Reduce an op output to a scalar with fixed weights, using taped ops only."""
    if out.data.ndim == 0:
        return tn.scale(out, float(probe))
    prod = tn.mul(out, tn.Tensor(probe))
    if prod.data.ndim == 2:
        prod = tn.matmul(prod, tn.Tensor(np.ones(prod.shape[1])))
    total = tn.matmul(tn.Tensor(np.ones((1, prod.shape[0]))), prod)
    return tn.pick(total, 0)


def check_op_gradient(op, shapes, seed=0, eps=1e-6, tol=1e-6, low=-1.0, high=1.0):
    """FD-verify one tensor op against its backward rule.

    The op output is reduced to a scalar with fixed random weights; every
    coordinate of every input is then perturbed both ways.
    """
    rng = np.random.default_rng(seed)
    tensors = [tn.Tensor(rng.uniform(low, high, s), requires_grad=True) for s in shapes]
    out_probe = op(*[tn.Tensor(t.data) for t in tensors])
    probe = rng.uniform(-1.0, 1.0, out_probe.shape) if out_probe.data.ndim else rng.uniform(-1.0, 1.0)

    with tn.Graph() as g:
        loss = weighted_sum(op(*tensors), probe)
        tn.backward(g, loss)
    analytic = [t.grad.copy() for t in tensors]

    for which in range(len(tensors)):
        def f(flat, which=which):
            datas = [t.data for t in tensors]
            datas[which] = flat.reshape(shapes[which])
            out = op(*[tn.Tensor(d) for d in datas])
            return float(np.sum(out.data * probe))

        numeric = fd_gradient(f, tensors[which].data.ravel(), eps=eps)
        err = max_rel_error(analytic[which].ravel(), numeric)
        assert err <= tol, f"input {which}: rel error {err:.3e} > {tol}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)
