"""Optimizers and gradient verification.

Everything here works on flat float64 vectors. An objective is a callable
``fn(x) -> (value, gradient)``; model parameters are mapped to and from the
flat layout by ``flatten`` / ``write_flat`` using the order of the model's
``parameters()`` list.

The quasi-Newton path (limited-memory BFGS with Armijo backtracking) drives
the recursive-autoencoder objective; momentum SGD drives the dual-channel
classifier; ``grad_check`` compares any analytic gradient against central
finite differences and renders a small report.
"""

import json
from dataclasses import dataclass, field

import numpy as np


class OptimError(RuntimeError):
    """Objective returned unusable values (non-finite) or optimization
    cannot proceed."""


# ---------------------------------------------------------------------------
# flat parameter vectors


def flatten(named_params):
    """Concatenate (name, Tensor) pairs into one vector.

    Returns (vector, manifest); the manifest rows (name, shape, offset, size)
    fix the layout for writing back.
    """
    chunks, manifest, offset = [], [], 0
    for name, p in named_params:
        arr = np.asarray(p.data, dtype=np.float64)
        chunks.append(arr.ravel())
        manifest.append((name, arr.shape, offset, arr.size))
        offset += arr.size
    if not chunks:
        raise ValueError("flatten needs at least one parameter")
    return np.concatenate(chunks), manifest


def unflatten(x, manifest):
    """Split a flat vector back into named arrays per the manifest."""
    x = np.asarray(x, dtype=np.float64)
    total = manifest[-1][2] + manifest[-1][3]
    if x.shape != (total,):
        raise ValueError(f"flat vector has shape {x.shape}, manifest expects ({total},)")
    return {name: x[off:off + size].reshape(shape)
            for name, shape, off, size in manifest}


def write_flat(named_params, x):
    """Copy a flat vector into the parameter tensors, in order."""
    x = np.asarray(x, dtype=np.float64)
    offset = 0
    for name, p in named_params:
        size = p.data.size
        if offset + size > x.size:
            raise ValueError(f"flat vector too short writing {name}")
        p.data[...] = x[offset:offset + size].reshape(p.data.shape)
        offset += size
    if offset != x.size:
        raise ValueError(f"flat vector has {x.size} entries, parameters take {offset}")


# ---------------------------------------------------------------------------
# limited-memory BFGS


def _two_loop(g, s_hist, y_hist):
    """Implicit product of the inverse-Hessian estimate with g."""
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append((a, rho))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)  # scale by the latest curvature
    for (s, y), (a, rho) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += s * (a - b)
    return q


def _armijo(fn, x, f, g, d, c1, shrink, max_backtracks):
    """Backtracking line search; returns (x_new, f_new, g_new) or None."""
    gd = float(g @ d)
    alpha = 1.0
    for _ in range(max_backtracks):
        x_t = x + alpha * d
        f_t, g_t = fn(x_t)
        if np.isfinite(f_t) and f_t <= f + c1 * alpha * gd:
            return x_t, f_t, g_t
        alpha *= shrink
    return None


def lbfgs_minimize(fn, x0, max_iter: int = 200, tol: float = 1e-5,
                   history: int = 10, c1: float = 1e-4, shrink: float = 0.5,
                   max_backtracks: int = 30, callback=None):
    """Minimize fn(x) -> (value, grad) from x0.

    Stops when the gradient 2-norm drops below ``tol``, the iteration budget
    runs out, or the line search fails even along steepest descent. Returns
    (x, trace); trace rows are (iteration, f, grad_norm) starting at the
    initial point, and the f column never increases (Armijo guarantees each
    accepted step does not raise the objective). Curvature pairs are kept
    only when s.y > 1e-10 so the inverse-Hessian estimate stays positive
    definite. A non-finite value or gradient at the starting point aborts.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fn(x)
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise OptimError(f"objective non-finite at the starting point (f={f})")
    trace = [(0, float(f), float(np.linalg.norm(g)))]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= tol:
            break
        d = -_two_loop(g, s_hist, y_hist)
        if float(g @ d) >= 0.0:  # estimate lost descent; fall back
            d = -g
        result = _armijo(fn, x, f, g, d, c1, shrink, max_backtracks)
        if result is None and not np.array_equal(d, -g):
            result = _armijo(fn, x, f, g, -g, c1, shrink, max_backtracks)
        if result is None:
            break
        x_new, f_new, g_new = result
        s, y = x_new - x, g_new - g
        if float(s @ y) > 1e-10:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, np.asarray(g_new, dtype=np.float64)
        trace.append((it, float(f), float(np.linalg.norm(g))))
        if callback is not None:
            callback(it, x, f, g)
    return x, trace


# ---------------------------------------------------------------------------
# momentum SGD


def sgd_step(named_params, lr: float, momentum: float = 0.9, velocities=None):
    """One heavy-ball update: v <- momentum*v + grad; p <- p - lr*v.

    Pass the returned velocity dict back in on the next call.
    """
    if lr < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if velocities is None:
        velocities = {name: np.zeros_like(p.data) for name, p in named_params}
    for name, p in named_params:
        v = velocities[name]
        v *= momentum
        v += p.grad
        p.data -= lr * v
    return velocities


# ---------------------------------------------------------------------------
# finite-difference gradient verification


@dataclass
class GradCheckReport:
    """Outcome of comparing an analytic gradient with central differences.

    ``flagged`` rows are (coordinate, relative error, analytic, numeric) for
    every checked coordinate whose slope is non-negligible (|fd| > fd_floor)
    and disagrees beyond ``tol``. max/mean errors summarize the same
    non-negligible set; ``num_small`` counts coordinates skipped as
    negligible.
    """
    passed: bool
    max_rel_error: float
    mean_rel_error: float
    flagged: list
    num_checked: int
    num_small: int
    eps: float
    tol: float
    errors: np.ndarray = field(repr=False)

    def format_text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [f"grad check {verdict}: max rel error {self.max_rel_error:.3e}, "
                 f"mean {self.mean_rel_error:.3e} (tol {self.tol:.1e}) over "
                 f"{self.num_checked} coords ({self.num_small} negligible), "
                 f"eps {self.eps:.1e}"]
        for i, err, a, n in self.flagged:
            lines.append(f"  coord {i}: rel err {err:.3e} "
                         f"(analytic {a:.6e}, numeric {n:.6e})")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "mean_rel_error": self.mean_rel_error,
            "flagged": [{"coord": int(i), "rel_error": e, "analytic": a, "numeric": n}
                        for i, e, a, n in self.flagged],
            "num_checked": self.num_checked,
            "num_small": self.num_small,
            "eps": self.eps,
            "tol": self.tol,
        })


def conditioning_floor(f_value: float, eps: float = 1e-6,
                       tol: float = 1e-5) -> float:
    """Smallest slope a central difference can certify to ``tol``.

    The difference f(x+eps) - f(x-eps) carries rounding noise of order
    |f| * u (u = double-precision machine epsilon), so the computed slope
    has absolute noise around |f| * u / (2 * eps). Slopes smaller than
    |f| * u / (eps * tol) (twice that noise divided by tol) are therefore
    undecidable: a correct gradient can still miss the tolerance there.
    Pass the result as ``fd_floor`` to exclude such coordinates.
    """
    return abs(float(f_value)) * np.finfo(np.float64).eps / (eps * tol)


def grad_check(fn, x0, samples: int | None = None, seed: int = 0,
               eps: float = 1e-6, tol: float = 1e-5,
               fd_floor: float = 1e-8) -> GradCheckReport:
    """Central-difference check of fn's gradient at x0.

    Probes ``samples`` random coordinates (seeded; all of them when samples
    is None or exceeds the size). Per coordinate the slope
    (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps) is compared with the analytic
    entry via |a - fd| / max(|a|, |fd|); coordinates whose |fd| <= fd_floor
    carry no usable signal and are never flagged.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _, analytic = fn(x0)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x0.shape:
        raise ValueError(f"gradient shape {analytic.shape} != point shape {x0.shape}")
    if samples is None or samples >= x0.size:
        idx = np.arange(x0.size)
    else:
        if samples < 1:
            raise ValueError(f"samples must be >= 1, got {samples}")
        idx = np.sort(np.random.default_rng(seed).choice(x0.size, size=samples,
                                                         replace=False))
    errors = np.zeros(idx.size)
    flagged = []
    small = 0
    rel_errs = []
    for k, i in enumerate(idx):
        step = np.zeros_like(x0)
        step[i] = eps
        f_plus, _ = fn(x0 + step)
        f_minus, _ = fn(x0 - step)
        fd = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[i]
        if abs(fd) <= fd_floor:
            small += 1
            continue
        err = abs(a - fd) / max(abs(a), abs(fd))
        errors[k] = err
        rel_errs.append(err)
        if err > tol:
            flagged.append((int(i), float(err), float(a), float(fd)))
    return GradCheckReport(
        passed=not flagged,
        max_rel_error=float(max(rel_errs)) if rel_errs else 0.0,
        mean_rel_error=float(np.mean(rel_errs)) if rel_errs else 0.0,
        flagged=flagged,
        num_checked=int(idx.size),
        num_small=small,
        eps=eps,
        tol=tol,
        errors=errors,
    )
