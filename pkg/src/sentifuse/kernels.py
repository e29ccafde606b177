"""Recurrence kernels: the sequential inner loops of the SRU and LSTM cells.

Everything else in the package is expressible as batched numpy calls, but the
time-step recurrences are irreducibly sequential, so they live here as loop
kernels. Each kernel exists twice: a pure-numpy version (the reference) and a
numba ``@njit`` compilation of the very same function. The active backend is
chosen once at import time from the ``SENTIFUSE_BACKEND`` environment
variable:

    SENTIFUSE_BACKEND=numba   use the jitted kernels (default when numba imports)
    SENTIFUSE_BACKEND=numpy   force the pure-numpy fallback

Both variants stay importable regardless of the flag so they can be compared
directly (see ``bench.compare_backends`` and tests/test_kernels.py). Kernels
are compiled without fastmath; numpy and numba paths agree to ~1e-15 but are
not guaranteed bit-identical to each other.

All arrays are float64 and C-contiguous. Sequences are time-major: ``[m, d]``.
"""

import os
import warnings

import numpy as np


def sru_scan_fwd(xh, f):
    """State recurrence of the SRU: c_t = f_t * c_{t-1} + (1 - f_t) * xh_t.

    xh : [m, d] transformed inputs, f : [m, d] forget-gate activations.
    Returns c : [m, d]. c_{-1} = 0. Elementwise per hidden coordinate, which
    is what keeps this cell cheap: there is no hidden-to-hidden matmul.
    """
    m, d = xh.shape
    c = np.empty((m, d))
    prev = np.zeros(d)
    for t in range(m):
        prev = f[t] * prev + (1.0 - f[t]) * xh[t]
        c[t] = prev
    return c


def sru_scan_bwd(xh, f, c, dc):
    """Adjoint of sru_scan_fwd.

    Given dL/dc (``dc``) for every step, walk the recurrence backwards with a
    carry a_t = dc_t + f_{t+1} * a_{t+1} and emit

        dxh_t = a_t * (1 - f_t)
        df_t  = a_t * (c_{t-1} - xh_t)

    Returns (dxh, df), both [m, d].
    """
    m, d = xh.shape
    dxh = np.empty((m, d))
    df = np.empty((m, d))
    carry = np.zeros(d)
    for t in range(m - 1, -1, -1):
        carry = dc[t] + carry
        dxh[t] = carry * (1.0 - f[t])
        if t > 0:
            df[t] = carry * (c[t - 1] - xh[t])
        else:
            df[t] = carry * (0.0 - xh[t])
        carry = carry * f[t]
    return dxh, df


def lstm_scan_fwd(xp, u):
    """LSTM recurrence with input, forget, output gates and tanh cell input.

    xp : [m, 4d] input projections (W x_t + b), gate order (i, f, o, g).
    u  : [4d, d] hidden-to-hidden weights, applied to h_{t-1} every step --
    the matmul inside this loop is exactly the work the SRU cell avoids.

    Returns (h, c, gates): hidden states [m, d], cell states [m, d], and the
    post-activation gate values [m, 4d] saved for the backward pass.
    """
    m, d4 = xp.shape
    d = d4 // 4
    h = np.empty((m, d))
    c = np.empty((m, d))
    gates = np.empty((m, d4))
    hprev = np.zeros(d)
    cprev = np.zeros(d)
    for t in range(m):
        pre = xp[t] + np.dot(u, hprev)
        gi = 1.0 / (1.0 + np.exp(-pre[:d]))
        gf = 1.0 / (1.0 + np.exp(-pre[d:2 * d]))
        go = 1.0 / (1.0 + np.exp(-pre[2 * d:3 * d]))
        gg = np.tanh(pre[3 * d:])
        cprev = gf * cprev + gi * gg
        hprev = go * np.tanh(cprev)
        gates[t, :d] = gi
        gates[t, d:2 * d] = gf
        gates[t, 2 * d:3 * d] = go
        gates[t, 3 * d:] = gg
        c[t] = cprev
        h[t] = hprev
    return h, c, gates


def lstm_scan_bwd(xp, u, h, c, gates, dh):
    """Adjoint of lstm_scan_fwd: returns (dxp, du) for upstream grads dh."""
    m, d4 = xp.shape
    d = d4 // 4
    ut = np.ascontiguousarray(u.T)
    dxp = np.empty((m, d4))
    du = np.zeros((d4, d))
    dh_carry = np.zeros(d)
    dc_carry = np.zeros(d)
    dpre = np.empty(d4)
    for t in range(m - 1, -1, -1):
        gi = gates[t, :d]
        gf = gates[t, d:2 * d]
        go = gates[t, 2 * d:3 * d]
        gg = gates[t, 3 * d:]
        tc = np.tanh(c[t])
        dht = dh[t] + dh_carry
        dct = dht * go * (1.0 - tc * tc) + dc_carry
        cprev = c[t - 1] if t > 0 else np.zeros(d)
        dpre[:d] = dct * gg * gi * (1.0 - gi)
        dpre[d:2 * d] = dct * cprev * gf * (1.0 - gf)
        dpre[2 * d:3 * d] = dht * tc * go * (1.0 - go)
        dpre[3 * d:] = dct * gi * (1.0 - gg * gg)
        dxp[t] = dpre
        hprev = h[t - 1] if t > 0 else np.zeros(d)
        du += np.outer(dpre, hprev)
        dh_carry = np.dot(ut, dpre)
        dc_carry = dct * gf
    return dxp, du


_PURE = {
    "sru_scan_fwd": sru_scan_fwd,
    "sru_scan_bwd": sru_scan_bwd,
    "lstm_scan_fwd": lstm_scan_fwd,
    "lstm_scan_bwd": lstm_scan_bwd,
}


def _jit_all():
    from numba import njit

    return {name: njit(cache=True)(fn) for name, fn in _PURE.items()}


def _select_backend():
    flag = os.environ.get("SENTIFUSE_BACKEND", "").strip().lower()
    if flag in ("numpy", "python", "nonumba"):
        return "numpy", dict(_PURE)
    try:
        jitted = _jit_all()
    except ImportError:
        if flag == "numba":
            warnings.warn("SENTIFUSE_BACKEND=numba but numba is not importable; "
                          "falling back to numpy kernels")
        return "numpy", dict(_PURE)
    return "numba", jitted


_BACKEND_NAME, _ACTIVE = _select_backend()


def active_backend():
    """Name of the kernel backend selected at import: 'numba' or 'numpy'."""
    return _BACKEND_NAME


def available_backends():
    """Mapping backend name -> {kernel name -> callable} for every importable backend."""
    out = {"numpy": dict(_PURE)}
    try:
        out["numba"] = _jit_all()
    except ImportError:
        pass
    return out


def get(name):
    """Fetch the active implementation of a kernel by name."""
    return _ACTIVE[name]
