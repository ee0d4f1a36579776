"""Numpy implementation of the batch trace kernels.

This is the fallback backend and the reference the compiled kernels are
checked against. Activation codes: 0 relu, 1 sigmoid, 2 tanh, 3 identity.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

ACT_CODES = {"relu": 0, "sigmoid": 1, "tanh": 2, "identity": 3}


def _activate(code: int, x: np.ndarray) -> np.ndarray:
    if code == 0:
        return np.maximum(x, 0.0)
    if code == 1:
        return 1.0 / (1.0 + np.exp(-x))
    if code == 2:
        return np.tanh(x)
    return x


def _assign_tier(plan, t: int, values: np.ndarray) -> np.ndarray:
    lo, ln = int(plan.cut_offset[t]), int(plan.cut_len[t])
    block = plan.cuts[lo:lo + ln]
    meth = int(plan.method[t])
    if meth == 0:  # bin edges
        return np.searchsorted(block, values, side="right")
    if meth == 1:  # 1-d centroids
        return np.argmin(np.abs(values[:, None] - block[None, :]), axis=1)
    dim = int(plan.vec_dim[t])  # vector centroids, row-major (k, dim)
    cents = block.reshape(-1, dim)
    d = np.sum((values[:, None, :] - cents[None, :, :]) ** 2, axis=2)
    return np.argmin(d, axis=1)


def ffnn_trace_batch(weights: list[np.ndarray], biases: list[np.ndarray],
                     act_ids: np.ndarray, X: np.ndarray, plan) -> np.ndarray:
    """Abstract a batch of inputs into (n, L) state-id traces."""
    n = X.shape[0]
    hidden: list[np.ndarray] = []
    h = X
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = _activate(int(act_ids[i]), h @ w.T + b)
        if i < len(weights) - 1:
            hidden.append(h)
    out = h

    traces = np.empty((n, plan.length), dtype=np.int32)
    traces[:, 0] = 0
    traces[:, 1] = plan.prot_base + X[:, plan.prot_index].astype(np.int32)
    for t in range(plan.n_tiers):
        if plan.src_kind[t] == 0:
            values = X[:, int(plan.src_index[t])]
        elif int(plan.method[t]) == 2:
            values = hidden[int(plan.src_layer[t])]
        else:
            values = hidden[int(plan.src_layer[t])][:, int(plan.src_index[t])]
        traces[:, 2 + t] = plan.base[t] + _assign_tier(plan, t, values)
    if plan.single_output:
        labels = (out[:, 0] >= 0.5).astype(np.int32)
    else:
        labels = np.argmax(out, axis=1).astype(np.int32)
    traces[:, -1] = plan.label_base + labels
    return traces


def count_transitions(traces: np.ndarray, m: int) -> np.ndarray:
    """Pair counts over consecutive states of every row: (m, m) int64."""
    flat = (traces[:, :-1].astype(np.int64) * m + traces[:, 1:]).ravel()
    return np.bincount(flat, minlength=m * m).reshape(m, m)


def rnn_trace_batch(cell_in: np.ndarray, cell_hidden: np.ndarray,
                    cell_bias: np.ndarray, cell_act: int,
                    readout_w: np.ndarray, readout_b: np.ndarray,
                    readout_act: int, X: np.ndarray, plan) -> np.ndarray:
    """Recurrent variant: X is (n, T, p); the single tier is emitted per step."""
    n, T, _ = X.shape
    traces = np.empty((n, T + 3), dtype=np.int32)
    traces[:, 0] = 0
    traces[:, 1] = plan.prot_base + X[:, 0, plan.prot_index].astype(np.int32)
    h = np.zeros((n, cell_hidden.shape[0]))
    for t in range(T):
        h = _activate(cell_act, X[:, t, :] @ cell_in.T + h @ cell_hidden.T + cell_bias)
        if plan.n_tiers:
            if int(plan.method[0]) == 2:
                values = h
            else:
                values = h[:, int(plan.src_index[0])]
            traces[:, 2 + t] = plan.base[0] + _assign_tier(plan, 0, values)
    out = _activate(readout_act, h @ readout_w.T + readout_b)
    if plan.single_output:
        labels = (out[:, 0] >= 0.5).astype(np.int32)
    else:
        labels = np.argmax(out, axis=1).astype(np.int32)
    traces[:, -1] = plan.label_base + labels
    return traces
