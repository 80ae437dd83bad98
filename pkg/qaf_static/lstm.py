"""Single-layer LSTM with an explicit backward pass through time.

Gate blocks in the ``4H`` axis are ordered (input, forget, cell, output) with
sigmoid, sigmoid, tanh and sigmoid activations. The initial hidden and cell
states are zero.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ShapeError


@dataclass
class LstmCache:
    x: np.ndarray
    h: np.ndarray      # (T+1, H), row 0 is the zero initial state
    c: np.ndarray      # (T+1, H)
    gates: np.ndarray  # (T, 4H) post-activation
    tanh_c: np.ndarray  # (T, H)


def lstm_forward(x, W_x, W_h, b):
    """Run the recurrence over a ``(T, d_in)`` sequence.

    Returns:
        A tuple ``(hidden, cache)`` where ``hidden`` is ``(T, H)``.
    """
    x = np.asarray(x, dtype=np.float64)
    hidden = W_h.shape[0]
    if W_x.shape != (x.shape[1], 4 * hidden) or W_h.shape != (hidden, 4 * hidden) \
            or b.shape != (4 * hidden,):
        raise ShapeError(
            f'lstm_forward: inconsistent shapes x={x.shape} W_x={W_x.shape} '
            f'W_h={W_h.shape} b={b.shape}'
        )
    steps = x.shape[0]
    h = np.zeros((steps + 1, hidden))
    c = np.zeros((steps + 1, hidden))
    gates = np.empty((steps, 4 * hidden))
    tanh_c = np.empty((steps, hidden))
    pre_x = x @ W_x + b
    for t in range(steps):
        pre = pre_x[t] + h[t] @ W_h
        gates[t, :2 * hidden] = expit(pre[:2 * hidden])
        gates[t, 2 * hidden:3 * hidden] = np.tanh(pre[2 * hidden:3 * hidden])
        gates[t, 3 * hidden:] = expit(pre[3 * hidden:])
        i, f, g, o = np.split(gates[t], 4)
        c[t + 1] = f * c[t] + i * g
        tanh_c[t] = np.tanh(c[t + 1])
        h[t + 1] = o * tanh_c[t]
    return h[1:].copy(), LstmCache(x=x, h=h, c=c, gates=gates, tanh_c=tanh_c)


def lstm_backward(d_hidden, cache, W_x, W_h):
    """Backpropagate a ``(T, H)`` gradient on the hidden states.

    Returns:
        A tuple ``(dx, dW_x, dW_h, db)``.
    """
    steps, hidden = d_hidden.shape
    d_pre = np.empty((steps, 4 * hidden))
    dh_next = np.zeros(hidden)
    dc_next = np.zeros(hidden)
    for t in reversed(range(steps)):
        i, f, g, o = np.split(cache.gates[t], 4)
        dh = d_hidden[t] + dh_next
        do = dh * cache.tanh_c[t]
        dc = dc_next + dh * o * (1.0 - cache.tanh_c[t] ** 2)
        di = dc * g
        df = dc * cache.c[t]
        dg = dc * i
        d_pre[t] = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g ** 2),
            do * o * (1.0 - o),
        ])
        dh_next = W_h @ d_pre[t]
        dc_next = dc * f
    dx = d_pre @ W_x.T
    dW_x = cache.x.T @ d_pre
    dW_h = cache.h[:-1].T @ d_pre
    db = d_pre.sum(axis=0)
    return dx, dW_x, dW_h, db
