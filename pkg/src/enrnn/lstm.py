"""Standard LSTM baseline with hand-written BPTT.

Gate layout along the ``4H`` axis is ``[input, forget, cell, output]``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .params import glorot_uniform


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LstmParams:
    """LSTM weights plus a linear read-out ``y = V h + c``."""

    names = ("W_x", "W_h", "b", "V", "c")

    def __init__(self, W_x, W_h, b, V, c):
        self.W_x = np.asarray(W_x, dtype=np.float64)
        self.W_h = np.asarray(W_h, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.V = np.asarray(V, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        H = self.H
        if self.W_x.shape[0] != 4 * H or self.W_h.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise ContractError("inconsistent LSTM gate shapes")
        if self.V.shape != (self.c.shape[0], H):
            raise ContractError("inconsistent LSTM read-out shapes")

    @property
    def H(self):
        return self.W_h.shape[1]

    @property
    def m(self):
        return self.W_x.shape[1]

    @property
    def p(self):
        return self.c.shape[0]

    def tensors(self):
        return {k: getattr(self, k) for k in self.names}

    def set_tensor(self, name, value):
        if name not in self.names:
            raise ContractError(f"unknown tensor {name!r}")
        setattr(self, name, np.array(value, dtype=np.float64))

    def copy(self):
        return LstmParams(*(getattr(self, k).copy() for k in self.names))


def init_lstm(m, H, p, rng, forget_bias=0.0):
    """Glorot-uniform weights; forget-gate bias set to ``forget_bias``, other biases 0."""
    b = np.zeros(4 * H)
    b[H:2 * H] = forget_bias
    return LstmParams(
        glorot_uniform(4 * H, m, rng),
        glorot_uniform(4 * H, H, rng),
        b,
        glorot_uniform(p, H, rng),
        np.zeros(p),
    )


@dataclass
class LstmTape:
    x: np.ndarray
    gates: np.ndarray  # activated gates, (batch, time, 4H)
    c: np.ndarray      # cell states, (batch, time + 1, H)
    h: np.ndarray      # hidden states, (batch, time + 1, H)
    y: np.ndarray
    mode: str


def lstm_cell_forward(params, x_t, h_prev, c_prev):
    """One LSTM step. Returns ``(h, c, gates)``."""
    H = params.H
    z = x_t @ params.W_x.T + h_prev @ params.W_h.T + params.b
    g = np.empty_like(z)
    g[..., :2 * H] = _sigmoid(z[..., :2 * H])
    g[..., 2 * H:3 * H] = np.tanh(z[..., 2 * H:3 * H])
    g[..., 3 * H:] = _sigmoid(z[..., 3 * H:])
    c = g[..., H:2 * H] * c_prev + g[..., :H] * g[..., 2 * H:3 * H]
    h = g[..., 3 * H:] * np.tanh(c)
    return h, c, g


def lstm_forward(params, inputs, mode="sequence"):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.m:
        raise ContractError(f"inputs must be (batch, time, {params.m}), got {x.shape}")
    B, tau, _ = x.shape
    H = params.H
    gates = np.empty((B, tau, 4 * H))
    c = np.zeros((B, tau + 1, H))
    h = np.zeros((B, tau + 1, H))
    for t in range(tau):
        h[:, t + 1], c[:, t + 1], gates[:, t] = lstm_cell_forward(params, x[:, t], h[:, t], c[:, t])
    if mode == "sequence":
        y = h[:, 1:] @ params.V.T + params.c
    elif mode == "terminal":
        y = h[:, -1] @ params.V.T + params.c
    else:
        raise ContractError("mode must be 'sequence' or 'terminal'")
    return LstmTape(x, gates, c, h, y, mode)


def lstm_backward(params, tape, dL_dy):
    dy = np.asarray(dL_dy, dtype=np.float64)
    if dy.shape != tape.y.shape:
        raise ContractError(f"dL_dy shape {dy.shape} != output shape {tape.y.shape}")
    x = tape.x
    B, tau, _ = x.shape
    H = params.H
    if tape.mode == "sequence":
        gh_out = dy @ params.V
        dV = np.einsum("btp,bth->ph", dy, tape.h[:, 1:])
        dc_out = dy.sum(axis=(0, 1))
    else:
        gh_out = np.zeros((B, tau, H))
        gh_out[:, -1] = dy @ params.V
        dV = dy.T @ tape.h[:, -1]
        dc_out = dy.sum(axis=0)

    dz = np.empty((B, tau, 4 * H))
    gh = np.zeros((B, H))
    gc = np.zeros((B, H))
    for t in range(tau - 1, -1, -1):
        g = tape.gates[:, t]
        i, f, cc, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(tape.c[:, t + 1])
        gh = gh + gh_out[:, t]
        gc = gc + gh * o * (1.0 - tc * tc)
        dzt = dz[:, t]
        dzt[:, :H] = gc * cc * i * (1.0 - i)
        dzt[:, H:2 * H] = gc * tape.c[:, t] * f * (1.0 - f)
        dzt[:, 2 * H:3 * H] = gc * i * (1.0 - cc * cc)
        dzt[:, 3 * H:] = gh * tc * o * (1.0 - o)
        gh = dzt @ params.W_h
        gc = gc * f
    return {
        "W_x": np.einsum("btg,btm->gm", dz, x),
        "W_h": np.einsum("btg,bth->gh", dz, tape.h[:, :-1]),
        "b": dz.sum(axis=(0, 1)),
        "V": dV,
        "c": dc_out,
    }
