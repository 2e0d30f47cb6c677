"""ENRNN cell, unrolled forward pass, backpropagation through time and losses.

Layout is batch-major: inputs ``(batch, time, m)``, states ``(batch, size)``.
Per step::

    a_S = U_S x_t + W_S h_S                       h_S' = f(a_S, b_S)
    a_L = U_L x_t + W_L h_L + W_C h_S             h_L' = f(a_L, b_L)
    y_t = V_L h_L' + V_S h_S' + c

The bias enters through the activation ``f(a, b)``: additively for ReLU and
linear units, inside the magnitude threshold for modReLU.  The short-term
update never reads ``h_L``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .params import (
    CayleyOrthogonalBlock,
    EigenNormBlock,
    cayley_init_skew,
    glorot_uniform,
    init_rotation_blocks,
    sign_diagonal,
)

ACTIVATIONS = ("modrelu", "relu", "linear")


def modrelu(z, b):
    """Real modReLU: ``sign(z) * max(|z| + b, 0)``, with output 0 at ``z = 0``."""
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) + b, 0.0)


def activate(a, b, kind):
    """Apply activation ``kind`` to pre-activation ``a`` with bias ``b``."""
    if kind == "modrelu":
        return modrelu(a, b)
    if kind == "relu":
        return np.maximum(a + b, 0.0)
    if kind == "linear":
        return a + b
    raise ContractError(f"unknown activation {kind!r}")


def activation_derivatives(a, b, kind):
    """Partial derivatives ``(dh/da, dh/db)`` of ``h = f(a, b)``, elementwise.

    Kinks get subgradient 0 (ReLU at 0, modReLU at ``a = 0`` and at ``|a| = -b``).
    """
    if kind == "modrelu":
        on = ((np.abs(a) + b) > 0.0) & (a != 0.0)
        return on.astype(np.float64), np.sign(a) * on
    if kind == "relu":
        on = ((a + b) > 0.0).astype(np.float64)
        return on, on
    if kind == "linear":
        one = np.ones_like(a)
        return one, one
    raise ContractError(f"unknown activation {kind!r}")


DENSE = ("U_L", "U_S", "W_C", "b_L", "b_S", "V_L", "V_S", "c")


class EnrnnParams:
    """All trainable tensors of the ENRNN.

    ``W_L`` is a CayleyOrthogonalBlock of size ``q`` and ``W_S`` an
    EigenNormBlock of size ``n - q``.  ``W_C`` is None when coupling is off.
    """

    def __init__(self, U_L, U_S, W_L, W_S, W_C, b_L, b_S, V_L, V_S, c, activation="modrelu"):
        if activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}")
        self.U_L = np.asarray(U_L, dtype=np.float64)
        self.U_S = np.asarray(U_S, dtype=np.float64)
        self.W_L = W_L
        self.W_S = W_S
        self.W_C = None if W_C is None else np.asarray(W_C, dtype=np.float64)
        self.b_L = np.asarray(b_L, dtype=np.float64)
        self.b_S = np.asarray(b_S, dtype=np.float64)
        self.V_L = np.asarray(V_L, dtype=np.float64)
        self.V_S = np.asarray(V_S, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        self.activation = activation
        self._check()

    def _check(self):
        q, s = self.q, self.s
        m, p = self.m, self.p
        shapes = {
            "U_L": (self.U_L, (q, m)), "U_S": (self.U_S, (s, m)),
            "b_L": (self.b_L, (q,)), "b_S": (self.b_S, (s,)),
            "V_L": (self.V_L, (p, q)), "V_S": (self.V_S, (p, s)), "c": (self.c, (p,)),
        }
        if self.W_C is not None:
            shapes["W_C"] = (self.W_C, (q, s))
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ContractError(f"{name} has shape {arr.shape}, expected {want}")

    @property
    def q(self):
        return self.W_L.size

    @property
    def s(self):
        return self.W_S.size

    @property
    def n(self):
        return self.q + self.s

    @property
    def m(self):
        return self.U_L.shape[1]

    @property
    def p(self):
        return self.c.shape[0]

    @property
    def coupled(self):
        return self.W_C is not None

    def tensors(self):
        """Raw trainable tensors by name (the ones an optimizer updates)."""
        out = {"A": self.W_L.upper, "T": self.W_S.T}
        for name in DENSE:
            arr = getattr(self, name)
            if arr is not None:
                out[name] = arr
        return out

    def set_tensor(self, name, value):
        """Replace one raw tensor and refresh whatever depends on it."""
        value = np.array(value, dtype=np.float64)
        if name == "A":
            self.W_L.upper = value
            self.W_L.forward()
        elif name == "T":
            self.W_S.T = value
            self.W_S.normalize()
        elif name in DENSE:
            setattr(self, name, value)
        else:
            raise ContractError(f"unknown tensor {name!r}")

    def copy(self):
        W_L = CayleyOrthogonalBlock(self.W_L.A, self.W_L.D)
        W_S = EigenNormBlock(self.W_S.T, self.W_S.epsilon, self.W_S.active)
        return EnrnnParams(
            self.U_L.copy(), self.U_S.copy(), W_L, W_S,
            None if self.W_C is None else self.W_C.copy(),
            self.b_L.copy(), self.b_S.copy(), self.V_L.copy(), self.V_S.copy(),
            self.c.copy(), self.activation,
        )


def init_enrnn(m, n, q, p, rng, coupling=True, activation="modrelu", epsilon=0.0, neg_ones=None):
    """Freshly initialized ENRNN parameters.

    Input/output and coupling weights are Glorot uniform, ``T`` follows the
    rotation-block initializer, ``A`` the half-angle rotation form and the
    ``D`` diagonal holds ``neg_ones`` negative entries (default ``q // 2``).
    modReLU biases start in U[-0.01, 0.01]; other biases at 0.
    """
    if not 0 <= q <= n:
        raise ContractError("need 0 <= q <= n")
    s = n - q
    if neg_ones is None:
        neg_ones = q // 2

    def dense(rows, cols):
        if rows == 0 or cols == 0:
            return np.zeros((rows, cols))
        return glorot_uniform(rows, cols, rng)

    U_L = dense(q, m)
    U_S = dense(s, m)
    A = cayley_init_skew(q, rng)
    T = init_rotation_blocks(s, rng) if s else np.zeros((0, 0))
    W_C = dense(q, s) if coupling else None
    if activation == "modrelu":
        b_L = rng.uniform(-0.01, 0.01, size=q)
        b_S = rng.uniform(-0.01, 0.01, size=s)
    else:
        b_L, b_S = np.zeros(q), np.zeros(s)
    V_L = dense(p, q)
    V_S = dense(p, s)
    c = np.zeros(p)
    return EnrnnParams(
        U_L, U_S, CayleyOrthogonalBlock(A, sign_diagonal(q, neg_ones)),
        EigenNormBlock(T, epsilon), W_C, b_L, b_S, V_L, V_S, c, activation,
    )


def cell_forward(params, x_t, h_prev_L, h_prev_S):
    """One step. Returns ``(h_L, h_S, y, (a_L, a_S))`` for a single or batched input."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != params.m:
        raise ContractError(f"input has {x_t.shape[-1]} features, expected {params.m}")
    a_S = x_t @ params.U_S.T + h_prev_S @ params.W_S.W.T
    a_L = x_t @ params.U_L.T + h_prev_L @ params.W_L.W.T
    if params.coupled:
        a_L = a_L + h_prev_S @ params.W_C.T
    h_S = activate(a_S, params.b_S, params.activation)
    h_L = activate(a_L, params.b_L, params.activation)
    y = h_L @ params.V_L.T + h_S @ params.V_S.T + params.c
    return h_L, h_S, y, (a_L, a_S)


@dataclass
class ForwardTape:
    """Intermediates of an unrolled forward pass.

    ``h_L``/``h_S`` have shape ``(batch, time + 1, size)`` with the zero
    initial state at index 0; ``a_L``/``a_S`` are the pre-activations of
    steps ``1..time``.  ``y`` is ``(batch, time, p)`` in ``"sequence"`` mode
    and ``(batch, p)`` (last step only) in ``"terminal"`` mode.
    """

    x: np.ndarray
    a_L: np.ndarray
    a_S: np.ndarray
    h_L: np.ndarray
    h_S: np.ndarray
    y: np.ndarray
    mode: str


def sequence_forward(params, inputs, mode="sequence"):
    """Unroll the network over ``inputs`` of shape ``(batch, time, m)`` from zero states."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.m:
        raise ContractError(f"inputs must be (batch, time, {params.m}), got {x.shape}")
    if mode not in ("sequence", "terminal"):
        raise ContractError("mode must be 'sequence' or 'terminal'")
    B, tau, _ = x.shape
    if tau < 1:
        raise ContractError("sequence length must be >= 1")
    q, s = params.q, params.s
    xL = x @ params.U_L.T
    xS = x @ params.U_S.T
    WLt, WSt = params.W_L.W.T, params.W_S.W.T
    WCt = params.W_C.T if params.coupled else None
    a_L = np.empty((B, tau, q))
    a_S = np.empty((B, tau, s))
    h_L = np.zeros((B, tau + 1, q))
    h_S = np.zeros((B, tau + 1, s))
    act = params.activation
    for t in range(tau):
        aS = xS[:, t] + h_S[:, t] @ WSt
        aL = xL[:, t] + h_L[:, t] @ WLt
        if WCt is not None:
            aL += h_S[:, t] @ WCt
        a_S[:, t] = aS
        a_L[:, t] = aL
        h_S[:, t + 1] = activate(aS, params.b_S, act)
        h_L[:, t + 1] = activate(aL, params.b_L, act)
    if mode == "sequence":
        y = h_L[:, 1:] @ params.V_L.T + h_S[:, 1:] @ params.V_S.T + params.c
    else:
        y = h_L[:, -1] @ params.V_L.T + h_S[:, -1] @ params.V_S.T + params.c
    return ForwardTape(x, a_L, a_S, h_L, h_S, y, mode)


def sequence_backward(params, tape, dL_dy):
    """Reverse-mode gradients of the loss for every ENRNN tensor.

    Returns a dict keyed like ``EnrnnParams`` fields.  ``"W_S"`` and
    ``"W_L"`` are gradients with respect to the effective recurrent matrices;
    map them through ``W_S.gradient`` and ``W_L.gradient`` to reach ``T``
    and ``A``.
    """
    dy = np.asarray(dL_dy, dtype=np.float64)
    if dy.shape != tape.y.shape:
        raise ContractError(f"dL_dy shape {dy.shape} != output shape {tape.y.shape}")
    if tape.h_L.shape[2] != params.q or tape.h_S.shape[2] != params.s:
        raise ContractError("tape was produced by differently shaped parameters")
    x = tape.x
    B, tau, _ = x.shape
    act = params.activation
    faL, fbL = activation_derivatives(tape.a_L, params.b_L, act)
    faS, fbS = activation_derivatives(tape.a_S, params.b_S, act)

    if tape.mode == "sequence":
        gL_out = dy @ params.V_L
        gS_out = dy @ params.V_S
        dyf = dy.reshape(B * tau, dy.shape[2])
        dV_L = dyf.T @ tape.h_L[:, 1:].reshape(B * tau, params.q)
        dV_S = dyf.T @ tape.h_S[:, 1:].reshape(B * tau, params.s)
        dc = dy.sum(axis=(0, 1))
    else:
        gL_out = np.zeros((B, tau, params.q))
        gS_out = np.zeros((B, tau, params.s))
        gL_out[:, -1] = dy @ params.V_L
        gS_out[:, -1] = dy @ params.V_S
        dV_L = dy.T @ tape.h_L[:, -1]
        dV_S = dy.T @ tape.h_S[:, -1]
        dc = dy.sum(axis=0)

    WL, WS, WC = params.W_L.W, params.W_S.W, params.W_C
    gh_L = np.empty_like(gL_out)
    gh_S = np.empty_like(gS_out)
    gL = np.zeros((B, params.q))
    gS = np.zeros((B, params.s))
    for t in range(tau - 1, -1, -1):
        gL = gL + gL_out[:, t]
        gS = gS + gS_out[:, t]
        gh_L[:, t] = gL
        gh_S[:, t] = gS
        daL = gL * faL[:, t]
        daS = gS * faS[:, t]
        gL = daL @ WL
        gS = daS @ WS
        if WC is not None:
            gS = gS + daL @ WC
    q, s = params.q, params.s
    rows = B * tau
    daL = (gh_L * faL).reshape(rows, q)
    daS = (gh_S * faS).reshape(rows, s)
    xf = x.reshape(rows, x.shape[2])
    hLp = tape.h_L[:, :-1].reshape(rows, q)
    hSp = tape.h_S[:, :-1].reshape(rows, s)
    grads = {
        "U_L": daL.T @ xf,
        "U_S": daS.T @ xf,
        "W_L": daL.T @ hLp,
        "W_S": daS.T @ hSp,
        "b_L": (gh_L * fbL).sum(axis=(0, 1)),
        "b_S": (gh_S * fbS).sum(axis=(0, 1)),
        "V_L": dV_L,
        "V_S": dV_S,
        "c": dc,
    }
    if WC is not None:
        grads["W_C"] = daL.T @ hSp
    return grads


def loss_mse_terminal(y_final, target):
    """Mean squared error over all entries and its gradient."""
    y = np.asarray(y_final, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64).reshape(y.shape)
    diff = y - t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss_xent_sequence(logits, targets, mask=None):
    """Softmax cross-entropy averaged over (unmasked) positions, with its gradient."""
    z = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    p = z.shape[-1]
    if targets.shape != z.shape[:-1]:
        raise ContractError(f"targets shape {targets.shape} != logits shape {z.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= p):
        raise ContractError(f"target classes must lie in [0, {p})")
    w = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    count = w.sum()
    if count == 0:
        return 0.0, np.zeros_like(z)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    se = e.sum(axis=-1, keepdims=True)
    logp = z - zmax - np.log(se)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float(-(picked * w).sum() / count)
    grad = e / se
    np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
    grad *= (w / count)[..., None]
    return loss, grad
