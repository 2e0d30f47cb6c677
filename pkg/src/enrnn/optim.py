"""First-order optimizers with per-tensor state keyed by parameter name."""

import numpy as np

from .errors import ContractError


class Optimizer:
    """Base class. ``step`` returns the updated parameter without mutating the input."""

    kind = None
    slots = ()

    def __init__(self):
        self.state = {}

    def _slots(self, key, param):
        st = self.state.get(key)
        if st is None:
            st = {name: np.zeros_like(param, dtype=np.float64) for name in self.slots}
            st["t"] = 0
            self.state[key] = st
        return st

    def step(self, key, param, grad, lr):
        param = np.asarray(param, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if param.shape != grad.shape:
            raise ContractError(f"{key}: grad shape {grad.shape} != param shape {param.shape}")
        st = self._slots(key, param)
        if st[self.slots[0]].shape != param.shape:
            raise ContractError(f"{key}: optimizer state shape mismatch")
        st["t"] += 1
        return param - lr * self._direction(st, grad)

    def _direction(self, st, grad):
        raise NotImplementedError

    def hyperparameters(self):
        return {}


class Adam(Optimizer):
    kind = "adam"
    slots = ("m", "v")

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__()
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def _direction(self, st, grad):
        st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * grad
        st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * grad * grad
        m_hat = st["m"] / (1.0 - self.beta1 ** st["t"])
        v_hat = st["v"] / (1.0 - self.beta2 ** st["t"])
        return m_hat / (np.sqrt(v_hat) + self.eps)

    def hyperparameters(self):
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


class RMSProp(Optimizer):
    kind = "rmsprop"
    slots = ("ms",)

    def __init__(self, decay=0.9, eps=1e-10):
        super().__init__()
        self.decay, self.eps = decay, eps

    def _direction(self, st, grad):
        st["ms"] = self.decay * st["ms"] + (1.0 - self.decay) * grad * grad
        return grad / (np.sqrt(st["ms"]) + self.eps)

    def hyperparameters(self):
        return {"decay": self.decay, "eps": self.eps}


class Adagrad(Optimizer):
    kind = "adagrad"
    slots = ("acc",)

    def __init__(self, eps=1e-10):
        super().__init__()
        self.eps = eps

    def _direction(self, st, grad):
        st["acc"] = st["acc"] + grad * grad
        return grad / (np.sqrt(st["acc"]) + self.eps)

    def hyperparameters(self):
        return {"eps": self.eps}


class SGD(Optimizer):
    """Plain gradient descent, ``p <- p - lr * g``."""

    kind = "sgd"
    slots = ("_",)

    def _direction(self, st, grad):
        return grad


OPTIMIZERS = {cls.kind: cls for cls in (Adam, RMSProp, Adagrad, SGD)}


def make_optimizer(kind, **hyper):
    try:
        return OPTIMIZERS[kind](**hyper)
    except KeyError:
        raise ContractError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}") from None


def optimizer_step(state, param, grad, lr, key="param"):
    """Functional form: advance ``state`` (an Optimizer) and return the new parameter."""
    return state.step(key, param, grad, lr)


def clip_by_global_norm(grads, threshold):
    """Rescale a dict of gradients so their joint 2-norm is at most ``threshold``.

    Returns ``(clipped, norm_before)``.  A nonpositive threshold disables clipping.
    """
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if threshold <= 0 or norm <= threshold:
        return grads, norm
    scale = threshold / norm
    return {k: g * scale for k, g in grads.items()}, norm
