"""Seeded generators for the adding and copying problems."""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

BLANK = 0
MARKER = 9
N_SYMBOLS = 10   # one-hot input width for copying
N_CLASSES = 9    # blank + digits 1..8
N_RECALL = 10

ADDING_BASELINE = 0.167


@dataclass
class TaskBatch:
    """A batch of task sequences.

    ``targets`` is a ``(batch,)`` float vector for the adding problem and a
    ``(batch, time)`` integer array of class indices for copying.
    """

    inputs: np.ndarray
    targets: np.ndarray
    loss_mode: str
    seed: object = None

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, idx):
        return TaskBatch(self.inputs[idx], self.targets[idx], self.loss_mode, self.seed)


def _rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


def gen_adding(batch, T, rng):
    """Adding problem: channel 0 uniform on [0, 1), channel 1 marks one position
    in each half; the target is the sum of the two marked values."""
    if T < 2:
        raise ContractError("adding problem needs T >= 2")
    rng, seed = _rng(rng)
    half = math.ceil(T / 2)
    values = rng.uniform(0.0, 1.0, size=(batch, T))
    first = rng.integers(0, half, size=batch)
    second = rng.integers(half, T, size=batch)
    rows = np.arange(batch)
    marks = np.zeros((batch, T))
    marks[rows, first] = 1.0
    marks[rows, second] = 1.0
    inputs = np.stack([values, marks], axis=-1)
    targets = values[rows, first] + values[rows, second]
    return TaskBatch(inputs, targets, "terminal-mse", seed)


def copying_symbols(digits, T):
    """Input and target symbol sequences (length ``T + 20``) for given data digits."""
    digits = np.asarray(digits)
    batch = digits.shape[0]
    L = T + 20
    x = np.full((batch, L), BLANK, dtype=np.int64)
    x[:, :N_RECALL] = digits
    x[:, T + 9] = MARKER
    y = np.full((batch, L), BLANK, dtype=np.int64)
    y[:, -N_RECALL:] = digits
    return x, y


def gen_copying(batch, T, rng):
    """Copying problem with delay ``T``: ten digits from 1..8, ``T - 1`` blanks,
    a marker, then ten blanks during which the digits must be reproduced."""
    if T < 1:
        raise ContractError("copying problem needs T >= 1")
    rng, seed = _rng(rng)
    digits = rng.integers(1, 9, size=(batch, N_RECALL))
    x, y = copying_symbols(digits, T)
    inputs = np.eye(N_SYMBOLS)[x]
    return TaskBatch(inputs, y, "sequence-xent", seed)


GENERATORS = {"adding": gen_adding, "copying": gen_copying}


def generate(task, batch, T, rng):
    try:
        gen = GENERATORS[task]
    except KeyError:
        raise ContractError(f"unknown task {task!r}") from None
    return gen(batch, T, rng)


def task_dims(task):
    """``(input width m, output width p, output mode)`` for a task."""
    if task == "adding":
        return 2, 1, "terminal"
    if task == "copying":
        return N_SYMBOLS, N_CLASSES, "sequence"
    raise ContractError(f"unknown task {task!r}")


def baseline_value(task, T):
    """Loss of the trivial predictor: 0.167 for adding, ``10 ln 8 / (T + 20)`` for copying."""
    if task == "adding":
        return ADDING_BASELINE
    if task == "copying":
        return N_RECALL * math.log(8) / (T + 20)
    raise ContractError(f"unknown task {task!r}")


ENR_MAGIC = b"ENR1"


def dump_array(path, array):
    """Write ``array`` as: ``ENR1``, ndim, dims (little-endian int64), float64 payload."""
    a = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(ENR_MAGIC)
        fh.write(struct.pack("<q", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}q", *a.shape))
        fh.write(a.tobytes(order="C"))


def load_array(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != ENR_MAGIC:
        raise ValueError(f"{path}: not an ENR1 file")
    (ndim,) = struct.unpack_from("<q", data, 4)
    shape = struct.unpack_from(f"<{ndim}q", data, 12)
    off = 12 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(data) != off + 8 * count:
        raise ValueError(f"{path}: payload size does not match header")
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(shape).astype(np.float64)
