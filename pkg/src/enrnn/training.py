"""Training loop, evaluation and finite-difference gradient checking."""

import copy
import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tasks
from .errors import ContractError, SolverError
from .linalg import spectral_norm
from .lstm import LstmParams, init_lstm, lstm_backward, lstm_forward
from .net import (
    DENSE,
    EnrnnParams,
    activation_derivatives,
    init_enrnn,
    loss_mse_terminal,
    loss_xent_sequence,
    sequence_backward,
    sequence_forward,
)
from .optim import clip_by_global_norm, make_optimizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Everything needed to reproduce a run.

    ``hidden`` is the total state size n and ``split`` the long-term size q
    (so the short-term block has ``hidden - split`` units).  ``lr`` applies
    to input, output, coupling and bias tensors; ``lr_recurrent`` to the
    recurrent parameterizations ``T`` and ``A``.  ``neg_ones`` is the number
    of -1 entries in the Cayley sign diagonal (None means ``split // 2``).
    ``eval_every = 0`` evaluates once per epoch.  ``stop_loss > 0`` ends the
    run at the first evaluation below it.  For ``model = "lstm"`` ``hidden``
    is the LSTM width and ``split`` is ignored.
    """

    task: str = "adding"
    seq_len: int = 50
    batch_size: int = 50
    iterations: int = 1000
    hidden: int = 40
    split: int = 24
    coupling: bool = True
    epsilon: float = 0.0
    lr: float = 1e-3
    lr_recurrent: float = 1e-3
    optimizer: str = "rmsprop"
    seed: int = 0
    neg_ones: Optional[int] = None
    activation: str = "modrelu"
    model: str = "enrnn"
    train_size: int = 10000
    test_size: int = 1000
    eval_every: int = 0
    forget_bias: float = 0.0
    clip: float = 0.0
    stop_loss: float = 0.0
    out: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in ("enrnn", "lstm"):
            raise ContractError(f"model must be 'enrnn' or 'lstm', got {self.model!r}")
        if self.model == "enrnn" and not 0 <= self.split <= self.hidden:
            raise ContractError(f"need 0 <= split <= hidden, got split={self.split}, hidden={self.hidden}")
        if self.lr < 0 or self.lr_recurrent < 0:
            raise ContractError("learning rates must be nonnegative")
        if self.epsilon < 0:
            raise ContractError("epsilon must be nonnegative")
        if self.batch_size < 1 or self.iterations < 0:
            raise ContractError("batch_size must be >= 1 and iterations >= 0")
        if self.train_size < self.batch_size:
            raise ContractError("train_size must be at least batch_size")
        tasks.task_dims(self.task)

    @classmethod
    def fields(cls):
        return [f.name for f in dataclasses.fields(cls)]

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        """Canonical text form: sorted keys, no whitespace variation."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.fields())
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def load_config(path):
    with open(path) as fh:
        return TrainConfig.from_dict(json.load(fh))


def save_config(config, path):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------------
# model dispatch

def build_model(config, rng):
    m, p, _ = tasks.task_dims(config.task)
    if config.model == "lstm":
        return init_lstm(m, config.hidden, p, rng, forget_bias=config.forget_bias)
    return init_enrnn(
        m, config.hidden, config.split, p, rng,
        coupling=config.coupling, activation=config.activation,
        epsilon=config.epsilon, neg_ones=config.neg_ones,
    )


def forward(params, inputs, mode):
    if isinstance(params, LstmParams):
        return lstm_forward(params, inputs, mode)
    return sequence_forward(params, inputs, mode)


def backward(params, tape, dy):
    if isinstance(params, LstmParams):
        return lstm_backward(params, tape, dy)
    return sequence_backward(params, tape, dy)


def loss_and_grad(y, targets, task):
    if task == "adding":
        return loss_mse_terminal(y[:, 0], targets)
    return loss_xent_sequence(y, targets)


def batch_loss(params, batch, task):
    _, _, mode = tasks.task_dims(task)
    tape = forward(params, batch.inputs, mode)
    loss, dy = loss_and_grad(tape.y, batch.targets, task)
    if task == "adding":
        dy = dy[:, None]
    return loss, tape, dy


def raw_gradients(params, tape, dy):
    """Gradients for the raw trainable tensors (``T`` and ``A`` for the ENRNN)."""
    g = backward(params, tape, dy)
    if isinstance(params, LstmParams):
        return g
    out = {k: v for k, v in g.items() if k in DENSE}
    out["T"] = params.W_S.gradient(g["W_S"])
    out["A"] = params.W_L.gradient(g["W_L"])[params.W_L._iu]
    return out


def evaluate(params, dataset, task, chunk=1000):
    """Mean loss over a full dataset, evaluated in chunks."""
    total, count = 0.0, 0
    for start in range(0, len(dataset), chunk):
        part = dataset[start:start + chunk]
        loss, _, _ = batch_loss(params, part, task)
        total += loss * len(part)
        count += len(part)
    return total / count


def apply_update(params, grads, optimizer, config):
    """One optimizer step on every trainable tensor.

    The recurrent blocks go first so a solver failure leaves the dense
    tensors untouched.
    """
    if isinstance(params, LstmParams):
        for name in params.names:
            params.set_tensor(name, optimizer.step(name, params.tensors()[name], grads[name], config.lr))
        return
    saved = copy.deepcopy(optimizer.state.get("T"))
    try:
        params.W_S.update(grads["W_S"], optimizer, config.lr_recurrent, key="T")
    except SolverError:
        if saved is None:
            optimizer.state.pop("T", None)
        else:
            optimizer.state["T"] = saved
        raise
    params.W_L.update(grads["W_L"], optimizer, config.lr_recurrent, key="A")
    for name in DENSE:
        if name in grads:
            setattr(params, name, optimizer.step(name, getattr(params, name), grads[name], config.lr))


# --------------------------------------------------------------------------
# metrics

METRIC_FIELDS = ("iteration", "epoch", "train_loss", "eval_loss", "rho_T", "specnorm_WS", "active", "wall_s")


@dataclass
class MetricRecord:
    iteration: int
    epoch: int
    train_loss: float
    eval_loss: float
    rho_T: float
    specnorm_WS: float
    active: bool
    wall_s: float


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)

    def append(self, rec):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ContractError("metric iterations must be strictly increasing")
        self.records.append(rec)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def evals(self):
        """``(iteration, eval_loss)`` pairs for iterations that ran an evaluation."""
        return [(r.iteration, r.eval_loss) for r in self.records if not math.isnan(r.eval_loss)]

    def first_below(self, threshold):
        """First evaluated iteration with eval loss below ``threshold``, else None."""
        for it, loss in self.evals():
            if loss < threshold:
                return it
        return None

    def rows(self, include_wall=True):
        fields = METRIC_FIELDS if include_wall else METRIC_FIELDS[:-1]
        for r in self.records:
            yield [_fmt(getattr(r, f)) for f in fields]

    def to_csv(self, path, include_wall=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_FIELDS if include_wall else METRIC_FIELDS[:-1])
            w.writerows(self.rows(include_wall))

    @classmethod
    def from_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                def num(key):
                    return float(row[key]) if row.get(key) else math.nan
                out.append(MetricRecord(
                    int(row["iteration"]), int(row["epoch"]), num("train_loss"), num("eval_loss"),
                    num("rho_T"), num("specnorm_WS"), row["active"] == "1", num("wall_s"),
                ))
        return out


@dataclass
class RunResult:
    config: TrainConfig
    params: object
    optimizer: object
    metrics: RunMetrics
    iteration: int
    rng_state: dict
    error: Optional[str] = None


def _streams(seed):
    init, data, order = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(data), np.random.default_rng(order)


def make_datasets(config, data_rng):
    train = tasks.generate(config.task, config.train_size, config.seq_len, data_rng)
    test = tasks.generate(config.task, config.test_size, config.seq_len, data_rng)
    return train, test


def train(config, callback=None, checkpoint_path=None):
    """Train a model as described by ``config``.

    ``callback(iteration, params)`` is called after every update.  If a
    numerical solver fails mid-run, the last good state is written to
    ``checkpoint_path`` (when given) before the error propagates.
    Returns a RunResult.
    """
    from .checkpoint import save_checkpoint

    init_rng, data_rng, order_rng = _streams(config.seed)
    params = build_model(config, init_rng)
    optimizer = make_optimizer(config.optimizer)
    train_set, test_set = make_datasets(config, data_rng)
    per_epoch = config.train_size // config.batch_size
    eval_every = config.eval_every or per_epoch
    metrics = RunMetrics()
    t0 = time.perf_counter()
    perm = None
    result = RunResult(config, params, optimizer, metrics, 0, order_rng.bit_generator.state)

    for it in range(1, config.iterations + 1):
        k = (it - 1) % per_epoch
        if k == 0:
            perm = order_rng.permutation(config.train_size)
        epoch = (it - 1) // per_epoch
        batch = train_set[perm[k * config.batch_size:(k + 1) * config.batch_size]]
        loss, tape, dy = batch_loss(params, batch, config.task)
        grads = backward(params, tape, dy)
        if config.clip > 0:
            grads, _ = clip_by_global_norm(grads, config.clip)
        try:
            apply_update(params, grads, optimizer, config)
        except SolverError as exc:
            log.error("solver failure at iteration %d: %s", it, exc)
            result.error = str(exc)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, result)
            raise
        result.iteration = it
        result.rng_state = order_rng.bit_generator.state

        eval_loss = math.nan
        if it % eval_every == 0 or it == config.iterations:
            eval_loss = evaluate(params, test_set, config.task)
        if isinstance(params, EnrnnParams) and params.s:
            rho, snorm, active = params.W_S.rho, spectral_norm(params.W_S.W), params.W_S.active
        else:
            rho, snorm, active = math.nan, math.nan, False
        metrics.append(MetricRecord(it, epoch, loss, eval_loss, rho, snorm, active, time.perf_counter() - t0))
        if callback is not None:
            callback(it, params)
        if not math.isnan(eval_loss):
            log.info("iter %d  train %.6f  eval %.6f", it, loss, eval_loss)
            if config.stop_loss > 0 and eval_loss < config.stop_loss:
                break
    return result


# --------------------------------------------------------------------------
# gradient check

@dataclass
class GradcheckEntry:
    name: str
    rel_error: float
    max_analytic: float
    max_numeric: float


@dataclass
class GradcheckReport:
    entries: list

    @property
    def max_error(self):
        return max((e.rel_error for e in self.entries), default=0.0)

    def passed(self, tol):
        return all(e.rel_error <= tol for e in self.entries)

    def by_name(self):
        return {e.name: e for e in self.entries}

    def format(self):
        lines = [f"{'tensor':<8} {'rel_error':>12} {'max|analytic|':>14} {'max|numeric|':>14}"]
        for e in self.entries:
            lines.append(f"{e.name:<8} {e.rel_error:12.3e} {e.max_analytic:14.6e} {e.max_numeric:14.6e}")
        return "\n".join(lines)


def relative_error(a, f):
    """``max|a - f| / max(max|a|, max|f|)``, defined as 0 when both vanish."""
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(f), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - f)) / scale)


def _kink_margin(params, x):
    """Smallest distance of any pre-activation from a non-differentiable point."""
    if isinstance(params, LstmParams) or params.activation == "linear":
        return math.inf
    tape = sequence_forward(params, x)
    margins = []
    for a, b in ((tape.a_L, params.b_L), (tape.a_S, params.b_S)):
        if a.size == 0:
            continue
        if params.activation == "relu":
            margins.append(np.min(np.abs(a + b)))
        else:
            margins.append(min(np.min(np.abs(a)), np.min(np.abs(np.abs(a) + b))))
    return min(margins, default=math.inf)


def gradcheck_instance(config, rng, zero_short_readout=False):
    """Random parameters and data for a gradient check.

    Normalization of ``T`` is switched on so the eigenvalue path is
    exercised.  Returns ``(params, batch)``.
    """
    params = build_model(config, rng)
    m, p, mode = tasks.task_dims(config.task)
    B, tau = config.batch_size, config.seq_len
    if isinstance(params, EnrnnParams):
        if params.s:
            params.W_S.T = rng.standard_normal((params.s, params.s))
            params.W_S.active = True
            params.W_S.normalize()
        params.b_L = rng.uniform(-0.5, 0.5, params.q)
        params.b_S = rng.uniform(-0.5, 0.5, params.s)
        if zero_short_readout:
            params.V_S = np.zeros_like(params.V_S)
    params.c = rng.uniform(-0.5, 0.5, p)
    x = rng.standard_normal((B, tau, m))
    if mode == "terminal":
        targets = rng.standard_normal(B)
        loss_mode = "terminal-mse"
    else:
        targets = rng.integers(0, p, size=(B, tau))
        loss_mode = "sequence-xent"
    return params, tasks.TaskBatch(x, targets, loss_mode)


def gradcheck(config, h=1e-5, zero_short_readout=False, min_margin=1e-3, max_tries=100):
    """Central finite differences against analytic gradients for every tensor.

    Draws instances from ``config.seed`` until all pre-activations sit at
    least ``min_margin`` away from activation kinks.
    """
    rng = np.random.default_rng(config.seed)
    for _ in range(max_tries):
        params, batch = gradcheck_instance(config, rng, zero_short_readout)
        if _kink_margin(params, batch.inputs) >= min_margin:
            break
    else:
        raise ContractError("could not draw a kink-free gradcheck instance")

    _, tape, dy = batch_loss(params, batch, config.task)
    analytic = raw_gradients(params, tape, dy)

    entries = []
    for name, value in params.tensors().items():
        numeric = np.zeros(value.shape)
        flat = value.ravel()
        for i in range(flat.size):
            vals = []
            for sign in (1.0, -1.0):
                trial = params.copy()
                pert = flat.copy()
                pert[i] += sign * h
                trial.set_tensor(name, pert.reshape(value.shape))
                vals.append(batch_loss(trial, batch, config.task)[0])
            numeric.flat[i] = (vals[0] - vals[1]) / (2.0 * h)
        a = analytic[name]
        entries.append(GradcheckEntry(
            name, relative_error(a, numeric),
            float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)),
        ))
    return GradcheckReport(entries)
