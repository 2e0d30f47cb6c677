"""Jacobian heatmaps, short-term bound audits, spectra and state-size sweeps."""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, HypothesisError
from .linalg import eigvals, spectral_norm
from .net import activation_derivatives, sequence_forward
from .training import train

log = logging.getLogger(__name__)


@dataclass
class HeatmapGrid:
    """``values[r, t] = ||d h_r / d x_t||_2`` for ``r >= t``; zero where ``r < t``.

    Rows index the state time step, columns the input time step.
    """

    values: np.ndarray
    which_state: str

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


def _derivatives(params, x):
    tape = sequence_forward(params, x)
    faL, _ = activation_derivatives(tape.a_L, params.b_L, params.activation)
    faS, _ = activation_derivatives(tape.a_S, params.b_S, params.activation)
    return faL, faS


def jacobian_norms(params, inputs, per_example=False, tol=1e-10):
    """Spectral norms of ``d h_r / d x_t`` for both state blocks.

    Input-to-state Jacobians are propagated forward step by step (one
    tangent per input feature) and each block's norm is taken by power
    iteration.  Returns ``(short, long)`` HeatmapGrids, averaged over the
    batch unless ``per_example`` is set, in which case ``values`` carries a
    leading batch axis.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    B, tau, _ = x.shape
    faL, faS = _derivatives(params, x)
    WL, WS, WC = params.W_L.W, params.W_S.W, params.W_C
    gS = np.zeros((B, tau, tau))
    gL = np.zeros((B, tau, tau))
    for t in range(tau):
        JS = faS[:, t, :, None] * params.U_S
        JL = faL[:, t, :, None] * params.U_L
        stackS, stackL = [JS], [JL]
        for r in range(t + 1, tau):
            lin = WL @ JL
            if WC is not None:
                lin = lin + WC @ JS
            JL = faL[:, r, :, None] * lin
            JS = faS[:, r, :, None] * (WS @ JS)
            stackS.append(JS)
            stackL.append(JL)
        gS[:, t:, t] = spectral_norm(np.stack(stackS, axis=1), tol=tol)
        gL[:, t:, t] = spectral_norm(np.stack(stackL, axis=1), tol=tol)
    if not per_example:
        gS, gL = gS.mean(axis=0), gL.mean(axis=0)
    return HeatmapGrid(gS, "short"), HeatmapGrid(gL, "long")


BOUND_FIELDS = ("lag", "empirical_state", "bound_state", "empirical_input", "bound_input", "pass")


@dataclass
class BoundReport:
    rows: list
    norm_WS: float
    norm_US: float

    @property
    def passed(self):
        return all(r["pass"] for r in self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BOUND_FIELDS)
            for r in self.rows:
                w.writerow([r["lag"]] + [repr(float(r[k])) for k in BOUND_FIELDS[1:5]] + [int(r["pass"])])


def theorem_bound_report(params, inputs, lags, atol=1e-8, tol=1e-12):
    """Audit ``||d hS_{t+k} / d hS_t|| <= ||W_S||^k`` and the input version.

    Applies only to ReLU networks with ``||W_S||_2 < 1``; otherwise raises
    HypothesisError instead of reporting.  The empirical value for lag ``k``
    is the maximum over all start times and batch entries.
    """
    if params.activation != "relu":
        raise HypothesisError(f"bound requires ReLU activation, network uses {params.activation}")
    if params.s == 0:
        raise HypothesisError("network has no short-term state")
    norm_W = spectral_norm(params.W_S.W, tol=tol)
    if not norm_W < 1.0:
        raise HypothesisError(f"bound requires ||W_S||_2 < 1, got {norm_W:.6f}")
    norm_U = spectral_norm(params.U_S, tol=tol)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    B, tau, _ = x.shape
    lags = sorted(set(int(k) for k in lags))
    if lags and (lags[0] < 0 or lags[-1] >= tau):
        raise ContractError(f"lags must lie in [0, {tau - 1}]")
    max_lag = lags[-1] if lags else 0
    _, faS = _derivatives(params, x)
    WS, US = params.W_S.W, params.U_S
    s = params.s
    emp_state = np.zeros(max_lag + 1)
    emp_input = np.zeros(max_lag + 1)
    for t in range(tau):
        span = min(max_lag, tau - 1 - t)
        P = np.broadcast_to(np.eye(s), (B, s, s)).copy()
        J0 = faS[:, t, :, None] * US
        Ps, Js = [P], [J0]
        for k in range(1, span + 1):
            P = faS[:, t + k, :, None] * (WS @ P)
            Ps.append(P)
            Js.append(P @ J0)
        ns = spectral_norm(np.stack(Ps, axis=1), tol=tol).max(axis=0)
        ni = spectral_norm(np.stack(Js, axis=1), tol=tol).max(axis=0)
        emp_state[:span + 1] = np.maximum(emp_state[:span + 1], ns)
        emp_input[:span + 1] = np.maximum(emp_input[:span + 1], ni)
    rows = []
    for k in lags:
        bs = norm_W ** k
        bi = bs * norm_U
        rows.append({
            "lag": k,
            "empirical_state": float(emp_state[k]),
            "bound_state": float(bs),
            "empirical_input": float(emp_input[k]),
            "bound_input": float(bi),
            "pass": bool(emp_state[k] <= bs + atol and emp_input[k] <= bi + atol),
        })
    return BoundReport(rows, float(norm_W), float(norm_U))


def spectrum_dump(block):
    """Eigenvalues of the effective short-term matrix, largest modulus first."""
    if block.size == 0:
        return np.zeros(0, dtype=np.complex128)
    ev = eigvals(block.W)
    order = sorted(range(len(ev)), key=lambda i: (-abs(ev[i]), -ev[i].real, -ev[i].imag))
    return ev[order]


def spectrum_to_csv(ev, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["re", "im", "modulus"])
        for z in ev:
            w.writerow([repr(float(z.real)), repr(float(z.imag)), repr(float(abs(z)))])


SWEEP_FIELDS = ("q", "short", "iteration", "epoch", "train_loss", "eval_loss", "rho_T", "active", "status")


def sweep(configs, run_dir=None):
    """Train each config and gather the evaluation history of every run.

    Returns a list of rows keyed by ``(q, short)``.  A run that raises is
    recorded with a ``failed: ...`` status and the sweep moves on.
    """
    import os

    rows = []
    for cfg in configs:
        q, s = cfg.split, cfg.hidden - cfg.split
        try:
            res = train(cfg)
        except Exception as exc:  # noqa: BLE001 - a failed run is data, not a crash
            log.error("sweep run q=%d short=%d failed: %s", q, s, exc)
            rows.append({"q": q, "short": s, "iteration": 0, "epoch": 0, "train_loss": math.nan,
                         "eval_loss": math.nan, "rho_T": math.nan, "active": False,
                         "status": f"failed: {exc}"})
            continue
        if run_dir is not None:
            sub = os.path.join(run_dir, f"q{q}_s{s}")
            os.makedirs(sub, exist_ok=True)
            res.metrics.to_csv(os.path.join(sub, "metrics.csv"))
        for r in res.metrics.records:
            if math.isnan(r.eval_loss):
                continue
            rows.append({"q": q, "short": s, "iteration": r.iteration, "epoch": r.epoch,
                         "train_loss": r.train_loss, "eval_loss": r.eval_loss,
                         "rho_T": r.rho_T, "active": r.active, "status": "ok"})
    return rows


def sweep_to_csv(rows, path):
    from .training import _fmt

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for r in rows:
            w.writerow([r["status"] if k == "status" else _fmt(r[k]) for k in SWEEP_FIELDS])
