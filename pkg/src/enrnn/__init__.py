"""Eigenvalue normalized recurrent networks in plain numpy."""

__version__ = "0.1.0"

from .errors import CheckpointError, ContractError, DefectiveEigenvalueError, HypothesisError, SolverError
from .linalg import (
    DominantEigenData,
    dominant_eigenpair,
    eigvals,
    hessenberg,
    matmul,
    real_schur,
    spectral_norm,
    spectral_radius,
)
from .params import CayleyOrthogonalBlock, EigenNormBlock, eigennorm_gradient, init_rotation_blocks
from .optim import make_optimizer
from .net import EnrnnParams, init_enrnn, sequence_backward, sequence_forward
from .lstm import LstmParams, init_lstm
from .tasks import TaskBatch, baseline_value, gen_adding, gen_copying
from .training import RunMetrics, RunResult, TrainConfig, gradcheck, train
from .checkpoint import load_checkpoint, save_checkpoint
from .analysis import HeatmapGrid, jacobian_norms, spectrum_dump, sweep, theorem_bound_report
