"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class SolverError(RuntimeError):
    """An iterative numerical routine failed to converge.

    ``residual`` carries the last measured residual, when one exists.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DefectiveEigenvalueError(ArithmeticError):
    """The dominant eigenvalue is (nearly) multiple; its derivative is unreliable."""


class HypothesisError(ValueError):
    """The hypotheses of a bound do not hold for the given network, so no audit is run."""


class CheckpointError(IOError):
    """A checkpoint file is corrupt, truncated or from an unsupported format version."""
