"""Trainable parameterizations of the two recurrent blocks.

``EigenNormBlock`` keeps the short-term matrix as ``W = T / (rho(T) + eps)``
once normalization is switched on, and maps gradients with respect to ``W``
back to ``T``.  ``CayleyOrthogonalBlock`` keeps the long-term matrix
orthogonal through ``W = (I + A)^{-1} (I - A) D`` with skew-symmetric ``A``.
"""

import logging

import numpy as np

from .errors import ContractError, DefectiveEigenvalueError, SolverError
from .linalg import as_matrix, dominant_eigenpair

log = logging.getLogger(__name__)

DEFECT_THRESHOLD = 1e-8


def glorot_uniform(rows, cols, rng):
    """Entries drawn from U[-s, s] with ``s = sqrt(6 / (rows + cols))``."""
    if rows < 1 or cols < 1:
        raise ContractError("glorot_uniform needs rows, cols >= 1")
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols))


def rotation_block_params(n, rng):
    """Sample the angles and scales for ``init_rotation_blocks``.

    Returns ``(thetas, gammas)``; ``gammas`` has one extra entry when ``n`` is
    odd, used as the trailing 1x1 block.
    """
    k = n // 2
    thetas = rng.uniform(0.0, np.pi / 2, size=k)
    gammas = rng.uniform(-1.0, 1.0, size=k + (n % 2))
    return thetas, gammas


def rotation_blocks(thetas, gammas, n):
    """Block-diagonal matrix of scaled 2x2 rotations (plus a 1x1 block for odd n)."""
    T = np.zeros((n, n))
    for j, (t, g) in enumerate(zip(thetas, gammas)):
        c, s = np.cos(t), np.sin(t)
        T[2 * j:2 * j + 2, 2 * j:2 * j + 2] = g * np.array([[c, -s], [s, c]])
    if n % 2:
        T[n - 1, n - 1] = gammas[-1]
    return T


def init_rotation_blocks(n, rng):
    """Random matrix whose eigenvalues ``gamma_j exp(+-i t_j)`` fill the unit disc."""
    if n < 1:
        raise ContractError("init_rotation_blocks needs n >= 1")
    thetas, gammas = rotation_block_params(n, rng)
    return rotation_blocks(thetas, gammas, n)


def eigennorm_gradient(T, eig, epsilon, dL_dW):
    """Gradient with respect to ``T`` of a loss of ``W = T / (rho(T) + epsilon)``.

    ``eig`` must be the dominant eigen data of ``T``.  With ``r = rho + eps``::

        dL/dT = (dL/dW - sum(dL/dW * W) / rho * C) / r

    where ``C = rho * d rho / dT``.  For ``epsilon = 0`` the ``1/rho`` factor
    coincides with ``1/r``.
    """
    G = as_matrix(dL_dW, "dL_dW")
    T = np.asarray(T, dtype=np.float64)
    if G.shape != T.shape:
        raise ContractError(f"gradient shape {G.shape} does not match T {T.shape}")
    if eig.defect_score < DEFECT_THRESHOLD:
        raise DefectiveEigenvalueError(
            f"dominant eigenvalue near-defective (|v*u| score {eig.defect_score:.3e})"
        )
    if eig.rho == 0.0:
        raise DefectiveEigenvalueError("spectral radius is zero; normalization undefined")
    r = eig.rho + epsilon
    W = T / r
    coef = np.sum(G * W) / eig.rho
    return (G - coef * eig.C) / r


class EigenNormBlock:
    """Short-term recurrent matrix, normalized by its spectral radius once active.

    Normalization starts the first time an update leaves ``rho(T) > 1`` and
    stays on from then.  Until then ``W`` is ``T`` itself.
    """

    def __init__(self, T, epsilon=0.0, active=False):
        self.T = np.array(T, dtype=np.float64)
        if self.T.ndim != 2 or self.T.shape[0] != self.T.shape[1]:
            raise ContractError("T must be square")
        if epsilon < 0:
            raise ContractError("epsilon must be nonnegative")
        self.epsilon = float(epsilon)
        self.active = bool(active)
        self.eig = None
        self._eig_T = None
        self.W = self.T.copy()
        self.normalize()

    @property
    def size(self):
        return self.T.shape[0]

    @property
    def rho(self):
        """Spectral radius of ``T`` from the cached eigen data."""
        return 0.0 if self.eig is None else self.eig.rho

    def refresh(self):
        """Recompute the dominant eigen data of the current ``T``."""
        if self.size == 0:
            self.eig = None
        else:
            self.eig = dominant_eigenpair(self.T)
        self._eig_T = self.T.copy()

    def normalize(self):
        """Refresh the eigen cache and recompute ``W`` from ``T``."""
        self.refresh()
        if self.active and self.size:
            self.W = self.T / (self.eig.rho + self.epsilon)
        else:
            self.W = self.T.copy()
        return self.W

    def _check_fresh(self):
        if self._eig_T is None or not np.array_equal(self._eig_T, self.T):
            raise ContractError("eigen cache is stale; call normalize() after changing T")

    def gradient(self, dL_dW):
        """Map ``dL/dW`` to ``dL/dT`` (identity while normalization is off)."""
        if not self.active:
            return np.array(dL_dW, dtype=np.float64)
        self._check_fresh()
        return eigennorm_gradient(self.T, self.eig, self.epsilon, dL_dW)

    def update(self, dL_dW, optimizer, lr, key="T"):
        """One training step on ``T`` given the gradient with respect to ``W``.

        Uses the normalized gradient when active; falls back to the raw
        gradient for this step if the dominant eigenvalue is near-defective.
        Activates normalization once ``rho(T) > 1`` after the step.
        Returns the gradient that was applied to ``T``.
        """
        dL_dW = np.asarray(dL_dW, dtype=np.float64)
        if dL_dW.shape != self.T.shape:
            raise ContractError("dL_dW must be shaped like T")
        if self.size == 0:
            return dL_dW
        try:
            g = self.gradient(dL_dW)
        except DefectiveEigenvalueError as exc:
            log.warning("eigen normalization skipped for one step: %s", exc)
            g = dL_dW
        T_new = optimizer.step(key, self.T, g, lr)
        old = (self.T, self.active, self.eig, self._eig_T, self.W)
        self.T = T_new
        try:
            self.refresh()
        except SolverError:
            self.T, self.active, self.eig, self._eig_T, self.W = old
            raise
        if not self.active and self.eig.rho > 1.0:
            self.active = True
            log.info("eigen normalization activated (rho(T) = %.6f)", self.eig.rho)
        if self.active:
            self.W = self.T / (self.eig.rho + self.epsilon)
        else:
            self.W = self.T.copy()
        return g


def cayley_init_skew(q, rng):
    """Skew-symmetric ``A`` whose Cayley image has eigenvalues ``exp(+-i t_j)``.

    Each 2x2 block is ``[[0, s], [-s, 0]]`` with ``s = tan(t/2)`` for
    ``t ~ U[0, pi/2)``, the half-angle form of a rotation by ``t``.
    """
    A = np.zeros((q, q))
    for j in range(q // 2):
        s = np.tan(rng.uniform(0.0, np.pi / 2) / 2.0)
        A[2 * j, 2 * j + 1] = s
        A[2 * j + 1, 2 * j] = -s
    return A


def sign_diagonal(q, neg_ones):
    """Diagonal of +-1 with the last ``neg_ones`` entries negative."""
    if not 0 <= neg_ones <= q:
        raise ContractError(f"neg_ones must lie in [0, {q}]")
    d = np.ones(q)
    if neg_ones:
        d[q - neg_ones:] = -1.0
    return d


class CayleyOrthogonalBlock:
    """Orthogonal long-term matrix ``W = (I + A)^{-1} (I - A) D``.

    Only the strict upper triangle of ``A`` is stored; ``A`` itself is always
    rebuilt as an exactly skew-symmetric matrix.
    """

    def __init__(self, A, D):
        A = np.asarray(A, dtype=np.float64)
        q = A.shape[0]
        if A.shape != (q, q):
            raise ContractError("A must be square")
        self._iu = np.triu_indices(q, 1)
        self.upper = A[self._iu].copy()
        self.D = np.array(D, dtype=np.float64)
        if self.D.shape != (q,) or not np.all(np.abs(self.D) == 1.0):
            raise ContractError("D must be a length-q vector of +-1")
        self.W = self.forward()

    @property
    def size(self):
        return self.D.shape[0]

    @property
    def A(self):
        q = self.size
        A = np.zeros((q, q))
        A[self._iu] = self.upper
        return A - A.T

    def forward(self):
        """Recompute and return the orthogonal matrix ``W``."""
        q = self.size
        if q == 0:
            self.W = np.zeros((0, 0))
            return self.W
        A = self.A
        eye = np.eye(q)
        try:
            W = np.linalg.solve(eye + A, eye - A) * self.D
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Cayley solve failed: {exc}") from exc
        if not np.all(np.isfinite(W)):
            raise SolverError("Cayley transform produced non-finite entries")
        self.W = W
        return W

    def gradient(self, dL_dW):
        """Gradient with respect to ``A`` as a skew matrix.

        Entry ``(i, j)`` with ``i < j`` is the derivative of the loss with
        respect to the stored parameter ``A[i, j]`` (which also drives
        ``A[j, i] = -A[i, j]``).
        """
        G = np.asarray(dL_dW, dtype=np.float64)
        q = self.size
        if G.shape != (q, q):
            raise ContractError("dL_dW must be q x q")
        if q == 0:
            return np.zeros((0, 0))
        A = self.A
        M = -np.linalg.solve((np.eye(q) + A).T, G @ (self.W + np.diag(self.D)).T)
        return M - M.T

    def update(self, dL_dW, optimizer, lr, key="A"):
        """Optimizer step on the upper-triangle parameters, then refresh ``W``."""
        g = self.gradient(dL_dW)[self._iu]
        self.upper = optimizer.step(key, self.upper, g, lr)
        self.forward()
        return g


def cayley_forward(block):
    return block.forward()


def cayley_gradient(block, dL_dW):
    return block.gradient(dL_dW)
