"""Dense real linear algebra used by the eigenvalue normalization.

Matrices are plain ``float64`` numpy arrays.  The eigensolver is a
Householder Hessenberg reduction followed by Francis double-shift QR with
deflation, yielding a real Schur form ``T = Q R Q^T``.  Eigenvectors of the
dominant eigenvalue are recovered from ``R`` by substitution and rotated
back by ``Q``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SolverError

_EPS = np.finfo(np.float64).eps
# relative modulus window inside which two eigenvalues count as tied
TIE_RTOL = 1e-12


def as_matrix(A, name="matrix"):
    """Return ``A`` as a finite 2-D float64 array, raising ContractError otherwise."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ContractError(f"{name} has non-finite entries")
    return A


def _square(T, name="T"):
    T = as_matrix(T, name)
    if T.shape[0] != T.shape[1]:
        raise ContractError(f"{name} must be square, got shape {T.shape}")
    return T


def matmul(A, B):
    """Matrix product with an explicit dimension check."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise ContractError(f"cannot multiply {A.shape} by {B.shape}")
    return A @ B


def _householder(x):
    """Unit vector v with (I - 2 v v^T) x parallel to e_1, or None if x is already."""
    if not np.any(x[1:]):
        return None
    v = np.array(x, dtype=np.float64)
    v /= np.max(np.abs(v))
    alpha = np.linalg.norm(v)
    v[0] += np.copysign(alpha, v[0])
    return v / np.linalg.norm(v)


def _reflector(*xs):
    """Scalar-argument variant of _householder for the short vectors of a QR sweep."""
    if not any(xs[1:]):
        return None
    big = max(abs(t) for t in xs)
    xs = [float(t) / big for t in xs]
    alpha = math.sqrt(sum(t * t for t in xs))
    xs[0] += math.copysign(alpha, xs[0])
    return np.array(xs) / math.sqrt(sum(t * t for t in xs))


def _pow2_scale(A):
    """Power of two bringing the largest entry of ``A`` near 1 (exact rescaling)."""
    big = np.max(np.abs(A), initial=0.0)
    if big == 0.0:
        return 1.0
    return 2.0 ** int(np.frexp(big)[1])


def hessenberg(A):
    """Reduce ``A`` to upper Hessenberg form, returning ``(H, Q)`` with ``A = Q H Q^T``."""
    H, Q = _hessenberg(_square(A, "A"))
    return H, Q


def _hessenberg(A):
    f = _pow2_scale(A)
    H = A / f
    n = H.shape[0]
    Q = np.eye(n)
    for k in range(n - 2):
        v = _householder(H[k + 1:, k])
        if v is None:
            continue
        H[k + 1:, k:] -= 2.0 * np.outer(v, v @ H[k + 1:, k:])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v)
        Q[:, k + 1:] -= 2.0 * np.outer(Q[:, k + 1:] @ v, v)
        H[k + 2:, k] = 0.0
    return H * f, Q


def _standardize_block(H, Q, k):
    """Split the 2x2 diagonal block at ``k`` by a rotation if its eigenvalues are real."""
    if H[k + 1, k] == 0.0:
        return
    # the rotation is scale invariant, so work on a normalized copy
    sc = np.max(np.abs(H[k:k + 2, k:k + 2]))
    (a, b), (c, d) = H[k:k + 2, k:k + 2] / sc
    p = 0.5 * (a - d)
    disc = p * p + b * c
    if disc < 0.0:
        return
    # eigenvalue farther from the mean first, avoiding cancellation
    lam = 0.5 * (a + d) + np.copysign(np.sqrt(disc), p) if p != 0.0 else 0.5 * (a + d) + np.sqrt(disc)
    x1 = np.array([b, lam - a])
    x2 = np.array([lam - d, c])
    x = x1 if np.linalg.norm(x1) >= np.linalg.norm(x2) else x2
    nx = np.linalg.norm(x)
    if nx == 0.0:
        return
    cs, sn = x / nx
    G = np.array([[cs, -sn], [sn, cs]])
    H[k:k + 2, k:] = G.T @ H[k:k + 2, k:]
    H[:k + 2, k:k + 2] = H[:k + 2, k:k + 2] @ G
    Q[:, k:k + 2] = Q[:, k:k + 2] @ G
    H[k + 1, k] = 0.0


def real_schur(T, max_sweeps_per_dim=30):
    """Real Schur decomposition ``T = Q R Q^T``.

    ``R`` is quasi upper triangular: 1x1 diagonal blocks hold real
    eigenvalues and 2x2 blocks hold complex conjugate pairs.  The routine is
    deterministic.  Raises SolverError if the total number of Francis sweeps
    exceeds ``max_sweeps_per_dim * n``.
    """
    T = _square(T)
    f = _pow2_scale(T)
    H, Q = _hessenberg(T / f)
    n = H.shape[0]
    budget = max_sweeps_per_dim * n
    sweeps = 0
    local_its = 0
    hi = n - 1
    while hi >= 1:
        # locate the start of the unreduced trailing block
        l = hi
        while l > 0:
            s = abs(H[l - 1, l - 1]) + abs(H[l, l])
            if s == 0.0:
                s = np.linalg.norm(H[:hi + 1, :hi + 1])
            if abs(H[l, l - 1]) <= _EPS * s:
                H[l, l - 1] = 0.0
                break
            l -= 1
        if l == hi:
            hi -= 1
            local_its = 0
            continue
        if l == hi - 1:
            _standardize_block(H, Q, l)
            hi -= 2
            local_its = 0
            continue
        if sweeps >= budget:
            raise SolverError(
                f"Francis QR did not converge in {budget} sweeps",
                residual=float(abs(H[hi, hi - 1])),
            )
        sweeps += 1
        local_its += 1

        if local_its % 10 == 0:
            # exceptional shift to break stagnation cycles
            e = abs(H[hi, hi - 1]) + abs(H[hi - 1, hi - 2])
            h11 = 0.75 * e + H[hi, hi]
            s = 2.0 * h11
            t = h11 * h11 + 0.4375 * e * e
        else:
            m = hi - 1
            s = H[m, m] + H[hi, hi]
            t = H[m, m] * H[hi, hi] - H[m, hi] * H[hi, m]

        x = H[l, l] * H[l, l] + H[l, l + 1] * H[l + 1, l] - s * H[l, l] + t
        y = H[l + 1, l] * (H[l, l] + H[l + 1, l + 1] - s)
        z = H[l + 1, l] * H[l + 2, l + 1]
        for k in range(l, hi - 1):
            v = _reflector(x, y, z)
            if v is not None:
                v2 = 2.0 * v
                r = max(l, k - 1)
                blk = H[k:k + 3, r:]
                blk -= v2[:, None] * (v @ blk)
                rr = min(k + 4, hi + 1)
                blk = H[:rr, k:k + 3]
                blk -= (blk @ v)[:, None] * v2
                blk = Q[:, k:k + 3]
                blk -= (blk @ v)[:, None] * v2
                if k > l:
                    H[k + 1, k - 1] = 0.0
                    H[k + 2, k - 1] = 0.0
            x = H[k + 1, k]
            y = H[k + 2, k]
            if k < hi - 2:
                z = H[k + 3, k]
        v = _reflector(x, y)
        if v is not None:
            v2 = 2.0 * v
            blk = H[hi - 1:hi + 1, hi - 2:]
            blk -= v2[:, None] * (v @ blk)
            blk = H[:hi + 1, hi - 1:hi + 1]
            blk -= (blk @ v)[:, None] * v2
            blk = Q[:, hi - 1:hi + 1]
            blk -= (blk @ v)[:, None] * v2
            H[hi, hi - 2] = 0.0

    return Q, np.triu(H, -1) * f


def schur_blocks(R):
    """Diagonal blocks of a quasi-triangular ``R`` as ``(start, size, eigenvalue)``.

    For 2x2 blocks the eigenvalue with nonnegative imaginary part is reported.
    """
    n = R.shape[0]
    blocks = []
    i = 0
    while i < n:
        if i + 1 < n and R[i + 1, i] != 0.0:
            sc = np.max(np.abs(R[i:i + 2, i:i + 2]))
            (a, b), (c, d) = R[i:i + 2, i:i + 2] / sc
            p = 0.5 * (a - d)
            disc = p * p + b * c
            im = sc * np.sqrt(-disc) if disc < 0.0 else 0.0
            a, d = a * sc, d * sc
            blocks.append((i, 2, complex(0.5 * (a + d), im)))
            i += 2
        else:
            blocks.append((i, 1, complex(R[i, i], 0.0)))
            i += 1
    return blocks


def eigvals(T):
    """All eigenvalues of ``T`` (conjugate pairs expanded), in Schur order."""
    _, R = real_schur(T)
    out = []
    for _, size, lam in schur_blocks(R):
        out.append(lam)
        if size == 2:
            out.append(lam.conjugate())
    return np.array(out, dtype=np.complex128)


def _solve2(B, rhs, smin):
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    if abs(det) < smin * smin:
        B = B + smin * np.eye(2)
        det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    return np.array([B[1, 1] * rhs[0] - B[0, 1] * rhs[1],
                     B[0, 0] * rhs[1] - B[1, 0] * rhs[0]]) / det


def _right_vector(R, blocks, idx, lam, smin):
    """Solve (R - lam I) y = 0 with y supported on blocks[0..idx]."""
    n = R.shape[0]
    k, size, _ = blocks[idx]
    y = np.zeros(n, dtype=np.complex128)
    if size == 1:
        y[k] = 1.0
    else:
        y[k] = R[k, k + 1]
        y[k + 1] = lam - R[k, k]
    end = k + size
    for j in range(idx - 1, -1, -1):
        i, bs, _ = blocks[j]
        if bs == 1:
            den = R[i, i] - lam
            if abs(den) < smin:
                den = smin
            y[i] = -(R[i, i + 1:end] @ y[i + 1:end]) / den
        else:
            B = R[i:i + 2, i:i + 2] - lam * np.eye(2)
            rhs = -(R[i:i + 2, i + 2:end] @ y[i + 2:end])
            y[i:i + 2] = _solve2(B, rhs, smin)
    return y


def _left_vector(R, blocks, idx, lam, smin):
    """Solve (R^T - lam I) z = 0 with z supported on blocks[idx..]."""
    n = R.shape[0]
    k, size, _ = blocks[idx]
    z = np.zeros(n, dtype=np.complex128)
    if size == 1:
        z[k] = 1.0
    else:
        z[k] = R[k + 1, k]
        z[k + 1] = lam - R[k, k]
    for j in range(idx + 1, len(blocks)):
        i, bs, _ = blocks[j]
        if bs == 1:
            den = R[i, i] - lam
            if abs(den) < smin:
                den = smin
            z[i] = -(R[k:i, i] @ z[k:i]) / den
        else:
            B = R[i:i + 2, i:i + 2].T - lam * np.eye(2)
            rhs = -(R[k:i, i:i + 2].T @ z[k:i])
            z[i:i + 2] = _solve2(B, rhs, smin)
    return z


@dataclass(frozen=True)
class DominantEigenData:
    """Dominant eigenvalue ``lam = alpha + i beta`` of a real matrix with its eigenvectors.

    ``u`` is the right eigenvector (``T u = lam u``) and ``v`` the left one
    (``v^* T = lam v^*``), both of unit norm.  ``S = conj(v) u^T / (v^* u)`` is
    the derivative of ``lam`` with respect to the matrix entries, and
    ``C = alpha Re(S) + beta Im(S)`` equals ``rho * d rho / dT``.
    """

    rho: float
    alpha: float
    beta: float
    u: np.ndarray
    v: np.ndarray
    S: np.ndarray
    C: np.ndarray
    defect_score: float

    @property
    def lam(self):
        return complex(self.alpha, self.beta)

    def conjugate(self):
        """The same data built from the conjugate eigenvalue ``conj(lam)``."""
        return make_eigen_data(self.alpha, -self.beta, self.u.conj(), self.v.conj())


def make_eigen_data(alpha, beta, u, v):
    """Assemble DominantEigenData from an eigenvalue and its right/left eigenvectors."""
    u = np.asarray(u, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    vbar = v.conj()
    vu = vbar @ u
    S = np.outer(vbar, u) / vu
    C = alpha * S.real + beta * S.imag
    defect = abs(vu) / (np.linalg.norm(u) * np.linalg.norm(v))
    return DominantEigenData(
        rho=float(np.hypot(alpha, beta)),
        alpha=float(alpha),
        beta=float(beta),
        u=u,
        v=v,
        S=S,
        C=C,
        defect_score=float(defect),
    )


def _dominant_index(blocks):
    rho = max(abs(lam) for _, _, lam in blocks)
    best = None
    for j, (_, _, lam) in enumerate(blocks):
        if abs(lam) < rho * (1.0 - TIE_RTOL):
            continue
        if best is None:
            best = j
            continue
        cur = blocks[best][2]
        if (lam.real, lam.imag) > (cur.real, cur.imag):
            best = j
    return best


def dominant_eigenpair(T):
    """Eigenvalue of largest modulus with right and left eigenvectors.

    Ties in modulus (within a relative ``1e-12``) go to the largest real
    part, then to the positive imaginary part; ``beta`` is never negative.
    """
    T = _square(T)
    n = T.shape[0]
    if n == 0:
        raise ContractError("dominant_eigenpair needs n >= 1")
    Q, R = real_schur(T)
    blocks = schur_blocks(R)
    idx = _dominant_index(blocks)
    lam = blocks[idx][2]
    smin = max(_EPS * np.linalg.norm(R), np.finfo(np.float64).tiny)
    y = _right_vector(R, blocks, idx, lam, smin)
    z = _left_vector(R, blocks, idx, lam, smin)
    u = Q @ y
    w = Q @ z  # T^T w = lam w, so v = conj(w)
    u /= np.linalg.norm(u)
    w /= np.linalg.norm(w)
    return make_eigen_data(lam.real, lam.imag, u, w.conj())


def spectral_radius(T):
    """Largest eigenvalue modulus of a square matrix (0 for an empty matrix)."""
    T = _square(T)
    if T.shape[0] == 0:
        return 0.0
    _, R = real_schur(T)
    return float(max(abs(lam) for _, _, lam in schur_blocks(R)))


SQUARINGS = 40


def _warm_start(G):
    """Start vectors for power iteration on the PSD stack ``G`` (``(N, k, k)``).

    ``G`` is squared ``SQUARINGS`` times (trace-normalized), so the returned
    column is already the result of ``2**SQUARINGS`` power steps.  This keeps
    the iteration count small even when the top eigenvalues nearly coincide.
    """
    M = G.copy()
    for _ in range(SQUARINGS):
        tr = np.trace(M, axis1=-2, axis2=-1)
        tr[tr == 0.0] = 1.0
        M = M / tr[:, None, None]
        M = M @ M
    diag = np.diagonal(M, axis1=-2, axis2=-1)
    pick = np.argmax(diag, axis=-1)
    x = np.take_along_axis(M, pick[:, None, None], axis=-1)[..., 0]
    nx = np.linalg.norm(x, axis=-1)
    zero = nx == 0.0
    x[zero] = 1.0
    nx[zero] = np.sqrt(x.shape[-1])
    return x / nx[:, None]


def spectral_norm(A, tol=1e-10, max_iter=10000):
    """Largest singular value by power iteration on ``A^T A``.

    Accepts a single matrix or a stack ``(..., rows, cols)``; stacks are
    iterated together and a float array is returned.  Iteration stops when
    the Rayleigh quotient changes by at most ``tol`` relative.  The start
    vector comes from repeated squaring of ``A^T A``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2:
        raise ContractError("spectral_norm needs at least a 2-D array")
    if not np.all(np.isfinite(A)):
        raise ContractError("spectral_norm input has non-finite entries")
    batch = A.shape[:-2]
    cols = A.shape[-1]
    if A.size == 0:
        out = np.zeros(batch)
        return float(out) if not batch else out
    G = (np.swapaxes(A, -1, -2) @ A).reshape((-1, cols, cols))
    x = _warm_start(G)
    if not batch:
        return _power_single(G[0], x[0], tol, max_iter)
    lam = np.full(G.shape[0], -1.0)
    done = np.zeros(G.shape[0], dtype=bool)
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        y = (G[act] @ x[act][:, :, None])[:, :, 0]
        new = np.sum(x[act] * y, axis=1)
        ny = np.sqrt(np.sum(y * y, axis=1))
        conv = (np.abs(new - lam[act]) <= tol * np.abs(new)) | (ny == 0.0)
        ny[ny == 0.0] = 1.0
        x[act] = y / ny[:, None]
        lam[act] = new
        done[act] = conv
        if done.all():
            break
    else:
        raise SolverError(f"power iteration did not converge in {max_iter} steps")
    return np.sqrt(np.maximum(lam, 0.0)).reshape(batch)


def _power_single(G, x, tol, max_iter):
    lam = -1.0
    for _ in range(max_iter):
        y = G @ x
        new = float(x @ y)
        ny = math.sqrt(float(y @ y))
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(new - lam) <= tol * abs(new):
            return math.sqrt(max(new, 0.0))
        lam = new
    raise SolverError(f"power iteration did not converge in {max_iter} steps")
