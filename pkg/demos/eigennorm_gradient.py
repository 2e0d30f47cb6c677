"""Why the normalized gradient needs the dominant eigenpair.

Dividing T by its spectral radius makes W depend on T through rho(T) as
well as directly.  This script shows that the raw gradient misses that
second path and that the eigenvector correction restores agreement with
finite differences.
"""

import numpy as np

from enrnn.linalg import dominant_eigenpair, spectral_radius
from enrnn.params import eigennorm_gradient

rng = np.random.default_rng(3)
n, eps = 6, 0.01
T = rng.standard_normal((n, n))
G = rng.standard_normal((n, n))


def loss(X):
    return float(np.sum(G * X / (spectral_radius(X) + eps)))


h = 1e-6
fd = np.zeros_like(T)
for i in range(n):
    for j in range(n):
        E = np.zeros_like(T)
        E[i, j] = h
        fd[i, j] = (loss(T + E) - loss(T - E)) / (2 * h)

eig = dominant_eigenpair(T)
naive = G / (eig.rho + eps)
full = eigennorm_gradient(T, eig, eps, G)

print(f"rho(T) = {eig.rho:.6f}, dominant eigenvalue {eig.lam:.6f}")
print(f"raw gradient G/(rho+eps), max error vs FD: {np.max(np.abs(naive - fd)):.3e}")
print(f"eigenvector-corrected gradient, max error:  {np.max(np.abs(full - fd)):.3e}")
print(f"after normalization rho(W) = {spectral_radius(T / (eig.rho + eps)):.6f}")
