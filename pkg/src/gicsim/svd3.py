"""3x3 symmetric eigendecomposition and SVD for the simulation kernels.

Jacobi rotations on F^T F followed by column recovery; deterministic and
callable from nopython kernels. Cross-checked against LAPACK in the tests.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def eigh3(A):
    """Eigen-decomposition of a symmetric 3x3 matrix: returns (w, V)."""
    a = A.copy()
    v = np.eye(3)
    for _ in range(30):
        off = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        scale = a[0, 0] ** 2 + a[1, 1] ** 2 + a[2, 2] ** 2
        if off <= 1e-30 * (scale + 1e-300):
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(3):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(3):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(3):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    w = np.empty(3)
    for i in range(3):
        w[i] = a[i, i]
    return w, v


@njit(cache=True)
def svd3(F):
    """SVD of a 3x3 matrix: returns (U, s, V) with F = U diag(s) V^T.

    Singular values are sorted descending. Intended for deformation
    gradients with positive determinant; reflections are absorbed into U.
    """
    A = F.T @ F
    w, V0 = eigh3(A)
    order = np.array([0, 1, 2])
    for i in range(2):
        for j in range(2 - i):
            if w[order[j]] < w[order[j + 1]]:
                tmp = order[j]
                order[j] = order[j + 1]
                order[j + 1] = tmp
    s = np.empty(3)
    V = np.empty((3, 3))
    for i in range(3):
        wi = w[order[i]]
        s[i] = math.sqrt(wi) if wi > 0.0 else 0.0
        for k in range(3):
            V[k, i] = V0[k, order[i]]
    U = np.empty((3, 3))
    tol = 1e-12 * (s[0] + 1e-300)
    for i in range(3):
        if s[i] > tol:
            for k in range(3):
                U[k, i] = (F[k, 0] * V[0, i] + F[k, 1] * V[1, i] + F[k, 2] * V[2, i]) / s[i]
            for j in range(i):                 # re-orthogonalize against earlier columns
                d = U[0, i] * U[0, j] + U[1, i] * U[1, j] + U[2, i] * U[2, j]
                for k in range(3):
                    U[k, i] -= d * U[k, j]
            nrm = math.sqrt(U[0, i] ** 2 + U[1, i] ** 2 + U[2, i] ** 2)
            if nrm > 1e-300:
                for k in range(3):
                    U[k, i] /= nrm
                continue
        if i == 0:                             # degenerate: any unit vector
            U[0, 0], U[1, 0], U[2, 0] = 1.0, 0.0, 0.0
        elif i == 1:                           # orthonormal completion
            ax = abs(U[0, 0])
            if ax < 0.9:
                bx, by, bz = 1.0, 0.0, 0.0
            else:
                bx, by, bz = 0.0, 1.0, 0.0
            cx = U[1, 0] * bz - U[2, 0] * by
            cy = U[2, 0] * bx - U[0, 0] * bz
            cz = U[0, 0] * by - U[1, 0] * bx
            nrm = math.sqrt(cx * cx + cy * cy + cz * cz)
            U[0, 1], U[1, 1], U[2, 1] = cx / nrm, cy / nrm, cz / nrm
        else:
            U[0, 2] = U[1, 0] * U[2, 1] - U[2, 0] * U[1, 1]
            U[1, 2] = U[2, 0] * U[0, 1] - U[0, 0] * U[2, 1]
            U[2, 2] = U[0, 0] * U[1, 1] - U[1, 0] * U[0, 1]
    return U, s, V
