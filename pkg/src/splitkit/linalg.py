"""Dense matrix exponential and operator-norm helpers."""

from __future__ import annotations

import numpy as np

__all__ = ["expm", "operator_norm", "power_norm", "EXPLICIT_NORM_MAX_DIM"]

# Products up to this dimension are formed explicitly for norm computation.
EXPLICIT_NORM_MAX_DIM = 512

# Padé coefficients b_0..b_13 and the 1-norm thresholds theta_m
# (Higham 2005, "The scaling and squaring method for the matrix exponential revisited").
_B13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_LOW_ORDER = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0,
        8821612800.0,
        2075673600.0,
        302702400.0,
        30270240.0,
        2162160.0,
        110880.0,
        3960.0,
        90.0,
        1.0,
    ),
}
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_low(a, m):
    b = _LOW_ORDER[m]
    ident = np.eye(a.shape[0], dtype=a.dtype)
    a2 = a @ a
    powers = [ident, a2]
    for _ in range(2, (m + 1) // 2):
        powers.append(powers[-1] @ a2)
    u = sum(b[2 * k + 1] * powers[k] for k in range(len(powers)))
    v = sum(b[2 * k] * powers[k] for k in range(len(powers)))
    return a @ u, v


def _pade13(a):
    b = _B13
    ident = np.eye(a.shape[0], dtype=a.dtype)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
    return u, v


def expm(a):
    """Matrix exponential by scaling and squaring with a Padé approximant.

    Chooses the lowest Padé degree in {3, 5, 7, 9, 13} whose backward-error
    threshold covers ``||a||_1``; beyond the degree-13 threshold the matrix is
    scaled by ``2**-s`` and the result squared ``s`` times.

    Args:
        a: Square real or complex array.

    Returns:
        ``exp(a)`` as a new array.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("expm input has non-finite entries")
    if not np.issubdtype(a.dtype, np.inexact):
        a = a.astype(float)
    n = a.shape[0]
    if n == 0:
        return a.copy()
    if n == 1:
        return np.exp(a)

    norm1 = np.linalg.norm(a, 1)
    if norm1 == 0.0:
        return np.eye(n, dtype=a.dtype)
    for m in (3, 5, 7, 9):
        if norm1 <= _THETA[m]:
            u, v = _pade_low(a, m)
            return np.linalg.solve(v - u, v + u)

    s = max(0, int(np.ceil(np.log2(norm1 / _THETA[13]))))
    scaled = a / 2.0**s
    u, v = _pade13(scaled)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


def power_norm(matvec, rmatvec, dim, iterations=50, tol=1e-8, seed=0):
    """Estimate the induced 2-norm of an operator from its action and adjoint action.

    Runs power iteration on ``M^T M`` and stops early once successive
    estimates agree to relative tolerance ``tol``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iterations):
        w = rmatvec(matvec(v))
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("non-finite value during power iteration")
        wn = np.linalg.norm(w)
        if wn == 0.0:
            return 0.0
        new = np.sqrt(wn)
        v = w / wn
        if abs(new - estimate) <= tol * new:
            return float(new)
        estimate = new
    return float(estimate)


def operator_norm(matrix, ord=2):
    """Induced matrix norm; ``ord`` is 2 (spectral) or ``inf`` (max row sum)."""
    matrix = np.asarray(matrix)
    if not np.all(np.isfinite(matrix)):
        raise FloatingPointError("operator has non-finite entries")
    if ord == 2 and max(matrix.shape) > EXPLICIT_NORM_MAX_DIM:
        return power_norm(lambda v: matrix @ v, lambda v: matrix.T @ v, matrix.shape[1])
    return float(np.linalg.norm(matrix, ord))
