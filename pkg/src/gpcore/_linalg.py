"""Small dense linear-algebra helpers shared by the inference backends."""

import numpy as np
from scipy import linalg

from .errors import NumericalError

MAX_ESCALATIONS = 5


def symmetrize(A):
    return 0.5 * (A + A.T)


def chol_escalate(A, jitter=0.0):
    """Lower Cholesky factor of ``A + jitter*I`` with jitter escalation.

    On failure the diagonal jitter is raised to ``max(1e-10, 10*current)``
    at most ``MAX_ESCALATIONS`` times.

    Returns
    -------
    L : ndarray
        Lower triangular factor.
    jitter : float
        The diagonal inflation that was finally used.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    current = float(jitter)
    for attempt in range(MAX_ESCALATIONS + 1):
        try:
            M = A + current * np.eye(n) if current else A
            L = linalg.cholesky(M, lower=True, check_finite=True)
            return L, current
        except (linalg.LinAlgError, ValueError):
            if attempt == MAX_ESCALATIONS:
                break
            current = max(1e-10, 10.0 * current)
    raise NumericalError(
        f"Cholesky factorization failed after {MAX_ESCALATIONS} jitter "
        f"escalations (final jitter {current:.1e})"
    )


def chol_solve(L, B):
    return linalg.cho_solve((L, True), B, check_finite=False)


def tri_solve(L, B, trans=False):
    return linalg.solve_triangular(
        L, B, lower=True, trans="T" if trans else "N", check_finite=False
    )


def chol_logdet(L):
    return 2.0 * np.sum(np.log(np.diag(L)))


def inv_from_chol(L):
    n = L.shape[0]
    return chol_solve(L, np.eye(n))


def pd_logdet_or_eig(M):
    """log|det M| for symmetric ``M`` plus its Cholesky factor if it exists.

    Falls back to an eigen-decomposition when ``M`` is not positive
    definite; the factor is then ``None``.
    """
    try:
        L = linalg.cholesky(M, lower=True)
        return chol_logdet(L), L
    except linalg.LinAlgError:
        ev = linalg.eigvalsh(symmetrize(M))
        return float(np.sum(np.log(np.abs(ev)))), None
