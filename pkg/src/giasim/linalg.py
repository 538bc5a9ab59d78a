"""Dense complex linear-algebra kernel.

All functions operate on 2-D complex ``numpy`` arrays. Subspaces are
represented by their semi-unitary basis matrices (columns orthonormal).
Everything here is deterministic: the same input always produces the same
basis, which keeps whole Monte-Carlo trials reproducible from a single seed.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, EmptySubspace, NumericalFailure, RankDeficient

# Singular value s_i counts as nonzero iff s_i > RANK_REL_TOL * s_max.
# Safe in double precision for the stacked matrices this simulator builds.
RANK_REL_TOL = 1e-10


def _as_cmatrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ContractViolation(f"expected a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):  # finite in both real and imaginary parts
        raise ContractViolation("matrix has non-finite entries")
    return M


def svd(M) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD with non-convergence translated to :class:`NumericalFailure`."""
    M = _as_cmatrix(M)
    try:
        return np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("svd", M.shape[0], M.shape[1]) from exc


def full_svd(M) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return np.linalg.svd(M, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("svd", M.shape[0], M.shape[1]) from exc


def matrix_rank(singular_values: np.ndarray, rel_tol: float = RANK_REL_TOL) -> int:
    if singular_values.size == 0:
        return 0
    return int(np.sum(singular_values > rel_tol * singular_values[0]))


def left_null_space(M, rel_tol: float = RANK_REL_TOL) -> np.ndarray:
    """Semi-unitary basis N of the left null space of M, i.e. N^H M = 0.

    For an m x n matrix of rank r this returns an m x (m - r) basis built
    from the trailing left singular vectors. Raises :class:`EmptySubspace`
    when M has full row rank, which downstream code treats as "alignment
    infeasible here".
    """
    M = _as_cmatrix(M)
    U, s, _ = full_svd(M)
    r = matrix_rank(s, rel_tol)
    if r == M.shape[0]:
        raise EmptySubspace(f"matrix of shape {M.shape} has full row rank {r}")
    return U[:, r:]


def projectors(X) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal projector onto span(X) and its complement.

    P = X (X^H X)^-1 X^H; P_perp is constructed elementwise as I - P so the
    pair always sums to the identity exactly.
    """
    X = _as_cmatrix(X)
    s = svd(X)[1]
    if matrix_rank(s) < X.shape[1]:
        raise RankDeficient(f"projector input of shape {X.shape} is rank deficient")
    gram = X.conj().T @ X
    P = X @ np.linalg.solve(gram, X.conj().T)
    P_perp = np.eye(X.shape[0], dtype=complex) - P
    return P, P_perp


def herm_eig(M, herm_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix, eigenvalues in decreasing order."""
    M = _as_cmatrix(M)
    if M.shape[0] != M.shape[1]:
        raise ContractViolation(f"herm_eig needs a square matrix, got {M.shape}")
    asym = np.linalg.norm(M - M.conj().T)
    if asym > herm_tol * max(1.0, np.linalg.norm(M)):
        raise ContractViolation(f"matrix is not Hermitian (asymmetry {asym:.3e})")
    try:
        w, V = np.linalg.eigh((M + M.conj().T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("eigh", M.shape[0], M.shape[1]) from exc
    return w[::-1], V[:, ::-1]


def chordal_distance_sq(V1, V2) -> float:
    """Squared chordal distance N - Tr(V1 V1^H V2 V2^H) between two subspaces."""
    V1 = _as_cmatrix(V1)
    V2 = _as_cmatrix(V2)
    if V1.shape != V2.shape:
        raise ContractViolation(f"subspace shape mismatch: {V1.shape} vs {V2.shape}")
    N = V1.shape[1]
    overlap = np.linalg.norm(V1.conj().T @ V2) ** 2
    return float(min(max(N - overlap, 0.0), N))


def orthonormalize(M) -> np.ndarray:
    """Return M (M^H M)^(-1/2): the closest semi-unitary matrix with the same span."""
    M = _as_cmatrix(M)
    U, s, Vh = svd(M)
    if matrix_rank(s) < M.shape[1]:
        raise RankDeficient(f"cannot orthonormalize rank-deficient {M.shape} matrix")
    return U @ Vh


def herm_inv_sqrt(M) -> np.ndarray:
    """(M)^(-1/2) for Hermitian positive definite M."""
    w, V = herm_eig(M)
    if w[-1] <= 0:
        raise RankDeficient("inverse square root of a singular matrix")
    return (V * (1.0 / np.sqrt(w))) @ V.conj().T


def is_semi_unitary(V, tol: float = 1e-10) -> bool:
    V = np.asarray(V)
    gram = V.conj().T @ V
    return bool(np.linalg.norm(gram - np.eye(V.shape[1])) <= tol * max(1.0, V.shape[1]))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussian entries with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
