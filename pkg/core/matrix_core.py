import logging
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from core.exceptions import (
    NotHermitianError,
    NotPsdError,
    RankDeficientError,
    UndefinedRatioError,
)

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
HERMITIAN_ATOL = 1e-13
PSD_TOL = 1e-10
RANK_TOL = 1e-9
TIE_TOL = 1e-12
PHASE_TOL = 1e-9


class EigenDecomposition(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


def _as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {A.shape}")
    return A


def check_hermitian(A, tol: float = HERMITIAN_TOL, scale: Optional[float] = None) -> float:
    """
    Returns the max asymmetry |A - A^H| relative to the reference magnitude and
    raises ``NotHermitianError`` when it exceeds ``tol``.

    The reference is the larger of ``max |A|`` and ``scale``. Pass the
    magnitude of the matrix a projection was taken from, so a projection that
    holds only roundoff is not judged against itself. Deviations up to
    ``HERMITIAN_ATOL`` count as exact.
    """
    A = _as_square(A)
    if A.size == 0:
        return 0.0
    deviation = float(np.max(np.abs(A - A.conj().T)))
    if deviation <= HERMITIAN_ATOL:
        return 0.0
    reference = max(float(np.max(np.abs(A))), scale or 0.0)
    asymmetry = deviation / reference
    if asymmetry > tol:
        raise NotHermitianError(asymmetry)
    return asymmetry


def hermitize(A) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    return 0.5 * (A + A.conj().T)


def fix_phase(vectors) -> np.ndarray:
    """
    Rotates each column (or a single vector) so its largest-magnitude entry
    is real and positive.

    Entries within ``PHASE_TOL`` (relative) of the largest magnitude are tied
    and the first of them is the pivot, so flat vectors such as steering
    vectors keep the same phase under roundoff.
    """
    v = np.array(vectors, dtype=complex)
    single = v.ndim == 1
    if single:
        v = v[:, None]
    if v.size == 0:
        return v[:, 0] if single else v
    mags = np.abs(v)
    near_max = mags >= (1.0 - PHASE_TOL) * np.max(mags, axis=0)[None, :]
    idx = np.argmax(near_max, axis=0)
    pivots = v[idx, np.arange(v.shape[1])]
    magnitude = np.abs(pivots)
    phase = np.where(magnitude > 0, pivots.conj() / np.where(magnitude > 0, magnitude, 1.0), 1.0)
    v = v * phase[None, :]
    v[idx, np.arange(v.shape[1])] = magnitude
    return v[:, 0] if single else v


def _tie_key(vector: np.ndarray) -> tuple:
    # Real part of the first nonzero entry, then the whole vector.
    mags = np.abs(vector)
    top = float(mags.max()) if mags.size else 0.0
    nonzero = np.flatnonzero(mags > TIE_TOL * top) if top > 0 else []
    first = round(float(vector[nonzero[0]].real), 12) if len(nonzero) else 0.0
    return (first,) + tuple(np.round(vector.real, 12))


def hermitian_eig(A, tol: float = HERMITIAN_TOL, scale: Optional[float] = None) -> EigenDecomposition:
    """
    Eigendecomposition of a Hermitian matrix with eigenvalues sorted descending.

    Each eigenvector is phase-fixed (largest-magnitude entry real positive).
    Eigenvalues within ``TIE_TOL * |lambda|_max`` of each other form a tie
    group, ordered by descending real part of each vector's first nonzero
    entry. The remaining real parts, read in order, settle exact ties.

    Parameters
    ----------
    A : array_like
        Square complex matrix, Hermitian within ``tol``.
    scale : float, optional
        Reference magnitude for the Hermitian check, see ``check_hermitian``.

    Returns
    -------
    EigenDecomposition
        ``values`` (real, non-increasing) and unitary ``vectors`` whose
        columns align with ``values``.
    """
    A = _as_square(A)
    check_hermitian(A, tol, scale)
    values, vectors = scipy.linalg.eigh(hermitize(A))
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = fix_phase(vectors[:, order])

    dim = len(values)
    if dim == 0:
        return EigenDecomposition(values, vectors)

    scale = max(np.max(np.abs(values)), np.finfo(float).tiny)
    start = 0
    for stop in range(1, dim + 1):
        if stop < dim and values[stop - 1] - values[stop] <= TIE_TOL * scale:
            continue
        if stop - start > 1:
            group = sorted(range(start, stop), key=lambda j: _tie_key(vectors[:, j]), reverse=True)
            vectors[:, start:stop] = vectors[:, group]
        start = stop

    return EigenDecomposition(values, vectors)


def rank_from_values(values, tol: float = RANK_TOL) -> int:
    """Counts values above ``tol`` times the largest magnitude."""
    values = np.abs(np.asarray(values, dtype=float))
    if values.size == 0:
        return 0
    top = values.max()
    if top <= 0.0:
        return 0
    return int(np.count_nonzero(values > tol * top))


def numerical_rank(A, tol: float = RANK_TOL) -> int:
    A = np.asarray(A, dtype=complex)
    if A.size == 0:
        return 0
    return rank_from_values(scipy.linalg.svdvals(A), tol)


def pseudo_inverse(G, tol: float = RANK_TOL) -> np.ndarray:
    """
    Right pseudo-inverse ``G (G^H G)^{-1}`` of a tall full-column-rank matrix,
    so that ``G^H @ pseudo_inverse(G) = I_k``.

    Evaluated from the thin SVD ``G = U S V^H`` as ``U S^{-1} V^H``.
    """
    G = np.asarray(G, dtype=complex)
    if G.ndim != 2:
        raise ValueError(f"Expected a matrix, got shape {G.shape}")
    m, k = G.shape
    if k == 0:
        return np.zeros((m, 0), dtype=complex)
    if m < k:
        raise RankDeficientError(0.0)
    U, s, Vh = scipy.linalg.svd(G, full_matrices=False)
    ratio = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    if ratio <= tol:
        raise RankDeficientError(ratio)
    return (U / s[None, :]) @ Vh


def check_psd(values, tol: float = PSD_TOL) -> float:
    """Raises ``NotPsdError`` if any eigenvalue is below ``-tol * lambda_max``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    scale = np.max(np.abs(values))
    if scale == 0.0:
        return 0.0
    relative_min = float(values.min() / scale)
    if relative_min < -tol:
        raise NotPsdError(relative_min)
    return relative_min


def psd_sqrt(A) -> np.ndarray:
    """
    Hermitian PSD square root. Eigenvalues in ``[-PSD_TOL * lambda_max, 0)``
    are clamped to zero.
    """
    eig = hermitian_eig(A)
    check_psd(eig.values)
    roots = np.sqrt(np.clip(eig.values, 0.0, None))
    return hermitize((eig.vectors * roots[None, :]) @ eig.vectors.conj().T)


def quad_form_expectation_F(A, B, form: str = "lemma") -> complex:
    """
    Second moment of two quadratic forms in a white complex Gaussian vector.

    ``form="lemma"`` returns ``tr(A) tr(B) + tr(AB) - tr(D(A) D(B))`` where
    ``D(.)`` keeps the diagonal; ``form="circular"`` drops the diagonal term,
    giving the circularly-symmetric moment ``E{h^H A h h^H B h}``.
    """
    A = _as_square(A)
    B = _as_square(B)
    if A.shape != B.shape:
        raise ValueError(f"Dimension mismatch: {A.shape} vs {B.shape}")
    value = np.trace(A) * np.trace(B) + np.sum(A * B.T)
    if form == "lemma":
        value -= np.sum(np.diag(A) * np.diag(B))
    elif form != "circular":
        raise ValueError(f"Unknown moment form: {form}")
    return complex(value)


def mean_ratio_approx(E1: float, E2: float, cov12: float, var2: float) -> float:
    """
    Second-order approximation of ``E{V1 / V2}`` from the means, the covariance
    and the variance of the denominator.
    """
    if E2 == 0:
        raise UndefinedRatioError("Mean of the denominator is zero")
    return E1 / E2 - cov12 / E2 ** 2 + var2 * E1 / E2 ** 3


def low_rank_approx(A, D: int) -> np.ndarray:
    """Best rank-``D`` approximation of a PSD matrix in Frobenius norm."""
    A = _as_square(A)
    dim = A.shape[0]
    if not 1 <= D <= dim:
        raise ValueError(f"Target rank {D} outside [1, {dim}]")
    if D == dim:
        return A.copy()
    eig = hermitian_eig(A)
    U = eig.vectors[:, :D]
    return hermitize((U * eig.values[None, :D]) @ U.conj().T)


def energy_rank(A, fraction: float = 0.999) -> int:
    """Smallest ``D`` whose top ``D`` eigenvalues hold ``fraction`` of the trace."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"Energy fraction must be in (0, 1], got {fraction}")
    values = np.clip(hermitian_eig(A).values, 0.0, None)
    total = values.sum()
    if total <= 0.0:
        raise ValueError("Cannot rank a zero matrix")
    cumulative = np.cumsum(values)
    return int(min(np.argmax(cumulative >= fraction * total * (1.0 - 1e-12)) + 1, len(values)))


def psd_factor(A, tol: float = RANK_TOL) -> np.ndarray:
    """
    Tall factor ``F`` with ``F F^H = A`` keeping only eigenvalues above the rank
    threshold. Columns follow the descending eigenvalue order.
    """
    eig = hermitian_eig(A)
    check_psd(eig.values)
    r = rank_from_values(eig.values, tol)
    return eig.vectors[:, :r] * np.sqrt(np.clip(eig.values[:r], 0.0, None))[None, :]


def null_space_basis(A, tol: float = RANK_TOL):
    """
    Eigenbasis of a Hermitian PSD matrix split at its numerical rank.

    Returns
    -------
    tuple
        ``(vectors, rank)``: the full phase-fixed eigenbasis and the number of
        leading columns spanning the range; ``vectors[:, rank:]`` spans the
        null space.
    """
    eig = hermitian_eig(A)
    return eig.vectors, rank_from_values(eig.values, tol)


def range_basis(G, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis for the column space of ``G`` (thin SVD, rank-truncated)."""
    G = np.asarray(G, dtype=complex)
    if G.size == 0:
        return np.zeros((G.shape[0], 0), dtype=complex)
    U, s, _ = scipy.linalg.svd(G, full_matrices=False)
    return U[:, :rank_from_values(s, tol)]
