"""
Closed-form precoders for mixed instantaneous / statistical CSI.

Type-C users (estimated channels ``G_hat``, one column per user) and type-S
users (covariances only) share one M-antenna array. The baselines (MRT, ZF)
see only ``G_hat``; SBM beams type-S users along their dominant eigenvector;
eZF and eMRT additionally steer every type-C beam into the null space of the
type-S covariances and every type-S beam away from the type-C channels.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from core.exceptions import (
    DegenerateUserError,
    InfeasibleDimensionError,
    NullSpaceExhaustedError,
    RankDeficientError,
    UnreachableUserError,
)
from core.matrix_core import (
    RANK_TOL,
    fix_phase,
    hermitian_eig,
    hermitize,
    null_space_basis,
    pseudo_inverse,
)

logger = logging.getLogger(__name__)


class Method(str, Enum):
    ZF = "ZF"
    MRT = "MRT"
    SBM = "SBM"
    EZF = "eZF"
    EMRT = "eMRT"

    @property
    def is_baseline(self) -> bool:
        return self in (Method.ZF, Method.MRT)

    def __str__(self):
        return self.value


@dataclass
class PrecoderSet:
    w_c: np.ndarray
    w_s: np.ndarray
    method: Method
    p_d: float
    rho: float
    leakage: Optional[float] = None

    @property
    def matrix(self) -> np.ndarray:
        """``[W_C, W_S]``, columns ordered type-C first."""
        return np.concatenate([self.w_c, self.w_s], axis=1)


def _as_channels(G_hat) -> np.ndarray:
    G_hat = np.asarray(G_hat, dtype=complex)
    if G_hat.ndim != 2:
        raise ValueError(f"G_hat must be an M x K matrix, got shape {G_hat.shape}")
    return G_hat


def statistical_null_basis(phi_s_list: Sequence[np.ndarray], M: int,
                           rank_tol: float = RANK_TOL) -> Tuple[np.ndarray, int]:
    """
    Eigenbasis ``U_1`` of ``Phi_S = sum_n Phi_S,n`` and its numerical rank ``r_1``.

    With no type-S users the basis is the identity and ``r_1 = 0``, which makes
    eZF and eMRT collapse exactly onto ZF and MRT.
    """
    if len(phi_s_list) == 0:
        return np.eye(M, dtype=complex), 0
    return null_space_basis(np.sum(phi_s_list, axis=0), rank_tol)


def mrt_baseline(G_hat, p_d: float) -> np.ndarray:
    G_hat = _as_channels(G_hat)
    norms = np.linalg.norm(G_hat, axis=0)
    if np.any(norms == 0):
        raise DegenerateUserError(f"zero channel column(s) {np.flatnonzero(norms == 0).tolist()}")
    return np.sqrt(p_d) * (G_hat / norms)


def zf_baseline(G_hat, rho: float) -> np.ndarray:
    return np.sqrt(rho) * pseudo_inverse(_as_channels(G_hat))


def dominant_beam(phi) -> Tuple[np.ndarray, float]:
    """Unit top eigenvector (phase-fixed) and top eigenvalue of a PSD covariance."""
    eig = hermitian_eig(phi)
    if eig.values[0] <= 0:
        raise UnreachableUserError("type-S covariance is zero")
    return eig.vectors[:, 0], float(eig.values[0])


def sbm_precoders(G_hat, phi_s: Sequence[np.ndarray], p_d: float) -> PrecoderSet:
    """
    Statistical beamforming: ``w_S,n = sqrt(p_d) u_max(Phi_S,n)`` for type-S
    users, MRT on the estimates for type-C users.
    """
    G_hat = _as_channels(G_hat)
    M = G_hat.shape[0]
    beams = [np.sqrt(p_d) * dominant_beam(phi)[0] for phi in phi_s]
    w_s = np.stack(beams, axis=1) if beams else np.zeros((M, 0), dtype=complex)
    return PrecoderSet(mrt_baseline(G_hat, p_d), w_s, Method.SBM, p_d, p_d)


def ezf_typeC(G_hat, phi_s_list: Sequence[np.ndarray], rho: float, rank_tol: float = RANK_TOL,
              basis: Optional[Tuple[np.ndarray, int]] = None) -> np.ndarray:
    """
    Extended zero-forcing beams for type-C users.

    Solves the minimum-power problem with ``G_hat^H W = sqrt(rho) I_K`` and
    ``W^H Phi_S,n W = 0`` by zero-forcing inside the null space of ``Phi_S``:
    ``W = sqrt(rho) U_1 [0; G_bar_C2^+]``.

    Parameters
    ----------
    G_hat : np.ndarray
        ``M x K`` estimated type-C channels.
    phi_s_list : sequence of np.ndarray
        Type-S covariances the beams must not leak into.
    rho : float
        Received power target per type-C user.
    rank_tol : float
        Relative eigenvalue threshold for ``r_1``.
    basis : tuple, optional
        Precomputed ``(U_1, r_1)`` from ``statistical_null_basis``.

    Returns
    -------
    np.ndarray
        ``M x K`` precoder ``W_C``.
    """
    G_hat = _as_channels(G_hat)
    M, K = G_hat.shape
    U1, r1 = basis if basis is not None else statistical_null_basis(phi_s_list, M, rank_tol)
    if r1 >= M:
        raise NullSpaceExhaustedError(f"type-S covariances span all {M} dimensions")
    if M - r1 < K:
        raise InfeasibleDimensionError(f"eZF needs M - r1 >= K, got M={M}, r1={r1}, K={K}")
    null = U1[:, r1:]
    g_bar = null.conj().T @ G_hat
    return np.sqrt(rho) * (null @ pseudo_inverse(g_bar, rank_tol))


def _dominant_in(null: np.ndarray, phi: np.ndarray, rank_tol: float, message: str):
    """
    Top eigenpair of ``phi`` restricted to the span of ``null``. Raises
    ``UnreachableUserError`` when the restriction keeps no more than
    ``rank_tol`` of the trace.
    """
    projected = hermitize(null.conj().T @ phi @ null)
    energy = float(np.real(np.trace(projected)))
    if energy <= rank_tol * max(float(np.real(np.trace(phi))), 0.0):
        raise UnreachableUserError(message)
    eig = hermitian_eig(projected, scale=float(np.max(np.abs(phi))))
    return float(eig.values[0]), eig.vectors[:, 0]


def ezf_typeS(G_hat, phi_s_list: Sequence[np.ndarray], n: int, rho: float,
              rank_tol: float = RANK_TOL) -> np.ndarray:
    """
    Extended zero-forcing beam for type-S user ``n``.

    The beam lives in the null space of ``Q_n = G_hat G_hat^H + sum_{i != n} Phi_S,i``
    and delivers exactly ``rho`` average received power:
    ``w = sqrt(rho / lambda_max) U_2 [0; u_max(Phi_bar_S2,n)]``.
    """
    G_hat = _as_channels(G_hat)
    M = G_hat.shape[0]
    phi_n = np.asarray(phi_s_list[n], dtype=complex)
    Q = G_hat @ G_hat.conj().T
    for i, phi in enumerate(phi_s_list):
        if i != n:
            Q = Q + phi
    if not np.any(Q):
        U2, r2 = np.eye(M, dtype=complex), 0
    else:
        U2, r2 = null_space_basis(Q, rank_tol)
    if r2 >= M:
        raise NullSpaceExhaustedError(f"Q_{n} spans all {M} dimensions")
    null = U2[:, r2:]
    lam, u = _dominant_in(null, phi_n, rank_tol, f"type-S user {n} has no energy outside Q_{n}")
    return fix_phase(np.sqrt(rho / lam) * (null @ u))


def emrt_typeC(G_hat, phi_s_list: Sequence[np.ndarray], p_d: float, rank_tol: float = RANK_TOL,
               basis: Optional[Tuple[np.ndarray, int]] = None) -> np.ndarray:
    """
    Extended MRT beams for type-C users: MRT on the part of each estimate that
    lies in the null space of ``Phi_S``, at full power ``p_d``.
    """
    G_hat = _as_channels(G_hat)
    M, K = G_hat.shape
    U1, r1 = basis if basis is not None else statistical_null_basis(phi_s_list, M, rank_tol)
    if r1 >= M:
        raise NullSpaceExhaustedError(f"type-S covariances span all {M} dimensions")
    null = U1[:, r1:]
    g_bar = null.conj().T @ G_hat
    norms = np.linalg.norm(g_bar, axis=0)
    full = np.linalg.norm(G_hat, axis=0)
    degenerate = np.flatnonzero(norms <= rank_tol * np.where(full > 0, full, 1.0))
    if degenerate.size:
        raise DegenerateUserError(f"type-C user(s) {degenerate.tolist()} vanish in the type-S null space")
    return np.sqrt(p_d) * (null @ (g_bar / norms))


def typeS_null_basis(G_hat, rank_tol: float = RANK_TOL) -> np.ndarray:
    """
    Orthonormal basis of the null space of ``P = G_hat G_hat^H`` (``U_3`` with
    its first K columns removed).
    """
    G_hat = _as_channels(G_hat)
    M, K = G_hat.shape
    if K == 0:
        return np.eye(M, dtype=complex)
    if K >= M:
        raise NullSpaceExhaustedError(f"K={K} type-C users leave no null space in M={M}")
    U3, r3 = null_space_basis(G_hat @ G_hat.conj().T, rank_tol)
    if r3 < K:
        values = np.linalg.svd(G_hat, compute_uv=False)
        raise RankDeficientError(float(values[-1] / values[0]) if values[0] > 0 else 0.0)
    return U3[:, K:]


def emrt_typeS(G_hat, phi_s_n, p_d: float, rank_tol: float = RANK_TOL,
               null: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Extended MRT beam for one type-S user: the dominant direction of its
    covariance restricted to the null space of the type-C estimates,
    ``w = sqrt(p_d) U_3 [0_K; u_max(Phi_S2,n)]``.
    """
    if null is None:
        null = typeS_null_basis(G_hat, rank_tol)
    phi_s_n = np.asarray(phi_s_n, dtype=complex)
    _, u = _dominant_in(null, phi_s_n, rank_tol, "type-S covariance vanishes outside the type-C channels")
    return fix_phase(np.sqrt(p_d) * (null @ u))
