import logging
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from core.exceptions import (
    InfeasibleDimensionError,
    NullSpaceExhaustedError,
    RankDeficientError,
    UnreachableUserError,
)
from core.matrix_core import (
    RANK_TOL,
    energy_rank,
    fix_phase,
    low_rank_approx,
    numerical_rank,
    psd_factor,
    range_basis,
)
from models.precoding import (
    Method,
    PrecoderSet,
    dominant_beam,
    emrt_typeC,
    ezf_typeC,
    mrt_baseline,
    statistical_null_basis,
    zf_baseline,
)

logger = logging.getLogger(__name__)


def max_leakage(w_c: np.ndarray, phi_s_list: Sequence[np.ndarray]) -> float:
    """Largest average power ``w_C,k^H Phi_S,n w_C,k`` any type-C beam puts on a type-S user."""
    if w_c.shape[1] == 0 or len(phi_s_list) == 0:
        return 0.0
    return float(max(np.max(np.real(np.einsum("mk,mj,jk->k", w_c.conj(), phi, w_c))) for phi in phi_s_list))


class BasePrecoder(ABC):
    """
    Precoder bound to one scenario's type-S statistics.

    ``fit`` does all statistics-only work once; ``precode`` then builds the
    beams for every fresh channel estimate.
    """

    method: Method

    def __init__(self, p_d: float, rho: Optional[float] = None, rank_tol: float = RANK_TOL,
                 rank_energy: float = 0.999, target_ranks: Optional[Sequence[int]] = None):
        self.p_d = p_d
        self.rho = p_d if rho is None else rho
        self.rank_tol = rank_tol
        self.rank_energy = rank_energy
        self.target_ranks = target_ranks
        self.phi_s_list: List[np.ndarray] = []
        self.design_phi_s: List[np.ndarray] = []
        self.approximated = False
        self.fitted = False

    def fit(self, phi_s_list: Sequence[np.ndarray], num_typec: int) -> "BasePrecoder":
        """
        Prepares the precoder for a set of type-S covariances and ``num_typec``
        type-C users.
        """
        self.phi_s_list = [np.asarray(phi, dtype=complex) for phi in phi_s_list]
        self.num_typec = num_typec
        self.design_phi_s = self._design_covariances()
        self._fit_statistics()
        self.fitted = True
        return self

    def _design_covariances(self) -> List[np.ndarray]:
        return self.phi_s_list

    def _fit_statistics(self):
        pass

    def precode(self, G_hat) -> PrecoderSet:
        if not self.fitted:
            raise ValueError("Precoder must be fit before calling precode().")
        G_hat = np.asarray(G_hat, dtype=complex)
        w_c, w_s = self._beams(G_hat)
        return PrecoderSet(w_c, w_s, self.method, self.p_d, self.rho, max_leakage(w_c, self.phi_s_list))

    @abstractmethod
    def _beams(self, G_hat: np.ndarray):
        """
        Returns the ``(W_C, W_S)`` pair for one channel estimate.
        """
        pass


class ZFPrecoder(BasePrecoder):
    method = Method.ZF

    def _beams(self, G_hat):
        return zf_baseline(G_hat, self.rho), np.zeros((G_hat.shape[0], 0), dtype=complex)


class MRTPrecoder(BasePrecoder):
    method = Method.MRT

    def _beams(self, G_hat):
        return mrt_baseline(G_hat, self.p_d), np.zeros((G_hat.shape[0], 0), dtype=complex)


class SBMPrecoder(BasePrecoder):
    method = Method.SBM

    def _fit_statistics(self):
        M = self.phi_s_list[0].shape[0] if self.phi_s_list else 0
        beams = [np.sqrt(self.p_d) * dominant_beam(phi)[0] for phi in self.phi_s_list]
        self.w_s = np.stack(beams, axis=1) if beams else np.zeros((M, 0), dtype=complex)

    def _beams(self, G_hat):
        w_s = self.w_s if self.w_s.shape[0] else np.zeros((G_hat.shape[0], 0), dtype=complex)
        return mrt_baseline(G_hat, self.p_d), w_s


class NullSpacePrecoder(BasePrecoder):
    """
    Shared machinery of eZF and eMRT: the null space of the (possibly
    low-rank approximated) type-S covariances and per-user covariance factors.
    """

    def _has_room(self, phi_s_list) -> bool:
        raise NotImplementedError

    def _design_covariances(self) -> List[np.ndarray]:
        if not self.phi_s_list:
            return []
        if self.target_ranks is not None:
            if len(self.target_ranks) != len(self.phi_s_list):
                raise ValueError(f"Got {len(self.target_ranks)} target ranks for {len(self.phi_s_list)} type-S users")
            ranks = list(self.target_ranks)
        elif self._has_room(self.phi_s_list):
            return self.phi_s_list
        else:
            ranks = [energy_rank(phi, self.rank_energy) for phi in self.phi_s_list]
            logger.warning(
                f"{self.method}: type-S covariances leave no room for {self.num_typec} type-C users; "
                f"using rank-{ranks} approximations holding {self.rank_energy:.3%} of each trace"
            )
        design = [low_rank_approx(phi, D) for phi, D in zip(self.phi_s_list, ranks)]
        self.approximated = True
        if not self._has_room(design):
            M = self.phi_s_list[0].shape[0]
            raise InfeasibleDimensionError(
                f"{self.method} infeasible for M={M}, K={self.num_typec} even with ranks {ranks}"
            )
        return design

    def _fit_statistics(self):
        M = self.phi_s_list[0].shape[0] if self.phi_s_list else None
        self.basis = statistical_null_basis(self.design_phi_s, M, self.rank_tol) if M else None
        self.factors = [psd_factor(phi, self.rank_tol) for phi in self.design_phi_s]
        logger.info(
            f"{self.method}: r1={self.basis[1] if self.basis else 0}, "
            f"type-S ranks={[f.shape[1] for f in self.factors]}, approximated={self.approximated}"
        )

    def _typec_basis(self, M):
        return self.basis if self.basis is not None else statistical_null_basis([], M)


def _top_direction(factor: np.ndarray, scale: float, rank_tol: float, user: int):
    """Top left singular pair of a projected covariance factor."""
    if factor.shape[1] == 0:
        raise UnreachableUserError(f"type-S user {user} has a zero covariance")
    U, s, _ = scipy.linalg.svd(factor, full_matrices=False)
    lam = float(s[0] ** 2)
    if lam <= rank_tol * scale:
        raise UnreachableUserError(f"type-S user {user} has no energy in the remaining subspace")
    return U[:, 0], lam


class EZFPrecoder(NullSpacePrecoder):
    """
    Extended zero-forcing. Type-S beams are built in the null space of the
    other type-S covariances (fixed per scenario) intersected with the null
    space of the type-C estimates (per draw), which equals the null space of
    ``Q_n`` without decomposing an ``M x M`` matrix each draw.
    """

    method = Method.EZF

    def _has_room(self, phi_s_list) -> bool:
        M = phi_s_list[0].shape[0]
        total = np.sum(phi_s_list, axis=0)
        if M - numerical_rank(total, self.rank_tol) < self.num_typec:
            return False
        for n in range(len(phi_s_list)):
            others = [phi for i, phi in enumerate(phi_s_list) if i != n]
            r_others = numerical_rank(np.sum(others, axis=0), self.rank_tol) if others else 0
            if M - r_others - self.num_typec < 1:
                return False
        return True

    def _fit_statistics(self):
        super()._fit_statistics()
        self.interference_free = []
        for n, factor in enumerate(self.factors):
            others = [phi for i, phi in enumerate(self.design_phi_s) if i != n]
            M = factor.shape[0]
            U, r = statistical_null_basis(others, M, self.rank_tol)
            B = U[:, r:]
            self.interference_free.append((B, B.conj().T @ factor, np.real(np.trace(self.design_phi_s[n]))))

    def _beams(self, G_hat):
        M = G_hat.shape[0]
        w_c = ezf_typeC(G_hat, self.design_phi_s, self.rho, self.rank_tol, basis=self._typec_basis(M))
        beams = []
        for n, (B, factor, scale) in enumerate(self.interference_free):
            C = range_basis(B.conj().T @ G_hat, self.rank_tol)
            if B.shape[1] - C.shape[1] < 1:
                raise NullSpaceExhaustedError(f"Q_{n} spans all {M} dimensions")
            projected = factor - C @ (C.conj().T @ factor)
            u, lam = _top_direction(projected, scale, self.rank_tol, n)
            beams.append(fix_phase(np.sqrt(self.rho / lam) * (B @ u)))
        w_s = np.stack(beams, axis=1) if beams else np.zeros((M, 0), dtype=complex)
        return w_c, w_s


class EMRTPrecoder(NullSpacePrecoder):
    """
    Extended MRT. Type-S beams use the projection onto the null space of the
    type-C estimates, computed once per draw and shared by all type-S users.
    """

    method = Method.EMRT

    def _has_room(self, phi_s_list) -> bool:
        M = phi_s_list[0].shape[0]
        return M - numerical_rank(np.sum(phi_s_list, axis=0), self.rank_tol) >= 1

    def _beams(self, G_hat):
        M, K = G_hat.shape
        w_c = emrt_typeC(G_hat, self.design_phi_s, self.p_d, self.rank_tol, basis=self._typec_basis(M))
        if not self.factors:
            return w_c, np.zeros((M, 0), dtype=complex)
        if K >= M:
            raise NullSpaceExhaustedError(f"K={K} type-C users leave no null space in M={M}")
        C = range_basis(G_hat, self.rank_tol)
        if C.shape[1] < K:
            raise RankDeficientError(0.0)
        beams = []
        for n, factor in enumerate(self.factors):
            projected = factor - C @ (C.conj().T @ factor)
            u, _ = _top_direction(projected, np.real(np.trace(self.design_phi_s[n])), self.rank_tol, n)
            beams.append(fix_phase(np.sqrt(self.p_d) * u))
        return w_c, np.stack(beams, axis=1)


PRECODERS = {
    Method.ZF: ZFPrecoder,
    Method.MRT: MRTPrecoder,
    Method.SBM: SBMPrecoder,
    Method.EZF: EZFPrecoder,
    Method.EMRT: EMRTPrecoder,
}


def get_precoder(method, p_d: float, rho: Optional[float] = None, **kwargs) -> BasePrecoder:
    """
    Instantiates the precoder class for a method name or ``Method``.
    """
    try:
        method = Method(method)
    except ValueError:
        raise ValueError(f"Unknown precoding method: {method}")
    return PRECODERS[method](p_d, rho, **kwargs)
