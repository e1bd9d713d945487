import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from core.exceptions import UndefinedRatioError
from core.matrix_core import hermitian_eig, mean_ratio_approx, psd_sqrt, quad_form_expectation_F
from data.scenario import required_pilot_symbols
from models.precoding import Method, PrecoderSet

logger = logging.getLogger(__name__)

# Slot of 7 OFDM symbols, one of them reserved for overhead.
SLOT_SYMBOLS = 7
DATA_SYMBOLS = 6


class Source(str, Enum):
    MC = "MC"
    CLOSED_FORM = "ClosedForm"
    IID_CLOSED_FORM = "IIDClosedForm"

    def __str__(self):
        return self.value


@dataclass
class RateReport:
    """
    Per-user and aggregate rates (bits/s/Hz) of one method from one source.

    Standard errors are set for Monte Carlo reports only: ``mc_std_error``
    refers to the sum rate, ``std_err_c`` / ``std_err_s`` to the class averages.
    """

    per_user_c: np.ndarray
    per_user_s: np.ndarray
    avg_c: float
    avg_s: float
    sum_rate: float
    spectral_efficiency: float
    method: Method
    source: Source
    mc_std_error: Optional[float] = None
    std_err_c: Optional[float] = None
    std_err_s: Optional[float] = None
    per_user_std_err_c: Optional[np.ndarray] = None
    per_user_std_err_s: Optional[np.ndarray] = None
    mean_leakage: Optional[float] = None
    trials: Optional[int] = None

    @classmethod
    def from_rates(cls, per_user_c, per_user_s, method, source, t_pilot: int,
                   mode: str = "proposed", users: Optional[int] = None, **extra) -> "RateReport":
        per_user_c = np.asarray(per_user_c, dtype=float)
        per_user_s = np.asarray(per_user_s, dtype=float)
        total = sum_rate(per_user_c, per_user_s)
        try:
            se = spectral_efficiency(total, t_pilot, mode, users)
        except ValueError as e:
            logger.warning(f"{method}: {e}")
            se = float("nan")
        return cls(
            per_user_c=per_user_c,
            per_user_s=per_user_s,
            avg_c=float(per_user_c.mean()) if per_user_c.size else float("nan"),
            avg_s=float(per_user_s.mean()) if per_user_s.size else float("nan"),
            sum_rate=total,
            spectral_efficiency=se,
            method=Method(method),
            source=Source(source),
            **extra,
        )


def user_sinrs(channels: np.ndarray, precoders: np.ndarray) -> np.ndarray:
    """
    SINR of every served user with unit noise power.

    ``channels[:, u]`` is the true channel of user ``u`` and ``precoders[:, u]``
    its beam; every other column interferes.
    """
    gains = np.abs(channels.conj().T @ precoders) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + 1.0)


def sinr_typeC(g: np.ndarray, precoders: PrecoderSet, k: int) -> float:
    """SINR of type-C user ``k`` with true channel ``g``."""
    gains = np.abs(np.asarray(g).conj() @ precoders.matrix) ** 2
    signal = gains[k]
    return float(signal / (gains.sum() - signal + 1.0))


def sinr_typeS(g: np.ndarray, precoders: PrecoderSet, n: int) -> float:
    """SINR of type-S user ``n`` with true channel ``g``."""
    return sinr_typeC(g, precoders, precoders.w_c.shape[1] + n)


def sum_rate(report_c, report_s) -> float:
    return float(np.sum(report_c) + np.sum(report_s))


def spectral_efficiency(sum_rate: float, t_pilot: int, mode: str = "proposed",
                        users: Optional[int] = None) -> float:
    """
    Sum rate discounted by the pilot share of a 7-symbol slot,
    ``sum_rate * (6 - t_pilot) / 7``.

    In ``"conventional"`` mode with ``users`` given, the pilot symbols are
    raised to what orthogonal pilots for all those users need.
    """
    if mode not in ("proposed", "conventional"):
        raise ValueError(f"Unknown spectral efficiency mode: {mode}")
    if mode == "conventional" and users is not None:
        t_pilot = max(t_pilot, required_pilot_symbols(users))
    if t_pilot >= DATA_SYMBOLS:
        raise ValueError(f"{t_pilot} pilot symbols leave a non-positive data share")
    return sum_rate * (DATA_SYMBOLS - t_pilot) / SLOT_SYMBOLS


def _trace(A) -> float:
    return float(np.real(np.trace(A)))


def _mrt_ratio(A_sqrt_sandwich: np.ndarray, phi_hat: np.ndarray, numerator_trace: float,
               moment: str) -> float:
    """
    Mean-ratio approximation of ``E{g_hat^H A g_hat / g_hat^H g_hat}`` for
    ``g_hat = phi_hat^{1/2} h``, written with second moments ``F``.
    """
    E2 = _trace(phi_hat)
    cov12 = np.real(quad_form_expectation_F(A_sqrt_sandwich, phi_hat, moment)) - numerator_trace * E2
    var2 = np.real(quad_form_expectation_F(phi_hat, phi_hat, moment)) - E2 ** 2
    return mean_ratio_approx(numerator_trace, E2, cov12, var2)


def _log_rate(signal: float, denominator: float, kind: str, user: int) -> float:
    if denominator <= 0.0 or signal / denominator <= -1.0:
        raise UndefinedRatioError(f"{kind} user {user}: closed-form SINR {signal:.4g} / {denominator:.4g} is undefined")
    return math.log2(1.0 + signal / denominator)


def _check_dims(*groups):
    dims = {np.shape(A) for group in groups for A in group}
    if len(dims) > 1:
        raise ValueError(f"Dimension mismatch among covariances: {sorted(dims)}")


def closed_form_rate_typeC(k: int, phi_c_list: Sequence[np.ndarray], phi_hat_list: Sequence[np.ndarray],
                           delta_list: Sequence[np.ndarray], phi_s_list: Sequence[np.ndarray], p_d: float,
                           moment: str = "lemma", printed_sandwich: bool = True,
                           phi_hat_sqrt_list: Optional[Sequence[np.ndarray]] = None) -> float:
    """
    Approximate ergodic rate of type-C user ``k`` under SBM precoding (MRT for
    type-C, dominant eigenvector for type-S users).

    Parameters
    ----------
    k : int
        Type-C user index.
    phi_c_list, phi_hat_list, delta_list : sequence of np.ndarray
        True, estimate and error covariances of all type-C users.
    phi_s_list : sequence of np.ndarray
        Type-S covariances.
    p_d : float
        Per-user transmit power (linear).
    moment : str
        ``"lemma"`` subtracts the diagonal term in every second moment,
        ``"circular"`` uses the circularly-symmetric moment.
    printed_sandwich : bool
        Evaluate the inter-user term with ``phi_hat_k^{1/2} phi_k phi_hat_i^{1/2}``
        (default) or, when False, with the symmetric
        ``phi_hat_i^{1/2} phi_k phi_hat_i^{1/2}``.
    phi_hat_sqrt_list : sequence of np.ndarray, optional
        Precomputed square roots of ``phi_hat_list``.

    Returns
    -------
    float
        Rate in bits/s/Hz.
    """
    _check_dims(phi_c_list, phi_hat_list, delta_list, phi_s_list)
    roots = list(phi_hat_sqrt_list) if phi_hat_sqrt_list is not None else [psd_sqrt(p) for p in phi_hat_list]
    phi_hat_k, root_k, delta_k, phi_k = phi_hat_list[k], roots[k], delta_list[k], phi_c_list[k]

    signal = _trace(phi_hat_k) + _mrt_ratio(root_k @ delta_k @ root_k, phi_hat_k, _trace(phi_hat_k @ delta_k), moment)

    inter_c = 0.0
    for i, (phi_hat_i, root_i) in enumerate(zip(phi_hat_list, roots)):
        if i == k:
            continue
        left = root_k if printed_sandwich else root_i
        inter_c += _mrt_ratio(left @ phi_k @ root_i, phi_hat_i, _trace(phi_hat_i @ phi_k), moment)

    inter_s = 0.0
    for phi_s in phi_s_list:
        u = hermitian_eig(phi_s).vectors[:, 0]
        inter_s += float(np.real(u.conj() @ phi_k @ u))

    return _log_rate(signal, inter_c + inter_s + 1.0 / p_d, "type-C", k)


def closed_form_rate_typeS(n: int, phi_s_list: Sequence[np.ndarray], phi_hat_list: Sequence[np.ndarray],
                           p_d: float, moment: str = "lemma",
                           phi_hat_sqrt_list: Optional[Sequence[np.ndarray]] = None) -> float:
    """
    Approximate ergodic rate of type-S user ``n`` under SBM precoding.
    """
    _check_dims(phi_s_list, phi_hat_list)
    roots = list(phi_hat_sqrt_list) if phi_hat_sqrt_list is not None else [psd_sqrt(p) for p in phi_hat_list]
    phi_n = phi_s_list[n]
    signal = float(hermitian_eig(phi_n).values[0])

    inter_s = 0.0
    for j, phi_j in enumerate(phi_s_list):
        if j == n:
            continue
        u = hermitian_eig(phi_j).vectors[:, 0]
        inter_s += float(np.real(u.conj() @ phi_n @ u))

    inter_c = sum(
        _mrt_ratio(root @ phi_n @ root, phi_hat, _trace(phi_hat @ phi_n), moment)
        for phi_hat, root in zip(phi_hat_list, roots)
    )
    return _log_rate(signal, inter_s + inter_c + 1.0 / p_d, "type-S", n)


def iid_rate_typeC(M: int, K: int, N: int, tau: int, p_u: float, p_d: float) -> float:
    tpu = tau * p_u
    return math.log2(1.0 + (tpu * M + 1.0) / ((tpu + 1.0) * (K - 1 + N + 1.0 / p_d)))


def iid_rate_typeS(K: int, N: int, p_d: float) -> float:
    return math.log2(1.0 + 1.0 / (N - 1 + K + 1.0 / p_d))
