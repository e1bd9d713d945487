import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from core.matrix_core import check_psd, hermitian_eig, hermitize, psd_sqrt

logger = logging.getLogger(__name__)

# Pilot symbols carried by one OFDM symbol (tau = 14 * t_pilot).
PILOTS_PER_SYMBOL = 14


@dataclass(frozen=True)
class UserGeometry:
    mean_aoa: float
    angle_spread: float
    num_paths: int = 20
    antenna_spacing_ratio: float = 0.5

    def __post_init__(self):
        if self.angle_spread <= 0:
            raise ValueError(f"angle_spread must be positive, got {self.angle_spread}")
        if self.num_paths < 1:
            raise ValueError(f"num_paths must be at least 1, got {self.num_paths}")
        if self.antenna_spacing_ratio <= 0:
            raise ValueError(f"antenna_spacing_ratio must be positive, got {self.antenna_spacing_ratio}")

    @property
    def aoa_interval(self):
        return self.mean_aoa - self.angle_spread / 2, self.mean_aoa + self.angle_spread / 2


@dataclass(frozen=True)
class PilotConfig:
    t_pilot: int
    p_u: float

    def __post_init__(self):
        if self.t_pilot < 1:
            raise ValueError(f"t_pilot must be at least 1, got {self.t_pilot}")
        if self.p_u <= 0:
            raise ValueError(f"p_u must be positive, got {self.p_u}")

    @property
    def tau(self) -> int:
        return PILOTS_PER_SYMBOL * self.t_pilot

    @property
    def tau_pu(self) -> float:
        return self.tau * self.p_u


@dataclass
class ChannelEstimate:
    g_hat: np.ndarray
    phi_hat: np.ndarray
    delta: np.ndarray


class WienerFilter(NamedTuple):
    matrix: np.ndarray
    phi_hat: np.ndarray
    delta: np.ndarray
    tau_pu: float


def complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    """CN(0, 1) samples: variance 1/2 on each of the real and imaginary parts."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)


def steering_vector(theta: float, M: int, spacing_ratio: float = 0.5, L: int = 1) -> np.ndarray:
    """
    Uniform linear array response for one path, scaled by ``1/sqrt(L)`` so that
    ``L`` paths sum to a covariance with trace ``M``.
    """
    if M < 1 or L < 1:
        raise ValueError(f"M and L must be positive, got M={M}, L={L}")
    m = np.arange(M)
    return np.exp(-2j * np.pi * spacing_ratio * m * np.cos(theta)) / np.sqrt(L)


def synth_covariance(geom: UserGeometry, M: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws ``L`` path angles uniformly over the user's AOA interval and returns
    ``A A^H`` with ``A`` the ``M x L`` steering matrix.
    """
    low, high = geom.aoa_interval
    thetas = rng.uniform(low, high, size=geom.num_paths)
    A = np.stack(
        [steering_vector(t, M, geom.antenna_spacing_ratio, geom.num_paths) for t in thetas], axis=1
    )
    return hermitize(A @ A.conj().T)


def colour(phi_sqrt: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Applies ``phi^{1/2}`` to white draws stacked along the last axis."""
    return h @ phi_sqrt.T


def sample_channel(phi, rng: np.random.Generator, size: Optional[int] = None, phi_sqrt=None) -> np.ndarray:
    """
    Correlated Rayleigh draw ``phi^{1/2} h`` with ``h ~ CN(0, I_M)``.

    Returns an ``M``-vector, or a ``(size, M)`` array when ``size`` is given.
    ``phi_sqrt`` skips the square root when it is already known.
    """
    phi = np.asarray(phi, dtype=complex)
    M = phi.shape[0]
    root = psd_sqrt(phi) if phi_sqrt is None else phi_sqrt
    shape = (M,) if size is None else (size, M)
    return colour(root, complex_normal(rng, shape))


def wiener_filter(phi, tau_pu: float) -> WienerFilter:
    """
    MMSE filter ``W = phi (I/(tau p_u) + phi)^{-1}`` with estimate covariance
    ``phi_hat = W phi`` and error covariance ``delta = phi - phi_hat``.

    All three share the eigenbasis of ``phi``; with eigenvalues ``lambda`` they
    are ``lambda / (lambda + 1/(tau p_u))``, ``tau p_u lambda^2 / (1 + tau p_u lambda)``
    and ``lambda / (1 + tau p_u lambda)``, so both covariances stay PSD for any
    pilot power.
    """
    if tau_pu <= 0:
        raise ValueError(f"tau * p_u must be positive, got {tau_pu}")
    eig = hermitian_eig(phi)
    check_psd(eig.values)
    lam = np.clip(eig.values, 0.0, None)
    V = eig.vectors

    def rebuild(values):
        return hermitize((V * values[None, :]) @ V.conj().T)

    W = rebuild(tau_pu * lam / (1.0 + tau_pu * lam))
    phi_hat = rebuild(tau_pu * lam ** 2 / (1.0 + tau_pu * lam))
    delta = rebuild(lam / (1.0 + tau_pu * lam))
    return WienerFilter(W, phi_hat, delta, tau_pu)


def apply_filter(filt: WienerFilter, g_true: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Estimates from ``g + n / sqrt(tau p_u)``; draws are stacked along the last axis."""
    observation = g_true + noise / np.sqrt(filt.tau_pu)
    return observation @ filt.matrix.T


def mmse_estimate(g_true, phi, pilot: PilotConfig, rng: np.random.Generator,
                  filt: Optional[WienerFilter] = None) -> ChannelEstimate:
    """
    MMSE estimate of a type-C channel from orthogonal uplink pilots.

    Parameters
    ----------
    g_true : np.ndarray
        True channel, an ``M``-vector or a ``(draws, M)`` stack.
    phi : np.ndarray
        Channel covariance.
    pilot : PilotConfig
        Pilot length and power.
    rng : np.random.Generator
        Source of the pilot noise.
    filt : WienerFilter, optional
        Precomputed filter for ``phi`` and ``pilot``.

    Returns
    -------
    ChannelEstimate
        Estimate together with its covariance and the error covariance.
    """
    g_true = np.asarray(g_true, dtype=complex)
    if filt is None:
        filt = wiener_filter(phi, pilot.tau_pu)
    noise = complex_normal(rng, g_true.shape)
    return ChannelEstimate(apply_filter(filt, g_true, noise), filt.phi_hat, filt.delta)


def rank_bound(theta_min: float, theta_max: float, spacing_ratio: float, M: int) -> float:
    """
    Asymptotic rank of a covariance whose AOAs span ``[theta_min, theta_max]``:
    ``(cos(theta_min) - cos(theta_max)) * spacing_ratio * M``.
    """
    if theta_min > theta_max:
        raise ValueError(f"Inverted AOA interval [{theta_min}, {theta_max}]")
    return (np.cos(theta_min) - np.cos(theta_max)) * spacing_ratio * M


def cos_support(theta_min: float, theta_max: float):
    """Range of ``cos(theta)`` over the interval, including interior extrema."""
    if theta_min > theta_max:
        raise ValueError(f"Inverted AOA interval [{theta_min}, {theta_max}]")
    values = [np.cos(theta_min), np.cos(theta_max)]
    # interior multiples of pi are extrema of cos
    first = int(np.ceil(theta_min / np.pi))
    last = int(np.floor(theta_max / np.pi))
    values.extend(np.cos(j * np.pi) for j in range(first, last + 1))
    return float(min(values)), float(max(values))


def angular_support_rank(geom: UserGeometry, M: int) -> float:
    """Rank bound evaluated over the true ``cos`` range of the user's AOA interval."""
    low, high = cos_support(*geom.aoa_interval)
    return (high - low) * geom.antenna_spacing_ratio * M
