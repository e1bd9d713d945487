import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from core.matrix_core import psd_sqrt
from data.channel import (
    PILOTS_PER_SYMBOL,
    PilotConfig,
    UserGeometry,
    WienerFilter,
    angular_support_rank,
    cos_support,
    synth_covariance,
    wiener_filter,
)
from utils.utils import db_to_linear

logger = logging.getLogger(__name__)

# Seed-sequence spawn keys: one independent stream per concern.
STREAM_PLACEMENT = 0
STREAM_COVARIANCE_C = 1
STREAM_COVARIANCE_S = 2
STREAM_TRIALS = 3

# Largest number of pilot OFDM symbols leaving a positive data share in a 7-symbol slot.
MAX_PILOT_SYMBOLS = 5

CHANNEL_MODELS = ("geometric", "iid")


@dataclass(frozen=True)
class Scenario:
    """
    Full parameter set of one experiment, kept in file units (dB, degrees).

    Linear and radian views are exposed as properties; the library works on
    those while files and the CLI speak dB and degrees.
    """

    m: int = 100
    k: int = 5
    n: int = 1
    t_pilot: int = 1
    p_u_db: float = 10.0
    p_d_db: float = 10.0
    rho_db: Optional[float] = None
    seed: int = 0
    trials: int = 20000
    l_paths: int = 20
    angle_spread_deg: float = 10.0
    varsigma_deg: float = 90.0
    spacing_ratio: float = 0.5
    typec_aoas_deg: Optional[Tuple[float, ...]] = None
    channel_model: str = "geometric"
    rank_energy: float = 0.999

    @property
    def p_u(self) -> float:
        return db_to_linear(self.p_u_db)

    @property
    def p_d(self) -> float:
        return db_to_linear(self.p_d_db)

    @property
    def rho(self) -> float:
        return self.p_d if self.rho_db is None else db_to_linear(self.rho_db)

    @property
    def angle_spread(self) -> float:
        return math.radians(self.angle_spread_deg)

    @property
    def varsigma(self) -> float:
        return math.radians(self.varsigma_deg)

    @property
    def pilot(self) -> PilotConfig:
        return PilotConfig(self.t_pilot, self.p_u)


class Diagnostic(NamedTuple):
    level: str
    code: str
    message: str


def scenario_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for one stream of the scenario, split from the root seed by spawn key."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def required_pilot_symbols(users: int) -> int:
    return max(1, math.ceil(users / PILOTS_PER_SYMBOL))


def conventional_pilot_symbols(scenario: Scenario) -> int:
    """Pilot symbols needed when every one of the K+N users is trained."""
    return max(scenario.t_pilot, required_pilot_symbols(scenario.k + scenario.n))


def place_typeS_users(N: int, varsigma: float, angle_spread: float, L: int,
                      spacing_ratio: float = 0.5) -> List[UserGeometry]:
    """
    Type-S mean AOAs on the schedule ``varsigma + 2 pi n / N`` (mod 2 pi).
    """
    if N < 0:
        raise ValueError(f"N must be non-negative, got {N}")
    return [
        UserGeometry(float(np.mod(varsigma + 2 * np.pi * n / N, 2 * np.pi)), angle_spread, L, spacing_ratio)
        for n in range(N)
    ]


def place_typeC_users(K: int, rng: np.random.Generator, angle_spread: float = math.radians(10.0),
                      L: int = 20, spacing_ratio: float = 0.5) -> List[UserGeometry]:
    """Type-C mean AOAs drawn uniformly over ``[0, pi]``."""
    if K < 0:
        raise ValueError(f"K must be non-negative, got {K}")
    aoas = rng.uniform(0.0, np.pi, size=K)
    return [UserGeometry(float(a), angle_spread, L, spacing_ratio) for a in aoas]


def typec_geometries(scenario: Scenario) -> List[UserGeometry]:
    if scenario.typec_aoas_deg is not None:
        if len(scenario.typec_aoas_deg) < scenario.k:
            raise ValueError(
                f"typec_aoas_deg lists {len(scenario.typec_aoas_deg)} AOAs for k={scenario.k} users"
            )
        return [
            UserGeometry(math.radians(a), scenario.angle_spread, scenario.l_paths, scenario.spacing_ratio)
            for a in scenario.typec_aoas_deg[:scenario.k]
        ]
    rng = scenario_rng(scenario.seed, STREAM_PLACEMENT)
    return place_typeC_users(scenario.k, rng, scenario.angle_spread, scenario.l_paths, scenario.spacing_ratio)


def types_geometries(scenario: Scenario) -> List[UserGeometry]:
    return place_typeS_users(scenario.n, scenario.varsigma, scenario.angle_spread,
                             scenario.l_paths, scenario.spacing_ratio)


def _supports_overlap(a: UserGeometry, b: UserGeometry) -> bool:
    low_a, high_a = cos_support(*a.aoa_interval)
    low_b, high_b = cos_support(*b.aoa_interval)
    return low_a <= high_b and low_b <= high_a


def validate(scenario: Scenario) -> List[Diagnostic]:
    """
    Checks a scenario without running it. Never raises: every problem comes
    back as a ``Diagnostic`` with level ``"error"`` or ``"warning"``.
    """
    diagnostics: List[Diagnostic] = []

    def add(level, code, message):
        diagnostics.append(Diagnostic(level, code, message))

    M, K, N = scenario.m, scenario.k, scenario.n
    try:
        if M < 1 or K < 0 or N < 0:
            add("error", "dimensions", f"invalid dimensions m={M}, k={K}, n={N}")
            return diagnostics
        if M < K + N:
            add("error", "antennas", f"m={M} is below k+n={K + N}")
        elif M < 4 * (K + N):
            add("warning", "hardening", f"hardening assumption weak: m={M} < 4(k+n)={4 * (K + N)}")

        if scenario.t_pilot < 1:
            add("error", "pilot_length", f"t_pilot must be at least 1, got {scenario.t_pilot}")
        elif scenario.t_pilot > MAX_PILOT_SYMBOLS:
            add("error", "pilot_overhead",
                f"t_pilot={scenario.t_pilot} leaves no data symbols (at most {MAX_PILOT_SYMBOLS})")
        if K > PILOTS_PER_SYMBOL * scenario.t_pilot:
            add("error", "pilot_length",
                f"k={K} exceeds the {PILOTS_PER_SYMBOL * scenario.t_pilot} orthogonal pilots of t_pilot={scenario.t_pilot}")
        if conventional_pilot_symbols(scenario) > MAX_PILOT_SYMBOLS:
            add("warning", "conventional_overhead",
                f"training all {K + N} users needs {conventional_pilot_symbols(scenario)} pilot symbols")

        if scenario.trials < 1:
            add("error", "trials", f"trials must be positive, got {scenario.trials}")
        if scenario.typec_aoas_deg is not None and len(scenario.typec_aoas_deg) < K:
            add("error", "typec_aoas", f"typec_aoas_deg lists fewer than k={K} AOAs")

        if N >= 1 and scenario.channel_model == "iid":
            add("warning", "null_space", "i.i.d. covariances are full rank; eZF/eMRT need low-rank approximation")
        elif N >= 1:
            s_geoms = types_geometries(scenario)
            expected_r1 = sum(min(scenario.l_paths, math.ceil(angular_support_rank(g, M))) for g in s_geoms)
            worst_r1 = min(M, N * min(scenario.l_paths, M))
            if M - expected_r1 < K:
                add("error", "ezf_dimension",
                    f"eZF needs m - r1 >= k but m={M}, expected r1={expected_r1}, k={K}")
            elif M - worst_r1 < K:
                add("warning", "ezf_dimension",
                    f"numerical rank of the type-S covariances may reach {worst_r1}; low-rank approximation likely")
            for i in range(N):
                for j in range(i + 1, N):
                    if _supports_overlap(s_geoms[i], s_geoms[j]):
                        gap = abs(s_geoms[i].mean_aoa - s_geoms[j].mean_aoa)
                        mirrored = gap > scenario.angle_spread
                        add("warning", "type_s_overlap",
                            f"type-S users {i} and {j} share array support"
                            + (" (mirrored AOAs alias on a linear array)" if mirrored else ""))
    except Exception as e:  # validation must report, not raise
        add("error", "internal", f"validation failed: {e}")
    return diagnostics


@dataclass
class ScenarioStatistics:
    """
    Everything about a scenario that stays fixed across Monte Carlo trials:
    covariances, their square roots and the MMSE filters of trained users.
    """

    scenario: Scenario
    pilot: PilotConfig
    typec_geometries: List[UserGeometry]
    types_geometries: List[UserGeometry]
    phi_c: List[np.ndarray]
    phi_s: List[np.ndarray]
    sqrt_c: List[np.ndarray] = field(repr=False)
    sqrt_s: List[np.ndarray] = field(repr=False)
    filters_c: List[WienerFilter] = field(repr=False)
    filters_s: List[WienerFilter] = field(default_factory=list, repr=False)

    @property
    def phi_hat_c(self) -> List[np.ndarray]:
        return [f.phi_hat for f in self.filters_c]

    @property
    def delta_c(self) -> List[np.ndarray]:
        return [f.delta for f in self.filters_c]

    @property
    def conventional(self) -> bool:
        return len(self.filters_s) > 0


def _covariances(scenario: Scenario, geometries: List[UserGeometry], stream: int) -> List[np.ndarray]:
    if scenario.channel_model == "iid":
        return [np.eye(scenario.m, dtype=complex) for _ in geometries]
    return [
        synth_covariance(geom, scenario.m, scenario_rng(scenario.seed, stream, index))
        for index, geom in enumerate(geometries)
    ]


def build_statistics(scenario: Scenario, conventional: bool = False) -> ScenarioStatistics:
    """
    Synthesizes covariances and MMSE filters for a scenario.

    Parameters
    ----------
    scenario : Scenario
        Scenario to realize.
    conventional : bool
        Train every one of the K+N users with pilots long enough for all of
        them (baselines serving all users).

    Returns
    -------
    ScenarioStatistics
    """
    if scenario.channel_model not in CHANNEL_MODELS:
        raise ValueError(f"Unknown channel model: {scenario.channel_model}")
    c_geoms = typec_geometries(scenario)
    s_geoms = types_geometries(scenario)
    logger.info(
        f"Building statistics: M={scenario.m}, K={scenario.k}, N={scenario.n}, "
        f"model={scenario.channel_model}, conventional={conventional}"
    )
    phi_c = _covariances(scenario, c_geoms, STREAM_COVARIANCE_C)
    phi_s = _covariances(scenario, s_geoms, STREAM_COVARIANCE_S)

    t_pilot = conventional_pilot_symbols(scenario) if conventional else scenario.t_pilot
    pilot = PilotConfig(t_pilot, scenario.p_u)
    filters_c = [wiener_filter(phi, pilot.tau_pu) for phi in phi_c]
    filters_s = [wiener_filter(phi, pilot.tau_pu) for phi in phi_s] if conventional else []

    return ScenarioStatistics(
        scenario=scenario,
        pilot=pilot,
        typec_geometries=c_geoms,
        types_geometries=s_geoms,
        phi_c=phi_c,
        phi_s=phi_s,
        sqrt_c=[psd_sqrt(phi) for phi in phi_c],
        sqrt_s=[psd_sqrt(phi) for phi in phi_s],
        filters_c=filters_c,
        filters_s=filters_s,
    )
