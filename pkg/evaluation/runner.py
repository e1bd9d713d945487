import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.matrix_core import psd_sqrt
from data.channel import apply_filter, colour, complex_normal
from data.scenario import (
    STREAM_TRIALS,
    Scenario,
    ScenarioStatistics,
    build_statistics,
    scenario_rng,
)
from evaluation.rates import (
    RateReport,
    Source,
    closed_form_rate_typeC,
    closed_form_rate_typeS,
    iid_rate_typeC,
    iid_rate_typeS,
    user_sinrs,
)
from models.precoders import BasePrecoder, get_precoder
from models.precoding import Method
from utils.utils import display_diagnostics

logger = logging.getLogger(__name__)

# Trials per independently seeded block; fixed so results do not depend on --jobs.
TRIAL_BLOCK = 500

CONVENTIONAL_USERS = ("all", "typec_only")
MOMENT_FORMS = ("lemma", "circular")
SANDWICH_FORMS = ("printed", "derived")


@dataclass
class _BlockResult:
    rates: np.ndarray
    leakage: np.ndarray


def _block_sizes(trials: int) -> List[int]:
    full, rest = divmod(trials, TRIAL_BLOCK)
    return [TRIAL_BLOCK] * full + ([rest] if rest else [])


@dataclass
class BlockDraws:
    """True channels and estimates of one trial block, each ``(size, M)`` per user."""
    g_c: List[np.ndarray]
    g_s: List[np.ndarray]
    estimates: List[np.ndarray]


def draw_block(stats: ScenarioStatistics, block: int, size: int, train_s: bool) -> BlockDraws:
    """
    Draws ``size`` trials with the generator of block ``block``.

    White fading and pilot noise are drawn for all K+N users whatever the
    method, so every method sees the same channels (common random numbers).
    """
    scenario = stats.scenario
    M, K, N = scenario.m, scenario.k, scenario.n
    rng = scenario_rng(scenario.seed, STREAM_TRIALS, block)
    white = complex_normal(rng, (K + N, size, M))
    noise = complex_normal(rng, (K + N, size, M))

    g_c = [colour(root, white[k]) for k, root in enumerate(stats.sqrt_c)]
    g_s = [colour(root, white[K + n]) for n, root in enumerate(stats.sqrt_s)]
    est = [apply_filter(f, g_c[k], noise[k]) for k, f in enumerate(stats.filters_c)]
    if train_s:
        est += [apply_filter(f, g_s[n], noise[K + n]) for n, f in enumerate(stats.filters_s)]
    return BlockDraws(g_c, g_s, est)


def _simulate_block(stats: ScenarioStatistics, precoder: BasePrecoder, block: int, size: int,
                    serve_s: bool, train_s: bool) -> _BlockResult:
    M = stats.scenario.m
    draws = draw_block(stats, block, size, train_s)
    est = draws.estimates
    served = draws.g_c + (draws.g_s if serve_s else [])
    rates = np.empty((size, len(served)))
    leakage = np.zeros(size)
    for t in range(size):
        G_hat = np.stack([e[t] for e in est], axis=1) if est else np.zeros((M, 0), dtype=complex)
        precoders = precoder.precode(G_hat)
        channels = np.stack([g[t] for g in served], axis=1)
        rates[t] = np.log2(1.0 + user_sinrs(channels, precoders.matrix))
        leakage[t] = precoders.leakage or 0.0
    return _BlockResult(rates, leakage)


def ergodic_rates_mc(scenario: Scenario, method, trials: Optional[int] = None,
                     conventional_users: str = "all", jobs: int = 1,
                     statistics: Optional[ScenarioStatistics] = None,
                     target_ranks: Optional[Sequence[int]] = None) -> RateReport:
    """
    Monte Carlo ergodic rates of one precoding method.

    Covariances stay fixed; every trial draws fresh fading and pilot noise,
    re-estimates the type-C channels and rebuilds the precoders.

    Parameters
    ----------
    scenario : Scenario
        Scenario to simulate.
    method : str or Method
        Precoding method.
    trials : int, optional
        Number of trials; defaults to ``scenario.trials``.
    conventional_users : str
        For ZF/MRT: ``"all"`` trains and serves all K+N users, ``"typec_only"``
        serves only the K type-C users.
    jobs : int
        Worker threads over trial blocks. Results do not depend on it.
    statistics : ScenarioStatistics, optional
        Prebuilt statistics matching the method's pilot layout.
    target_ranks : sequence of int, optional
        Explicit low-rank approximation orders for eZF/eMRT.

    Returns
    -------
    RateReport
    """
    method = Method(method)
    trials = scenario.trials if trials is None else trials
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    if conventional_users not in CONVENTIONAL_USERS:
        raise ValueError(f"Unknown conventional_users mode: {conventional_users}")

    conventional = method.is_baseline and conventional_users == "all" and scenario.n > 0
    if statistics is None or statistics.conventional != conventional:
        statistics = build_statistics(scenario, conventional=conventional)
    serve_s = not method.is_baseline or conventional
    num_trained = scenario.k + (scenario.n if conventional else 0)
    if scenario.k + (scenario.n if serve_s else 0) == 0:
        raise ValueError(f"{method} serves no users in this scenario")

    precoder = get_precoder(method, scenario.p_d, scenario.rho, rank_energy=scenario.rank_energy,
                            target_ranks=target_ranks)
    precoder.fit([] if method.is_baseline else statistics.phi_s, num_trained)

    sizes = _block_sizes(trials)
    logger.info(f"Simulating {method} over {trials} trials in {len(sizes)} blocks (jobs={jobs})")

    def run(block):
        return _simulate_block(statistics, precoder, block, sizes[block], serve_s, conventional)

    if jobs > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(run, range(len(sizes))))
    else:
        results = [run(block) for block in range(len(sizes))]

    rates = np.concatenate([r.rates for r in results], axis=0)
    leakage = np.concatenate([r.leakage for r in results])
    K = scenario.k
    rates_c, rates_s = rates[:, :K], rates[:, K:]

    def std_err(samples):
        if samples.shape[0] < 2:
            return float("nan")
        return float(np.std(samples, ddof=1) / math.sqrt(samples.shape[0]))

    mode = "conventional" if conventional else "proposed"
    return RateReport.from_rates(
        rates_c.mean(axis=0), rates_s.mean(axis=0), method, Source.MC, statistics.pilot.t_pilot,
        mode=mode, users=num_trained,
        mc_std_error=std_err(rates.sum(axis=1)),
        std_err_c=std_err(rates_c.mean(axis=1)) if K else float("nan"),
        std_err_s=std_err(rates_s.mean(axis=1)) if rates_s.shape[1] else float("nan"),
        per_user_std_err_c=np.array([std_err(rates_c[:, k]) for k in range(rates_c.shape[1])]),
        per_user_std_err_s=np.array([std_err(rates_s[:, n]) for n in range(rates_s.shape[1])]),
        mean_leakage=float(leakage.mean()) if not method.is_baseline else None,
        trials=trials,
    )


def closed_form_rates(scenario: Scenario, statistics: Optional[ScenarioStatistics] = None,
                      moment: str = "lemma", sandwich: str = "printed") -> RateReport:
    """
    SBM rates from the large-array closed forms, one per user.

    ``moment`` picks the second-moment form (``"lemma"`` or ``"circular"``),
    ``sandwich`` the type-C interference term (``"printed"`` or ``"derived"``).
    """
    if moment not in MOMENT_FORMS:
        raise ValueError(f"Unknown moment form: {moment}")
    if sandwich not in SANDWICH_FORMS:
        raise ValueError(f"Unknown sandwich form: {sandwich}")
    logger.info(f"Closed forms with moment={moment}, sandwich={sandwich}")
    statistics = statistics or build_statistics(scenario)
    p_d = scenario.p_d
    roots = [psd_sqrt(phi_hat) for phi_hat in statistics.phi_hat_c]
    per_c = [
        closed_form_rate_typeC(k, statistics.phi_c, statistics.phi_hat_c, statistics.delta_c, statistics.phi_s,
                               p_d, moment, sandwich == "printed", roots)
        for k in range(scenario.k)
    ]
    per_s = [
        closed_form_rate_typeS(n, statistics.phi_s, statistics.phi_hat_c, p_d, moment, roots)
        for n in range(scenario.n)
    ]
    return RateReport.from_rates(per_c, per_s, Method.SBM, Source.CLOSED_FORM, statistics.pilot.t_pilot)


def iid_closed_form_rates(scenario: Scenario) -> RateReport:
    """SBM rates from the i.i.d. Rayleigh specializations of the closed forms."""
    pilot = scenario.pilot
    rate_c = iid_rate_typeC(scenario.m, scenario.k, scenario.n, pilot.tau, pilot.p_u, scenario.p_d)
    rate_s = iid_rate_typeS(scenario.k, scenario.n, scenario.p_d)
    return RateReport.from_rates([rate_c] * scenario.k, [rate_s] * scenario.n, Method.SBM,
                                 Source.IID_CLOSED_FORM, pilot.t_pilot)


def evaluate_scenario(scenario: Scenario, methods: Sequence, outputs: Sequence[str] = ("MC",),
                      trials: Optional[int] = None, conventional_users: str = "all", jobs: int = 1,
                      moment: str = "lemma", sandwich: str = "printed") -> List[RateReport]:
    """
    Evaluates every requested method/source pair of one scenario.

    Statistics are built once per pilot layout and shared by the methods.
    Closed-form outputs apply to SBM only.
    """
    methods = [Method(m) for m in methods]
    outputs = [Source(o) for o in outputs]
    cache: Dict[bool, ScenarioStatistics] = {}

    def stats_for(conventional):
        if conventional not in cache:
            cache[conventional] = build_statistics(scenario, conventional=conventional)
        return cache[conventional]

    reports = []
    for method in methods:
        for source in outputs:
            if source is Source.MC:
                conventional = method.is_baseline and conventional_users == "all" and scenario.n > 0
                reports.append(ergodic_rates_mc(scenario, method, trials, conventional_users, jobs,
                                                statistics=stats_for(conventional)))
            elif method is not Method.SBM:
                logger.warning(f"Skipping {source} for {method}: closed forms exist for SBM only")
            elif source is Source.CLOSED_FORM:
                reports.append(closed_form_rates(scenario, stats_for(False), moment, sandwich))
            else:
                reports.append(iid_closed_form_rates(scenario))
    return reports


def reports_to_frame(reports: Sequence[RateReport]) -> pd.DataFrame:
    """Summary table: one row per report."""
    return pd.DataFrame([
        {
            "method": str(r.method),
            "source": str(r.source),
            "avg_c": r.avg_c,
            "avg_s": r.avg_s,
            "std_err_c": r.std_err_c,
            "std_err_s": r.std_err_s,
            "sum_rate": r.sum_rate,
            "spectral_efficiency": r.spectral_efficiency,
            "mc_std_error": r.mc_std_error,
            "mean_leakage": r.mean_leakage,
        }
        for r in reports
    ])


def user_rates_frame(reports: Sequence[RateReport]) -> pd.DataFrame:
    """Per-user table: one row per (method, source, user class, user index)."""
    rows = []
    for r in reports:
        for user_class, rates, errors in (("C", r.per_user_c, r.per_user_std_err_c),
                                          ("S", r.per_user_s, r.per_user_std_err_s)):
            for index, rate in enumerate(rates):
                rows.append({
                    "method": str(r.method),
                    "source": str(r.source),
                    "user_class": user_class,
                    "user_index": index,
                    "rate": float(rate),
                    "std_err": float(errors[index]) if errors is not None else float("nan"),
                })
    return pd.DataFrame(rows, columns=["method", "source", "user_class", "user_index", "rate", "std_err"])


def run_scenario(scenario: Scenario, methods: Sequence, outputs: Sequence[str] = ("MC",),
                 trials: Optional[int] = None, conventional_users: str = "all", jobs: int = 1,
                 out_dir: Optional[str] = None, show_diagnostics: bool = True,
                 moment: str = "lemma", sandwich: str = "printed") -> List[RateReport]:
    """
    Evaluates a scenario, prints the summary and writes ``summary.csv`` and
    ``user_rates.csv`` under ``out_dir`` when given.
    """
    reports = evaluate_scenario(scenario, methods, outputs, trials, conventional_users, jobs, moment, sandwich)
    summary = reports_to_frame(reports)
    per_user = user_rates_frame(reports)
    if show_diagnostics:
        display_diagnostics(summary, "Scenario summary")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False, float_format="%.10g",
                       na_rep="nan", lineterminator="\n")
        per_user.to_csv(os.path.join(out_dir, "user_rates.csv"), index=False, float_format="%.10g",
                        na_rep="nan", lineterminator="\n")
        logger.info(f"Scenario results saved to {out_dir}")
    return reports
