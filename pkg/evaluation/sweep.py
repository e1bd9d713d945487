import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.exceptions import ScenarioError
from data.load import key_line, read_toml, scenario_from_mapping
from data.scenario import Scenario
from evaluation.rates import Source
from evaluation.runner import CONVENTIONAL_USERS, MOMENT_FORMS, SANDWICH_FORMS, evaluate_scenario
from models.precoding import Method

logger = logging.getLogger(__name__)

AXES = ("p_d_db", "m", "n", "k", "t_pilot")
SWEEP_KEYS = ("name", "axis", "values", "methods", "outputs", "conventional_users", "moment", "sandwich")

CSV_COLUMNS = ["axis_value", "method", "source", "user_class", "mean_rate", "std_err",
               "sum_rate", "spectral_efficiency"]
FAILURE_COLUMNS = ["axis_value", "method", "error"]
PLOT_COLUMNS = ("mean_rate", "sum_rate", "spectral_efficiency")

CSV_OPTIONS = dict(index=False, float_format="%.10g", na_rep="nan", lineterminator="\n")


@dataclass(frozen=True)
class SweepSpec:
    base: Scenario
    axis: str
    values: Tuple
    methods: Tuple[Method, ...]
    outputs: Tuple[Source, ...] = (Source.MC,)
    conventional_users: str = "all"
    name: str = "sweep"
    moment: str = "lemma"
    sandwich: str = "printed"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ScenarioError(f"axis must be one of {AXES}, got {self.axis!r}")
        if len(self.values) == 0:
            raise ScenarioError("values must not be empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ScenarioError("values must be strictly increasing")
        if self.axis != "p_d_db" and any(int(v) != v for v in self.values):
            raise ScenarioError(f"axis {self.axis} takes integer values")
        if len(self.methods) == 0:
            raise ScenarioError("methods must not be empty")
        if len(self.outputs) == 0:
            raise ScenarioError("outputs must not be empty")
        closed = [o for o in self.outputs if o is not Source.MC]
        if closed and any(m is not Method.SBM for m in self.methods):
            raise ScenarioError("closed-form outputs are only available for SBM")
        if self.conventional_users not in CONVENTIONAL_USERS:
            raise ScenarioError(f"conventional_users must be one of {CONVENTIONAL_USERS}")
        if self.moment not in MOMENT_FORMS:
            raise ScenarioError(f"moment must be one of {MOMENT_FORMS}, got {self.moment!r}")
        if self.sandwich not in SANDWICH_FORMS:
            raise ScenarioError(f"sandwich must be one of {SANDWICH_FORMS}, got {self.sandwich!r}")

    def scenario_at(self, value) -> Scenario:
        if self.axis == "p_d_db":
            return replace(self.base, p_d_db=float(value))
        return replace(self.base, **{self.axis: int(value)})


def parse_sweep(text: str) -> SweepSpec:
    """Parses a sweep file: a scenario file plus the sweep keys."""
    data = read_toml(text)
    base = scenario_from_mapping(data, text, extra_keys=SWEEP_KEYS)

    def line(key):
        return key_line(text, key)

    try:
        methods = tuple(Method(m) for m in data.get("methods", []))
    except ValueError as e:
        raise ScenarioError(f"methods: {e}", line("methods")) from e
    try:
        outputs = tuple(Source(o) for o in data.get("outputs", ["MC"]))
    except ValueError as e:
        raise ScenarioError(f"outputs: {e}", line("outputs")) from e
    values = data.get("values", [])
    if not isinstance(values, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                               for v in values):
        raise ScenarioError("values must be a list of numbers", line("values"))

    try:
        return SweepSpec(
            base=base,
            axis=data.get("axis", ""),
            values=tuple(values),
            methods=methods,
            outputs=outputs,
            conventional_users=data.get("conventional_users", "all"),
            name=str(data.get("name", "sweep")),
            moment=data.get("moment", "lemma"),
            sandwich=data.get("sandwich", "printed"),
        )
    except ScenarioError as e:
        key = next((k for k in SWEEP_KEYS if k in e.message), None)
        raise ScenarioError(e.message, line(key) if key else None) from e


def load_sweep(path: str) -> SweepSpec:
    with open(path, "r", encoding="utf-8") as fh:
        spec = parse_sweep(fh.read())
    logger.info(f"Loaded sweep '{spec.name}' over {spec.axis} ({len(spec.values)} points) from {path}")
    return spec


def _evaluate_point(args) -> Tuple[List[Dict], List[Dict]]:
    """
    Evaluates every method of one sweep point. Failures are logged and
    recorded per method; the remaining methods still run.
    """
    spec, value, trials = args
    scenario = spec.scenario_at(value)
    rows, failures = [], []
    for method in spec.methods:
        try:
            reports = evaluate_scenario(scenario, [method], spec.outputs, trials,
                                        spec.conventional_users, moment=spec.moment, sandwich=spec.sandwich)
        except Exception as e:
            logger.exception(f"Sweep point {spec.axis}={value} failed for {method}")
            failures.append({"axis_value": value, "method": str(method), "error": str(e)})
            continue
        for report in reports:
            for user_class, mean, err, count in (
                    ("C", report.avg_c, report.std_err_c, report.per_user_c.size),
                    ("S", report.avg_s, report.std_err_s, report.per_user_s.size)):
                if count == 0:
                    continue
                rows.append({
                    "axis_value": value,
                    "method": str(report.method),
                    "source": str(report.source),
                    "user_class": user_class,
                    "mean_rate": mean,
                    "std_err": err if err is not None else float("nan"),
                    "sum_rate": report.sum_rate,
                    "spectral_efficiency": report.spectral_efficiency,
                })
    logger.info(f"Sweep point {spec.axis}={value} done ({len(rows)} rows, {len(failures)} failures)")
    return rows, failures


def run_sweep(spec: SweepSpec, out_dir: str, jobs: int = 1, trials: Optional[int] = None) -> str:
    """
    Runs every point of a sweep and writes ``<name>.csv`` (and
    ``<name>_failures.csv`` when points fail) under ``out_dir``.

    Points run in a process pool of at most ``jobs`` workers; rows are sorted
    afterwards so the CSV does not depend on completion order.

    Returns
    -------
    str
        Path of the results CSV.
    """
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(spec, value, trials) for value in spec.values]
    logger.info(f"Running sweep '{spec.name}': {len(tasks)} points, methods={[str(m) for m in spec.methods]}")

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as executor:
            results = list(executor.map(_evaluate_point, tasks))
    else:
        results = [_evaluate_point(task) for task in tasks]

    rows = [row for point_rows, _ in results for row in point_rows]
    failures = [f for _, point_failures in results for f in point_failures]

    df = pd.DataFrame(rows, columns=CSV_COLUMNS)
    df = df.sort_values(["axis_value", "method", "source", "user_class"], kind="mergesort").reset_index(drop=True)
    path = os.path.join(out_dir, f"{spec.name}.csv")
    df.to_csv(path, **CSV_OPTIONS)

    if failures:
        fail_path = os.path.join(out_dir, f"{spec.name}_failures.csv")
        pd.DataFrame(failures, columns=FAILURE_COLUMNS).to_csv(fail_path, **CSV_OPTIONS)
        logger.warning(f"{len(failures)} sweep point(s) failed; see {fail_path}")
    logger.info(f"Sweep results saved to {path}")
    return path


def emit_plotdata(csv_path: str, out_dir: Optional[str] = None, column: str = "mean_rate") -> List[str]:
    """
    Splits a sweep CSV into one whitespace-separated two-column file per
    (method, user_class, source) curve, named ``<method>_<user_class>_<source>.dat``.
    """
    if column not in PLOT_COLUMNS:
        raise ValueError(f"column must be one of {PLOT_COLUMNS}, got {column!r}")
    df = pd.read_csv(csv_path)
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{csv_path} lacks columns {missing}")
    out_dir = out_dir or os.path.dirname(os.path.abspath(csv_path))
    os.makedirs(out_dir, exist_ok=True)

    paths = []
    for (method, user_class, source), curve in df.groupby(["method", "user_class", "source"], sort=True):
        curve = curve.sort_values("axis_value", kind="mergesort")
        path = os.path.join(out_dir, f"{method}_{user_class}_{source}.dat")
        np.savetxt(path, curve[["axis_value", column]].to_numpy(dtype=float), fmt="%.10g")
        paths.append(path)
    logger.info(f"Wrote {len(paths)} plot-data file(s) to {out_dir}")
    return paths
