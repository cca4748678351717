"""Experiment harness: synthetic data, queries, grid runs, CSV emission.

Grid runs are deterministic: every cell derives its own seed from the
master seed and the cell index, rows appear in grid-enumeration order,
and floats are formatted with a fixed precision, so the emitted CSV is
byte-identical across runs.  The wall_ms column is therefore 0 unless
timing is explicitly requested (which breaks byte-identity); real
timings always go to the run summary.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .distributions import LinearCombo
from .mechanisms import (
    CompoundLaplace,
    Laplace,
    NoiseMechanism,
    Staircase,
    perturb,
    sample_noise,
    staircase_l1,
    staircase_l2,
    staircase_usefulness,
)
from .optimize import SearchSpaceSpec, optimize
from .privacy import PrivacySpec
from .utility import UtilityGoal


class EmptyDatasetError(ValueError):
    pass


class ConfigError(ValueError):
    pass


MECHANISM_NAMES = ("compound", "laplace", "staircase")

CSV_COLUMNS = (
    "epsilon_target",
    "epsilon_achieved",
    "sensitivity",
    "metric",
    "metric_param",
    "mechanism",
    "utility_analytic",
    "utility_empirical",
    "utility_stderr",
    "trials",
    "seed",
    "wall_ms",
    "error",
)


@dataclass(frozen=True)
class QuerySpec:
    """A statistic with a declared sensitivity bound."""

    kind: str = "count"
    window: int = 1
    scale: float = 1.0
    declared_sensitivity: float = 1.0

    def __post_init__(self):
        if self.kind not in ("count", "moving_average"):
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.declared_sensitivity <= 0:
            raise ValueError("declared_sensitivity must be > 0")
        if self.kind == "count" and self.declared_sensitivity != 1.0:
            raise ValueError("count queries have sensitivity exactly 1")
        if self.kind == "moving_average":
            if self.window < 1 or self.scale <= 0:
                raise ValueError("moving_average needs window >= 1 and scale > 0")
            if self.declared_sensitivity < self.scale / self.window - 1e-12:
                raise ValueError(
                    "declared sensitivity below the true bound scale/window"
                )

    def true_value(self, dataset: np.ndarray) -> float:
        data = np.asarray(dataset, float)
        if data.size == 0:
            raise EmptyDatasetError("dataset is empty")
        if self.kind == "count":
            return float(data.size)
        window = data[-self.window:]
        return float(self.scale * np.mean(window))


def run_query(
    dataset, query: QuerySpec, mech: NoiseMechanism, rng: np.random.Generator
) -> float:
    """Answer the query on the dataset and release it through the mechanism."""
    return perturb(mech, query.true_value(dataset), rng)


@dataclass(frozen=True)
class ExperimentGrid:
    epsilons: tuple[float, ...]
    sensitivities: tuple[float, ...]
    metric: str = "usefulness"
    metric_params: tuple[float, ...] = (0.1, 0.4, 0.6, 0.9)
    mechanisms: tuple[str, ...] = MECHANISM_NAMES
    trials: int = 2000
    master_seed: int = 0

    def __post_init__(self):
        if not self.epsilons or not self.sensitivities or not self.mechanisms:
            raise ValueError("grid axes must be non-empty")
        if self.metric not in ("usefulness", "l1", "l2"):
            raise ValueError("grid metrics are usefulness, l1 or l2")
        if self.metric == "usefulness" and not self.metric_params:
            raise ValueError("usefulness grids need at least one gamma")
        unknown = [m for m in self.mechanisms if m not in MECHANISM_NAMES]
        if unknown:
            raise ValueError(f"unknown mechanisms {unknown}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def cells(self):
        params = self.metric_params if self.metric == "usefulness" else (float("nan"),)
        index = 0
        for eps in self.epsilons:
            for dq in self.sensitivities:
                for mp in params:
                    for mech in self.mechanisms:
                        yield index, eps, dq, mp, mech
                        index += 1


@dataclass
class GridRow:
    epsilon_target: float
    epsilon_achieved: float | None
    sensitivity: float
    metric: str
    metric_param: float
    mechanism: str
    utility_analytic: float | None
    utility_empirical: float | None
    utility_stderr: float | None
    trials: int
    seed: int
    wall_ms: int
    error: str = ""
    combo: LinearCombo | None = field(default=None, compare=False)
    draws: int = field(default=0, compare=False)


def _goal_for(metric: str, mp: float) -> UtilityGoal:
    if metric == "usefulness":
        return UtilityGoal("usefulness", gamma=mp)
    return UtilityGoal(metric)


def _empirical(metric: str, mp: float, noise: np.ndarray):
    n = noise.size
    if metric == "usefulness":
        hits = np.abs(noise) <= mp
        p = float(np.mean(hits))
        return p, math.sqrt(max(p * (1.0 - p), 0.0) / n)
    if metric == "l1":
        abs_noise = np.abs(noise)
        return float(np.mean(abs_noise)), float(np.std(abs_noise) / math.sqrt(n))
    sq = noise ** 2
    mean_sq = float(np.mean(sq))
    rmse = math.sqrt(mean_sq)
    se_mean_sq = float(np.std(sq) / math.sqrt(n))
    return rmse, se_mean_sq / (2.0 * rmse) if rmse > 0 else 0.0


def run_grid(
    grid: ExperimentGrid,
    search: SearchSpaceSpec | None = None,
    timing: bool = False,
) -> list[GridRow]:
    """One row per (epsilon, sensitivity, metric-param, mechanism) cell.

    Per-cell failures are recorded in the row's error column and the run
    continues.  Exactly ``grid.trials`` noise draws are consumed per cell
    (tracked in the row's ``draws`` field).
    """
    search = search or SearchSpaceSpec()
    rows: list[GridRow] = []
    for index, eps, dq, mp, mech_name in grid.cells():
        seeds = np.random.SeedSequence([grid.master_seed & (2**63 - 1), index])
        opt_seed_seq, noise_seed_seq = seeds.spawn(2)
        cell_seed = int(opt_seed_seq.generate_state(1)[0])
        t0 = time.perf_counter()
        row = GridRow(
            epsilon_target=eps,
            epsilon_achieved=None,
            sensitivity=dq,
            metric=grid.metric,
            metric_param=mp,
            mechanism=mech_name,
            utility_analytic=None,
            utility_empirical=None,
            utility_stderr=None,
            trials=grid.trials,
            seed=cell_seed,
            wall_ms=0,
        )
        try:
            goal = _goal_for(grid.metric, mp)
            if mech_name == "laplace":
                mech = Laplace(dq / eps)
                row.epsilon_achieved = eps
                row.utility_analytic = _laplace_analytic(grid.metric, eps, dq, mp)
            elif mech_name == "staircase":
                mech = Staircase(eps, dq)
                row.epsilon_achieved = eps
                row.utility_analytic = _staircase_analytic(grid.metric, eps, dq, mp)
            else:
                calibrated = optimize(search, PrivacySpec(eps, dq), goal, seed=cell_seed)
                mech = CompoundLaplace(calibrated.combo)
                row.combo = calibrated.combo
                row.epsilon_achieved = calibrated.achieved_epsilon
                row.utility_analytic = calibrated.predicted_utility
            noise_rng = np.random.default_rng(noise_seed_seq)
            noise = np.asarray(sample_noise(mech, noise_rng, grid.trials))
            row.draws = int(noise.size)
            row.utility_empirical, row.utility_stderr = _empirical(grid.metric, mp, noise)
        except Exception as exc:  # noqa: BLE001 - per-cell isolation is the contract
            row.error = f"{type(exc).__name__}: {exc}"
        if timing:
            row.wall_ms = int(round((time.perf_counter() - t0) * 1000))
        rows.append(row)
    return rows


def _laplace_analytic(metric: str, eps: float, dq: float, mp: float) -> float:
    b = dq / eps
    if metric == "usefulness":
        return 1.0 - math.exp(-mp / b)
    if metric == "l1":
        return b
    return math.sqrt(2.0) * b


def _staircase_analytic(metric: str, eps: float, dq: float, mp: float) -> float:
    if metric == "usefulness":
        return staircase_usefulness(eps, dq, mp)
    if metric == "l1":
        return staircase_l1(eps, dq)
    return staircase_l2(eps, dq)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return format(value, ".12g")
    return str(value)


def rows_to_csv(rows: list[GridRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, col)) for col in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(rows: list[GridRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))


def read_csv_rows(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- synthetic data -------------------------------------------------------


def generate_synthetic(
    kind: str,
    n: int,
    seed: int,
    rate: float = 5.0,
    value: float = 1.0,
    shape: str = "uniform",
) -> np.ndarray:
    """Reproducible synthetic datasets.

    constant     n copies of ``value``
    poisson      n Poisson(rate) counts
    histogram50  50 bin masses (summing to 1) from n draws of the shape
                 distribution ("uniform", "triangular" or "lognormal")
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "constant":
        return np.full(n, float(value))
    if kind == "poisson":
        return rng.poisson(rate, n).astype(float)
    if kind == "histogram50":
        if shape == "uniform":
            draws = rng.random(n)
        elif shape == "triangular":
            draws = rng.triangular(0.0, 0.3, 1.0, n)
        elif shape == "lognormal":
            draws = rng.lognormal(0.0, 0.5, n)
            draws = draws / (draws.max() + 1e-12)
        else:
            raise ValueError(f"unknown histogram shape {shape!r}")
        counts, _ = np.histogram(draws, bins=50, range=(0.0, 1.0))
        return counts / counts.sum()
    raise ValueError(f"unknown synthetic kind {kind!r}")


def read_dataset(path) -> np.ndarray:
    """One numeric column, optional single header line."""
    values = []
    with open(path) as fh:
        for i, raw in enumerate(fh):
            line = raw.strip().split(",")[0]
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                if i == 0:
                    continue  # header
                raise
    if not values:
        raise EmptyDatasetError(f"no numeric data in {path}")
    return np.asarray(values)


# --- config files ---------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def load_config(path) -> tuple[ExperimentGrid, SearchSpaceSpec, QuerySpec | None]:
    """INI-style config: [grid] axes and seeds, [search] optimizer budget,
    optional [query] section.  Keys are documented in the README."""
    import configparser

    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    if "grid" not in parser:
        raise ConfigError("config needs a [grid] section")
    g = parser["grid"]
    try:
        grid = ExperimentGrid(
            epsilons=_floats(g.get("epsilons", "")),
            sensitivities=_floats(g.get("sensitivities", "1")),
            metric=g.get("metric", "usefulness"),
            metric_params=_floats(g.get("metric_params", "0.1 0.4 0.6 0.9")),
            mechanisms=tuple(g.get("mechanisms", "compound laplace staircase").split()),
            trials=g.getint("trials", 2000),
            master_seed=g.getint("seed", 0),
        )
        s = parser["search"] if "search" in parser else {}
        search = SearchSpaceSpec(
            families=tuple(s.get("families", "gamma uniform trunc_gaussian").split()),
            a_max=float(s.get("a_max", 100.0)),
            restarts=int(s.get("restarts", 12)),
            max_evals=int(s.get("max_evals", 300)),
            constraint_tol=float(s.get("constraint_tol", 1e-3)),
            mc_trials=int(s.get("mc_trials", 4000)),
        )
        query = None
        if "query" in parser:
            q = parser["query"]
            query = QuerySpec(
                kind=q.get("kind", "count"),
                window=q.getint("window", 1),
                scale=q.getfloat("scale", 1.0),
                declared_sensitivity=q.getfloat("declared_sensitivity", 1.0),
            )
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return grid, search, query
