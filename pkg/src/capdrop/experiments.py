"""Numerical studies built on the SDE engine.

Every study is a pure function of its inputs and ``config.master_seed``.  Each
path draws from its own stream; random sampling times come from a separate
stream keyed the same way, so adding paths or workers never moves a value.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from . import analysis
from .model_core import (
    ModelParams,
    Scenario,
    UniformDraw,
    critical_n,
    default_n_grid,
    deterministic_diagram,
    flow,
)
from .sde_engine import Path, PathJob, SimConfig, map_paths, stream_generator, stream_seed

# stream namespaces
TAG_CONVERGENCE = 1
TAG_CI = 2
TAG_MOMENTS = 3
TAG_CROSSINGS = 4
TAG_DIAGRAM = 5
TAG_SAMPLER = 100
TAG_TIMES = 200

DEFAULT_LEVELS = (0.50, 0.75, 0.85, 0.90, 0.95, 0.99, 0.995, 0.999)
FREE_FLOW_SHARE = 0.85


# --------------------------------------------------------------------------
# parameter sampling


@dataclass(frozen=True)
class ParamSampler:
    """Random ``(N, c1, c2, sigma)`` combos restricted to one regime.

    ``condition`` is ``"free_flow"``, ``"persistent"``, ``"nonphysical"`` or
    ``None``.  Draws within ``margin`` of the regime boundary are rejected.
    """

    n_range: tuple[int, int] = (50, 150)
    c1_range: tuple[float, float] = (1.0, 6.0)
    c2_range: tuple[float, float] = (1.0, 6.0)
    sigma_range: tuple[float, float] = (0.2, 1.2)
    n_max: float = 200.0
    v1: float = 10.0
    v2: float = 60.0
    road_length: float = 1.0
    condition: str | None = None
    margin: float = 0.1
    max_attempts: int = 1_000_000

    def accepts(self, sc: Scenario) -> bool:
        if self.condition is None:
            return True
        th = analysis.thresholds(sc)
        s2 = sc.params.sigma**2
        m = self.margin
        if self.condition == "free_flow":
            return th.r0s < 1 - m and s2 < (1 - m) * th.sigma_sq_freeflow_cap
        if self.condition == "persistent":
            return th.r0s > 1 + m
        if self.condition == "nonphysical":
            return s2 > (1 + m) * max(th.sigma_sq_freeflow_cap, th.sigma_sq_decay_cap)
        raise ValueError(f"unknown condition {self.condition!r}")

    def sample(self, n_combos: int, master_seed: int) -> list[Scenario]:
        gen = stream_generator(stream_seed(master_seed, (TAG_SAMPLER,)))
        out: list[Scenario] = []
        for _ in range(self.max_attempts):
            if len(out) == n_combos:
                return out
            n = int(gen.integers(self.n_range[0], self.n_range[1] + 1))
            params = ModelParams(
                c1=float(gen.uniform(*self.c1_range)),
                c2=float(gen.uniform(*self.c2_range)),
                v1=self.v1,
                v2=self.v2,
                sigma=float(gen.uniform(*self.sigma_range)),
                n_max=self.n_max,
                road_length=self.road_length,
            )
            sc = Scenario(params, float(n))
            if self.accepts(sc):
                out.append(sc)
        if len(out) == n_combos:
            return out
        raise RuntimeError(
            f"only {len(out)} of {n_combos} combos satisfied {self.condition!r} "
            f"after {self.max_attempts} draws"
        )


def _check_window(config: SimConfig, window: tuple[float, float]) -> None:
    lo, hi = window
    if not 0 <= lo <= hi <= config.t_end + 1e-12:
        raise ValueError(f"time window {window} not inside [0, t_end={config.t_end}]")


def _sample_index(times: np.ndarray, window: tuple[float, float], stream: tuple[int, ...], seed: int) -> int:
    """Uniformly random grid index whose time lies in ``window``."""
    dt = times[1] - times[0]
    i_lo = int(math.ceil(window[0] / dt - 1e-9))
    i_hi = min(int(math.floor(window[1] / dt + 1e-9)), len(times) - 1)
    if i_hi < i_lo:
        raise ValueError(f"no grid point inside {window}")
    gen = stream_generator(stream_seed(seed, (TAG_TIMES,) + stream))
    return int(gen.integers(i_lo, i_hi + 1))


# --------------------------------------------------------------------------
# convergence to free flow


@dataclass(frozen=True)
class ConvergenceResult:
    t_s: float | None
    converged: bool
    epsilon: float = 0.1
    truncated: bool = False


def detect_convergence(path: Path, epsilon: float = 0.1) -> ConvergenceResult:
    """Earliest ``t_s`` from which ``n1(t) < exp(-epsilon t)`` holds through ``3 t_s``.

    If ``3 t_s`` runs past the end of the path the inequality must hold to the
    end, and the result is flagged ``truncated``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    t = path.times
    ok = path.values < np.exp(-epsilon * t)
    n = len(t)
    first_bad_from = np.minimum.accumulate(np.where(ok, n, np.arange(n))[::-1])[::-1]
    horizon = np.searchsorted(t, 3.0 * t, side="right") - 1
    good = ok & (first_bad_from > horizon)
    if not good.any():
        return ConvergenceResult(None, False, epsilon)
    i = int(np.argmax(good))
    return ConvergenceResult(float(t[i]), True, epsilon, truncated=bool(3.0 * t[i] > t[-1]))


@dataclass(frozen=True)
class ConvergenceRow:
    combo_id: int
    n_total: float
    sigma: float
    c1: float
    c2: float
    r0: float
    r0s: float
    decay_rate: float
    mean_t_s: float
    n_converged: int
    n_failed: int


def convergence_times(
    scenarios: Sequence[Scenario],
    sims_per_combo: int,
    config: SimConfig,
    epsilon: float = 0.1,
    workers: int = 1,
) -> list[ConvergenceRow]:
    jobs = [
        PathJob(sc, UniformDraw(1.0), (TAG_CONVERGENCE, c, j))
        for c, sc in enumerate(scenarios)
        for j in range(sims_per_combo)
    ]
    results = map_paths(jobs, config, lambda p: detect_convergence(p, epsilon), workers)
    rows = []
    for c, sc in enumerate(scenarios):
        chunk = results[c * sims_per_combo : (c + 1) * sims_per_combo]
        ts = [r.t_s for r in chunk if r.converged]
        p = sc.params
        stab = analysis.r0s(sc)
        rows.append(
            ConvergenceRow(
                combo_id=c,
                n_total=sc.n_total,
                sigma=p.sigma,
                c1=p.c1,
                c2=p.c2,
                r0=analysis.r0(sc),
                r0s=stab,
                decay_rate=(stab - 1.0) * p.c1,
                mean_t_s=float(np.mean(ts)) if ts else float("nan"),
                n_converged=len(ts),
                n_failed=len(chunk) - len(ts),
            )
        )
    return rows


def convergence_time_map(
    param_sampler: ParamSampler,
    n_combos: int,
    sims_per_combo: int = 100,
    config: SimConfig | None = None,
    epsilon: float = 0.1,
    workers: int = 1,
) -> list[ConvergenceRow]:
    """Mean convergence time per sampled free-flow combo (non-converged runs excluded)."""
    config = config or SimConfig()
    scenarios = param_sampler.sample(n_combos, config.master_seed)
    return convergence_times(scenarios, sims_per_combo, config, epsilon, workers)


def empirical_cdf(values: Iterable[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.sort(np.asarray([v for v in values if math.isfinite(v)], dtype=float))
    return x, np.arange(1, len(x) + 1) / max(len(x), 1)


# --------------------------------------------------------------------------
# confidence intervals


@dataclass(frozen=True)
class CiRow:
    level: float
    point_estimate: float
    lower: float
    upper: float
    amplitude: float


@dataclass(frozen=True)
class CiTable:
    percentile_levels: tuple[float, ...]
    rows: list[CiRow]
    sample_size: int
    time_window: tuple[float, float]
    estimator: str = "mean"
    degenerate: bool = False
    samples: tuple[float, ...] = ()


def t_intervals(
    samples: Sequence[float], levels: Sequence[float] = DEFAULT_LEVELS, estimator: str = "mean"
) -> list[CiRow]:
    """Two-sided Student-t intervals, half-width ``t_{(1+p)/2, n-1} s / sqrt(n)``.

    ``estimator="mean"`` centres every interval on the sample mean;
    ``"quantile"`` centres the level-``p`` interval on the empirical
    ``p``-quantile instead.
    """
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two samples")
    if np.ptp(x) == 0:
        # summation rounding would otherwise leave a spurious nonzero spread
        mean, se = float(x[0]), 0.0
    else:
        mean = float(np.mean(x))
        se = float(np.std(x, ddof=1)) / math.sqrt(n)
    rows = []
    for p in levels:
        if not 0 < p < 1:
            raise ValueError(f"level {p} outside (0, 1)")
        if estimator == "mean":
            centre = mean
        elif estimator == "quantile":
            centre = float(np.quantile(x, p))
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        half = float(stats.t.ppf((1.0 + p) / 2.0, n - 1)) * se
        rows.append(CiRow(p, centre, centre - half, centre + half, 2.0 * half))
    return rows




def _sampled_value(window: tuple[float, float], seed: int) -> Callable[[Path], tuple[float, float]]:
    """Reducer returning ``(time, n1)`` at a random grid time in ``window``."""

    def reduce(p: Path) -> tuple[float, float]:
        i = _sample_index(p.times, window, p.stream, seed)
        return float(p.times[i]), float(p.values[i])

    return reduce


def ci_table(
    scenario: Scenario,
    config: SimConfig,
    time_window: tuple[float, float],
    sample_size: int = 100,
    levels: Sequence[float] = DEFAULT_LEVELS,
    estimator: str = "mean",
    workers: int = 1,
) -> CiTable:
    """Intervals for ``n1`` sampled once per run at a random grid time in ``time_window``."""
    if sample_size < 2:
        raise ValueError("sample_size must be >= 2")
    _check_window(config, time_window)
    jobs = [PathJob(scenario, UniformDraw(1.0), (TAG_CI, i)) for i in range(sample_size)]
    values = [v for _, v in map_paths(jobs, config, _sampled_value(time_window, config.master_seed), workers)]
    degenerate = bool(np.ptp(values) == 0)
    if degenerate:
        warnings.warn("zero-variance sample: every interval has zero amplitude", stacklevel=2)
    return CiTable(
        percentile_levels=tuple(levels),
        rows=t_intervals(values, levels, estimator),
        sample_size=sample_size,
        time_window=(float(time_window[0]), float(time_window[1])),
        estimator=estimator,
        degenerate=degenerate,
        samples=tuple(values),
    )


# --------------------------------------------------------------------------
# stationary moments


@dataclass(frozen=True)
class MomentRatioRow:
    combo_id: int
    n_total: float
    c1: float
    c2: float
    sigma: float
    r0s: float
    mu_theory: float
    mu_sim: float
    ratio_mean: float
    gamma_theory: float
    gamma_sim: float
    ratio_var: float


def moment_ratios(
    scenarios: Sequence[Scenario],
    sims_per_combo: int = 100,
    t_window: tuple[float, float] = (29.0, 29.5),
    config: SimConfig | None = None,
    workers: int = 1,
) -> list[MomentRatioRow]:
    """Simulated over closed-form stationary mean and variance, per scenario.

    Scenarios whose moments are out of validity are skipped; their
    ``combo_id`` is simply absent from the output.
    """
    config = config or SimConfig(t_end=t_window[1], n_steps=int(round(t_window[1] * 1000)))
    _check_window(config, t_window)
    valid = []
    for c, sc in enumerate(scenarios):
        try:
            valid.append((c, sc, analysis.stationary_moments(sc)))
        except analysis.OutOfValidityError:
            continue
    jobs = [
        PathJob(sc, UniformDraw(1.0), (TAG_MOMENTS, c, j))
        for c, sc, _ in valid
        for j in range(sims_per_combo)
    ]
    sampled = map_paths(jobs, config, _sampled_value(t_window, config.master_seed), workers)
    rows = []
    for k, (c, sc, mom) in enumerate(valid):
        x = np.array([v for _, v in sampled[k * sims_per_combo : (k + 1) * sims_per_combo]])
        mu_sim = float(np.mean(x))
        gamma_sim = float(np.var(x, ddof=1)) if len(x) > 1 else float("nan")
        p = sc.params
        rows.append(
            MomentRatioRow(
                combo_id=c,
                n_total=sc.n_total,
                c1=p.c1,
                c2=p.c2,
                sigma=p.sigma,
                r0s=analysis.r0s(sc),
                mu_theory=mom.mu,
                mu_sim=mu_sim,
                ratio_mean=mu_sim / mom.mu,
                gamma_theory=mom.gamma,
                gamma_sim=gamma_sim,
                ratio_var=gamma_sim / mom.gamma if mom.gamma > 0 else float("nan"),
            )
        )
    return rows


def moment_ratio_study(
    param_sampler: ParamSampler,
    n_combos: int,
    sims_per_combo: int = 100,
    t_window: tuple[float, float] = (29.0, 29.5),
    config: SimConfig | None = None,
    workers: int = 1,
) -> list[MomentRatioRow]:
    if param_sampler.condition != "persistent":
        param_sampler = replace(param_sampler, condition="persistent")
    seed = 0 if config is None else config.master_seed
    scenarios = param_sampler.sample(n_combos, seed)
    return moment_ratios(scenarios, sims_per_combo, t_window, config, workers)


def summarize(values: Iterable[float]) -> dict[str, float]:
    """Mean, std, min, quartiles and max of the finite entries."""
    x = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    if len(x) == 0:
        return {k: float("nan") for k in ("mean", "std", "min", "p25", "p50", "p75", "max")}
    return {
        "mean": float(np.mean(x)),
        "std": float(np.std(x, ddof=1)) if len(x) > 1 else 0.0,
        "min": float(np.min(x)),
        "p25": float(np.quantile(x, 0.25)),
        "p50": float(np.quantile(x, 0.50)),
        "p75": float(np.quantile(x, 0.75)),
        "max": float(np.max(x)),
    }


# --------------------------------------------------------------------------
# level crossings


def count_crossings(path: Path | np.ndarray, level: float) -> np.ndarray:
    """Cumulative number of crossings of ``level`` up to each grid point.

    A crossing is a change of side between consecutive samples; a sample
    exactly on the level keeps the previous side, so a hit followed by a move
    to the other side counts once and a touch-and-return counts zero.
    """
    values = path.values if isinstance(path, Path) else np.asarray(path, dtype=float)
    side = np.sign(values - level)
    idx = np.where(side != 0, np.arange(len(side)), 0)
    held = side[np.maximum.accumulate(idx)]
    flips = (held[1:] != held[:-1]) & (held[1:] != 0) & (held[:-1] != 0)
    out = np.zeros(len(values), dtype=np.int64)
    out[1:] = np.cumsum(flips)
    return out


@dataclass(frozen=True)
class CrossingStudy:
    level: float
    times: np.ndarray
    counts: np.ndarray  # (n_paths, n_times)

    def count_at(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t - 1e-12))
        return self.counts[:, min(i, len(self.times) - 1)]

    def median_ratio(self, t_short: float, t_long: float) -> float:
        return float(np.median(self.count_at(t_long)) / np.median(self.count_at(t_short)))


def crossing_study(
    scenario: Scenario,
    config: SimConfig,
    n_paths: int = 20,
    level: float | None = None,
    workers: int = 1,
) -> CrossingStudy:
    level = analysis.xi(scenario) if level is None else level
    if not 0 < level < scenario.n_total:
        raise ValueError(f"level must lie in (0, N={scenario.n_total})")
    jobs = [PathJob(scenario, UniformDraw(1.0), (TAG_CROSSINGS, i)) for i in range(n_paths)]
    counts = map_paths(jobs, config, lambda p: count_crossings(p, level), workers)
    return CrossingStudy(level, config.times(), np.vstack(counts))


# --------------------------------------------------------------------------
# fundamental diagram


@dataclass(frozen=True)
class DiagramPoint:
    n_total: float
    k: float
    q_samples: tuple[float, ...]
    sample_times: tuple[float, ...]
    n1_samples: tuple[float, ...]
    q_mean: float
    q_var: float
    q_det: float
    is_free_flow: tuple[bool, ...]
    free_flow_fraction: float

    @property
    def speed_samples(self) -> tuple[float, ...]:
        """Average speed ``q / k`` of each sample."""
        return tuple(q / self.k for q in self.q_samples)

    @property
    def mean_speed(self) -> float:
        return self.q_mean / self.k


def _free_flow_flags(q: np.ndarray, k: float, v2: float) -> np.ndarray:
    return q >= FREE_FLOW_SHARE * k * v2


def fundamental_diagram_scan(
    params: ModelParams,
    n_grid: Sequence[float] | None = None,
    sims_per_n: int = 20,
    t_s_window: tuple[float, float] = (25.0, 27.0),
    config: SimConfig | None = None,
    workers: int = 1,
    n_cut: float | None = None,
    stream: tuple[int, ...] = (),
) -> list[DiagramPoint]:
    """Flow samples over a grid of vehicle counts, one random read-out per path."""
    grid = default_n_grid() if n_grid is None else [float(n) for n in n_grid]
    n_cut = max(grid) if n_cut is None else n_cut
    if config is None:
        config = SimConfig(t_end=t_s_window[1], n_steps=int(round(t_s_window[1] * 1000)))
    _check_window(config, t_s_window)
    if t_s_window[0] <= 0:
        raise ValueError("sampling window must start after t = 0")
    if any(not 0 < n <= n_cut for n in grid) or not n_cut < params.n_max:
        raise ValueError(f"grid must lie in (0, min(N_cut={n_cut}, N_max={params.n_max}))")
    n_s = params.c2 * params.n_max / (params.sigma**2 + params.c2)
    if not n_cut < n_s:
        warnings.warn(
            f"N_cut={n_cut:g} >= N_s={n_s:g}: nonphysical free flow may appear below the cut",
            stacklevel=2,
        )

    jobs = [
        PathJob(Scenario(params, n, n_cut=n_cut), UniformDraw(1.0), (TAG_DIAGRAM,) + stream + (g, j))
        for g, n in enumerate(grid)
        for j in range(sims_per_n)
    ]
    sampled = map_paths(jobs, config, _sampled_value(t_s_window, config.master_seed), workers)
    det = deterministic_diagram(params, grid)
    points = []
    for g, n in enumerate(grid):
        block = sampled[g * sims_per_n : (g + 1) * sims_per_n]
        times = np.array([t for t, _ in block])
        n1 = np.array([v for _, v in block])
        q = np.asarray(flow(params, n1, n), dtype=float)
        k = n / params.road_length
        flags = _free_flow_flags(q, k, params.v2)
        points.append(
            DiagramPoint(
                n_total=n,
                k=k,
                q_samples=tuple(q.tolist()),
                sample_times=tuple(times.tolist()),
                n1_samples=tuple(n1.tolist()),
                q_mean=float(np.mean(q)),
                q_var=float(np.var(q, ddof=1)) if len(q) > 1 else 0.0,
                q_det=det[g][1],
                is_free_flow=tuple(bool(f) for f in flags),
                free_flow_fraction=float(np.mean(flags)),
            )
        )
    return points


def capacity_drop(points: Sequence[DiagramPoint], n_c: float, neighborhood: float = 5.0) -> float:
    """Flow lost when the prolonged free-flow branch breaks down.

    The prolonged branch is the contiguous run of grid points above ``n_c``
    where most samples are free-flow classified.  The drop is the largest
    free-flow flow on that run minus the mean of the congested samples in the
    ``neighborhood`` just past its end.  Returns 0 when either side is empty.
    """
    ordered = sorted((pt for pt in points if pt.n_total > n_c), key=lambda pt: pt.n_total)
    stretch = []
    for pt in ordered:
        if pt.free_flow_fraction < 0.5:
            break
        stretch.append(pt)
    if not stretch:
        return 0.0
    n_end = stretch[-1].n_total
    best = max(q for pt in stretch for q, ff in zip(pt.q_samples, pt.is_free_flow) if ff)
    congested = [
        q
        for pt in ordered
        if n_end < pt.n_total <= n_end + neighborhood
        for q, ff in zip(pt.q_samples, pt.is_free_flow)
        if not ff
    ]
    if not congested:
        return 0.0
    return float(best - np.mean(congested))


@dataclass(frozen=True)
class GridCell:
    c1: float
    c2: float
    sigma: float
    points: list[DiagramPoint]
    capacity_drop: float
    sigcond1_ok: bool
    sigcond2_ok: bool


def parameter_grid_scan(
    c1_values: Sequence[float],
    sigma_values: Sequence[float],
    n_c: float = 50.0,
    n_max: float = 200.0,
    n_cut: float = 150.0,
    v1: float = 10.0,
    v2: float = 60.0,
    road_length: float = 1.0,
    sims_per_n: int = 20,
    n_grid: Sequence[float] | None = None,
    t_s_window: tuple[float, float] = (25.0, 27.0),
    config: SimConfig | None = None,
    workers: int = 1,
    neighborhood: float = 5.0,
) -> list[GridCell]:
    """One diagram scan per ``(c1, sigma)`` with ``c2`` chosen to hold ``N_c`` fixed."""
    if not 0 < n_c < n_max:
        raise ValueError("0 < n_c < n_max required")
    grid = default_n_grid(n_cut) if n_grid is None else list(n_grid)
    cells = []
    for a, c1 in enumerate(c1_values):
        c2 = c1 * (n_max - n_c) / n_c
        for b, sigma in enumerate(sigma_values):
            params = ModelParams(c1, c2, v1, v2, sigma, n_max, road_length)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                points = fundamental_diagram_scan(
                    params, grid, sims_per_n, t_s_window, config, workers, n_cut, stream=(a, b)
                )
            n_s = c2 * n_max / (sigma**2 + c2)
            cells.append(
                GridCell(
                    c1=c1,
                    c2=c2,
                    sigma=sigma,
                    points=points,
                    capacity_drop=capacity_drop(points, critical_n(params), neighborhood),
                    sigcond1_ok=sigma**2 <= c2**2 / c1,
                    sigcond2_ok=n_cut < n_s,
                )
            )
    return cells


# --------------------------------------------------------------------------
# sensitivity sweeps


def sweep(values: Sequence[float], run: Callable[[float], object]) -> dict[float, object]:
    """Evaluate ``run`` at each value; results keyed by value in input order."""
    return {v: run(v) for v in values}


def time_sensitivity(
    params: ModelParams,
    times: Sequence[float] = (5, 10, 15, 20, 25, 30),
    sims_per_n: int = 20,
    n_grid: Sequence[float] | None = None,
    dt: float = 1e-3,
    master_seed: int = 0,
    workers: int = 1,
) -> dict[float, list[DiagramPoint]]:
    """Diagram scans read out at a fixed time instead of a random window."""

    def run(t: float) -> list[DiagramPoint]:
        cfg = SimConfig(t_end=t, n_steps=int(round(t / dt)), master_seed=master_seed)
        return fundamental_diagram_scan(params, n_grid, sims_per_n, (t, t), cfg, workers)

    return sweep(times, run)


def sigma_sensitivity(
    params: ModelParams,
    sigmas: Sequence[float] = (0.5, 1.0, 1.2),
    sims_per_n: int = 20,
    n_grid: Sequence[float] | None = None,
    t_s_window: tuple[float, float] = (25.0, 27.0),
    config: SimConfig | None = None,
    workers: int = 1,
) -> dict[float, list[DiagramPoint]]:
    def run(sigma: float) -> list[DiagramPoint]:
        return fundamental_diagram_scan(
            replace(params, sigma=sigma), n_grid, sims_per_n, t_s_window, config, workers
        )

    return sweep(sigmas, run)
