"""Ensemble integration of the Ito SDE

    dn1 = n1 (-c1 + c2 alpha (N - n1)) dt + sigma alpha (N - n1) n1 dB.

Every path owns a Philox stream keyed by ``(master_seed, *stream_key)``, so a
path's values depend only on its key and scenario, never on batching or on
the number of worker threads.  Paths are integrated in fixed-size chunks,
vectorised across the chunk; chunks are farmed out to a thread pool.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence, TypeVar

import numpy as np

from .model_core import FixedValue, InitPolicy, Scenario, UniformDraw

T = TypeVar("T")

CHUNK_SIZE = 128


class Scheme(str, Enum):
    EULER_MARUYAMA = "EulerMaruyama"
    MILSTEIN = "Milstein"


@dataclass(frozen=True)
class SimConfig:
    t_end: float = 30.0
    n_steps: int = 30_000
    scheme: Scheme = Scheme.EULER_MARUYAMA
    master_seed: int = 0
    # None means 1e-9 * N for each scenario
    boundary_epsilon: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ValueError(f"t_end must be finite and > 0, got {self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be an integer >= 1, got {self.n_steps}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError(f"master_seed must be an unsigned 64-bit int, got {self.master_seed}")
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.boundary_epsilon is not None and not self.boundary_epsilon > 0:
            raise ValueError(f"boundary_epsilon must be > 0, got {self.boundary_epsilon}")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def epsilon_for(self, n_total: float) -> float:
        eps = 1e-9 * n_total if self.boundary_epsilon is None else self.boundary_epsilon
        if not 0 < eps < n_total / 2:
            raise ValueError(f"boundary_epsilon {eps} outside (0, N/2) for N={n_total}")
        return eps


@dataclass(frozen=True)
class Path:
    times: np.ndarray
    values: np.ndarray
    clamp_count: int
    seed: int
    n_total: float = field(default=float("nan"))
    stream: tuple[int, ...] = ()

    def value_at(self, t: float) -> float:
        """Value at the grid point nearest to ``t``."""
        return float(self.values[nearest_index(self.times, t)])


@dataclass(frozen=True)
class PathJob:
    """One path to integrate: scenario, start policy and stream key."""

    scenario: Scenario
    init: InitPolicy
    stream: tuple[int, ...]


class EnsembleError(RuntimeError):
    def __init__(self, failures: list[tuple[int, str]]):
        self.failures = failures
        listed = "; ".join(f"path {i}: {msg}" for i, msg in failures[:5])
        super().__init__(f"{len(failures)} path(s) failed: {listed}")


def nearest_index(times: np.ndarray, t: float) -> int:
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    return int(min(max(round(t / dt), 0), len(times) - 1))


def stream_seed(master_seed: int, stream: Sequence[int]) -> int:
    """64-bit seed of the stream ``(master_seed, *stream)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in stream))
    return int(ss.generate_state(1, np.uint64)[0])


def stream_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def drift(scenario: Scenario, x):
    p = scenario.params
    c2a = p.c2 * scenario.alpha
    return x * (c2a * (scenario.n_total - x) - p.c1)


def diffusion(scenario: Scenario, x):
    sa = scenario.params.sigma * scenario.alpha
    return sa * (scenario.n_total - x) * x


def _check_finite(scenario: Scenario) -> None:
    p = scenario.params
    vals = (p.c1, p.c2, p.sigma, p.n_max, scenario.n_total, scenario.alpha)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite model parameters")


def _initial_value(init: InitPolicy, n_total: float, eps: float, gen: np.random.Generator) -> float:
    if isinstance(init, FixedValue):
        if not 0 < init.value < n_total:
            raise ValueError(f"n1_0 must lie in (0, N={n_total}), got {init.value}")
        return float(init.value)
    if isinstance(init, UniformDraw):
        hi = n_total if init.hi is None else init.hi
        x0 = float(gen.uniform(init.lo, hi))
        # degenerate ranges (e.g. U(1, N) at N = 1) land on the boundary
        return min(max(x0, eps), n_total - eps)
    raise TypeError(f"unknown init policy {init!r}")


def _integrate_chunk(jobs: Sequence[PathJob], config: SimConfig) -> list[Path]:
    m = len(jobs)
    steps = config.n_steps
    dt = config.dt
    sdt = math.sqrt(dt)
    c1 = np.empty(m)
    c2a = np.empty(m)
    sa = np.empty(m)
    n = np.empty(m)
    lo = np.empty(m)
    x0 = np.empty(m)
    seeds = []
    z = np.empty((steps, m))
    for j, job in enumerate(jobs):
        sc = job.scenario
        _check_finite(sc)
        p = sc.params
        eps = config.epsilon_for(sc.n_total)
        c1[j] = p.c1
        c2a[j] = p.c2 * sc.alpha
        sa[j] = p.sigma * sc.alpha
        n[j] = sc.n_total
        lo[j] = eps
        seed = stream_seed(config.master_seed, job.stream)
        seeds.append(seed)
        gen = stream_generator(seed)
        x0[j] = _initial_value(job.init, sc.n_total, eps, gen)
        z[:, j] = gen.standard_normal(steps)
    hi = n - lo
    milstein = config.scheme is Scheme.MILSTEIN

    out = np.empty((steps + 1, m))
    out[0] = x0
    clamps = np.zeros(m, dtype=np.int64)
    x = x0.copy()
    for k in range(steps):
        zk = z[k]
        rest = n - x
        g = sa * rest * x
        x_new = x + x * (c2a * rest - c1) * dt + g * sdt * zk
        if milstein:
            x_new += 0.5 * g * sa * (n - 2.0 * x) * (zk * zk - 1.0) * dt
        bad = (x_new < lo) | (x_new > hi)
        if bad.any():
            clamps += bad
            x_new = np.minimum(np.maximum(x_new, lo), hi)
        out[k + 1] = x_new
        x = x_new

    times = config.times()
    values = np.ascontiguousarray(out.T)
    paths = []
    for j in range(m):
        v = values[j]
        v.flags.writeable = False
        paths.append(Path(times, v, int(clamps[j]), seeds[j], float(n[j]), tuple(jobs[j].stream)))
    return paths


def map_paths(
    jobs: Sequence[PathJob],
    config: SimConfig,
    fn: Callable[[Path], T],
    workers: int = 1,
) -> list[T]:
    """Integrate ``jobs`` and return ``fn(path)`` for each, in job order.

    Only one chunk of full paths is alive per worker at a time, so large
    ensembles can be reduced without holding every trajectory in memory.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    chunks = [jobs[i : i + CHUNK_SIZE] for i in range(0, len(jobs), CHUNK_SIZE)]

    def run(chunk: Sequence[PathJob]) -> list[T]:
        return [fn(p) for p in _integrate_chunk(chunk, config)]

    if workers == 1 or len(chunks) <= 1:
        results = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    return [r for chunk in results for r in chunk]


def simulate_path(
    scenario: Scenario, config: SimConfig, n1_0: float, path_index: int = 0
) -> Path:
    """Integrate one path from ``n1_0`` on stream ``(master_seed, path_index)``."""
    if not (math.isfinite(n1_0) and 0 < n1_0 < scenario.n_total):
        raise ValueError(f"n1_0 must lie in (0, N={scenario.n_total}), got {n1_0}")
    path = _integrate_chunk([PathJob(scenario, FixedValue(n1_0), (path_index,))], config)[0]
    _raise_on_nonfinite([path])
    return path


def simulate_ensemble(
    scenario: Scenario,
    config: SimConfig,
    n_paths: int,
    init_policy: InitPolicy | None = None,
    workers: int = 1,
    stream: tuple[int, ...] = (),
) -> list[Path]:
    """Integrate ``n_paths`` paths; path ``i`` uses stream ``stream + (i,)``."""
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    init = scenario.init_policy if init_policy is None else init_policy
    jobs = [PathJob(scenario, init, stream + (i,)) for i in range(n_paths)]
    paths = map_paths(jobs, config, lambda p: p, workers)
    _raise_on_nonfinite(paths)
    return paths


def _raise_on_nonfinite(paths: Sequence[Path]) -> None:
    failures = [
        (i, "non-finite value") for i, p in enumerate(paths) if not np.all(np.isfinite(p.values))
    ]
    if failures:
        raise EnsembleError(failures)
