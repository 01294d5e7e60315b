"""Deterministic two-speed-state traffic model.

Occupation of the slow state ``n1`` evolves by the logistic-type ODE

    dn1/dt = n1 * (-c1 + c2 * alpha * (N - n1)),   alpha = 1 / (N_max - N)

and the flow of a road section is the speed-weighted vehicle count over its
length.  Vehicle counts are real numbers throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


def _finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """The structural constants of the model.

    ``sigma`` multiplies the white noise added to the slowing rate ``c2``.
    """

    c1: float = 1.0
    c2: float = 3.0
    v1: float = 10.0
    v2: float = 60.0
    sigma: float = 1.0
    n_max: float = 200.0
    road_length: float = 1.0

    def __post_init__(self) -> None:
        for name in ("c1", "c2", "v1", "v2", "sigma", "n_max", "road_length"):
            _finite(name, getattr(self, name))
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError(f"c1 and c2 must be > 0, got c1={self.c1}, c2={self.c2}")
        if self.v1 < 0:
            raise ValueError(f"v1 must be >= 0, got {self.v1}")
        if not self.v1 < self.v2:
            raise ValueError(f"v1 < v2 required, got v1={self.v1}, v2={self.v2}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.n_max <= 0:
            raise ValueError(f"n_max must be > 0, got {self.n_max}")
        if self.road_length <= 0:
            raise ValueError(f"road_length must be > 0, got {self.road_length}")


@dataclass(frozen=True)
class FixedValue:
    """Start every path at ``value``."""

    value: float


@dataclass(frozen=True)
class UniformDraw:
    """Draw the start uniformly from ``[lo, hi)``; ``hi=None`` means ``N``."""

    lo: float = 1.0
    hi: float | None = None


InitPolicy = FixedValue | UniformDraw


@dataclass(frozen=True)
class Scenario:
    """A model instance at fixed total vehicle count ``n_total``."""

    params: ModelParams
    n_total: float
    n_cut: float | None = None
    init_policy: InitPolicy = field(default_factory=UniformDraw)

    def __post_init__(self) -> None:
        _finite("n_total", self.n_total)
        if not 0 < self.n_total < self.params.n_max:
            raise ValueError(
                f"0 < n_total < n_max required, got n_total={self.n_total}, "
                f"n_max={self.params.n_max}"
            )
        if self.n_cut is not None:
            _finite("n_cut", self.n_cut)
            if not self.n_total <= self.n_cut < self.params.n_max:
                raise ValueError(
                    f"n_total <= n_cut < n_max required, got n_cut={self.n_cut}"
                )
        policy = self.init_policy
        if isinstance(policy, FixedValue):
            if not 0 < policy.value < self.n_total:
                raise ValueError(
                    f"initial value must lie in (0, N={self.n_total}), got {policy.value}"
                )
        elif isinstance(policy, UniformDraw):
            hi = self.n_total if policy.hi is None else policy.hi
            if policy.lo < 0 or hi > self.n_total or hi < policy.lo:
                raise ValueError(
                    f"uniform draw range [{policy.lo}, {hi}] must lie in [0, N={self.n_total}]"
                )
        else:
            raise TypeError(f"unknown init policy {policy!r}")

    @property
    def alpha(self) -> float:
        return 1.0 / (self.params.n_max - self.n_total)

    def with_sigma(self, sigma: float) -> "Scenario":
        return replace(self, params=replace(self.params, sigma=sigma))


class SteadyKind(str, Enum):
    FREE_FLOW = "FreeFlow"
    CONGESTION = "Congestion"


@dataclass(frozen=True)
class DeterministicSteadyState:
    n1_star: float
    kind: SteadyKind


def critical_n(params: ModelParams) -> float:
    """Vehicle count separating free flow from congestion without noise."""
    return params.c1 * params.n_max / (params.c1 + params.c2)


def congestion_attractor(scenario: Scenario) -> float:
    """``N - (c1/c2)(N_max - N)``; negative (unphysical) below ``critical_n``."""
    p = scenario.params
    return scenario.n_total - p.c1 / p.c2 * (p.n_max - scenario.n_total)


def deterministic_steady_state(scenario: Scenario) -> DeterministicSteadyState:
    # N == N_c is classified as free flow.
    if scenario.n_total <= critical_n(scenario.params):
        return DeterministicSteadyState(0.0, SteadyKind.FREE_FLOW)
    return DeterministicSteadyState(congestion_attractor(scenario), SteadyKind.CONGESTION)


def logistic_coefficients(scenario: Scenario) -> tuple[float, float]:
    """Return ``(a, b)`` with ``dn1/dt = n1 (a - b n1)``."""
    p = scenario.params
    b = p.c2 * scenario.alpha
    return b * scenario.n_total - p.c1, b


def deterministic_trajectory(scenario: Scenario, n1_0: float, t):
    """Closed-form solution of the reduced ODE started at ``n1_0``.

    Accepts scalar or array ``t``.  The form below stays finite for large
    ``t`` in both the growing (``a > 0``) and decaying (``a < 0``) cases.
    """
    n = scenario.n_total
    if not 0 < n1_0 < n:
        raise ValueError(f"n1_0 must lie in (0, N={n}), got {n1_0}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    a, b = logistic_coefficients(scenario)
    if a == 0.0:
        out = n1_0 / (1.0 + b * n1_0 * t_arr)
    elif a > 0:
        decay = np.exp(-a * t_arr)
        out = a * n1_0 / (a * decay - b * n1_0 * np.expm1(-a * t_arr))
    else:
        grow = np.exp(a * t_arr)
        out = a * n1_0 * grow / (a + b * n1_0 * np.expm1(a * t_arr))
    return float(out) if out.ndim == 0 else out


def linearization_coefficient(scenario: Scenario, n1: float) -> float:
    """Growth rate of a small deviation from ``n1`` under the reduced ODE."""
    p = scenario.params
    ca = p.c2 * scenario.alpha
    return -p.c1 + ca * scenario.n_total - 2.0 * ca * n1


def flow(params: ModelParams, n1, n_total: float):
    """Vehicle flow ``(n1 v1 + (N - n1) v2) / L``; vectorised over ``n1``."""
    n1_arr = np.asarray(n1, dtype=float)
    if np.any(n1_arr < 0) or np.any(n1_arr > n_total):
        raise ValueError(f"n1 must lie in [0, N={n_total}]")
    q = (n1_arr * params.v1 + (n_total - n1_arr) * params.v2) / params.road_length
    return float(q) if q.ndim == 0 else q


def default_n_grid(n_cut: float = 150) -> list[float]:
    return [float(n) for n in range(1, int(n_cut) + 1)]


def deterministic_diagram(
    params: ModelParams, n_grid: Iterable[float] | None = None
) -> list[tuple[float, float]]:
    """Piecewise-linear flow/concentration curve of the noise-free model.

    Returns ``(k, q)`` pairs.  Free branch ``q = k v2`` up to ``N_c``, then a
    straight congested branch through the peak ``(k_c, k_c v2)``.
    """
    grid: Sequence[float] = default_n_grid() if n_grid is None else list(n_grid)
    n_c = critical_n(params)
    k_c = n_c / params.road_length
    q_c = k_c * params.v2
    slope = params.v1 - params.c1 / params.c2 * (params.v2 - params.v1)
    out = []
    for n in grid:
        if not 0 < n < params.n_max:
            raise ValueError(f"grid value {n} outside (0, n_max={params.n_max})")
        k = n / params.road_length
        q = k * params.v2 if n <= n_c else q_c + slope * (k - k_c)
        out.append((k, q))
    return out
