"""Closed-form stability thresholds, persistence level and stationary moments.

With ``alpha = 1/(N_max - N)`` the stochastic stability index is

    R0s = alpha c2 N / c1 - alpha^2 sigma^2 N^2 / (2 c1)

and the almost-sure growth rate of ``log n1`` near ``x`` is the log-drift

    f(x) = c2 alpha N - c1 - c2 alpha x - sigma^2 alpha^2 (N - x)^2 / 2.

Regimes follow from comparing ``R0s`` with one and ``sigma^2`` with the two
caps ``c2/(alpha N)`` and ``c2^2/(2 c1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .model_core import Scenario, congestion_attractor, critical_n


class OutOfValidityError(ValueError):
    """Raised when a closed form is requested outside its domain."""


@dataclass(frozen=True)
class ThresholdSet:
    alpha: float
    r0: float
    r0s: float
    n_c: float
    n_s: float
    delta_n_c: float
    n_c_prime_approx: float
    sigma_tilde: float | None
    xi: float | None
    sigma_sq_freeflow_cap: float
    sigma_sq_decay_cap: float


@dataclass(frozen=True)
class StationaryMoments:
    mu: float
    gamma: float
    n1_g: float


class Regime(str, Enum):
    FREE_FLOW_STABLE = "FreeFlowStable"
    CONGESTION_PERSISTENT = "CongestionPersistent"
    NONPHYSICAL_DECAY = "NonphysicalDecay"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class RegimeReport:
    thresholds: ThresholdSet
    moments: StationaryMoments | None
    regime: Regime
    notes: list[str] = field(default_factory=list)


def r0(scenario: Scenario) -> float:
    p = scenario.params
    return scenario.alpha * p.c2 * scenario.n_total / p.c1


def r0s(scenario: Scenario) -> float:
    p = scenario.params
    a, n = scenario.alpha, scenario.n_total
    return r0(scenario) - (a * p.sigma * n) ** 2 / (2.0 * p.c1)


def stochastic_bound(scenario: Scenario) -> float:
    """Vehicle count above which noise alone destabilises free flow."""
    p = scenario.params
    return p.c2 * p.n_max / (p.sigma**2 + p.c2)


def delta_n_c(scenario: Scenario) -> float:
    """Small-noise estimate of how far noise pushes the free-flow bound up."""
    p = scenario.params
    return p.c1 * p.sigma**2 / (2.0 * p.c2 * (p.c1 + p.c2))


def log_drift(scenario: Scenario, x: float) -> float:
    p = scenario.params
    a, n = scenario.alpha, scenario.n_total
    return p.c2 * a * n - p.c1 - p.c2 * a * x - 0.5 * (p.sigma * a * (n - x)) ** 2


def log_drift_argmax(scenario: Scenario) -> float:
    """Maximiser of ``log_drift`` over ``[0, N]``.

    The unconstrained maximiser is ``N - c2/(sigma^2 alpha)``, where the
    log-drift equals ``c2^2/(2 sigma^2) - c1``.
    """
    p = scenario.params
    n = scenario.n_total
    if p.sigma == 0:
        return 0.0
    x_hat = n - p.c2 / (p.sigma**2 * scenario.alpha)
    return min(max(x_hat, 0.0), n)


def xi(scenario: Scenario) -> float:
    """Level crossed infinitely often by a persistent congested path.

    Evaluated as ``N - 2 c1 / (alpha c2 + sqrt(alpha^2 c2^2 - 2 alpha^2
    sigma^2 c1))``, algebraically identical to the textbook root of the
    log-drift but free of cancellation at small ``sigma``.
    """
    p = scenario.params
    if p.sigma == 0:
        raise OutOfValidityError("xi needs sigma > 0; use xi_small_noise_limit")
    if not r0s(scenario) > 1:
        raise OutOfValidityError(f"xi needs R0s > 1, got R0s={r0s(scenario)}")
    a = scenario.alpha
    disc = (a * p.c2) ** 2 - 2.0 * (a * p.sigma) ** 2 * p.c1
    return scenario.n_total - 2.0 * p.c1 / (a * p.c2 + math.sqrt(disc))


def xi_small_noise_limit(scenario: Scenario) -> float:
    p = scenario.params
    n = scenario.n_total
    return n * (1.0 - p.c1 / (scenario.alpha * p.c2 * n))


def xi_sigma_tilde_limit(scenario: Scenario) -> float:
    big_r = r0(scenario)
    if big_r < 1:
        raise OutOfValidityError(f"limit needs R0 >= 1, got {big_r}")
    if big_r <= 2:
        return 0.0
    return scenario.n_total * (big_r - 2.0) / (big_r - 1.0)


def sigma_tilde(scenario: Scenario) -> float:
    """Noise intensity at which ``R0s`` reaches one."""
    p = scenario.params
    a, n = scenario.alpha, scenario.n_total
    excess = a * p.c2 * n - p.c1
    if excess <= 0:
        raise OutOfValidityError("sigma_tilde needs alpha c2 N > c1 (R0 > 1)")
    return math.sqrt(2.0 * excess) / (a * n)


def stationary_moments(scenario: Scenario) -> StationaryMoments:
    p = scenario.params
    a, n, s2 = scenario.alpha, scenario.n_total, p.sigma**2
    stab = r0s(scenario)
    if not stab > 1:
        raise OutOfValidityError(f"stationary moments need R0s > 1, got R0s={stab}")
    excess = a * p.c2 * n - p.c1
    denom = 2.0 * p.c2 * (a * p.c2 - a * a * s2 * n) + a * s2 * excess
    if denom <= 0:
        raise OutOfValidityError(f"mean denominator is non-positive ({denom})")
    mu = 2.0 * p.c2 * (stab - 1.0) * p.c1 / denom
    gamma = mu * excess / (a * p.c2) - mu * mu
    return StationaryMoments(mu=mu, gamma=gamma, n1_g=congestion_attractor(scenario))


def thresholds(scenario: Scenario) -> ThresholdSet:
    p = scenario.params
    a, n = scenario.alpha, scenario.n_total
    stab = r0s(scenario)
    try:
        s_tilde: float | None = sigma_tilde(scenario)
    except OutOfValidityError:
        s_tilde = None
    xi_value: float | None = None
    if stab > 1:
        xi_value = xi(scenario) if p.sigma > 0 else xi_small_noise_limit(scenario)
    dn = delta_n_c(scenario)
    n_c = critical_n(p)
    return ThresholdSet(
        alpha=a,
        r0=r0(scenario),
        r0s=stab,
        n_c=n_c,
        n_s=stochastic_bound(scenario),
        delta_n_c=dn,
        n_c_prime_approx=n_c + dn,
        sigma_tilde=s_tilde,
        xi=xi_value,
        sigma_sq_freeflow_cap=p.c2 / (a * n),
        sigma_sq_decay_cap=p.c2**2 / (2.0 * p.c1),
    )


def classify_regime(scenario: Scenario) -> RegimeReport:
    p = scenario.params
    th = thresholds(scenario)
    s2 = p.sigma**2
    notes: list[str] = []

    free = th.r0s < 1 and s2 < th.sigma_sq_freeflow_cap
    persistent = th.r0s > 1
    decay = s2 > max(th.sigma_sq_freeflow_cap, th.sigma_sq_decay_cap)
    if free:
        notes.append(
            f"R0s={th.r0s:.6g} < 1 and sigma^2={s2:.6g} < c2/(alpha N)="
            f"{th.sigma_sq_freeflow_cap:.6g}: free flow is exponentially stable"
        )
    if persistent:
        notes.append(f"R0s={th.r0s:.6g} > 1: congestion persists around xi={th.xi:.6g}")
    if decay:
        notes.append(
            f"sigma^2={s2:.6g} > max(c2/(alpha N), c2^2/(2 c1))="
            f"{max(th.sigma_sq_freeflow_cap, th.sigma_sq_decay_cap):.6g}: "
            "noise drives n1 to zero (nonphysical free flow)"
        )

    if s2 <= p.c2**2 / p.c1:
        notes.append("N_c < N_s holds: free-flow bound is the deterministic one")
    else:
        notes.append(f"N_c < N_s violated: sigma^2 > c2^2/c1={p.c2**2 / p.c1:.6g}")
    if scenario.n_cut is not None:
        if scenario.n_cut < th.n_s:
            notes.append(f"N_cut={scenario.n_cut:.6g} < N_s={th.n_s:.6g} holds")
        else:
            notes.append(
                f"N_cut={scenario.n_cut:.6g} >= N_s={th.n_s:.6g}: "
                "nonphysical free flow possible below the cut"
            )

    fired = [r for r, hit in (
        (Regime.FREE_FLOW_STABLE, free),
        (Regime.CONGESTION_PERSISTENT, persistent),
        (Regime.NONPHYSICAL_DECAY, decay),
    ) if hit]
    moments = None
    if len(fired) == 1:
        regime = fired[0]
        if regime is Regime.CONGESTION_PERSISTENT:
            moments = stationary_moments(scenario)
    else:
        regime = Regime.INDETERMINATE
        if not fired:
            notes.append("no regime condition holds")
        else:
            notes.append("conflicting regime conditions: " + ", ".join(r.value for r in fired))
    return RegimeReport(thresholds=th, moments=moments, regime=regime, notes=notes)
