"""Hazards, full-time and order-only log-likelihoods, explosion screening.

The hazard of dyad (i, j) is log-linear in its statistic vector and
piecewise constant between changepoints (events and context switches).
`loglik_full` evaluates the cached form over unique statistic vectors;
`loglik_naive` recomputes every statistic directly and serves as its
independent oracle.
"""

from __future__ import annotations

import numpy as np

from hrem.events import CovariateSet, EventHistory, RiskSet
from hrem.stats import SeqState, StatisticSpec, UniqueStatTable

__all__ = [
    "hazard",
    "loglik_full",
    "loglik_naive",
    "loglik_order",
    "grad_loglik_full",
    "hessian_loglik_full",
    "explosion_check",
    "ExplosionReport",
]


def hazard(beta: np.ndarray, s: np.ndarray) -> float:
    """exp(beta' s); overflow yields +inf, rejected by downstream callers."""
    beta = np.asarray(beta, dtype=float)
    s = np.asarray(s, dtype=float)
    if beta.shape != s.shape:
        raise ValueError("dimension mismatch: beta %s vs s %s" % (beta.shape, s.shape))
    with np.errstate(over="ignore"):
        return float(np.exp(beta @ s))


def loglik_full(beta: np.ndarray, table: UniqueStatTable) -> float:
    """Full-time log-likelihood via the unique-vector cache.

    sum_r [q_r * beta'U_r - m_r * exp(beta'U_r)].
    """
    beta = np.asarray(beta, dtype=float)
    eta = table.vectors @ beta
    with np.errstate(over="ignore"):
        lam = np.exp(eta)
    if not np.all(np.isfinite(lam)):
        raise FloatingPointError("non-finite hazard in loglik_full")
    return float(table.q @ eta - table.m @ lam)


def grad_loglik_full(beta: np.ndarray, table: UniqueStatTable) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    lam = np.exp(table.vectors @ beta)
    return table.vectors.T @ (table.q - table.m * lam)


def hessian_loglik_full(beta: np.ndarray, table: UniqueStatTable) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    w = table.m * np.exp(table.vectors @ beta)
    return -(table.vectors.T * w) @ table.vectors


def loglik_naive(beta: np.ndarray, history: EventHistory, spec: StatisticSpec,
                 risk: RiskSet, cov: CovariateSet) -> float:
    """Direct evaluation of the full-time likelihood, O(M * P * N^2).

    Recomputes every statistic vector from scratch; exposures integrate
    piecewise across context boundaries, matching the cached form.
    """
    beta = np.asarray(beta, dtype=float)
    state = SeqState(history.n_actors, broadcast=risk.broadcast_actor, cov=cov)
    total = 0.0
    prev_t = 0.0

    def exposure(t0, t1):
        acc = 0.0
        for dur, ctx in cov.context_segments(t0, t1):
            rate = 0.0
            for (i, j) in risk.dyads:
                s = spec.vector(state, cov, i, j, context=ctx)
                rate += hazard(beta, s)
            acc += dur * rate
        return acc

    for (t, i, j) in history.events:
        total -= exposure(prev_t, t)
        s = spec.vector(state, cov, i, j, context=cov.context_at(t))
        total += float(beta @ s)
        state.apply((t, i, j), cov)
        prev_t = t
    total -= exposure(prev_t, history.tau)
    if not np.isfinite(total):
        raise FloatingPointError("non-finite log-likelihood")
    return total


def loglik_order(beta: np.ndarray, history: EventHistory, spec: StatisticSpec,
                 risk: RiskSet, cov: CovariateSet) -> float:
    """Order-only (multinomial/Cox) log-likelihood.

    sum_m [beta's_obs - log sum_R exp(beta's)]; invariant to adding a
    constant to all log-hazards.  The normalizer uses max-subtraction.
    """
    beta = np.asarray(beta, dtype=float)
    state = SeqState(history.n_actors, broadcast=risk.broadcast_actor, cov=cov)
    total = 0.0
    for (t, i, j) in history.events:
        ctx = cov.context_at(t)
        eta = spec.matrix(state, cov, risk, context=ctx) @ beta
        top = eta.max()
        total += eta[risk.index[(i, j)]] - (top + np.log(np.exp(eta - top).sum()))
        state.apply((t, i, j), cov)
    return float(total)


class ExplosionReport:
    """Outcome of forward-simulation screening for process explosion."""

    def __init__(self, exploded: bool, max_total_rate: float, n_events: list):
        self.exploded = exploded
        self.max_total_rate = max_total_rate
        self.n_events = n_events

    def __repr__(self):
        return "ExplosionReport(exploded=%r, max_total_rate=%.3g)" % (
            self.exploded,
            self.max_total_rate,
        )


def explosion_check(beta: np.ndarray, spec: StatisticSpec, risk: RiskSet,
                    cov: CovariateSet, horizon: float, n_sim: int = 10,
                    rng_seed: int = 0, rate_ceiling_factor: float = 1e6,
                    event_cap_factor: float = 100.0) -> ExplosionReport:
    """Simulate forward and flag runaway total rates before the horizon.

    A trajectory counts as exploded when the total rate exceeds
    `rate_ceiling_factor` times its initial value or the event count
    exceeds `event_cap_factor` times the initial-rate expectation.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    from hrem.simulate import simulate_history, SimulationExplosion

    beta = np.asarray(beta, dtype=float)
    n_actors = int(risk.senders.max()) + 1
    state0 = SeqState(n_actors, broadcast=risk.broadcast_actor, cov=cov)
    rate0 = float(np.exp(spec.matrix(state0, cov, risk) @ beta).sum())
    ceiling = rate_ceiling_factor * rate0
    cap = int(np.ceil(event_cap_factor * rate0 * horizon))

    exploded = False
    max_rate = rate0
    counts = []
    ss = np.random.SeedSequence(rng_seed)
    for child in ss.spawn(n_sim):
        rng = np.random.default_rng(child)
        try:
            hist, peak = simulate_history(
                beta, spec, risk, cov, tau=horizon, rng=rng,
                max_events=cap, rate_ceiling=ceiling, return_peak_rate=True,
            )
            counts.append(hist.m)
        except SimulationExplosion as exc:
            exploded = True
            peak = exc.peak_rate
            counts.append(exc.n_events)
        max_rate = max(max_rate, peak)
    return ExplosionReport(exploded=exploded, max_total_rate=max_rate, n_events=counts)
