"""Model selection, predictive evaluation, and adequacy checks.

DIC for comparing specifications, recall@z for held-out prediction,
per-event deviance residuals and multinomial event probabilities, and
the per-dyad "surprise" matrix built from predicted ranks.
"""

from __future__ import annotations

import warnings

import numpy as np

from hrem.events import CovariateSet, EventHistory, RiskSet
from hrem.likelihood import loglik_full
from hrem.stats import SeqState, StatisticSpec

__all__ = [
    "dic",
    "recall_at_z",
    "empirical_baseline",
    "baseline_recall_at_z",
    "deviance_residuals",
    "censoring_deviance",
    "event_probability",
    "event_probabilities",
    "surprise_matrix",
    "mse",
]


def mse(truth, estimate) -> float:
    """Mean squared error (1/P) * sum (estimate - truth)^2."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError("dimension mismatch: %s vs %s" % (truth.shape, estimate.shape))
    return float(np.mean((estimate - truth) ** 2))


def dic(samples, tables) -> dict:
    """Deviance information criterion over kept draws.

    p_D = mean deviance - deviance at the posterior mean of each beta_k;
    DIC = mean deviance + p_D.  Negative p_D (a known pathology) is
    flagged with a warning, not an error.
    """
    if samples.n_draws == 0:
        raise ValueError("no kept draws")
    deviances = np.empty(samples.n_draws)
    for l in range(samples.n_draws):
        deviances[l] = -2.0 * sum(
            loglik_full(samples.betas[l, k], tables[k]) for k in range(len(tables))
        )
    mean_dev = float(deviances.mean())
    if np.all(samples.betas == samples.betas[0]):
        # degenerate posterior: p_D is exactly 0, avoid mean round-off
        return {"dic": float(deviances[0]), "p_d": 0.0, "mean_deviance": float(deviances[0])}
    beta_hat = samples.beta_mean()
    dev_at_mean = -2.0 * sum(
        loglik_full(beta_hat[k], tables[k]) for k in range(len(tables))
    )
    p_d = mean_dev - dev_at_mean
    if p_d < 0:
        warnings.warn("negative p_D (%.3g): DIC may be unreliable here" % p_d,
                      RuntimeWarning, stacklevel=2)
    return {"dic": mean_dev + p_d, "p_d": p_d, "mean_deviance": mean_dev}


def _rank_with_ties(scores: np.ndarray, idx: int, rng) -> int:
    """1-based descending rank of entry idx, ties broken uniformly at random."""
    s = scores[idx]
    higher = int(np.sum(scores > s))
    ties = int(np.sum(scores == s))  # includes the entry itself
    return higher + 1 + int(rng.integers(ties))


def _walk_ranks(score_fn, history: EventHistory, risk: RiskSet, cov: CovariateSet,
                n_train: int, rng):
    """Predicted rank of each observed event with index >= n_train."""
    state = SeqState(history.n_actors, broadcast=risk.broadcast_actor, cov=cov)
    ranks = []
    events = []
    for m, (t, i, j) in enumerate(history.events):
        if m >= n_train:
            scores = score_fn(state, cov.context_at(t))
            ranks.append(_rank_with_ties(scores, risk.index[(i, j)], rng))
            events.append((t, i, j))
        state.apply((t, i, j), cov)
    return np.array(ranks, dtype=int), events


def _model_score_fn(beta, spec, risk, cov):
    beta = np.asarray(beta, dtype=float)

    def score(state, context):
        return spec.matrix(state, cov, risk, context=context) @ beta

    return score


def recall_at_z(params, history: EventHistory, spec: StatisticSpec, risk: RiskSet,
                cov: CovariateSet, z: int, n_train: int = 0, rng=None) -> float:
    """Fraction of scored events whose model rank is within the top z.

    `params` is a single P-vector or an (L, P) array of posterior draws;
    in the latter case per-draw recalls are averaged.  Events before
    `n_train` only warm up the state.
    """
    if z < 1:
        raise ValueError("z must be >= 1")
    if z > len(risk):
        raise ValueError("z exceeds the risk set size")
    if n_train >= history.m:
        raise ValueError("test segment is empty")
    if rng is None:
        rng = np.random.default_rng(0)
    params = np.asarray(params, dtype=float)
    if params.ndim == 2:
        return float(
            np.mean([
                recall_at_z(b, history, spec, risk, cov, z, n_train=n_train, rng=rng)
                for b in params
            ])
        )
    ranks, _ = _walk_ranks(_model_score_fn(params, spec, risk, cov), history, risk,
                           cov, n_train, rng)
    return float(np.mean(ranks <= z))


def empirical_baseline(history: EventHistory, risk: RiskSet,
                       n_train: int | None = None) -> np.ndarray:
    """Training-segment event counts per risk-set dyad.

    Used as a static ranking score: frequent dyads first, unseen dyads
    tied at zero (so effectively last, in random order).
    """
    counts = np.zeros(len(risk))
    limit = history.m if n_train is None else n_train
    for (t, i, j) in history.events[:limit]:
        counts[risk.index[(i, j)]] += 1
    return counts


def baseline_recall_at_z(history: EventHistory, risk: RiskSet, cov: CovariateSet,
                         z: int, n_train: int, rng=None) -> float:
    """Recall@z of the empirical-frequency baseline on the test segment."""
    if z < 1 or z > len(risk):
        raise ValueError("invalid z")
    if n_train >= history.m:
        raise ValueError("test segment is empty")
    if rng is None:
        rng = np.random.default_rng(0)
    counts = empirical_baseline(history, risk, n_train)

    def score(state, context):
        return counts

    ranks, _ = _walk_ranks(score, history, risk, cov, n_train, rng)
    return float(np.mean(ranks <= z))


def deviance_residuals(beta, history: EventHistory, spec: StatisticSpec,
                       risk: RiskSet, cov: CovariateSet) -> np.ndarray:
    """Per-event deviance d_m = -2 [log hazard_obs - integrated exposure].

    The exposure term integrates the total hazard over (t_{m-1}, t_m]
    (piecewise across context switches) so that sum(d_m) plus the
    censoring deviance decomposes -2 * loglik exactly.
    """
    beta = np.asarray(beta, dtype=float)
    state = SeqState(history.n_actors, broadcast=risk.broadcast_actor, cov=cov)
    out = np.empty(history.m)
    prev_t = 0.0
    for m, (t, i, j) in enumerate(history.events):
        expo = 0.0
        for dur, ctx in cov.context_segments(prev_t, t):
            expo += dur * float(np.exp(spec.matrix(state, cov, risk, context=ctx) @ beta).sum())
        log_obs = float(beta @ spec.vector(state, cov, i, j, context=cov.context_at(t)))
        out[m] = -2.0 * (log_obs - expo)
        state.apply((t, i, j), cov)
        prev_t = t
    return out


def censoring_deviance(beta, history: EventHistory, spec: StatisticSpec,
                       risk: RiskSet, cov: CovariateSet) -> float:
    """Deviance contribution of the empty interval (t_M, tau]."""
    beta = np.asarray(beta, dtype=float)
    state = SeqState(history.n_actors, broadcast=risk.broadcast_actor, cov=cov)
    for ev in history.events:
        state.apply(ev, cov)
    t_last = history.events[-1][0] if history.m else 0.0
    expo = 0.0
    for dur, ctx in cov.context_segments(t_last, history.tau):
        expo += dur * float(np.exp(spec.matrix(state, cov, risk, context=ctx) @ beta).sum())
    return 2.0 * expo


def event_probabilities(beta, history: EventHistory, spec: StatisticSpec,
                        risk: RiskSet, cov: CovariateSet) -> np.ndarray:
    """Multinomial probability of each observed event given the history."""
    beta = np.asarray(beta, dtype=float)
    state = SeqState(history.n_actors, broadcast=risk.broadcast_actor, cov=cov)
    out = np.empty(history.m)
    for m, (t, i, j) in enumerate(history.events):
        eta = spec.matrix(state, cov, risk, context=cov.context_at(t)) @ beta
        eta -= eta.max()
        w = np.exp(eta)
        out[m] = w[risk.index[(i, j)]] / w.sum()
        state.apply((t, i, j), cov)
    return out


def event_probability(beta, history: EventHistory, spec: StatisticSpec,
                      risk: RiskSet, cov: CovariateSet, m: int) -> float:
    """Probability of the m-th observed event (1-based) being next."""
    if not 1 <= m <= history.m:
        raise ValueError("event index out of range")
    return float(event_probabilities(beta, history, spec, risk, cov)[m - 1])


def surprise_matrix(beta, history: EventHistory, spec: StatisticSpec, risk: RiskSet,
                    cov: CovariateSet, threshold: int, rng=None) -> dict:
    """Per-dyad surprise: proportion of its events ranked beyond the threshold.

    Returns {(i, j): (q_ij, n_events)} for dyads with at least one
    observed event; dyads with none are simply absent.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    ranks, events = _walk_ranks(_model_score_fn(beta, spec, risk, cov), history,
                                risk, cov, 0, rng)
    totals: dict = {}
    surprised: dict = {}
    for rank, (t, i, j) in zip(ranks, events):
        totals[(i, j)] = totals.get((i, j), 0) + 1
        if rank > threshold:
            surprised[(i, j)] = surprised.get((i, j), 0) + 1
    return {
        d: (surprised.get(d, 0) / n, n)
        for d, n in totals.items()
    }
