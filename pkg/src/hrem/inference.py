"""Posterior computation for the hierarchical model.

The default sampler is a collapsed Gibbs scheme: each beta_{k,p} is
updated by univariate slice sampling under a marginal in which the
upper-level variance is integrated out, then sigma^2 and mu get their
closed-form conditional draws.  A MAP routine with mode-pathology
warnings is also provided; parallel tempering lives in
:mod:`hrem.tempering`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from hrem.stats import UniqueStatTable
from hrem.likelihood import grad_loglik_full, hessian_loglik_full, loglik_full

__all__ = [
    "PopulationParams",
    "Hyperparams",
    "PosteriorSamples",
    "gibbs_sigma",
    "gibbs_mu",
    "collapsed_prior_logpdf",
    "marginal_logpost_beta",
    "slice_sample",
    "CollapsedGibbs",
    "run_collapsed_sampler",
    "map_estimate",
    "effective_sample_size",
    "split_rhat",
]


@dataclass
class PopulationParams:
    """Upper-level location/scale (and optional t-family dof) per effect."""

    mu: np.ndarray
    sigma2: np.ndarray
    nu: np.ndarray | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        if np.any(self.sigma2 <= 0):
            raise ValueError("sigma2 must be positive elementwise")
        if self.nu is not None:
            self.nu = np.asarray(self.nu, dtype=float)
            if np.any(self.nu <= 0):
                raise ValueError("nu must be positive")


@dataclass(frozen=True)
class Hyperparams:
    """Priors: mu_p ~ N(0, mu_prior_sd^2), sigma_p^2 ~ Inv-Gamma(alpha, beta)."""

    mu_prior_sd: float = 2.0
    alpha_sigma: float = 5.0
    beta_sigma: float = 1.0
    t_rate: float | None = None

    def __post_init__(self):
        for name in ("mu_prior_sd", "alpha_sigma", "beta_sigma"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)
        if self.t_rate is not None and self.t_rate <= 0:
            raise ValueError("t_rate must be positive")


def gibbs_sigma(betas_p: np.ndarray, mu_p: float, hyper: Hyperparams, rng) -> float:
    """Draw sigma_p^2 | betas, mu from its Inv-Gamma conditional."""
    betas_p = np.asarray(betas_p, dtype=float)
    k = betas_p.size
    if k < 1:
        raise ValueError("need at least one sequence")
    shape = hyper.alpha_sigma + k / 2.0
    rate = hyper.beta_sigma + 0.5 * float(np.sum((betas_p - mu_p) ** 2))
    return rate / rng.gamma(shape)


def gibbs_mu(betas_p: np.ndarray, sigma2_p: float, rng, mode: str = "paper",
             hyper: Hyperparams | None = None) -> float:
    """Draw mu_p | betas, sigma^2.

    mode "paper" uses Normal(mean(betas), sigma^2/sqrt(K)); mode
    "conjugate" is the standard update combining the N(0, mu_prior_sd^2)
    prior with variance sigma^2/K.
    """
    betas_p = np.asarray(betas_p, dtype=float)
    k = betas_p.size
    if k < 1:
        raise ValueError("need at least one sequence")
    if mode == "paper":
        var = sigma2_p / math.sqrt(k)
        return float(betas_p.mean() + math.sqrt(var) * rng.standard_normal())
    if mode == "conjugate":
        if hyper is None:
            hyper = Hyperparams()
        prec = k / sigma2_p + 1.0 / hyper.mu_prior_sd**2
        mean = (betas_p.sum() / sigma2_p) / prec
        return float(mean + rng.standard_normal() / math.sqrt(prec))
    raise ValueError("unknown mu update mode %r" % mode)


def collapsed_prior_logpdf(beta_kp, mu_p: float, hyper: Hyperparams):
    """Normalized log density of beta_kp | mu_p with sigma^2 integrated out.

    log [ (1/sqrt(2 pi)) * beta^alpha / Gamma(alpha)
          * Gamma(alpha + 1/2) / ((beta_kp - mu_p)^2/2 + beta)^(alpha+1/2) ]
    """
    a, b = hyper.alpha_sigma, hyper.beta_sigma
    const = -0.5 * math.log(2 * math.pi) + a * math.log(b) - gammaln(a) + gammaln(a + 0.5)
    dev2 = (np.asarray(beta_kp, dtype=float) - mu_p) ** 2
    return const - (a + 0.5) * np.log(dev2 / 2.0 + b)


def marginal_logpost_beta(beta_kp: float, mu_p: float, hyper: Hyperparams,
                          loglik_partial, sq_others: float = 0.0,
                          n_others: int = 0) -> float:
    """Log posterior of one beta_{k,p} with sigma_p^2 integrated out.

    With `sq_others` = sum of squared deviations of the other sequences
    sharing sigma_p^2 (and `n_others` their count), the prior factor is
    the exact collapsed conditional; the defaults give the single-sequence
    closed form.
    """
    a, b = hyper.alpha_sigma, hyper.beta_sigma
    dev2 = (beta_kp - mu_p) ** 2
    prior = -(a + (n_others + 1) / 2.0) * math.log(b + 0.5 * (sq_others + dev2))
    return float(loglik_partial(beta_kp)) + prior


def slice_sample(x0: float, logf, width: float, rng, max_stepout: int = 50,
                 return_counts: bool = False):
    """One univariate slice-sampling update (stepping-out and shrinkage)."""
    logf0 = logf(x0)
    if not np.isfinite(logf0):
        raise FloatingPointError("slice sampler started at non-finite target")
    logy = logf0 + math.log(rng.random())
    u = rng.random()
    left = x0 - u * width
    right = left + width
    n_out = 0
    while logf(left) > logy and n_out < max_stepout:
        left -= width
        n_out += 1
    while logf(right) > logy and n_out < 2 * max_stepout:
        right += width
        n_out += 1
    n_shrink = 0
    while True:
        x1 = left + rng.random() * (right - left)
        if logf(x1) > logy:
            break
        if x1 > x0:
            right = x1
        else:
            left = x1
        n_shrink += 1
        if n_shrink > 1000:
            raise RuntimeError("slice sampler failed to find acceptable point")
    if return_counts:
        return x1, n_out, n_shrink
    return x1


# ---------------------------------------------------------------------------
# Collapsed Gibbs sampler


@dataclass
class PosteriorSamples:
    """Kept MCMC draws of all parameters plus the log-posterior trace."""

    betas: np.ndarray  # (L, K, P)
    mu: np.ndarray  # (L, P)
    sigma2: np.ndarray  # (L, P)
    logpost: np.ndarray  # (L,)
    n_burnin: int
    n_keep: int
    thin: int = 1
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.betas.shape[0]

    @property
    def k_sequences(self) -> int:
        return self.betas.shape[1]

    @property
    def n_effects(self) -> int:
        return self.betas.shape[2]

    def beta_mean(self) -> np.ndarray:
        return self.betas.mean(axis=0)

    def mu_mean(self) -> np.ndarray:
        return self.mu.mean(axis=0)

    def beta_interval(self, level: float = 0.95):
        lo = (1 - level) / 2
        return (
            np.quantile(self.betas, lo, axis=0),
            np.quantile(self.betas, 1 - lo, axis=0),
        )

    def compute_diagnostics(self):
        """Per-scalar effective sample size and split-chain R-hat."""
        ess_mu = np.array([effective_sample_size(self.mu[:, p]) for p in range(self.n_effects)])
        rhat_mu = np.array([split_rhat(self.mu[:, p]) for p in range(self.n_effects)])
        ess_b = np.array(
            [
                [effective_sample_size(self.betas[:, k, p]) for p in range(self.n_effects)]
                for k in range(self.k_sequences)
            ]
        )
        rhat_b = np.array(
            [
                [split_rhat(self.betas[:, k, p]) for p in range(self.n_effects)]
                for k in range(self.k_sequences)
            ]
        )
        self.diagnostics = {
            "ess_mu": ess_mu,
            "rhat_mu": rhat_mu,
            "ess_beta": ess_b,
            "rhat_beta": rhat_b,
            "max_rhat": float(max(rhat_mu.max(), rhat_b.max())),
            "min_ess": float(min(ess_mu.min(), ess_b.min())),
        }
        return self.diagnostics


def effective_sample_size(x: np.ndarray) -> float:
    """ESS via the initial positive sequence of autocorrelations."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    x = x - x.mean()
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f))[:n].real / n
    rho = acov / acov[0]
    # Geyer: sum consecutive pairs while positive
    s = 0.0
    for t in range(1, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        s += pair
    return float(min(n, n / (1.0 + 2.0 * s)))


def split_rhat(x: np.ndarray) -> float:
    """Potential scale reduction from the two halves of a single chain."""
    x = np.asarray(x, dtype=float)
    n = x.size // 2
    if n < 2:
        return float("nan")
    halves = np.stack([x[:n], x[-n:]])
    w = halves.var(axis=1, ddof=1).mean()
    b = n * halves.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


class CollapsedGibbs:
    """Stepable collapsed Gibbs sampler over K sequences.

    Holding the sampler as an object lets calibration tests interleave
    sweeps with data re-simulation (successive-conditional simulation).
    """

    def __init__(self, tables, hyper: Hyperparams, rng, mu_update: str = "paper",
                 prior_only: bool = False, init=None, width: float = 1.0):
        if not tables:
            raise ValueError("need at least one sequence table")
        self.tables = list(tables)
        self.hyper = hyper
        self.rng = rng
        self.mu_update = mu_update
        self.prior_only = prior_only
        self.k = len(self.tables)
        self.p = self.tables[0].vectors.shape[1]
        if init is None:
            self.betas = np.zeros((self.k, self.p))
            self.mu = np.zeros(self.p)
            prior_mean = hyper.beta_sigma / (hyper.alpha_sigma - 1)
            self.sigma2 = np.full(self.p, prior_mean)
        else:
            self.betas, self.mu, self.sigma2 = (np.array(v, dtype=float) for v in init)
        self.widths = np.full((self.k, self.p), float(width))
        self.adapt = True
        self._etas = [t.vectors @ self.betas[k] for k, t in enumerate(self.tables)]

    def set_tables(self, tables):
        self.tables = list(tables)
        self._etas = [t.vectors @ self.betas[k] for k, t in enumerate(self.tables)]

    def sweep(self):
        """One full iteration: all beta_{k,p}, then sigma^2, then mu."""
        rng = self.rng
        hyper = self.hyper
        for p in range(self.p):
            sq_total = float(np.sum((self.betas[:, p] - self.mu[p]) ** 2))
            for k in range(self.k):
                table = self.tables[k]
                u_p = table.vectors[:, p]
                cur = self.betas[k, p]
                base = self._etas[k] - cur * u_p
                q_lin = float(table.q @ u_p)
                m = table.m
                sq_others = sq_total - (cur - self.mu[p]) ** 2
                a = hyper.alpha_sigma
                b = hyper.beta_sigma
                mu_p = self.mu[p]
                if self.prior_only:

                    def target(x):
                        return -(a + self.k / 2.0) * math.log(
                            b + 0.5 * (sq_others + (x - mu_p) ** 2)
                        )

                else:

                    def target(x):
                        with np.errstate(over="ignore"):
                            lam = np.exp(base + x * u_p)
                        expo = float(m @ lam)
                        if not np.isfinite(expo):
                            return -math.inf
                        return (
                            q_lin * x
                            - expo
                            - (a + self.k / 2.0)
                            * math.log(b + 0.5 * (sq_others + (x - mu_p) ** 2))
                        )

                if not np.isfinite(target(cur)):
                    raise FloatingPointError(
                        "non-finite log-posterior at sequence %d, effect %d" % (k, p)
                    )
                new, n_out, n_shrink = slice_sample(
                    cur, target, self.widths[k, p], rng, return_counts=True
                )
                if self.adapt:
                    # steer toward ~0.5 expected shrinkage steps
                    if n_shrink > 2:
                        self.widths[k, p] *= 0.5
                    elif n_shrink == 0 and n_out > 1:
                        self.widths[k, p] *= 2.0
                self.betas[k, p] = new
                self._etas[k] = base + new * u_p
                sq_total = sq_others + (new - self.mu[p]) ** 2
        for p in range(self.p):
            self.sigma2[p] = gibbs_sigma(self.betas[:, p], self.mu[p], hyper, rng)
            self.mu[p] = gibbs_mu(
                self.betas[:, p], self.sigma2[p], rng, mode=self.mu_update, hyper=hyper
            )

    def log_posterior(self) -> float:
        """Joint log posterior at the current state (up to a constant)."""
        return joint_log_posterior(
            self.betas, self.mu, self.sigma2, self.tables, self.hyper,
            prior_only=self.prior_only,
        )


def joint_log_posterior(betas, mu, sigma2, tables, hyper: Hyperparams,
                        prior_only: bool = False) -> float:
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    lp = 0.0
    if not prior_only:
        for k, table in enumerate(tables):
            lp += loglik_full(betas[k], table)
    dev2 = (betas - mu) ** 2
    lp += float(np.sum(-0.5 * np.log(2 * math.pi * sigma2) - dev2 / (2 * sigma2)))
    lp += float(np.sum(-0.5 * (mu / hyper.mu_prior_sd) ** 2))
    a, b = hyper.alpha_sigma, hyper.beta_sigma
    lp += float(np.sum(-(a + 1) * np.log(sigma2) - b / sigma2))
    return lp


def run_collapsed_sampler(tables, hyper: Hyperparams | None = None,
                          n_burnin: int = 500, n_keep: int = 500, thin: int = 1,
                          seed: int | None = None, mu_update: str = "paper",
                          prior_only: bool = False, init=None,
                          progress: bool = False) -> PosteriorSamples:
    """Run the collapsed Gibbs sampler and collect kept draws.

    Slice widths adapt during burn-in only and are frozen afterwards so
    the kept draws target the exact posterior.
    """
    if n_keep <= 0:
        raise ValueError("n_keep must be positive")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    if hyper is None:
        hyper = Hyperparams()
    rng = np.random.default_rng(seed)
    sampler = CollapsedGibbs(
        tables, hyper, rng, mu_update=mu_update, prior_only=prior_only, init=init
    )
    for _ in range(n_burnin):
        sampler.sweep()
    sampler.adapt = False
    kept_b, kept_mu, kept_s2, kept_lp = [], [], [], []
    for it in range(n_keep):
        sampler.sweep()
        if it % thin == 0:
            lp = sampler.log_posterior()
            if not np.isfinite(lp):
                raise FloatingPointError("non-finite log-posterior in kept draw")
            kept_b.append(sampler.betas.copy())
            kept_mu.append(sampler.mu.copy())
            kept_s2.append(sampler.sigma2.copy())
            kept_lp.append(lp)
    samples = PosteriorSamples(
        betas=np.array(kept_b),
        mu=np.array(kept_mu),
        sigma2=np.array(kept_s2),
        logpost=np.array(kept_lp),
        n_burnin=n_burnin,
        n_keep=n_keep,
        thin=thin,
    )
    samples.compute_diagnostics()
    return samples


# ---------------------------------------------------------------------------
# MAP estimation


def _newton_beta(table: UniqueStatTable, mu, sigma2, init=None, max_iters: int = 100,
                 tol: float = 1e-10):
    """Maximize loglik_full(beta) + log N(beta | mu, sigma2) by Newton steps.

    The objective is strictly concave (log-linear Poisson likelihood plus
    Gaussian penalty), so undamped Newton with halving is safe.
    """
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    p = table.vectors.shape[1]
    beta = np.zeros(p) if init is None else np.array(init, dtype=float)

    def objective(b):
        return loglik_full(b, table) - 0.5 * float(np.sum((b - mu) ** 2 / sigma2))

    obj = objective(beta)
    for _ in range(max_iters):
        g = grad_loglik_full(beta, table) - (beta - mu) / sigma2
        h = hessian_loglik_full(beta, table) - np.diag(1.0 / sigma2)
        step = np.linalg.solve(h, g)
        cand = beta - step
        new = objective(cand)
        n_halved = 0
        while not np.isfinite(new) or new < obj:
            step *= 0.5
            cand = beta - step
            new = objective(cand)
            n_halved += 1
            if n_halved > 60:
                raise RuntimeError("line search failed; objective not improving")
        beta = cand
        if new - obj < tol:
            obj = new
            break
        obj = new
    return beta, obj


def penalized_mle(table: UniqueStatTable, prior_sd: float = 10.0, init=None):
    """Single-sequence fit with a weak N(0, prior_sd^2) ridge for identifiability."""
    p = table.vectors.shape[1]
    beta, _ = _newton_beta(table, np.zeros(p), np.full(p, prior_sd**2), init=init)
    return beta


def map_estimate(tables, hyper: Hyperparams | None = None, max_iters: int = 200,
                 tol: float = 1e-8, sigma_floor: float = 1e-6,
                 mu_update: str = "conjugate"):
    """Block-coordinate ascent on the joint log posterior.

    Returns (betas, mu, sigma2, warnings).  Effects whose fitted
    upper-level variance collapses to the floor are reported: that is the
    signature of the degenerate asymptotic modes that make MAP unreliable
    for weakly informed effects.
    """
    if hyper is None:
        hyper = Hyperparams()
    k = len(tables)
    if k < 1:
        raise ValueError("need at least one sequence")
    p = tables[0].vectors.shape[1]
    betas = np.zeros((k, p))
    mu = np.zeros(p)
    sigma2 = np.full(p, hyper.beta_sigma / (hyper.alpha_sigma - 1))

    lp_prev = joint_log_posterior(betas, mu, sigma2, tables, hyper)
    improvement = math.inf
    warns: list = []
    for _ in range(max_iters):
        if improvement <= tol:
            break
        for kk in range(k):
            betas[kk], _ = _newton_beta(tables[kk], mu, sigma2, init=betas[kk])
        # closed-form block maximizers
        prec = k / sigma2 + 1.0 / hyper.mu_prior_sd**2
        mu = (betas.sum(axis=0) / sigma2) / prec
        ss = np.sum((betas - mu) ** 2, axis=0)
        sigma2 = (hyper.beta_sigma + 0.5 * ss) / (hyper.alpha_sigma + k / 2.0 + 1.0)
        low = sigma2 < sigma_floor
        if np.any(low):
            sigma2 = np.where(low, sigma_floor, sigma2)
        lp = joint_log_posterior(betas, mu, sigma2, tables, hyper)
        if lp < lp_prev - 1e-6:
            raise RuntimeError("log posterior decreased during MAP ascent")
        improvement = lp - lp_prev
        lp_prev = lp

    for pp in np.flatnonzero(sigma2 <= sigma_floor):
        msg = (
            "upper-level variance for effect %d collapsed to the floor; "
            "the posterior mode is degenerate for this effect" % pp
        )
        warns.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return betas, mu, sigma2, warns
