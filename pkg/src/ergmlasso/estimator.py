"""Stochastic-gradient maximum likelihood and its L1-penalized variant.

Both fits share one loop.  At iteration t the gradient of the log-likelihood
is estimated as Delta_t = s(y_obs) - mean of M sampled statistic vectors, and
the parameter moves by eta_t = eta0 / sqrt(t + 1) along it.  With a penalty,
penalized coordinates follow the truncated subgradient rule: an update that
would cross zero stops at exactly zero, and a coordinate sitting at zero only
leaves when |Delta_t,j| exceeds lambda.

By default the loop runs in a reparametrisation that decorrelates every
penalized statistic from the edge count (s_j - beta_j s_edges) and scales each
coordinate by the inverse variance of its decorrelated statistic.  Neither
transformation moves the penalized coordinates or the fixed points of the
iteration; they only equalise step sizes across coordinates.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import DegeneracyError, NonConvergenceError, UsageError
from .network import AttributeTable, Network
from .sampler import ChainPool, SamplerConfig
from .statistics import ModelSpec, compute_stats

log = logging.getLogger(__name__)

MomentFn = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]


@dataclass
class SgdConfig:
    """Settings for one fit.

    ``eta0=None`` picks the base rate automatically: 0.5 with the
    preconditioner, otherwise 0.25 over the largest sampled-statistic SD at
    the starting point.
    """

    eta0: float | None = None
    max_iters: int = 2000
    m_per_iter: int = 100
    window: int = 25
    tol: float = 0.01
    seed: int = 0
    bound: float = 50.0
    precondition: bool = True
    pilot_m: int = 200
    pilot_thin: int | None = None
    refresh: int = 50
    max_step: float = 1.0
    snap: float = 1e-8
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.eta0 is not None and not self.eta0 > 0:
            raise UsageError("eta0 must be positive")
        if self.window < 1:
            raise UsageError("window must be at least 1")
        if not self.tol > 0:
            raise UsageError("tol must be positive")
        if self.max_iters < 1 or self.m_per_iter < 1:
            raise UsageError("max_iters and m_per_iter must be positive")
        if self.pilot_m < 2:
            raise UsageError("pilot_m must be at least 2")
        if self.refresh < 0:
            raise UsageError("refresh must be non-negative (0 disables it)")
        if not self.max_step > 0:
            raise UsageError("max_step must be positive")

    def sampler_config(self) -> SamplerConfig:
        s = self.sampler
        return SamplerConfig(burn_in=s.burn_in, thin=s.thin, m=self.m_per_iter, seed=self.seed,
                             init=s.init, warm_burn_in=s.warm_burn_in, n_chains=s.n_chains,
                             workers=s.workers)


@dataclass
class FitTrace:
    eta: list[float] = field(default_factory=list)
    theta: list[np.ndarray] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    step_norm: list[float] = field(default_factory=list)
    acceptance: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.eta)

    def append(self, eta, theta, grad_norm, step_norm, acceptance):
        self.eta.append(float(eta))
        self.theta.append(np.array(theta))
        self.grad_norm.append(float(grad_norm))
        self.step_norm.append(float(step_norm))
        self.acceptance.append(float(acceptance))

    def write_csv(self, path, labels) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "eta", *labels, "delta_inf"])
            for t, (eta, th, g) in enumerate(zip(self.eta, self.theta, self.grad_norm)):
                w.writerow([t, repr(eta), *(repr(float(x)) for x in th), repr(g)])


@dataclass
class FitResult:
    theta: np.ndarray
    trace: FitTrace
    converged: bool
    spec: ModelSpec
    lam: float = 0.0
    covariance: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def theta_raw(self) -> np.ndarray:
        return self.theta / self.spec.scale_array

    def __iter__(self):
        yield self.theta
        yield self.trace

    def require_converged(self) -> "FitResult":
        if not self.converged:
            raise NonConvergenceError(
                f"no convergence within {self.iterations} iterations", trace=self.trace)
        return self


class GradientSource(Protocol):
    def mean(self, theta: np.ndarray, m: int) -> np.ndarray: ...

    def covariance(self, theta: np.ndarray, m: int) -> np.ndarray: ...

    @property
    def acceptance_rate(self) -> float: ...


class McmcSource:
    """Moments of scaled statistics from warm chains.

    Means use the per-iteration thinning; covariances, which steer the step
    sizes, use a longer ``pilot_thin`` so that autocorrelated draws do not
    understate the variance.
    """

    def __init__(self, pool: ChainPool, pilot_thin: int | None = None):
        self.pool = pool
        self.pilot_thin = pilot_thin or max(pool.n_dyads, 1)

    def mean(self, theta, m):
        draws = self.pool.draw(theta, m=m)
        edges = draws[:, 0]
        if edges.size >= 10 and (edges.max() == 0 or edges.min() == self.pool.n_dyads):
            state = "empty" if edges.max() == 0 else "complete"
            raise DegeneracyError(
                f"the sampler collapsed onto the {state} graph at theta={np.asarray(theta).tolist()}; "
                "the model is near-degenerate there")
        return draws.mean(axis=0)

    def covariance(self, theta, m):
        draws = self.pool.draw(theta, m=m, thin=self.pilot_thin)
        return np.atleast_2d(np.cov(draws, rowvar=False, ddof=1))

    @property
    def acceptance_rate(self) -> float:
        return self.pool.acceptance_rate


class ExactSource:
    """Exact moments from a callable ``theta -> (mean, cov)``, e.g. an oracle."""

    def __init__(self, fn: MomentFn):
        self.fn = fn

    def mean(self, theta, m):
        return self.fn(theta)[0]

    def covariance(self, theta, m):
        return self.fn(theta)[1]

    @property
    def acceptance_rate(self) -> float:
        return float("nan")


def start_theta(spec: ModelSpec, observed_scaled: np.ndarray, n_dyads: int) -> np.ndarray:
    """Edges at the logit of the observed density, everything else 0."""
    theta = np.zeros(len(spec))
    dens = observed_scaled[0] / n_dyads
    dens = min(max(dens, 0.5 / n_dyads), 1 - 0.5 / n_dyads)
    theta[0] = math.log(dens / (1 - dens))
    return theta


def _edges_decorrelation(cov: np.ndarray, penalized: np.ndarray) -> np.ndarray:
    """beta_j = Cov(s_j, s_edges) / Var(s_edges) for penalized j, 0 otherwise."""
    beta = np.zeros(cov.shape[0])
    if cov[0, 0] > 0:
        beta[penalized] = cov[penalized, 0] / cov[0, 0]
    return beta


def _gains(cov: np.ndarray, beta: np.ndarray) -> np.ndarray:
    # variance of s_j - beta_j s_0, floored so a near-collinear term cannot explode
    var = np.diag(cov).copy()
    resid = var - 2 * beta * cov[:, 0] + beta**2 * cov[0, 0]
    resid[0] = var[0]
    resid = np.maximum(resid, 0.01 * var)
    resid[resid <= 0] = 1.0
    return 1.0 / resid


def _lasso_step(u: np.ndarray, grad: np.ndarray, rate: np.ndarray,
                lam: np.ndarray) -> np.ndarray:
    """Truncated subgradient update; ``lam[j] = 0`` leaves coordinate j plain."""
    new = u + rate * grad
    for j in np.flatnonzero(lam > 0):
        cur, g = u[j], grad[j]
        if cur == 0.0:
            new[j] = 0.0 if abs(g) <= lam[j] else rate[j] * math.copysign(abs(g) - lam[j], g)
        else:
            cand = cur + rate[j] * (g - lam[j] * math.copysign(1.0, cur))
            new[j] = 0.0 if cand * cur <= 0 else cand
    return new


def _tail_estimate(history: list[np.ndarray], penalized: np.ndarray, snap: float) -> np.ndarray:
    tail = np.array(history)
    est = tail.mean(axis=0)
    zero_share = (tail == 0.0).mean(axis=0)
    kill = penalized & ((zero_share >= 0.5) | (np.abs(est) < snap))
    est[kill] = 0.0
    return est


def _sgd(obs: np.ndarray, spec: ModelSpec, lam: float, theta0: np.ndarray, cfg: SgdConfig,
         source: GradientSource, weights: np.ndarray | None = None,
         cov0: np.ndarray | None = None) -> FitResult:
    p = len(spec)
    penalized = spec.penalized_mask.copy()
    pen = np.where(penalized, 1.0, 0.0) * (1.0 if weights is None else np.asarray(weights, float))
    if lam < 0 or not math.isfinite(lam):
        raise UsageError(f"penalty must be a finite non-negative number, got {lam}")

    theta = np.array(theta0, dtype=float)
    if cov0 is None:
        cov0 = source.covariance(theta, cfg.pilot_m)
    if cfg.precondition:
        beta = _edges_decorrelation(cov0, penalized)
        gains = _gains(cov0, beta)
        eta0 = 0.5 if cfg.eta0 is None else cfg.eta0
    else:
        beta = np.zeros(p)
        gains = np.ones(p)
        sd = float(np.sqrt(np.max(np.diag(cov0))))
        eta0 = (0.25 / sd if sd > 0 else 0.25) if cfg.eta0 is None else cfg.eta0

    # reparametrised iterate: u_0 = theta_0 + sum beta_j theta_j, u_j = theta_j
    u = theta.copy()
    u[0] = theta[0] + beta @ theta
    cov = cov0
    trace = FitTrace()
    history: list[np.ndarray] = [theta]
    converged = False
    w = cfg.window
    lam_j = lam * pen
    for t in range(cfg.max_iters):
        if cfg.precondition and cfg.refresh and t > 0 and t % cfg.refresh == 0:
            cov = source.covariance(theta, cfg.pilot_m)
            beta = _edges_decorrelation(cov, penalized)
            gains = _gains(cov, beta)
            u = theta.copy()
            u[0] = theta[0] + beta @ theta
        delta = obs - source.mean(theta, cfg.m_per_iter)
        g = delta - beta * delta[0]
        g[0] = delta[0]
        eta = eta0 / math.sqrt(t + 1)
        rate = eta * gains
        # trust region: no coordinate moves more than max_step in one iteration
        biggest = float(np.max(np.abs(rate * g)))
        if biggest > cfg.max_step:
            rate *= cfg.max_step / biggest
        new_u = _lasso_step(u, g, rate, lam_j)
        new_theta = new_u.copy()
        new_theta[0] = new_u[0] - beta @ new_u
        step = float(np.max(np.abs(new_theta - theta)))
        u, theta = new_u, new_theta
        trace.append(eta, theta, np.max(np.abs(delta)), step, source.acceptance_rate)
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > cfg.bound:
            raise DegeneracyError(
                f"iterates left the region |theta| <= {cfg.bound} at iteration {t} "
                f"(theta={theta.tolist()}); the model looks near-degenerate")
        history.append(theta)
        if len(history) > w + 1:
            history.pop(0)
        # window average of the step vectors theta^(s+1) - theta^(s): noise cancels, drift does not
        drift = np.max(np.abs(history[-1] - history[0])) / (len(history) - 1)
        if t + 1 >= 2 * w and drift < cfg.tol:
            converged = True
            break
    est = _tail_estimate(history[1:], lam_j > 0, cfg.snap)
    if not converged:
        log.warning("fit at lambda=%g stopped after %d iterations without converging",
                    lam, cfg.max_iters)
    return FitResult(est, trace, converged, spec, lam, cov)


def observed_scaled(observed: Network, attrs: AttributeTable | None, spec: ModelSpec) -> np.ndarray:
    return compute_stats(observed, attrs, spec) / spec.scale_array


class Fitter:
    """Fits on one observed network, keeping warm chains between calls.

    ``moments`` replaces MCMC by an exact ``theta -> (mean, cov)`` map in
    scaled units (used for testing the update logic without sampling noise).
    """

    def __init__(self, observed: Network, attrs: AttributeTable | None, spec: ModelSpec,
                 cfg: SgdConfig | None = None, moments: MomentFn | None = None):
        self.observed = observed
        self.attrs = attrs
        self.spec = spec
        self.cfg = cfg or SgdConfig()
        self.obs = observed_scaled(observed, attrs, spec)
        if not np.all(np.isfinite(self.obs)):
            raise UsageError("observed statistics are not finite")
        if moments is not None:
            self.source: GradientSource = ExactSource(moments)
        else:
            pool = ChainPool(observed, attrs, spec, self.cfg.sampler_config())
            self.source = McmcSource(pool, self.cfg.pilot_thin)
        self.theta0 = start_theta(spec, self.obs, observed.n_dyads)
        self._cov: np.ndarray | None = None

    def fit(self, lam: float = 0.0, theta_init=None, weights=None) -> FitResult:
        """One fit; a warm ``theta_init`` also reuses the last covariance estimate."""
        if theta_init is None:
            init, cov0 = self.theta0, None
        else:
            init, cov0 = np.asarray(theta_init, float), self._cov
        res = _sgd(self.obs, self.spec, lam, init, self.cfg, self.source, weights, cov0)
        self._cov = res.covariance
        return res

    def draw(self, theta, m: int, thin: int | None = None) -> np.ndarray:
        """``m`` scaled statistic rows from the warm chains at ``theta``."""
        if not isinstance(self.source, McmcSource):
            raise UsageError("exact moments do not provide samples")
        return self.source.pool.draw(theta, m=m, thin=thin)


def fit_mle(observed: Network, attrs: AttributeTable | None, spec: ModelSpec,
            cfg: SgdConfig | None = None, moments: MomentFn | None = None,
            theta_init=None) -> FitResult:
    """Unpenalized simulation-based maximum likelihood (scaled units)."""
    return Fitter(observed, attrs, spec, cfg, moments).fit(0.0, theta_init)


def fit_lasso(observed: Network, attrs: AttributeTable | None, spec: ModelSpec, lam: float,
              cfg: SgdConfig | None = None, moments: MomentFn | None = None,
              theta_init=None, weights=None) -> FitResult:
    """L1-penalized fit; the edges coordinate is never penalized."""
    return Fitter(observed, attrs, spec, cfg, moments).fit(lam, theta_init, weights)
