"""Exact ERGM quantities by enumerating every graph on a handful of nodes.

Only usable for N <= 7 (2^21 graphs).  Serves as ground truth for the
sampler, the estimators and the log-likelihood bridge.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, DegenerateMLEError, UsageError
from .network import AttributeTable, dyad_arrays, n_dyads
from .statistics import ModelSpec, stats_from_adjacency

MAX_NODES = 7
_CHUNK = 1 << 15


def all_graph_adjacency(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Adjacency stack of graphs with dyad bitmasks ``start..stop-1``."""
    d = n_dyads(n)
    stop = (1 << d) if stop is None else stop
    masks = np.arange(start, stop, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(d)) & 1).astype(np.uint8)
    rows, cols = dyad_arrays(n)
    adj = np.zeros((len(masks), n, n), dtype=np.uint8)
    adj[:, rows, cols] = bits
    adj[:, cols, rows] = bits
    return adj


class ExactModel:
    """Statistic matrix over all 2^D graphs of ``n`` nodes.

    ``stats[k]`` is the raw statistic vector of the graph with dyad bitmask k.
    With ``scaled=True`` every method works in the spec's scaled units.
    """

    def __init__(self, n: int, spec: ModelSpec, attrs: AttributeTable | None = None,
                 scaled: bool = False):
        if n > MAX_NODES:
            raise CapacityError(f"exact enumeration is capped at {MAX_NODES} nodes, got {n}")
        if n < 2:
            raise UsageError("exact enumeration needs at least two nodes")
        self.n = n
        self.spec = spec
        self.scaled = scaled
        attrs = attrs if attrs is not None else AttributeTable(n)
        total = 1 << n_dyads(n)
        raw = np.empty((total, len(spec)))
        unit = spec.unscaled()
        for lo in range(0, total, _CHUNK):
            hi = min(lo + _CHUNK, total)
            raw[lo:hi] = stats_from_adjacency(all_graph_adjacency(n, lo, hi), attrs, unit)
        self.stats = raw
        self.design = raw / spec.scale_array if scaled else raw

    def _theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self.spec),):
            raise UsageError(f"theta must have length {len(self.spec)}")
        return theta

    def log_weights(self, theta) -> np.ndarray:
        return self.design @ self._theta(theta)

    def log_kappa(self, theta) -> float:
        """log of the sum over all graphs of exp(s(y) . theta)."""
        return float(logsumexp(self.log_weights(theta)))

    def probabilities(self, theta) -> np.ndarray:
        lw = self.log_weights(theta)
        return np.exp(lw - logsumexp(lw))

    def exact_moments(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and covariance matrix of s(Y) at ``theta``."""
        p = self.probabilities(theta)
        mean = p @ self.design
        centred = self.design - mean
        cov = (centred * p[:, None]).T @ centred
        return mean, cov

    def mean(self, theta) -> np.ndarray:
        return self.probabilities(theta) @ self.design

    def loglik(self, observed, theta) -> float:
        return float(np.dot(observed, self._theta(theta)) - self.log_kappa(theta))

    # -- maximum likelihood ---------------------------------------------

    def exact_mle(self, observed, theta0=None, tol: float = 1e-10,
                  max_iter: int = 200, bound: float = 50.0) -> np.ndarray:
        """Newton-Raphson on the exact log-likelihood, with step halving.

        Raises :class:`DegenerateMLEError` when the iterates run off to
        infinity, which happens when ``observed`` is on the boundary of the
        convex hull of attainable statistics.
        """
        obs = np.asarray(observed, dtype=float)
        self._check_interior(obs)
        theta = np.zeros(len(self.spec)) if theta0 is None else np.array(theta0, dtype=float)
        ll = self.loglik(obs, theta)
        for _ in range(max_iter):
            mean, cov = self.exact_moments(theta)
            grad = obs - mean
            if np.max(np.abs(grad)) < tol:
                return theta
            try:
                step = np.linalg.solve(cov, grad)
            except np.linalg.LinAlgError as exc:
                raise DegenerateMLEError("singular statistic covariance") from exc
            t = 1.0
            while True:
                cand = theta + t * step
                new_ll = self.loglik(obs, cand)
                if new_ll >= ll - 1e-12 or t < 1e-10:
                    break
                t *= 0.5
            theta, ll = cand, new_ll
            if np.max(np.abs(theta)) > bound:
                raise DegenerateMLEError(
                    f"Newton iterates diverged (|theta| > {bound}); the observed "
                    "statistics lie on the boundary of the attainable set")
        mean = self.mean(theta)
        if np.max(np.abs(obs - mean)) < 1e3 * tol:
            return theta
        raise DegenerateMLEError("Newton-Raphson did not converge")

    def _check_interior(self, obs: np.ndarray) -> None:
        # the observed value is on the boundary when it attains the min or max
        # of some coordinate over all graphs, but is not the only value there
        for k in range(self.design.shape[1]):
            col = self.design[:, k]
            lo, hi = col.min(), col.max()
            if hi - lo < 1e-12:
                continue
            if abs(obs[k] - lo) < 1e-9 * max(1.0, abs(lo)) or abs(obs[k] - hi) < 1e-9 * max(1.0, abs(hi)):
                label = self.spec.labels[k]
                raise DegenerateMLEError(
                    f"observed {label} is at the edge of its attainable range; the MLE is infinite")

    # -- penalized ------------------------------------------------------

    def penalized_objective(self, observed, theta, lam: float, weights=None) -> float:
        w = self._penalty_weights(weights)
        return self.loglik(observed, theta) - lam * float(np.sum(w * np.abs(theta)))

    def _penalty_weights(self, weights) -> np.ndarray:
        pen = self.spec.penalized_mask.astype(float)
        if weights is None:
            return pen
        return pen * np.asarray(weights, dtype=float)

    def exact_penalized(self, observed, lam: float, weights=None, theta0=None,
                        tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
        """Maximise loglik - lam * sum_j w_j |theta_j|.

        Proximal Newton: each step minimises the local quadratic model plus
        the L1 term by cyclic coordinate descent with soft thresholding
        (exact zeros), followed by a backtracking line search on the true
        objective.
        """
        if lam < 0:
            raise UsageError("penalty must be non-negative")
        obs = np.asarray(observed, dtype=float)
        pen = lam * self._penalty_weights(weights)
        p = len(self.spec)
        if theta0 is None:
            theta = np.zeros(p)
            dens = obs[0] / n_dyads(self.n) if self.spec.terms[0].kind == "edges" else 0.5
            if 0 < dens < 1:
                theta[0] = math.log(dens / (1 - dens))
        else:
            theta = np.array(theta0, dtype=float)
        obj = self.penalized_objective(obs, theta, lam, weights)
        for _ in range(max_iter):
            mean, cov = self.exact_moments(theta)
            grad = obs - mean
            z = _lasso_quadratic(theta, grad, cov, pen)
            step = z - theta
            if np.max(np.abs(step)) < tol:
                return z
            t = 1.0
            while True:
                cand = theta + t * step
                if t == 1.0:
                    cand = z
                new_obj = self.penalized_objective(obs, cand, lam, weights)
                if new_obj >= obj - 1e-14 * max(1.0, abs(obj)) or t < 1e-12:
                    break
                t *= 0.5
            theta, obj = cand, new_obj
            if np.max(np.abs(theta)) > 50.0:
                raise DegenerateMLEError("penalized optimum is unbounded")
        raise DegenerateMLEError("penalized Newton iteration did not converge")


def _soft(u: float, c: float) -> float:
    if u > c:
        return u - c
    if u < -c:
        return u + c
    return 0.0


def _lasso_quadratic(theta, grad, hess, pen, sweeps: int = 100000, tol: float = 1e-15):
    """argmin_z  -grad.(z-theta) + (z-theta)' hess (z-theta)/2 + sum pen_j |z_j|."""
    z = theta.copy()
    d = np.zeros_like(theta)
    hd = np.zeros_like(theta)
    for _ in range(sweeps):
        biggest = 0.0
        for j in range(theta.size):
            a = hess[j, j]
            if a <= 0:
                raise DegenerateMLEError("statistic has zero variance")
            b = -grad[j] + hd[j] - a * d[j]
            u = theta[j] - b / a
            new = _soft(u, pen[j] / a) if pen[j] > 0 else u
            change = new - z[j]
            if change != 0.0:
                z[j] = new
                d[j] += change
                hd += hess[:, j] * change
                biggest = max(biggest, abs(change))
        if biggest <= tol * max(1.0, np.max(np.abs(z))):
            break
    return z


def activation_lambda(em: ExactModel, observed, j: int, lam_hi: float,
                      iters: int = 60, weights=None) -> float:
    """Largest penalty at which coordinate ``j`` of the exact solution is non-zero.

    Bisection on lambda in ``[0, lam_hi]``; assumes coordinate j is zero at
    ``lam_hi`` and leaves zero exactly once as lambda decreases.
    """
    lo, hi = 0.0, lam_hi
    theta = None
    for _ in range(iters):
        mid = (lo + hi) / 2
        theta = em.exact_penalized(observed, mid, weights=weights, theta0=theta)
        if theta[j] != 0.0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2
