"""Coefficient paths, importance scores, threshold selection and refits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import (CollinearityError, DegeneracyError, NonConvergenceError, NumericalError,
                     UsageError)
from .estimator import FitResult, Fitter, MomentFn, SgdConfig, observed_scaled, start_theta
from .network import AttributeTable, Network
from .sampler import ChainPool, SamplerConfig
from .statistics import ModelSpec, dyad_design, is_dyad_independent

log = logging.getLogger(__name__)

GRID_SPACINGS = ("geometric", "linear", "explicit")


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic child seed for sub-task ``key`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([seed, *key]).generate_state(1, dtype=np.uint64)[0])


# -- grid ---------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaGrid:
    values: tuple[float, ...]
    spacing: str = "explicit"

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise UsageError("lambda grid is empty")
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise UsageError("lambda values must be finite and non-negative")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise UsageError("lambda grid must be strictly decreasing")
        if self.spacing not in GRID_SPACINGS:
            raise UsageError(f"spacing must be one of {GRID_SPACINGS}")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    @classmethod
    def geometric(cls, lam_max: float, n: int = 40, ratio: float = 0.01,
                  include_zero: bool = True) -> "LambdaGrid":
        if not lam_max > 0 or n < 1 or not 0 < ratio <= 1:
            raise UsageError("geometric grid needs lam_max > 0, n >= 1 and 0 < ratio <= 1")
        vals = [lam_max] if n == 1 else list(lam_max * ratio ** (np.arange(n) / (n - 1)))
        if ratio == 1 and n > 1:
            raise UsageError("ratio 1 gives a constant grid")
        return cls(tuple(vals) + ((0.0,) if include_zero else ()), "geometric")

    @classmethod
    def linear(cls, lam_max: float, n: int = 40, lam_min: float = 0.0) -> "LambdaGrid":
        if not lam_max > lam_min >= 0 and n > 1:
            raise UsageError("linear grid needs lam_max > lam_min >= 0")
        return cls(tuple(np.linspace(lam_max, lam_min, n)), "linear")


@dataclass(frozen=True)
class GridRequest:
    """Parsed ``--lambda-grid`` value; ``auto`` grids need lambda_max first."""

    mode: str
    n: int = 40
    ratio: float = 0.01
    hi: float = 0.0
    lo: float = 0.0
    values: tuple[float, ...] = ()

    @property
    def needs_lambda_max(self) -> bool:
        return self.mode == "auto"

    def build(self, lam_max: float | None = None) -> LambdaGrid:
        if self.mode == "auto":
            if lam_max is None:
                raise UsageError("an automatic grid needs lambda_max")
            return LambdaGrid.geometric(lam_max, self.n, self.ratio)
        if self.mode == "geom":
            return LambdaGrid.geometric(self.hi, self.n, self.lo / self.hi, include_zero=False)
        if self.mode == "lin":
            return LambdaGrid.linear(self.hi, self.n, self.lo)
        return LambdaGrid(self.values)


def parse_grid(text: str) -> GridRequest:
    """Grid syntax: ``auto``, ``auto:N:RATIO``, ``geom:MAX:MIN:N``, ``lin:MAX:MIN:N``
    or an explicit comma list such as ``4,2,1,0``."""
    text = text.strip()
    try:
        if text == "auto":
            return GridRequest("auto")
        head, _, rest = text.partition(":")
        if head == "auto":
            n, ratio = rest.split(":")
            return GridRequest("auto", n=int(n), ratio=float(ratio))
        if head in ("geom", "lin"):
            hi, lo, n = rest.split(":")
            req = GridRequest(head, n=int(n), hi=float(hi), lo=float(lo))
            if head == "geom" and not float(hi) > float(lo) > 0:
                raise UsageError("geometric grid needs MAX > MIN > 0")
            req.build()
            return req
        vals = tuple(float(x) for x in text.split(","))
        LambdaGrid(vals)
        return GridRequest("list", values=vals)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"cannot parse lambda grid {text!r}: {exc}") from exc


# -- path ---------------------------------------------------------------------

@dataclass
class PathResult:
    spec: ModelSpec
    grid: LambdaGrid
    coef: np.ndarray
    status: list[str]
    importance: np.ndarray
    first_sign: list[str]
    seed: int
    lambda_max: float | None = None
    unstable: list[int] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)

    @property
    def labels(self) -> list[str]:
        return self.spec.labels

    @property
    def lambdas(self) -> np.ndarray:
        return np.asarray(self.grid.values)

    @property
    def converged(self) -> np.ndarray:
        return np.array([s == "ok" for s in self.status])

    @property
    def coef_raw(self) -> np.ndarray:
        return self.coef / self.spec.scale_array

    def score(self, label: str) -> float | None:
        v = self.importance[self.labels.index(label)]
        return None if np.isnan(v) else float(v)

    def write_csv(self, path, raw: bool = False) -> None:
        coef = self.coef_raw if raw else self.coef
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", *self.labels])
            for lam, row in zip(self.grid.values, coef):
                w.writerow([fmt(lam), *(fmt(x) for x in row)])

    def write_ranking(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "importance_score", "first_sign"])
            for label in rank(self):
                k = self.labels.index(label)
                r = self.importance[k]
                w.writerow([label, "" if np.isnan(r) else fmt(r), self.first_sign[k]])

    def to_dict(self) -> dict:
        return {
            "terms": self.labels,
            "lambda": [float(x) for x in self.grid.values],
            "status": list(self.status),
            "lambda_max": self.lambda_max,
            "importance": {lab: self.score(lab) for lab, pen in
                           zip(self.labels, self.spec.penalized) if pen},
            "ranking": rank(self),
            "unstable": list(self.unstable),
            "seed": self.seed,
        }


def fmt(x: float) -> str:
    """Shortest round-trip decimal text for a float."""
    x = float(x)
    if x == 0.0:
        return "0.0"
    return repr(x)


def _penalty_weights(spec: ModelSpec, weights) -> np.ndarray:
    w = spec.penalized_mask.astype(float)
    return w if weights is None else w * np.asarray(weights, dtype=float)


def find_lambda_max(fitter: Fitter, weights=None, max_doublings: int = 30,
                    refine: int = 3) -> float:
    """Smallest penalty (up to ``refine`` bisection steps) zeroing every penalized term.

    The starting guess is the largest weighted score |s_obs,j - E[s_j]| at the
    edges-only optimum, which is exact when moments are exact.  It is doubled
    until a fit returns all penalized coordinates at zero; a trial fit that
    degenerates counts as not zeroed.
    """
    w = _penalty_weights(fitter.spec, weights)
    pen = w > 0
    if not pen.any():
        return 0.0
    theta0 = fitter.theta0
    score = np.abs(fitter.obs - fitter.source.mean(theta0, fitter.cfg.pilot_m))
    guess = float(np.max(score[pen] / w[pen]))
    lam = max(guess * 1.05, 1e-8)

    def all_zero(lam_try: float) -> bool:
        try:
            res = fitter.fit(lam_try, theta0, weights)
        except DegeneracyError as exc:
            # a fit that escaped zero far enough to degenerate was not held at zero
            log.info("lambda_max search: fit at %g degenerated (%s)", lam_try, exc)
            return False
        return bool(np.all(res.theta[pen] == 0.0))

    lo = None
    for _ in range(max_doublings):
        if all_zero(lam):
            break
        lo = lam
        lam *= 2.0
    else:
        raise NumericalError("could not find a penalty that zeroes every term")
    hi = lam
    lo = hi / 2 if lo is None else lo
    for _ in range(refine):
        mid = 0.5 * (lo + hi)
        if all_zero(mid):
            hi = mid
        else:
            lo = mid
    return hi


def compute_path(observed: Network, attrs: AttributeTable | None, spec: ModelSpec,
                 grid: LambdaGrid | GridRequest | None = None, cfg: SgdConfig | None = None,
                 moments: MomentFn | None = None, weights=None, jump: float = 10.0,
                 fitter: Fitter | None = None) -> PathResult:
    """Fit the penalized model down a decreasing grid with warm starts.

    Grid points whose fit fails to converge are flagged and left out of the
    importance scores; a degenerate fit stops the descent, and later points
    are recorded as ``skipped``.
    """
    cfg = cfg or SgdConfig()
    fitter = fitter or Fitter(observed, attrs, spec, cfg, moments)
    lam_max = None
    if grid is None:
        grid = GridRequest("auto")
    if isinstance(grid, GridRequest):
        if grid.needs_lambda_max:
            lam_max = find_lambda_max(fitter, weights)
        grid = grid.build(lam_max)
    p = len(spec)
    coef = np.full((len(grid), p), np.nan)
    status = ["skipped"] * len(grid)
    iters = [0] * len(grid)
    theta = fitter.theta0
    for g, lam in enumerate(grid.values):
        try:
            res = fitter.fit(lam, theta if g else None, weights)
        except DegeneracyError as exc:
            log.warning("path stopped at lambda=%g: %s", lam, exc)
            status[g] = "degenerate"
            break
        coef[g] = res.theta
        status[g] = "ok" if res.converged else "nonconverged"
        iters[g] = res.iterations
        theta = res.theta
    unstable = []
    for g in range(1, len(grid)):
        if status[g] == "ok" and status[g - 1] == "ok":
            if np.max(np.abs(coef[g] - coef[g - 1])) > jump:
                unstable.append(g)
    if unstable:
        log.warning("path jumps above %g at grid points %s", jump, unstable)
    if any(s == "nonconverged" for s in status):
        log.warning("importance scores use converged grid points only")
    imp, signs = importance_scores(grid, coef, status, spec)
    return PathResult(spec, grid, coef, status, imp, signs, cfg.seed, lam_max, unstable, iters)


def importance_scores(grid: LambdaGrid, coef: np.ndarray, status: Sequence[str],
                      spec: ModelSpec) -> tuple[np.ndarray, list[str]]:
    """R_i = largest converged grid penalty with a non-zero coefficient (NaN if none)."""
    p = len(spec)
    imp = np.full(p, np.nan)
    signs = [""] * p
    ok = [g for g, s in enumerate(status) if s == "ok"]
    for k in range(p):
        if not spec.penalized[k]:
            continue
        for g in ok:
            if coef[g, k] != 0.0:
                imp[k] = grid.values[g]
                signs[k] = "+" if coef[g, k] > 0 else "-"
                break
    return imp, signs


def rank(path: PathResult) -> list[str]:
    """Penalized terms by importance score, highest first.

    Equal scores are ordered by the larger absolute coefficient at that
    penalty, then by position in the spec; never-selected terms come last.
    """
    lams = path.lambdas

    def key(k):
        r = path.importance[k]
        if np.isnan(r):
            return (1, 0.0, 0.0, k)
        g = int(np.flatnonzero(lams == r)[0])
        return (0, -r, -abs(path.coef[g, k]), k)

    ks = [k for k in range(len(path.spec)) if path.spec.penalized[k]]
    return [path.labels[k] for k in sorted(ks, key=key)]


# -- inference ----------------------------------------------------------------

@dataclass
class BridgeConfig:
    """Path-sampling settings for log kappa(theta) - log kappa(theta_0)."""

    points: int = 20
    m: int = 500
    thin: int | None = None
    burn_in: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.points < 2 or self.m < 1:
            raise UsageError("bridge needs at least 2 points and 1 draw per point")


@dataclass
class InferenceConfig:
    sgd: SgdConfig = field(default_factory=SgdConfig)
    cov_m: int = 2000
    cov_thin: int | None = None
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    loglik_method: str = "auto"

    def reseeded(self, seed: int) -> "InferenceConfig":
        return replace(self, sgd=replace(self.sgd, seed=seed),
                       bridge=replace(self.bridge, seed=derive_seed(seed, 1)))


@dataclass
class FitReport:
    terms: list[str]
    theta: np.ndarray
    se: np.ndarray
    pvalue: np.ndarray
    loglik: float
    aic: float
    scales: np.ndarray
    converged: bool = True
    iterations: int = 0
    excluded: tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return len(self.terms)

    @property
    def theta_raw(self) -> np.ndarray:
        return self.theta / self.scales

    @property
    def se_raw(self) -> np.ndarray:
        return self.se / self.scales

    @property
    def z(self) -> np.ndarray:
        return self.theta / self.se

    def to_dict(self) -> dict:
        rows = []
        for k, lab in enumerate(self.terms):
            rows.append({
                "term": lab,
                "estimate_scaled": float(self.theta[k]),
                "se_scaled": float(self.se[k]),
                "estimate_raw": float(self.theta_raw[k]),
                "se_raw": float(self.se_raw[k]),
                "scale": float(self.scales[k]),
                "z": float(self.z[k]),
                "p_value": float(self.pvalue[k]),
            })
        return {
            "terms": rows,
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "k": self.k,
            "converged": self.converged,
            "iterations": self.iterations,
            "excluded": list(self.excluded),
        }


def _dyad_moments(x: np.ndarray, theta: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    eta = x @ theta
    prob = expit(eta)
    log_kappa = float(np.sum(np.logaddexp(0.0, eta)))
    mean = prob @ x
    cov = (x * (prob * (1 - prob))[:, None]).T @ x
    return log_kappa, mean, cov


def estimate_loglik(observed: Network, attrs: AttributeTable | None, spec: ModelSpec, theta,
                    cfg: BridgeConfig | None = None, method: str = "auto") -> float:
    """log-likelihood s(y_obs).theta - log kappa(theta), theta in scaled units.

    ``method="bridge"`` integrates E_theta(u)[s] . (theta - theta_0) along the
    segment from the Bernoulli reference theta_0 (edges at logit density,
    rest 0) with the trapezoid rule; ``"exact"`` is available for
    dyad-independent specs; ``"auto"`` picks exact when it can.
    """
    if method not in ("auto", "bridge", "exact"):
        raise UsageError("method must be auto, bridge or exact")
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise UsageError("theta must be finite")
    obs = observed_scaled(observed, attrs, spec)
    exact_ok = is_dyad_independent(spec)
    if method == "exact" or (method == "auto" and exact_ok):
        if not exact_ok:
            raise UsageError("exact log-likelihood needs a dyad-independent spec")
        x = dyad_design(spec, attrs, observed.n_nodes) / spec.scale_array
        return float(obs @ theta - _dyad_moments(x, theta)[0])
    cfg = cfg or BridgeConfig()
    d = observed.n_dyads
    theta0 = start_theta(spec, obs, d)
    log_kappa0 = d * float(np.logaddexp(0.0, theta0[0]))
    direction = theta - theta0
    if not np.any(direction):
        return float(obs @ theta - log_kappa0)
    scfg = SamplerConfig(burn_in=cfg.burn_in, thin=cfg.thin, m=cfg.m, seed=cfg.seed)
    pool = ChainPool(observed, attrs, spec, scfg)
    us = np.linspace(0.0, 1.0, cfg.points)
    vals = np.empty(cfg.points)
    for k, u in enumerate(us):
        try:
            vals[k] = pool.draw(theta0 + u * direction).mean(axis=0) @ direction
        except NumericalError as exc:
            raise type(exc)(f"bridge sampling failed at u={u:.6g}: {exc}") from exc
    integral = float(np.sum((vals[1:] + vals[:-1]) * np.diff(us)) / 2)
    return float(obs @ theta - (log_kappa0 + integral))


def _inverse_information(cov: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    top = max(float(vals[-1]), 0.0)
    if not top > 0 or vals[0] <= 1e-10 * top:
        v = vecs[:, 0]
        names = tuple(lab for lab, c in zip(labels, v) if abs(c) > 0.1) or tuple(labels)
        raise CollinearityError(
            f"statistic covariance is singular; collinear terms: {', '.join(names)}", names)
    return (vecs / vals) @ vecs.T


def refit_inference(observed: Network, attrs: AttributeTable | None, spec: ModelSpec,
                    cfg: InferenceConfig | None = None, moments: MomentFn | None = None,
                    theta_init=None) -> FitReport:
    """Unpenalized fit of ``spec`` with Wald standard errors, p-values and AIC."""
    cfg = cfg or InferenceConfig()
    fitter = Fitter(observed, attrs, unpenalized(spec), cfg.sgd, moments)
    res = fitter.fit(0.0, theta_init).require_converged()
    return inference_report(fitter, res, cfg, moments)


def unpenalized(spec: ModelSpec) -> ModelSpec:
    return replace(spec, penalized=(False,) * len(spec))


def inference_report(fitter: Fitter, res: FitResult, cfg: InferenceConfig | None = None,
                     moments: MomentFn | None = None) -> FitReport:
    """Standard errors, p-values, log-likelihood and AIC at a finished fit."""
    cfg = cfg or InferenceConfig()
    observed, attrs, spec = fitter.observed, fitter.attrs, fitter.spec
    theta = res.theta
    if moments is not None:
        cov = moments(theta)[1]
    elif is_dyad_independent(spec):
        x = dyad_design(spec, attrs, observed.n_nodes) / spec.scale_array
        cov = _dyad_moments(x, theta)[2]
    else:
        draws = fitter.draw(theta, cfg.cov_m, thin=cfg.cov_thin or observed.n_dyads)
        cov = np.atleast_2d(np.cov(draws, rowvar=False, ddof=1))
    inv = _inverse_information(cov, spec.labels)
    se = np.sqrt(np.diag(inv))
    if not np.all(se > 0):
        raise CollinearityError("non-positive variance in the inverse information",
                                tuple(spec.labels))
    pval = 2 * norm.sf(np.abs(theta / se))
    ll = estimate_loglik(observed, attrs, spec, theta, cfg.bridge, cfg.loglik_method)
    return FitReport(spec.labels, theta, se, pval, ll, 2 * len(spec) - 2 * ll,
                     spec.scale_array, res.converged, res.iterations, spec.excluded)


# -- threshold ----------------------------------------------------------------

@dataclass
class WalkStep:
    step: int
    term: str
    aic: float | None
    p_value: float | None
    accepted: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {"step": self.step, "term": self.term, "aic": self.aic,
                "p_value": self.p_value, "accepted": self.accepted, "note": self.note}


@dataclass
class Selection:
    selected: list[str]
    report: FitReport
    walk: list[WalkStep]
    ranking: list[str]
    criterion: str

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "ranking": self.ranking,
                "selected": self.selected, "walk": [s.to_dict() for s in self.walk]}

    def write_walk(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "term", "aic", "p_value", "accepted", "note"])
            for s in self.walk:
                w.writerow([s.step, s.term, "" if s.aic is None else fmt(s.aic),
                            "" if s.p_value is None else fmt(s.p_value),
                            int(s.accepted), s.note])


def select_threshold(path: PathResult, observed: Network, attrs: AttributeTable | None,
                     criterion: str = "aic", alpha_sig: float = 0.05,
                     cfg: InferenceConfig | None = None) -> Selection:
    """Walk the ranking, adding one term at a time to an unpenalized refit.

    ``aic`` stops before the first addition that raises AIC; ``pvalue`` stops
    before the first addition whose own coefficient has p >= ``alpha_sig``.
    Terms never selected on the path are not walked.  A refit that fails
    ends the walk at the last stable model.
    """
    if criterion not in ("aic", "pvalue"):
        raise UsageError("criterion must be 'aic' or 'pvalue'")
    if not 0 < alpha_sig < 1:
        raise UsageError("alpha_sig must lie in (0, 1)")
    cfg = cfg or InferenceConfig()
    seed = cfg.sgd.seed
    spec = path.spec
    ranking = rank(path)
    candidates = [lab for lab in ranking if path.score(lab) is not None]
    chosen: list[str] = []
    current = refit_inference(observed, attrs, spec.subset([]), cfg.reseeded(derive_seed(seed, 0)))
    walk = [WalkStep(0, "edges", current.aic, float(current.pvalue[0]), True, "base model")]
    for step, label in enumerate(candidates, start=1):
        trial_spec = spec.subset(chosen + [label])
        try:
            rep = refit_inference(observed, attrs, trial_spec,
                                  cfg.reseeded(derive_seed(seed, step)))
        except (NonConvergenceError, NumericalError) as exc:
            walk.append(WalkStep(step, label, None, None, False, f"refit failed: {exc}"))
            break
        p_new = float(rep.pvalue[trial_spec.labels.index(label)])
        if criterion == "aic":
            ok = rep.aic <= current.aic
            note = "" if ok else "AIC increases"
        else:
            ok = p_new < alpha_sig
            note = "" if ok else f"p >= {alpha_sig}"
        walk.append(WalkStep(step, label, rep.aic, p_new, ok, note))
        if not ok:
            break
        chosen.append(label)
        current = rep
    return Selection(["edges", *[lab for lab in spec.labels if lab in chosen]], current, walk,
                     ranking, criterion)
