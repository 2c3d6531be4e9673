"""Model terms, sufficient statistics, change statistics and standardization.

Statistics are computed here with plain numpy on whole adjacency matrices
(batched when the leading axis is present).  The sampler never calls these;
it tracks statistics incrementally through :func:`change_stats`, so the two
routes can be checked against each other.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import InputError, SpecError
from .network import CATEGORICAL, NUMERIC, AttributeTable, Network, dyad_arrays

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5

KIND_CODES = {
    "edges": _kernels.EDGES,
    "gwesp": _kernels.GWESP,
    "gwnsp": _kernels.GWNSP,
    "gwdegree": _kernels.GWDEGREE,
    "nodecov": _kernels.NODECOV,
    "nodefactor": _kernels.NODEFACTOR,
    "nodematch": _kernels.NODEMATCH,
}
GEOMETRIC = {"gwesp", "gwnsp", "gwdegree"}


@dataclass(frozen=True)
class StatTerm:
    kind: str
    alpha: float | None = None
    column: str | None = None
    level: str | None = None

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise SpecError(f"unknown term kind {self.kind!r}")
        if self.kind in GEOMETRIC:
            alpha = DEFAULT_ALPHA if self.alpha is None else float(self.alpha)
            if not alpha > 0 or not math.isfinite(alpha):
                raise SpecError(f"{self.kind}: decay must be positive, got {self.alpha!r}")
            object.__setattr__(self, "alpha", alpha)
        if self.kind in {"nodecov", "nodefactor", "nodematch"} and not self.column:
            raise SpecError(f"{self.kind} needs an attribute column")
        if self.kind == "nodefactor" and self.level is None:
            raise SpecError("nodefactor needs a level")

    @property
    def label(self) -> str:
        if self.kind == "edges":
            return "edges"
        if self.kind in GEOMETRIC:
            return f"{self.kind}.fixed.{self.alpha:g}"
        if self.kind == "nodefactor":
            return f"nodefactor.{self.column}.{self.level}"
        return f"{self.kind}.{self.column}"

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key in ("alpha", "column", "level"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


def Edges() -> StatTerm:
    return StatTerm("edges")


def Gwesp(alpha: float = DEFAULT_ALPHA) -> StatTerm:
    return StatTerm("gwesp", alpha=alpha)


def Gwnsp(alpha: float = DEFAULT_ALPHA) -> StatTerm:
    return StatTerm("gwnsp", alpha=alpha)


def Gwdegree(alpha: float = DEFAULT_ALPHA) -> StatTerm:
    return StatTerm("gwdegree", alpha=alpha)


def NodeCov(column: str) -> StatTerm:
    return StatTerm("nodecov", column=column)


def NodeFactor(column: str, level) -> StatTerm:
    return StatTerm("nodefactor", column=column, level=str(level))


def NodeMatch(column: str) -> StatTerm:
    return StatTerm("nodematch", column=column)


@dataclass(frozen=True)
class ModelSpec:
    """Ordered term list, edges first, with scale factors and penalty flags.

    ``excluded`` lists labels dropped during standardization because their
    reference distribution was constant.
    """

    terms: tuple[StatTerm, ...]
    scales: tuple[float, ...] = ()
    penalized: tuple[bool, ...] = ()
    fixed_scale: tuple[bool, ...] = ()
    excluded: tuple[str, ...] = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        p = len(terms)
        if p == 0 or terms[0].kind != "edges":
            raise SpecError("the first term must be edges")
        if sum(t.kind == "edges" for t in terms) != 1:
            raise SpecError("exactly one edges term is allowed")
        labels = [t.label for t in terms]
        if len(set(labels)) != p:
            dup = sorted({x for x in labels if labels.count(x) > 1})
            raise SpecError(f"duplicate term labels: {dup}")
        scales = tuple(float(s) for s in self.scales) or (1.0,) * p
        penalized = tuple(bool(x) for x in self.penalized) or (False,) + (True,) * (p - 1)
        fixed = tuple(bool(x) for x in self.fixed_scale) or (False,) * p
        if not (len(scales) == len(penalized) == len(fixed) == p):
            raise SpecError("scales/penalized flags must match the number of terms")
        if scales[0] != 1.0 or penalized[0]:
            raise SpecError("the edges term is never scaled or penalized")
        if any(not (s > 0 and math.isfinite(s)) for s in scales):
            raise SpecError("scale factors must be positive and finite")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "penalized", penalized)
        object.__setattr__(self, "fixed_scale", fixed)
        object.__setattr__(self, "excluded", tuple(self.excluded))

    @classmethod
    def of(cls, *terms: StatTerm) -> "ModelSpec":
        return cls(tuple(terms))

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    @property
    def scale_array(self) -> np.ndarray:
        return np.asarray(self.scales, dtype=float)

    @property
    def penalized_mask(self) -> np.ndarray:
        return np.asarray(self.penalized, dtype=bool)

    def with_scales(self, scales: Sequence[float]) -> "ModelSpec":
        return replace(self, scales=tuple(scales))

    def unscaled(self) -> "ModelSpec":
        return replace(self, scales=(1.0,) * len(self), fixed_scale=(False,) * len(self))

    def subset(self, labels: Sequence[str]) -> "ModelSpec":
        """Edges plus the named terms, in spec order, keeping their scales."""
        wanted = set(labels) | {"edges"}
        unknown = wanted - set(self.labels)
        if unknown:
            raise SpecError(f"unknown terms: {sorted(unknown)}")
        keep = [k for k, lab in enumerate(self.labels) if lab in wanted]
        return ModelSpec(
            tuple(self.terms[k] for k in keep),
            tuple(self.scales[k] for k in keep),
            tuple(self.penalized[k] for k in keep),
            tuple(self.fixed_scale[k] for k in keep),
            self.excluded,
        )

    def to_dict(self) -> dict:
        terms = []
        for t, s, pen, fixed in zip(self.terms, self.scales, self.penalized, self.fixed_scale):
            d = t.to_dict()
            d["scale"] = s
            d["penalized"] = pen
            d["fixed_scale"] = fixed
            terms.append(d)
        return {"terms": terms, "excluded": list(self.excluded)}


def validate_spec(spec: ModelSpec, attrs: AttributeTable) -> None:
    """Check every referenced column exists with the right type."""
    for t in spec.terms:
        if t.kind == "nodecov":
            attrs.numeric(t.column)
        elif t.kind == "nodematch":
            attrs.codes(t.column)
        elif t.kind == "nodefactor":
            attrs._require(t.column, CATEGORICAL)
            if t.level not in attrs.levels[t.column]:
                raise SpecError(f"{t.label}: {t.level!r} is not a level of {t.column!r}")
            if t.level == attrs.reference[t.column]:
                raise SpecError(f"{t.label}: the reference level cannot be a factor term")


# -- spec files ------------------------------------------------------------

def parse_spec(doc: Mapping, attrs: AttributeTable | None = None) -> ModelSpec:
    """Build a spec from its JSON form.

    A ``nodefactor`` entry without ``level`` expands to every non-reference
    level of the column, which needs ``attrs``.  Edges is prepended if absent.
    """
    raw_terms = doc.get("terms")
    if not isinstance(raw_terms, list) or not raw_terms:
        raise SpecError("model spec needs a non-empty 'terms' list")
    terms, scales, pens, fixed = [], [], [], []
    for entry in raw_terms:
        if isinstance(entry, str):
            entry = {"kind": entry}
        if not isinstance(entry, Mapping) or "kind" not in entry:
            raise SpecError(f"bad term entry: {entry!r}")
        kind = str(entry["kind"]).lower()
        extra = set(entry) - {"kind", "alpha", "column", "level", "scale", "penalized", "fixed_scale"}
        if extra:
            raise SpecError(f"{kind}: unknown keys {sorted(extra)}")
        if kind == "nodefactor" and entry.get("level") is None:
            if attrs is None:
                raise SpecError("nodefactor without a level needs the attribute table")
            col = entry.get("column")
            attrs._require(col, CATEGORICAL)
            levels = [lev for lev in attrs.levels[col] if lev != attrs.reference[col]]
            expanded = [StatTerm("nodefactor", column=col, level=lev) for lev in levels]
        else:
            expanded = [StatTerm(kind, alpha=entry.get("alpha"), column=entry.get("column"),
                                 level=None if entry.get("level") is None else str(entry["level"]))]
        for term in expanded:
            terms.append(term)
            has_scale = "scale" in entry and entry["scale"] is not None
            scales.append(float(entry["scale"]) if has_scale else 1.0)
            fixed.append(bool(entry.get("fixed_scale", has_scale)))
            pens.append(bool(entry.get("penalized", kind != "edges")))
    if terms[0].kind != "edges":
        if any(t.kind == "edges" for t in terms):
            raise SpecError("the edges term must come first")
        terms.insert(0, StatTerm("edges"))
        scales.insert(0, 1.0)
        pens.insert(0, False)
        fixed.insert(0, False)
    spec = ModelSpec(tuple(terms), tuple(scales), tuple(pens), tuple(fixed),
                     tuple(doc.get("excluded", ())))
    if attrs is not None:
        validate_spec(spec, attrs)
    return spec


def read_spec_file(path) -> dict:
    """Load a spec document; returns the raw mapping (terms + attribute schema)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", str(path), exc.lineno) from exc
    if not isinstance(doc, dict):
        raise InputError("model spec must be a JSON object", str(path))
    schema = doc.get("attributes", {})
    if not isinstance(schema, dict):
        raise InputError("'attributes' must map column names to declarations", str(path))
    for name, decl in schema.items():
        if not isinstance(decl, dict) or decl.get("type") not in (NUMERIC, CATEGORICAL):
            raise InputError(f"attribute {name!r}: type must be numeric or categorical", str(path))
    return doc


# -- full statistics --------------------------------------------------------

def geometric_weights(alpha: float, kmax: int) -> np.ndarray:
    """e^a (1 - (1 - e^-a)^k) for k = 0..kmax."""
    k = np.arange(kmax + 1)
    return math.exp(alpha) * (1.0 - (1.0 - math.exp(-alpha)) ** k)


def esp_counts(net: Network) -> np.ndarray:
    """esp[i] = number of edges whose endpoints share exactly i partners."""
    return _sp_histogram(net, edge=True)


def nsp_counts(net: Network) -> np.ndarray:
    """nsp[i] = number of non-edges whose endpoints share exactly i partners."""
    return _sp_histogram(net, edge=False)


def _sp_histogram(net: Network, edge: bool) -> np.ndarray:
    a = net.adjacency.astype(np.int64)
    sp = a @ a
    r, c = dyad_arrays(net.n_nodes)
    sel = a[r, c] == (1 if edge else 0)
    return np.bincount(sp[r, c][sel], minlength=max(net.n_nodes - 1, 1))


def _covariates(term: StatTerm, attrs: AttributeTable) -> np.ndarray:
    if term.kind == "nodecov":
        return attrs.numeric(term.column).astype(float)
    if term.kind == "nodefactor":
        return attrs.indicator(term.column, term.level)
    if term.kind == "nodematch":
        return attrs.codes(term.column).astype(float)
    return np.zeros(attrs.n_nodes)


def stats_from_adjacency(adj: np.ndarray, attrs: AttributeTable | None, spec: ModelSpec) -> np.ndarray:
    """Raw statistics for one ``(N, N)`` or a batch ``(B, N, N)`` of adjacency matrices."""
    single = adj.ndim == 2
    a = adj[None] if single else adj
    bsz, n, _ = a.shape
    attrs = attrs if attrs is not None else AttributeTable(n)
    if attrs.n_nodes != n:
        raise SpecError(f"attribute table has {attrs.n_nodes} rows, network has {n} nodes")
    r, c = dyad_arrays(n)
    y = a[:, r, c].astype(float)  # (B, D)
    need_sp = any(t.kind in ("gwesp", "gwnsp") for t in spec.terms)
    if need_sp:
        af = a.astype(np.float32)
        sp = np.rint(np.matmul(af, af)[:, r, c]).astype(np.int64)  # (B, D)
    deg = a.sum(axis=2, dtype=np.int64)  # (B, N)
    out = np.empty((bsz, len(spec)))
    for k, term in enumerate(spec.terms):
        if term.kind == "edges":
            out[:, k] = y.sum(axis=1)
        elif term.kind in ("gwesp", "gwnsp"):
            # histogram of shared-partner counts over edges (or non-edges)
            on = y == (1.0 if term.kind == "gwesp" else 0.0)
            idx = (np.arange(bsz)[:, None] * n + sp)[on]
            counts = np.bincount(idx, minlength=bsz * n).reshape(bsz, n)
            w = geometric_weights(term.alpha, n - 1)
            out[:, k] = counts[:, 1:n - 1] @ w[1:n - 1] if n > 2 else 0.0
        elif term.kind == "gwdegree":
            idx = (np.arange(bsz)[:, None] * n + deg).ravel()
            counts = np.bincount(idx, minlength=bsz * n).reshape(bsz, n)
            w = geometric_weights(term.alpha, n - 1)
            out[:, k] = counts[:, 1:] @ w[1:]
        else:
            x = _covariates(term, attrs)
            if term.kind == "nodematch":
                pair = (x[r] == x[c]).astype(float)
            else:
                pair = x[r] + x[c]
            out[:, k] = y @ pair
    return out[0] if single else out


def compute_stats(net: Network, attrs: AttributeTable | None, spec: ModelSpec) -> np.ndarray:
    """Raw statistic vector s(y, x), aligned with ``spec.terms``."""
    attrs = attrs if attrs is not None else AttributeTable(net.n_nodes)
    return stats_from_adjacency(net.adjacency, attrs, spec)


def scale_stats(raw: np.ndarray, spec: ModelSpec) -> np.ndarray:
    return np.asarray(raw, dtype=float) / spec.scale_array


DYAD_INDEPENDENT = {"edges", "nodecov", "nodefactor", "nodematch"}


def is_dyad_independent(spec: ModelSpec) -> bool:
    return all(t.kind in DYAD_INDEPENDENT for t in spec.terms)


def dyad_design(spec: ModelSpec, attrs: AttributeTable | None, n: int) -> np.ndarray:
    """``(D, p)`` raw change statistics of every dyad for a dyad-independent spec.

    Such a model is a logistic regression over dyads, so
    ``log kappa(theta) = sum_d log(1 + exp(x_d . theta))``.
    """
    if not is_dyad_independent(spec):
        raise SpecError("dyad design only exists for dyad-independent terms")
    attrs = attrs if attrs is not None else AttributeTable(n)
    r, c = dyad_arrays(n)
    out = np.empty((len(r), len(spec)))
    for k, term in enumerate(spec.terms):
        if term.kind == "edges":
            out[:, k] = 1.0
        else:
            x = _covariates(term, attrs)
            out[:, k] = (x[r] == x[c]) if term.kind == "nodematch" else x[r] + x[c]
    return out


# -- compiled term tables ----------------------------------------------------

@dataclass
class TermTables:
    """Array encoding of a spec for the compiled kernels."""

    kinds: np.ndarray
    cov: np.ndarray
    weight: np.ndarray
    power: np.ndarray
    track_sp: bool
    rows: np.ndarray = field(repr=False, default=None)
    cols: np.ndarray = field(repr=False, default=None)


def term_tables(spec: ModelSpec, attrs: AttributeTable | None, n: int) -> TermTables:
    attrs = attrs if attrs is not None else AttributeTable(n)
    if attrs.n_nodes != n:
        raise SpecError(f"attribute table has {attrs.n_nodes} rows, network has {n} nodes")
    validate_spec(spec, attrs)
    p = len(spec)
    kinds = np.array([KIND_CODES[t.kind] for t in spec.terms], dtype=np.int64)
    cov = np.zeros((p, n))
    weight = np.zeros((p, n + 1))
    power = np.zeros((p, n + 1))
    for k, t in enumerate(spec.terms):
        cov[k] = _covariates(t, attrs)
        if t.kind in GEOMETRIC:
            weight[k] = geometric_weights(t.alpha, n)
            power[k] = (1.0 - math.exp(-t.alpha)) ** np.arange(n + 1)
    r, c = dyad_arrays(n)
    return TermTables(kinds, cov, weight, power,
                      bool(np.any((kinds == _kernels.GWESP) | (kinds == _kernels.GWNSP))),
                      r.astype(np.int64), c.astype(np.int64))


def chain_state(net: Network) -> tuple[np.ndarray, ...]:
    """Fresh ``(adj, sp, deg, nbr, pos)`` arrays for the compiled kernels."""
    adj = net.adjacency.copy()
    a = adj.astype(np.int64)
    sp = (a @ a).astype(np.int32)
    deg = a.sum(axis=1).astype(np.int32)
    n = net.n_nodes
    nbr = np.zeros((n, n), dtype=np.int32)
    pos = np.zeros((n, n), dtype=np.int32)
    for i in range(n):
        ks = np.flatnonzero(adj[i])
        nbr[i, :ks.size] = ks
        pos[i, ks] = np.arange(ks.size)
    return adj, sp, deg, nbr, pos


def change_stats(net: Network, attrs: AttributeTable | None, spec: ModelSpec, d) -> np.ndarray:
    """Raw s(y+) - s(y-) for dyad ``d`` (linear index or ``(i, j)``)."""
    i, j = net._pair(d)
    tables = term_tables(spec, attrs, net.n_nodes)
    adj, sp, deg, nbr, _ = chain_state(net)
    out = np.empty(len(spec))
    _kernels.change_stats(adj, sp, deg, nbr, i, j, tables.kinds, tables.cov,
                          tables.weight, tables.power, out)
    return out


# -- standardization --------------------------------------------------------

DEFAULT_STANDARDIZE_M = 500


def reference_sd(spec: ModelSpec, observed: Network, attrs: AttributeTable | None,
                 m: int = DEFAULT_STANDARDIZE_M, seed: int | None = 0,
                 return_draws: bool = False):
    """Raw statistic SDs (ddof=1) over ``m`` Erdos-Renyi graphs at the observed density."""
    from .sampler import sample_er_adjacency

    if m < 2:
        raise SpecError("standardization needs at least two reference draws")
    attrs = attrs if attrs is not None else AttributeTable(observed.n_nodes)
    validate_spec(spec, attrs)
    draws = sample_er_adjacency(observed.n_nodes, observed.density, m, seed)
    stats = stats_from_adjacency(draws, attrs, spec.unscaled())
    sd = stats.std(axis=0, ddof=1)
    return (sd, stats) if return_draws else sd


def standardize(spec: ModelSpec, observed: Network, attrs: AttributeTable | None,
                m: int = DEFAULT_STANDARDIZE_M, seed: int | None = 0) -> ModelSpec:
    """Set scale factors to statistic SDs under an Erdos-Renyi reference.

    Draws ``m`` graphs at the observed density.  Edges and terms with a fixed
    scale are left alone; terms with zero reference SD are dropped from the
    returned spec and listed in ``excluded``.
    """
    attrs = attrs if attrs is not None else AttributeTable(observed.n_nodes)
    sd, stats = reference_sd(spec, observed, attrs, m, seed, return_draws=True)
    scales, keep, dropped = [], [], []
    for k, term in enumerate(spec.terms):
        if k == 0 or spec.fixed_scale[k]:
            scales.append(spec.scales[k])
            keep.append(k)
        elif sd[k] > 1e-12 * max(1.0, float(np.abs(stats[:, k]).max())):
            scales.append(float(sd[k]))
            keep.append(k)
        else:
            dropped.append(term.label)
    if dropped:
        log.warning("terms with zero reference SD excluded from fitting: %s", ", ".join(dropped))
    return ModelSpec(
        tuple(spec.terms[k] for k in keep),
        tuple(scales),
        tuple(spec.penalized[k] for k in keep),
        tuple(spec.fixed_scale[k] for k in keep),
        tuple(spec.excluded) + tuple(dropped),
    )
