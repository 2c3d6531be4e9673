"""Undirected binary networks, node attributes and their file formats.

Adjacency is a dense symmetric ``uint8`` matrix: O(1) edge tests and O(N)
neighbour scans, which is what the tie-toggle sampler needs.  Node ids from
input files are arbitrary strings, mapped to a dense ``0..N-1`` range in file
order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, SpecError, UsageError

NUMERIC = "numeric"
CATEGORICAL = "categorical"


def n_dyads(n: int) -> int:
    return n * (n - 1) // 2


def dyad_index(i: int, j: int, n: int) -> int:
    """Linear index of the unordered pair {i, j} (row-major upper triangle)."""
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise UsageError(f"invalid dyad ({i}, {j}) for a network of {n} nodes")
    if i > j:
        i, j = j, i
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


def dyad_pair(k: int, n: int) -> tuple[int, int]:
    """Inverse of :func:`dyad_index`."""
    if not 0 <= k < n_dyads(n):
        raise UsageError(f"dyad index {k} out of range for {n} nodes")
    # row i starts at i*(2n-i-1)/2; solve the quadratic then fix rounding
    i = int((2 * n - 1 - math.sqrt((2 * n - 1) ** 2 - 8 * k)) // 2)
    while i > 0 and i * (2 * n - i - 1) // 2 > k:
        i -= 1
    while (i + 1) * (2 * n - i - 2) // 2 <= k:
        i += 1
    j = k - i * (2 * n - i - 1) // 2 + i + 1
    return i, j


def dyad_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    """All dyads as two index arrays, ordered by linear dyad index."""
    return np.triu_indices(n, 1)


class Network:
    """Simple undirected graph on ``n_nodes`` labelled nodes."""

    def __init__(self, n_nodes: int, edges: Iterable[tuple[int, int]] = (),
                 node_ids: Sequence[str] | None = None):
        if n_nodes < 1:
            raise UsageError("a network needs at least one node")
        self.n_nodes = int(n_nodes)
        self.adjacency = np.zeros((n_nodes, n_nodes), dtype=np.uint8)
        if node_ids is None:
            node_ids = [str(i) for i in range(n_nodes)]
        if len(node_ids) != n_nodes:
            raise UsageError("node_ids length does not match n_nodes")
        self.node_ids = tuple(str(v) for v in node_ids)
        self._edge_count = 0
        for i, j in edges:
            if i == j:
                raise UsageError(f"self-loop on node {i}")
            if not self.adjacency[i, j]:
                self.adjacency[i, j] = self.adjacency[j, i] = 1
                self._edge_count += 1

    @classmethod
    def from_adjacency(cls, adjacency: np.ndarray, node_ids: Sequence[str] | None = None) -> "Network":
        a = np.asarray(adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise UsageError("adjacency must be a square matrix")
        if not np.array_equal(a, a.T):
            raise UsageError("adjacency must be symmetric")
        if np.any(np.diag(a)):
            raise UsageError("adjacency must have an empty diagonal")
        net = cls(a.shape[0], node_ids=node_ids)
        net.adjacency[:] = (a != 0)
        net._edge_count = int(net.adjacency.sum()) // 2
        return net

    @classmethod
    def from_dyad_mask(cls, mask: int, n: int) -> "Network":
        """Graph whose dyad ``k`` is present iff bit ``k`` of ``mask`` is set."""
        rows, cols = dyad_arrays(n)
        bits = (mask >> np.arange(len(rows))) & 1
        net = cls(n)
        net.adjacency[rows, cols] = bits
        net.adjacency[cols, rows] = bits
        net._edge_count = int(bits.sum())
        return net

    @property
    def n_dyads(self) -> int:
        return n_dyads(self.n_nodes)

    @property
    def edge_count(self) -> int:
        return self._edge_count

    @property
    def density(self) -> float:
        d = self.n_dyads
        return self._edge_count / d if d else 0.0

    def _pair(self, d) -> tuple[int, int]:
        if isinstance(d, (tuple, list)):
            i, j = int(d[0]), int(d[1])
            dyad_index(i, j, self.n_nodes)  # validates
            return (i, j) if i < j else (j, i)
        return dyad_pair(int(d), self.n_nodes)

    def has_edge(self, i: int, j: int) -> bool:
        return i != j and bool(self.adjacency[i, j])

    def toggle(self, d) -> bool:
        """Flip dyad ``d`` (linear index or ``(i, j)`` pair); return its new state."""
        i, j = self._pair(d)
        new = 1 - self.adjacency[i, j]
        self.adjacency[i, j] = self.adjacency[j, i] = new
        self._edge_count += 1 if new else -1
        return bool(new)

    def neighbours(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1, dtype=np.int64)

    def shared_partner_count(self, i: int, j: int) -> int:
        if i == j:
            raise UsageError("shared partners need two distinct nodes")
        dyad_index(i, j, self.n_nodes)
        return int(np.dot(self.adjacency[i].astype(np.int64), self.adjacency[j]))

    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(rows.tolist(), cols.tolist()))

    def dyad_vector(self) -> np.ndarray:
        rows, cols = dyad_arrays(self.n_nodes)
        return self.adjacency[rows, cols].copy()

    def copy(self) -> "Network":
        other = Network(self.n_nodes, node_ids=self.node_ids)
        other.adjacency[:] = self.adjacency
        other._edge_count = self._edge_count
        return other

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (self.node_ids == other.node_ids
                and np.array_equal(self.adjacency, other.adjacency))

    def __repr__(self) -> str:
        return f"Network(n_nodes={self.n_nodes}, edges={self._edge_count})"


@dataclass
class AttributeTable:
    """Per-node covariates. Categorical columns hold strings drawn from ``levels``."""

    n_nodes: int
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    kinds: dict[str, str] = field(default_factory=dict)
    levels: dict[str, tuple[str, ...]] = field(default_factory=dict)
    reference: dict[str, str] = field(default_factory=dict)

    def add_numeric(self, name: str, values) -> None:
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n_nodes,):
            raise SpecError(f"column {name!r} has {v.size} values, expected {self.n_nodes}")
        if not np.all(np.isfinite(v)):
            raise SpecError(f"column {name!r} has missing or non-finite values")
        self.columns[name] = v
        self.kinds[name] = NUMERIC

    def add_categorical(self, name: str, values, levels: Sequence[str] | None = None,
                        reference: str | None = None) -> None:
        v = np.array([str(x) for x in values], dtype=object)
        if v.shape != (self.n_nodes,):
            raise SpecError(f"column {name!r} has {v.size} values, expected {self.n_nodes}")
        if levels is None:
            levels = sorted(set(v.tolist()), key=_level_key)
        levels = tuple(str(x) for x in levels)
        unknown = set(v.tolist()) - set(levels)
        if unknown:
            raise SpecError(f"column {name!r} has values outside its levels: {sorted(unknown)}")
        if reference is None:
            reference = levels[0]
        reference = str(reference)
        if reference not in levels:
            raise SpecError(f"reference level {reference!r} is not a level of {name!r}")
        self.columns[name] = v
        self.kinds[name] = CATEGORICAL
        self.levels[name] = levels
        self.reference[name] = reference

    def numeric(self, name: str) -> np.ndarray:
        self._require(name, NUMERIC)
        return self.columns[name]

    def codes(self, name: str) -> np.ndarray:
        """Integer level codes of a categorical column."""
        self._require(name, CATEGORICAL)
        lookup = {lev: k for k, lev in enumerate(self.levels[name])}
        return np.array([lookup[x] for x in self.columns[name]], dtype=np.int64)

    def indicator(self, name: str, level: str) -> np.ndarray:
        self._require(name, CATEGORICAL)
        if str(level) not in self.levels[name]:
            raise SpecError(f"{level!r} is not a level of column {name!r}")
        return (self.columns[name] == str(level)).astype(float)

    def _require(self, name: str, kind: str) -> None:
        if name not in self.columns:
            raise SpecError(f"attribute column {name!r} is missing")
        if self.kinds[name] != kind:
            raise SpecError(f"attribute column {name!r} is {self.kinds[name]}, expected {kind}")

    def schema(self) -> dict:
        out = {}
        for name, kind in self.kinds.items():
            if kind == NUMERIC:
                out[name] = {"type": NUMERIC}
            else:
                out[name] = {"type": CATEGORICAL, "levels": list(self.levels[name]),
                             "reference": self.reference[name]}
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttributeTable):
            return NotImplemented
        if (self.n_nodes, self.kinds, self.levels, self.reference) != (
                other.n_nodes, other.kinds, other.levels, other.reference):
            return False
        if list(self.columns) != list(other.columns):
            return False
        return all(np.array_equal(self.columns[c], other.columns[c]) for c in self.columns)


def _level_key(x: str):
    try:
        return (0, float(x), x)
    except ValueError:
        return (1, 0.0, x)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _edge_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InputError(f"expected two node ids, found {len(parts)} fields",
                                 str(path), lineno)
            yield lineno, parts[0], parts[1]


def read_edgelist(path, node_ids: Sequence[str] | None = None) -> Network:
    """Read a whitespace-separated edge list.

    Without ``node_ids`` nodes are numbered in order of first appearance, so
    isolates cannot be represented; pass the id list from an attribute file to
    fix the node set and order.
    """
    path = Path(path)
    lines = list(_edge_lines(path))
    if node_ids is None:
        order: dict[str, int] = {}
        for _, a, b in lines:
            order.setdefault(a, len(order))
            order.setdefault(b, len(order))
        ids = list(order)
    else:
        ids = [str(v) for v in node_ids]
        order = {v: k for k, v in enumerate(ids)}
        if len(order) != len(ids):
            raise InputError("duplicate node ids in node list", str(path))
    if not ids:
        raise InputError("edge list is empty and no node list was given", str(path))
    net = Network(len(ids), node_ids=ids)
    for lineno, a, b in lines:
        for v in (a, b):
            if v not in order:
                raise InputError(f"unknown node id {v!r}", str(path), lineno)
        i, j = order[a], order[b]
        if i == j:
            raise InputError(f"self-loop on node {a!r}", str(path), lineno)
        if not net.adjacency[i, j]:
            net.toggle((i, j))
    return net


def read_attributes(path, schema: Mapping[str, Mapping] | None = None) -> tuple[list[str], AttributeTable]:
    """Read the node attribute CSV; the first column holds node ids."""
    path = Path(path)
    schema = dict(schema or {})
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise InputError("attribute file is empty", str(path))
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise InputError("duplicate column names in header", str(path), 1)
    body = rows[1:]
    ids = []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InputError(f"expected {len(header)} fields, found {len(row)}", str(path), lineno)
        ids.append(row[0].strip())
    if len(set(ids)) != len(ids):
        raise InputError("duplicate node ids", str(path))
    table = AttributeTable(len(ids))
    for c, name in enumerate(header[1:], start=1):
        values = [row[c].strip() for row in body]
        for lineno, v in enumerate(values, start=2):
            if v == "" or v.upper() in {"NA", "NAN"}:
                raise InputError(f"missing value in column {name!r}", str(path), lineno)
        decl = schema.get(name, {})
        kind = decl.get("type")
        if kind is None:
            kind = NUMERIC if all(_is_float(v) for v in values) else CATEGORICAL
        try:
            if kind == NUMERIC:
                bad = [k for k, v in enumerate(values) if not _is_float(v)]
                if bad:
                    raise InputError(f"non-numeric value {values[bad[0]]!r} in column {name!r}",
                                     str(path), bad[0] + 2)
                table.add_numeric(name, [float(v) for v in values])
            elif kind == CATEGORICAL:
                table.add_categorical(name, values, decl.get("levels"), decl.get("reference"))
            else:
                raise SpecError(f"column {name!r}: unknown attribute type {kind!r}")
        except SpecError as exc:
            raise InputError(str(exc), str(path)) from exc
    missing = set(schema) - set(header[1:])
    if missing:
        raise InputError(f"schema declares columns absent from the file: {sorted(missing)}", str(path))
    return ids, table


def load_network(edges_path, attrs_path=None, schema=None) -> tuple[Network, AttributeTable]:
    """Load an edge list plus optional attribute table sharing one node order."""
    if attrs_path is None:
        net = read_edgelist(edges_path)
        return net, AttributeTable(net.n_nodes)
    ids, table = read_attributes(attrs_path, schema)
    return read_edgelist(edges_path, node_ids=ids), table


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_network(net: Network, edges_path, attrs: AttributeTable | None = None,
                  attrs_path=None) -> None:
    """Write the edge list, and the node table when ``attrs_path`` is given.

    The node table always lists every node, so isolates survive a round trip.
    """
    with open(edges_path, "w", encoding="utf-8") as fh:
        for i, j in net.edges():
            fh.write(f"{net.node_ids[i]} {net.node_ids[j]}\n")
    if attrs_path is None:
        return
    attrs = attrs or AttributeTable(net.n_nodes)
    names = list(attrs.columns)
    with open(attrs_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *names])
        for k, node in enumerate(net.node_ids):
            w.writerow([node, *(_fmt(attrs.columns[c][k]) for c in names)])
