"""Tie-toggle Metropolis-Hastings sampling from an ERGM, and Erdos-Renyi draws."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import NumericalError, UsageError
from .network import AttributeTable, Network, dyad_arrays, n_dyads, write_network
from .statistics import ModelSpec, chain_state, compute_stats, term_tables

log = logging.getLogger(__name__)

INITS = ("observed", "empty", "er_density")


@dataclass
class SamplerConfig:
    """Chain settings. ``None`` lengths resolve against the dyad count D.

    Defaults: ``burn_in = 20 D``, ``thin = D`` and, for a chain that resumes
    from an earlier call, ``warm_burn_in = D``.
    """

    burn_in: int | None = None
    thin: int | None = None
    m: int = 100
    seed: int = 0
    init: str = "observed"
    warm_burn_in: int | None = None
    n_chains: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise UsageError("sample size m must be at least 1")
        if self.thin is not None and self.thin < 1:
            raise UsageError("thin must be at least 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise UsageError("burn_in must be non-negative")
        if self.init not in INITS:
            raise UsageError(f"init must be one of {INITS}")
        if self.n_chains < 1 or self.workers < 1:
            raise UsageError("n_chains and workers must be positive")

    def lengths(self, n_nodes: int) -> tuple[int, int, int]:
        """Resolved ``(burn_in, thin, warm_burn_in)``."""
        d = max(n_dyads(n_nodes), 1)
        burn = 20 * d if self.burn_in is None else self.burn_in
        thin = d if self.thin is None else self.thin
        warm = d if self.warm_burn_in is None else self.warm_burn_in
        return burn, thin, warm


class MHChain:
    """One Markov chain with private mutable state, resumable across calls."""

    def __init__(self, start: Network, attrs: AttributeTable | None, spec: ModelSpec,
                 seed=0):
        self.spec = spec
        self.n_nodes = start.n_nodes
        self.node_ids = start.node_ids
        self.tables = term_tables(spec, attrs, start.n_nodes)
        self.adj, self.sp, self.deg, self.nbr, self.pos = chain_state(start)
        self.raw = compute_stats(start, attrs, spec).astype(float)
        self.rng = np.random.default_rng(seed)
        self.attempts = 0
        self.accepted = 0
        self.started = False

    def run(self, theta: np.ndarray, m: int, thin: int, burn_in: int,
            keep_networks: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
        """Advance the chain; return ``m`` raw statistic rows (and dyad vectors)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self.spec),):
            raise UsageError(f"theta has length {theta.size}, spec has {len(self.spec)} terms")
        theta_eff = theta / self.spec.scale_array
        out = np.empty((m, len(self.spec)))
        d = self.tables.rows.shape[0]
        nets = np.empty((m if keep_networks else 0, d), dtype=np.uint8)
        seed = int(self.rng.integers(0, 2**32 - 1))
        t = self.tables
        acc, status = _kernels.run_chain(
            self.adj, self.sp, self.deg, self.nbr, self.pos, self.raw, t.kinds, t.cov, t.weight, t.power,
            theta_eff, t.rows, t.cols, seed, int(burn_in), int(thin), out,
            t.track_sp, nets, np.empty(len(self.spec)))
        if status != 0:
            raise NumericalError(
                f"non-finite acceptance exponent at theta={theta.tolist()} "
                f"(scaled); the parameter has overflowed")
        self.attempts += burn_in + m * thin
        self.accepted += acc
        self.started = True
        return out, (nets if keep_networks else None)

    def network(self) -> Network:
        net = Network(self.n_nodes, node_ids=self.node_ids)
        net.adjacency[:] = self.adj
        net._edge_count = int(self.adj.sum()) // 2
        return net

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else float("nan")


def _start_network(net0: Network, init: str, rng: np.random.Generator) -> Network:
    if init == "observed":
        return net0.copy()
    if init == "empty":
        return Network(net0.n_nodes, node_ids=net0.node_ids)
    adj = _er_batch(net0.n_nodes, net0.density, 1, rng)[0]
    return Network.from_adjacency(adj, node_ids=net0.node_ids)


class ChainPool:
    """Independent chains sharing one spec; draws are split evenly across them.

    Chain ``k`` is seeded from ``SeedSequence(seed).spawn(n_chains)[k]`` and
    merged output is ordered by (chain, draw), so results do not depend on
    how many worker threads run the chains.
    """

    def __init__(self, net0: Network, attrs: AttributeTable | None, spec: ModelSpec,
                 cfg: SamplerConfig):
        self.cfg = cfg
        self.spec = spec
        self.n_dyads = n_dyads(net0.n_nodes)
        self.burn_in, self.thin, self.warm_burn_in = cfg.lengths(net0.n_nodes)
        children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
        self.chains = []
        for child in children:
            rng = np.random.default_rng(child)
            start = _start_network(net0, cfg.init, rng)
            self.chains.append(MHChain(start, attrs, spec, rng))

    def draw(self, theta, m: int | None = None, thin: int | None = None,
             keep_networks: bool = False):
        """``m`` scaled statistic rows at ``theta`` (plus dyad vectors if asked)."""
        m = self.cfg.m if m is None else m
        thin = self.thin if thin is None else thin
        c = len(self.chains)
        sizes = [m // c + (k < m % c) for k in range(c)]

        def job(k):
            ch = self.chains[k]
            burn = self.warm_burn_in if ch.started else self.burn_in
            return ch.run(theta, sizes[k], thin, burn, keep_networks)

        if self.cfg.workers > 1 and c > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as ex:
                results = list(ex.map(job, range(c)))
        else:
            results = [job(k) for k in range(c)]
        raw = np.concatenate([r[0] for r in results if r[0].shape[0]], axis=0)
        stats = raw / self.spec.scale_array
        if keep_networks:
            return stats, np.concatenate([r[1] for r in results if r[1].shape[0]], axis=0)
        return stats

    @property
    def acceptance_rate(self) -> float:
        att = sum(ch.attempts for ch in self.chains)
        return sum(ch.accepted for ch in self.chains) / att if att else float("nan")


def networks_from_dyads(dyads: np.ndarray, template: Network) -> list[Network]:
    rows, cols = dyad_arrays(template.n_nodes)
    nets = []
    for vec in dyads:
        net = Network(template.n_nodes, node_ids=template.node_ids)
        net.adjacency[rows, cols] = vec
        net.adjacency[cols, rows] = vec
        net._edge_count = int(vec.sum())
        nets.append(net)
    return nets


def sample(spec: ModelSpec, theta, net0: Network, attrs: AttributeTable | None,
           cfg: SamplerConfig | None = None, return_networks: bool = False):
    """Draw ``cfg.m`` states from the ERGM at ``theta`` (scaled units).

    Returns an ``(m, p)`` array of scaled statistics, and the sampled networks
    when ``return_networks`` is set.
    """
    cfg = cfg or SamplerConfig()
    pool = ChainPool(net0, attrs, spec, cfg)
    if return_networks:
        stats, dyads = pool.draw(theta, keep_networks=True)
        return stats, networks_from_dyads(dyads, net0)
    return pool.draw(theta)


def _er_batch(n: int, p: float, m: int, rng: np.random.Generator) -> np.ndarray:
    rows, cols = dyad_arrays(n)
    y = (rng.random((m, len(rows))) < p).astype(np.uint8)
    adj = np.zeros((m, n, n), dtype=np.uint8)
    adj[:, rows, cols] = y
    adj[:, cols, rows] = y
    return adj


def sample_er_adjacency(n: int, p: float, m: int, seed=0) -> np.ndarray:
    """``(m, n, n)`` adjacency stack of independent Erdos-Renyi graphs."""
    if not 0.0 <= p <= 1.0:
        raise UsageError(f"tie probability must lie in [0, 1], got {p}")
    return _er_batch(n, p, m, np.random.default_rng(seed))


def sample_er(n: int, p: float, m: int, seed=0) -> list[Network]:
    return [Network.from_adjacency(a) for a in sample_er_adjacency(n, p, m, seed)]


def sample_block_bernoulli(x: np.ndarray, probs: Sequence[float], seed=0) -> Network:
    """Independent ties whose probability depends on how many endpoints have x=1.

    ``probs[k]`` is the tie probability when ``k`` of the two endpoints carry
    the attribute.
    """
    x = np.asarray(x).astype(int)
    n = x.size
    rows, cols = dyad_arrays(n)
    rng = np.random.default_rng(seed)
    p = np.asarray(probs, dtype=float)[x[rows] + x[cols]]
    y = (rng.random(len(rows)) < p).astype(np.uint8)
    net = Network(n)
    net.adjacency[rows, cols] = y
    net.adjacency[cols, rows] = y
    net._edge_count = int(y.sum())
    return net


def write_draws(directory, networks: Sequence[Network]) -> list[Path]:
    """Dump draws as ``draw_00000.edges`` ... plus a shared node list."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, net in enumerate(networks):
        path = directory / f"draw_{k:05d}.edges"
        write_network(net, path)
        paths.append(path)
    if networks:
        with open(directory / "nodes.csv", "w", encoding="utf-8") as fh:
            fh.write("id\n")
            for v in networks[0].node_ids:
                fh.write(f"{v}\n")
    return paths
