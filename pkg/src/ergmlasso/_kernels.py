"""Compiled inner loops: change statistics and the tie-toggle Metropolis chain.

Chain state is ``(adj, sp, deg, nbr, pos)``: the adjacency matrix, the
shared-partner matrix ``sp[i, j] = |N(i) & N(j)|``, the degree vector, and
neighbour lists ``nbr[i, :deg[i]]`` with ``pos[i, k]`` the slot of k in row i.  ``sp`` is only kept
current when the model has a shared-partner term (``track_sp``).
"""

from __future__ import annotations

import numpy as np
from numba import njit

EDGES, GWESP, GWNSP, GWDEGREE, NODECOV, NODEFACTOR, NODEMATCH = range(7)


@njit(cache=True, nogil=True, _nrt=False)
def change_stats(adj, sp, deg, nbr, i, j, kinds, cov, weight, power, out):
    """Write s(y with {i,j}) - s(y without {i,j}) into ``out`` (raw units).

    ``weight[t, k]`` is the geometric weight of k shared partners (or of degree
    k); ``power[t, k]`` is its forward difference ``weight[t, k+1] - weight[t, k]``.
    """
    yij = adj[i, j]
    n_terms = kinds.shape[0]
    has_sp = False
    for t in range(n_terms):
        kind = kinds[t]
        if kind == EDGES:
            out[t] = 1.0
        elif kind == GWESP:
            out[t] = weight[t, sp[i, j]]
            has_sp = True
        elif kind == GWNSP:
            out[t] = -weight[t, sp[i, j]]
            has_sp = True
        elif kind == GWDEGREE:
            out[t] = power[t, deg[i] - yij] + power[t, deg[j] - yij]
        elif kind == NODECOV or kind == NODEFACTOR:
            out[t] = cov[t, i] + cov[t, j]
        elif kind == NODEMATCH:
            out[t] = 1.0 if cov[t, i] == cov[t, j] else 0.0
        else:
            out[t] = np.nan
    if has_sp:
        _shared_partner_change(adj, sp, deg, nbr, i, j, kinds, power, out)


@njit(cache=True, nogil=True, _nrt=False)
def _shared_partner_change(adj, sp, deg, nbr, i, j, kinds, power, out):
    # pairs {j,k} with k in N(i) gain i as a shared partner, pairs {i,k} with
    # k in N(j) gain j; counts below are taken in the graph without {i,j}
    yij = adj[i, j]
    n_terms = kinds.shape[0]
    for a, b in ((i, j), (j, i)):
        for q in range(deg[a]):
            k = nbr[a, q]
            if k == b:
                continue
            target = GWESP if adj[b, k] else GWNSP
            s = sp[b, k] - yij
            for t in range(n_terms):
                if kinds[t] == target:
                    out[t] += power[t, s]


@njit(cache=True, nogil=True, _nrt=False)
def apply_toggle(adj, sp, deg, nbr, pos, i, j, track_sp):
    """Flip {i,j}, keeping shared partners, degrees and neighbour lists current."""
    new = 1 - adj[i, j]
    step = 1 if new else -1
    if track_sp:
        for a, b in ((i, j), (j, i)):
            for q in range(deg[a]):
                k = nbr[a, q]
                if k != b:
                    sp[b, k] += step
                    sp[k, b] += step
    adj[i, j] = new
    adj[j, i] = new
    for a, b in ((i, j), (j, i)):
        if new:
            nbr[a, deg[a]] = b
            pos[a, b] = deg[a]
            deg[a] += 1
        else:
            last = nbr[a, deg[a] - 1]
            q = pos[a, b]
            nbr[a, q] = last
            pos[a, last] = q
            deg[a] -= 1


@njit(cache=True, nogil=True, _nrt=False)
def run_chain(adj, sp, deg, nbr, pos, stats, kinds, cov, weight, power, theta_eff,
              rows, cols, seed, burn_in, thin, out, track_sp, record_nets, delta):
    """Metropolis tie-toggle chain with uniform dyad proposals.

    Runs ``burn_in + out.shape[0] * thin`` attempts, copying the running raw
    statistics into ``out`` after each block of ``thin`` attempts that follows
    the burn-in.  ``theta_eff`` already carries the scale factors.  Returns
    ``(accepted, status)``; status -1 flags a non-finite log acceptance ratio.
    When ``record_nets`` has rows, the dyad vector of each retained state is
    stored there as well.
    """
    np.random.seed(seed)
    n_terms = kinds.shape[0]
    n_dyad = rows.shape[0]
    m = out.shape[0]
    total = burn_in + m * thin
    accepted = 0
    row = 0
    keep_nets = record_nets.shape[0] > 0
    for a in range(total):
        d = np.random.randint(0, n_dyad)
        i = rows[d]
        j = cols[d]
        change_stats(adj, sp, deg, nbr, i, j, kinds, cov, weight, power, delta)
        lr = 0.0
        for t in range(n_terms):
            lr += theta_eff[t] * delta[t]
        if not np.isfinite(lr):
            return accepted, -1
        sign = -1.0 if adj[i, j] else 1.0
        lr *= sign
        if lr >= 0.0 or np.log(np.random.random()) < lr:
            apply_toggle(adj, sp, deg, nbr, pos, i, j, track_sp)
            for t in range(n_terms):
                stats[t] += sign * delta[t]
            accepted += 1
        done = a + 1 - burn_in
        if done > 0 and done % thin == 0:
            for t in range(n_terms):
                out[row, t] = stats[t]
            if keep_nets:
                for e in range(n_dyad):
                    record_nets[row, e] = adj[rows[e], cols[e]]
            row += 1
    return accepted, 0
