#!/usr/bin/env python3
"""
Communication topology: leader node 0 plus N followers with undirected,
unweighted follower edges and one-way leader links.

- build_topology validates the adjacency (binary, symmetric, zero diagonal)
- spectral_summary gives the Laplacian L, F = diag(a_10..a_N0), lambda_1(L+F)
  and a reachability-based spanning-tree flag (networkx)
- selector_matrices returns the four N x N selector matrices of follower i / edge (i,j)

Follower indices are 1-based everywhere in this module's public API.
"""

from dataclasses import dataclass
from typing import Any, List, NamedTuple, Tuple

import networkx as nx
import numpy as np


LEADER = 0


class TopologyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Topology:
    n_followers: int
    follower_adjacency: np.ndarray      # N x N int, symmetric, zero diagonal
    leader_links: np.ndarray            # N int

    def a(self, i: int, j: int) -> int:
        """Edge weight a_ij (j = 0 means the leader link a_i0)."""
        _check_index(self, i)
        if j == LEADER:
            return int(self.leader_links[i - 1])
        _check_index(self, j)
        return int(self.follower_adjacency[i - 1, j - 1])


class SpectralSummary(NamedTuple):
    laplacian: np.ndarray
    leader_diag: np.ndarray
    lambda1: float
    has_spanning_tree: bool


class Selectors(NamedTuple):
    S1: np.ndarray      # a_ij at (i,i)
    S1_bar: np.ndarray  # a_i0 at (i,i)
    S2: np.ndarray      # -a_ij at (i,i), a_ij at (i,j)
    S2_bar: np.ndarray  # a_i0 at (i,i)


def _check_index(t: Topology, i: int) -> None:
    if not (1 <= i <= t.n_followers):
        raise TopologyError(f"follower index {i} out of range 1..{t.n_followers}")

def _binary(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isin(arr, (0, 1))):
        raise TopologyError(f"{name}: entries must be 0 or 1")
    return arr.astype(int)


def build_topology(adjacency: Any, leader_links: Any) -> Topology:
    try:
        adj = np.array(adjacency, dtype=float)
        links = np.array(leader_links, dtype=float).reshape(-1)
    except (TypeError, ValueError) as e:
        raise TopologyError(f"topology: not numeric ({e})") from None
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise TopologyError(f"adjacency must be square, got shape {adj.shape}")
    n = adj.shape[0]
    if n < 1:
        raise TopologyError("at least one follower is required")
    if links.shape[0] != n:
        raise TopologyError(f"leader_links has {links.shape[0]} entries, expected {n}")
    adj = _binary(adj, "adjacency")
    links = _binary(links, "leader_links")
    if np.any(np.diag(adj) != 0):
        raise TopologyError("adjacency diagonal must be zero (no self loops)")
    if not np.array_equal(adj, adj.T):
        bad = np.argwhere(adj != adj.T)[0] + 1
        raise TopologyError(f"follower graph must be undirected: a[{bad[0]},{bad[1]}] != a[{bad[1]},{bad[0]}]")
    adj.setflags(write=False)
    links.setflags(write=False)
    return Topology(n, adj, links)

def star_topology(n: int) -> Topology:
    return build_topology(np.zeros((n, n), dtype=int), np.ones(n, dtype=int))


# ------------------------------- Edges ----------------------------------------

def neighbors(t: Topology, i: int) -> List[int]:
    """Followers j with a_ij = 1, ascending, followed by 0 if the leader links to i."""
    _check_index(t, i)
    out = [j + 1 for j in np.flatnonzero(t.follower_adjacency[i - 1])]
    if t.leader_links[i - 1]:
        out.append(LEADER)
    return out

def edges(t: Topology) -> List[Tuple[int, int]]:
    """Ordered receiving edges (i, j): follower i hears j (j = 0 is the leader)."""
    return [(i, j) for i in range(1, t.n_followers + 1) for j in neighbors(t, i)]

def to_networkx(t: Topology) -> nx.DiGraph:
    G = nx.DiGraph()
    G.add_nodes_from(range(t.n_followers + 1))
    for i, j in edges(t):
        G.add_edge(j, i)    # information flows j -> i
    return G

def leader_reachable(t: Topology) -> bool:
    G = to_networkx(t)
    return len(nx.descendants(G, LEADER)) == t.n_followers


# ------------------------------ Spectra ---------------------------------------

def laplacian(t: Topology) -> np.ndarray:
    G = nx.from_numpy_array(np.asarray(t.follower_adjacency))
    return nx.laplacian_matrix(G, nodelist=list(range(t.n_followers))).toarray().astype(float)

def spectral_summary(t: Topology) -> SpectralSummary:
    L = laplacian(t)
    F = np.diag(t.leader_links.astype(float))
    M = L + F
    lam = float(np.linalg.eigvalsh(M)[0])
    # eigvalsh can return -1e-16 for a singular L+F
    if lam < 1e-12 * max(1.0, float(np.abs(M).max())):
        lam = 0.0
    return SpectralSummary(L, F, lam, leader_reachable(t))


# ----------------------------- Selectors --------------------------------------

def selector_matrices(t: Topology, i: int, j: int) -> Selectors:
    _check_index(t, i)
    _check_index(t, j)
    n = t.n_followers
    aij = float(t.follower_adjacency[i - 1, j - 1])
    ai0 = float(t.leader_links[i - 1])
    S1, S1b, S2, S2b = (np.zeros((n, n)) for _ in range(4))
    S1[i - 1, i - 1] = aij
    S1b[i - 1, i - 1] = ai0
    S2[i - 1, i - 1] = -aij
    # i == j has a_ii = 0, so this assignment never cancels the diagonal
    S2[i - 1, j - 1] += aij
    S2b[i - 1, i - 1] = ai0
    return Selectors(S1, S1b, S2, S2b)
