import json

import networkx as nx
import numpy as np
import pytest

from graph import build_topology
from plant import ScalarParams
from scenario import load_preset


@pytest.fixture
def example():
    return load_preset("example-4.1")

@pytest.fixture
def example_noadditive():
    return load_preset("example-4.1-noadditive")

@pytest.fixture
def scalar():
    # a0 - k c0 = -1, ai + bi k1 = -2, pi = 1, gamma = 1
    return ScalarParams(a0=0.0, c0=1.0, ai=-1.0, bi=1.0, ci=1.0, k=1.0, k1=-1.0)


def random_topology(n: int, p_edge: float, seed: int):
    rng = np.random.default_rng(seed)
    G = nx.gnp_random_graph(n, p_edge, seed=seed)
    adj = nx.to_numpy_array(G, nodelist=range(n), dtype=int)
    links = (rng.random(n) < 0.3).astype(int)
    return build_topology(adj, links)


def scalar_scenario_doc(a0=0.5, alpha=1.0, k1=1.0, k2=1.0, sigma=0.0, upsilon=0.0, leader_c0=1.0):
    """One scalar follower tied to the leader: a minimal valid scenario file."""
    doc = {
        "leader": {"A0": [[a0]], "C0": [[leader_c0]]},
        "followers": [{"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]]}],
        "topology": {"adjacency": [[0]], "leader_links": [1]},
        "noise": {"additive": {}, "multiplicative": {}},
        "initial": {"x0": [1.0], "followers": [{"x": [0.0], "xhat": [0.0], "xhat0": [0.0]}]},
        "synthesis": {"alpha": alpha, "k1": k1, "k2": k2},
        "sim": {"dt": 0.01, "horizon": 1.0, "trials": 4, "seed": 3},
    }
    if upsilon:
        doc["noise"]["additive"]["1-0"] = [upsilon]
    if sigma:
        doc["noise"]["multiplicative"]["1-0"] = sigma
    return doc


def write_json(path, doc) -> str:
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)
