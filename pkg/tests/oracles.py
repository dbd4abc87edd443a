"""Independent reference implementations used by the unit and acceptance suites."""
import math

import numpy as np

from graphtrans.graphdata import Graph, erdos_renyi


def scalar_attention(h, padding_mask, structural, p, num_heads, gamma=1e9):
    """Multi-head attention one (query, key) pair at a time with plain floats.

    ``h`` is [B, S, d]; returns the mixed output [B, S, d] and weights [B, H, S, S].
    """
    b, s, d = h.shape
    dh = d // num_heads
    names = ("wq", "wk", "wv", "wo", "bo")
    wq, wk, wv, wo, bo = (np.asarray(getattr(p[k], "data", p[k]), dtype=np.float64) for k in names)
    out = np.zeros((b, s, d))
    alpha = np.zeros((b, num_heads, s, s))
    for g in range(b):
        for v in range(s):
            if not padding_mask[g, v]:
                continue
            concat = []
            for head in range(num_heads):
                cols = slice(head * dh, (head + 1) * dh)
                q = [sum(h[g, v, i] * wq[i, j] for i in range(d)) for j in range(cols.start, cols.stop)]
                scores = {}
                for u in range(s):
                    if not padding_mask[g, u]:
                        continue
                    k = [sum(h[g, u, i] * wk[i, j] for i in range(d)) for j in range(cols.start, cols.stop)]
                    score = sum(qa * ka for qa, ka in zip(q, k)) / math.sqrt(dh)
                    if structural is not None and not structural[g, v, u]:
                        score -= gamma
                    scores[u] = score
                top = max(scores.values())
                z = sum(math.exp(x - top) for x in scores.values())
                mixed = [0.0] * dh
                for u, x in scores.items():
                    a = math.exp(x - top) / z
                    alpha[g, head, v, u] = a
                    val = [sum(h[g, u, i] * wv[i, j] for i in range(d)) for j in range(cols.start, cols.stop)]
                    mixed = [m + a * vv for m, vv in zip(mixed, val)]
                concat.extend(mixed)
            out[g, v] = np.array(concat) @ wo + bo
    return out, alpha


def shortest_paths(g: Graph) -> np.ndarray:
    """Floyd-Warshall hop distances (inf when disconnected)."""
    n = g.num_nodes
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0)
    for u, v in g.edges:
        dist[u, v] = dist[v, u] = 1
    for k in range(n):
        dist = np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :])
    return dist


def diameter(g: Graph) -> int:
    return int(shortest_paths(g).max())


def random_connected_graph(n: int, density: float, seed: int, num_labels: int = 3) -> Graph:
    """G(n, p) plus a random spanning path, so every graph is connected."""
    rng = np.random.default_rng(seed)
    base = erdos_renyi(n, density, seed)
    order = rng.permutation(n)
    path = np.stack([order[:-1], order[1:]], axis=1)
    edges = np.concatenate([base.edges.reshape(-1, 2), path]) if n > 1 else base.edges
    return Graph(n, edges, rng.integers(0, num_labels, n), int(rng.integers(0, 2)))
