"""Graphs, TU-format datasets, splits, random graphs and padded batches."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IntegrityError, LoadError, ParameterError
from .tensor import get_dtype, make_rng

TU_URL = "https://www.chrsmrrs.com/graphkerneldatasets/{name}.zip"


class GnnType(str, Enum):
    GCN = "gcn"
    GIN = "gin"


@dataclass(eq=False)
class Graph:
    """Undirected graph; each edge stored once as (u, v) with u < v."""

    num_nodes: int
    edges: np.ndarray
    node_labels: np.ndarray
    label: int = 0

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.num_nodes:
                raise IntegrityError(f"edge endpoint outside [0, {self.num_nodes})")
            edges = np.sort(edges, axis=1)
            if (edges[:, 0] == edges[:, 1]).any():
                raise IntegrityError("self-loops are not stored")
            edges = np.unique(edges, axis=0)
        self.edges = edges
        self.node_labels = np.asarray(self.node_labels, dtype=np.int64).reshape(-1)
        if len(self.node_labels) != self.num_nodes:
            raise IntegrityError(f"{len(self.node_labels)} node labels for {self.num_nodes} nodes")
        self.label = int(self.label)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.label == other.label
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.node_labels, other.node_labels)
        )

    __hash__ = object.__hash__

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=np.float64)
        if self.num_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def neighbours(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].append(int(v))
            adj[v].append(int(u))
        return adj

    def permute(self, perm: Sequence[int]) -> Graph:
        """Relabel node ``v`` as ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        labels = np.empty_like(self.node_labels)
        labels[perm] = self.node_labels
        return Graph(self.num_nodes, perm[self.edges] if self.num_edges else self.edges, labels, self.label)


@dataclass
class Dataset:
    graphs: list[Graph]
    num_node_label_values: int
    num_classes: int
    name: str = ""

    def __post_init__(self) -> None:
        for i, g in enumerate(self.graphs):
            if g.num_nodes and g.node_labels.max() >= self.num_node_label_values:
                raise IntegrityError(f"graph {i}: node label >= {self.num_node_label_values}")
            if g.label >= self.num_classes:
                raise IntegrityError(f"graph {i}: label >= {self.num_classes}")

    def __len__(self) -> int:
        return len(self.graphs)


# ------------------------------------------------------------------ TU format


def _read_ints(path: Path) -> np.ndarray:
    if not path.exists():
        raise LoadError(f"missing file {path}")
    text = path.read_text().replace(",", " ")
    return np.array(text.split(), dtype=np.int64)


def load_tu_dataset(directory: str | Path, name: str) -> Dataset:
    """Read the ``{name}_*.txt`` files of a TU graph-kernel dataset."""
    directory = Path(directory)
    for suffix in ("A", "graph_indicator", "graph_labels", "node_labels"):
        if not (directory / f"{name}_{suffix}.txt").exists():
            raise LoadError(
                f"missing file {directory / f'{name}_{suffix}.txt'} "
                f"(download {TU_URL.format(name=name)} and unpack it into {directory})"
            )
    indicator = _read_ints(directory / f"{name}_graph_indicator.txt")
    graph_labels = _read_ints(directory / f"{name}_graph_labels.txt")
    node_labels = _read_ints(directory / f"{name}_node_labels.txt")
    edges = _read_ints(directory / f"{name}_A.txt")
    if edges.size % 2:
        raise IntegrityError(f"{name}_A.txt has an odd number of entries")
    edges = edges.reshape(-1, 2)

    num_graphs = len(graph_labels)
    num_nodes = len(indicator)
    if num_nodes and (indicator.min() < 1 or indicator.max() > num_graphs):
        raise IntegrityError(f"graph indicator references ids outside 1..{num_graphs}")
    if np.any(np.diff(indicator) < 0):
        raise IntegrityError("graph indicator is not sorted; nodes of a graph must be contiguous")
    if len(node_labels) != num_nodes:
        raise IntegrityError(f"{len(node_labels)} node labels for {num_nodes} nodes")
    if edges.size and (edges.min() < 1 or edges.max() > num_nodes):
        raise IntegrityError(f"edge references node outside 1..{num_nodes}")

    edges = edges - 1
    graph_of = indicator - 1
    if edges.size and np.any(graph_of[edges[:, 0]] != graph_of[edges[:, 1]]):
        raise IntegrityError("edge connects nodes of different graphs")

    label_values, dense_labels = np.unique(graph_labels, return_inverse=True)
    node_values, dense_nodes = np.unique(node_labels, return_inverse=True)
    counts = np.bincount(graph_of, minlength=num_graphs)
    if np.any(counts == 0):
        raise IntegrityError("graph without nodes")
    offsets = np.concatenate([[0], np.cumsum(counts)])

    edges = edges[edges[:, 0] != edges[:, 1]]
    edge_graph = graph_of[edges[:, 0]] if edges.size else np.zeros(0, dtype=np.int64)
    order = np.argsort(edge_graph, kind="stable")
    edges, edge_graph = edges[order], edge_graph[order]
    bounds = np.searchsorted(edge_graph, np.arange(num_graphs + 1))

    graphs = []
    for g in range(num_graphs):
        lo, hi = offsets[g], offsets[g + 1]
        local = edges[bounds[g] : bounds[g + 1]] - lo
        graphs.append(Graph(int(hi - lo), local, dense_nodes[lo:hi], int(dense_labels[g])))
    return Dataset(graphs, len(node_values), len(label_values), name)


def write_tu_dataset(dataset: Dataset, directory: str | Path, name: str | None = None) -> None:
    """Write ``dataset`` in TU format with both directed copies of every edge."""
    name = name or dataset.name
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    a_lines, indicator, node_labels = [], [], []
    offset = 0
    for gid, g in enumerate(dataset.graphs, start=1):
        for u, v in g.edges:
            a_lines.append(f"{u + offset + 1}, {v + offset + 1}")
            a_lines.append(f"{v + offset + 1}, {u + offset + 1}")
        indicator.extend([str(gid)] * g.num_nodes)
        node_labels.extend(str(x) for x in g.node_labels)
        offset += g.num_nodes
    (directory / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (directory / f"{name}_graph_indicator.txt").write_text("\n".join(indicator) + "\n")
    (directory / f"{name}_node_labels.txt").write_text("\n".join(node_labels) + "\n")
    (directory / f"{name}_graph_labels.txt").write_text("\n".join(str(g.label) for g in dataset.graphs) + "\n")


# ------------------------------------------------------------------ splits and generators


def split(
    graphs: Dataset | Sequence[Graph], ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[list[Graph], list[Graph], list[Graph]]:
    """Seeded shuffle then contiguous slices of size floor(r0*n), floor(r1*n), remainder."""
    items = list(graphs.graphs if isinstance(graphs, Dataset) else graphs)
    if not items:
        raise ParameterError("cannot split an empty dataset")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ParameterError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(items)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_valid = math.floor(ratios[1] * n + 1e-9)
    order = make_rng(seed).permutation(n)
    shuffled = [items[i] for i in order]
    return shuffled[:n_train], shuffled[n_train : n_train + n_valid], shuffled[n_train + n_valid :]


def erdos_renyi(n: int, density: float, seed: int) -> Graph:
    """G(n, p) graph: every unordered pair present independently with probability ``density``."""
    if not 0 <= density <= 1:
        raise ParameterError(f"density must lie in [0, 1], got {density}")
    iu, ju = np.triu_indices(n, k=1)
    keep = make_rng(seed).random(len(iu)) < density
    return Graph(n, np.stack([iu[keep], ju[keep]], axis=1), np.zeros(n, dtype=np.int64), 0)


def synthetic_dataset(
    num_graphs: int, seed: int, min_nodes: int = 4, max_nodes: int = 12, density: float = 0.3, num_labels: int = 3
) -> Dataset:
    """Random labelled graphs; class 1 iff label-0 nodes outnumber label-1 nodes.

    Stands in for a TU dataset in smoke runs and tests.
    """
    rng = make_rng(seed)
    graphs = []
    for i in range(num_graphs):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        g = erdos_renyi(n, density, int(rng.integers(1 << 31)))
        labels = rng.integers(0, num_labels, size=n)
        y = int((labels == 0).sum() > (labels == 1).sum())
        graphs.append(Graph(n, g.edges, labels, y))
    return Dataset(graphs, num_labels, 2, name="SYNTH")


# ------------------------------------------------------------------ hop masks


@dataclass
class HopMask:
    n: int
    reach: np.ndarray


def hop_mask(graph: Graph, n: int) -> HopMask:
    """Pairs within ``n`` hops (self included), by depth-truncated BFS from each node."""
    if n < 1:
        raise ParameterError(f"hop radius must be >= 1, got {n}")
    adj = graph.neighbours()
    reach = np.zeros((graph.num_nodes, graph.num_nodes), dtype=bool)
    for src in range(graph.num_nodes):
        depth = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if depth[u] == n:
                continue
            for v in adj[u]:
                if v not in depth:
                    depth[v] = depth[u] + 1
                    queue.append(v)
        reach[src, list(depth)] = True
    return HopMask(n, reach)


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    node_labels: np.ndarray
    padding_mask: np.ndarray
    adjacency: np.ndarray
    labels: np.ndarray
    graph_sizes: np.ndarray
    gnn_type: GnnType
    graphs: list[Graph] = field(repr=False, default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def max_nodes(self) -> int:
        return self.padding_mask.shape[1]

    def hop_masks(self, n: int) -> np.ndarray:
        """[B, N, N] boolean reachability within ``n`` hops; false outside real nodes."""
        out = np.zeros((len(self), self.max_nodes, self.max_nodes), dtype=bool)
        for i, g in enumerate(self.graphs):
            out[i, : g.num_nodes, : g.num_nodes] = hop_mask(g, n).reach
        return out


def normalized_adjacency(graph: Graph) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = graph.adjacency() + np.eye(graph.num_nodes)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def make_batch(
    graphs: Sequence[Graph],
    gnn_type: GnnType | str = GnnType.GCN,
    pad_label: int = 0,
    max_nodes: int | None = None,
) -> Batch:
    """Pad ``graphs`` to a common node count.

    ``pad_label`` fills padded label slots (models pass the dataset's label count,
    the index of the extra padding row in their embedding table).  ``max_nodes``
    forces a larger padded width.
    """
    if not graphs:
        raise ParameterError("cannot batch an empty list of graphs")
    gnn_type = GnnType(gnn_type)
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    n_max = int(max(sizes.max(), max_nodes or 0))
    b = len(graphs)
    node_labels = np.full((b, n_max), pad_label, dtype=np.int64)
    mask = np.zeros((b, n_max), dtype=bool)
    adjacency = np.zeros((b, n_max, n_max), dtype=get_dtype())
    for i, g in enumerate(graphs):
        k = g.num_nodes
        node_labels[i, :k] = g.node_labels
        mask[i, :k] = True
        adjacency[i, :k, :k] = normalized_adjacency(g) if gnn_type is GnnType.GCN else g.adjacency()
    labels = np.array([g.label for g in graphs], dtype=np.int64)
    return Batch(node_labels, mask, adjacency, labels, sizes, gnn_type, list(graphs))
