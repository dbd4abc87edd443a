"""Local message passing: GCN and GIN stacks with an optional virtual node."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ParameterError, ShapeError
from .graphdata import Batch, GnnType
from .tensor import Tensor


@dataclass
class GnnConfig:
    gnn_type: GnnType = GnnType.GCN
    num_layers: int = 3
    hidden_dim: int = 128
    dropout: float = 0.1
    use_virtual_node: bool = False

    def __post_init__(self) -> None:
        self.gnn_type = GnnType(self.gnn_type)
        # depth 0 means the embedding lookup alone (transformer-only baseline)
        if self.num_layers < 0:
            raise ParameterError("gnn.num_layers must be >= 0")
        if self.hidden_dim < 1:
            raise ParameterError("gnn.hidden_dim must be >= 1")


@dataclass
class GnnParams:
    embedding: Tensor
    layers: list[dict[str, Tensor]] = field(default_factory=list)
    virtual: list[dict[str, Tensor]] = field(default_factory=list)


def _mlp(rng: np.random.Generator, d: int) -> dict[str, Tensor]:
    return {"w1": T.glorot(rng, d, d), "b1": T.zeros(d), "w2": T.glorot(rng, d, d), "b2": T.zeros(d)}


def init_gnn_params(config: GnnConfig, num_node_label_values: int, rng: np.random.Generator) -> GnnParams:
    """The embedding table has one extra row used by padding slots."""
    d = config.hidden_dim
    emb = T.parameter(rng.normal(0.0, 0.02, size=(num_node_label_values + 1, d)))
    layers = []
    for _ in range(config.num_layers):
        if config.gnn_type is GnnType.GCN:
            layers.append({"w": T.glorot(rng, d, d)})
        else:
            layers.append({**_mlp(rng, d), "eps": T.zeros(1)})
    virtual = []
    if config.use_virtual_node:
        virtual = [_mlp(rng, d) for _ in range(max(config.num_layers - 1, 0))]
    return GnnParams(emb, layers, virtual)


def _apply_mlp(x: Tensor, mlp: dict[str, Tensor]) -> Tensor:
    return T.linear(T.relu(T.linear(x, mlp["w1"], mlp["b1"])), mlp["w2"], mlp["b2"])


def gcn_layer(
    h: Tensor,
    adjacency: np.ndarray | Tensor,
    w: Tensor,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """relu(A_hat h W) with the normalised adjacency; padded rows of A_hat are zero."""
    if h.shape[-1] != w.shape[0]:
        raise ShapeError(f"gcn_layer: features {h.shape} do not match weight {w.shape}")
    out = T.relu(T.matmul(T.matmul(T.as_tensor(adjacency), h), w))
    return T.dropout(out, dropout, training, rng)


def gin_layer(
    h: Tensor,
    adjacency: np.ndarray | Tensor,
    mlp: dict[str, Tensor],
    eps: Tensor,
    mask: np.ndarray | None = None,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """relu(MLP((1 + eps) h_v + sum of neighbour features)), MLP = FC -> relu -> FC."""
    if h.shape[-1] != mlp["w1"].shape[0]:
        raise ShapeError(f"gin_layer: features {h.shape} do not match weight {mlp['w1'].shape}")
    agg = T.add(T.mul(h, T.add(eps, 1.0)), T.matmul(T.as_tensor(adjacency), h))
    out = T.relu(_apply_mlp(agg, mlp))
    if mask is not None:
        out = T.mul(out, mask[..., None])
    return T.dropout(out, dropout, training, rng)


def virtual_node_update(
    h: Tensor, v_state: Tensor, mask: np.ndarray, mlp: dict[str, Tensor]
) -> tuple[Tensor, Tensor]:
    """Pool real nodes into the virtual node, then broadcast it back to them."""
    m = mask[..., None]
    pooled = T.tsum(T.mul(h, m), axis=1)
    v_new = _apply_mlp(T.add(v_state, pooled), mlp)
    b, d = v_new.shape
    h_new = T.add(h, T.mul(T.reshape(v_new, (b, 1, d)), m))
    return h_new, v_new


def gnn_forward(
    batch: Batch,
    config: GnnConfig,
    params: GnnParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_input: bool = False,
) -> Tensor | tuple[Tensor, Tensor]:
    """Embed node labels and run the layer stack; padded rows of the result are zero.

    With ``return_input`` also returns the masked initial embeddings.
    """
    if batch.gnn_type is not config.gnn_type and config.num_layers > 0:
        raise ParameterError(f"batch built for {batch.gnn_type.value}, model uses {config.gnn_type.value}")
    if len(params.layers) != config.num_layers or params.embedding.shape[1] != config.hidden_dim:
        raise ParameterError("GNN parameters do not match the configuration")
    mask = batch.padding_mask.astype(T.get_dtype())
    h0 = T.mul(T.embedding(params.embedding, batch.node_labels), mask[..., None])
    h = h0
    v_state = T.Tensor(np.zeros((len(batch), config.hidden_dim)))
    for i, layer in enumerate(params.layers):
        if config.gnn_type is GnnType.GCN:
            h = gcn_layer(h, batch.adjacency, layer["w"], config.dropout, training, rng)
        else:
            h = gin_layer(h, batch.adjacency, layer, layer["eps"], mask, config.dropout, training, rng)
        if params.virtual and i < len(params.virtual):
            h, v_state = virtual_node_update(h, v_state, mask, params.virtual[i])
    return (h, h0) if return_input else h
