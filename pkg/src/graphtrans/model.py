"""Trainable models: the full GraphTrans pipeline and a mean-pooled GNN baseline."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .gnn import GnnConfig, GnnParams, gnn_forward, init_gnn_params
from .graphdata import Batch, Graph, make_batch
from .tensor import Tensor
from .transformer import (
    ForwardResult,
    Readout,
    TransformerConfig,
    TransformerParams,
    init_transformer_params,
    transformer_forward,
)


@dataclass
class ModelConfig:
    gnn: GnnConfig = field(default_factory=GnnConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)


@dataclass
class GraphTransParams:
    gnn: GnnParams
    transformer: TransformerParams


class _Model:
    """Shared plumbing: parameter naming and batching."""

    gnn_config: GnnConfig
    num_node_label_values: int
    params: object

    def parameters(self) -> dict[str, Tensor]:
        return T.named_tensors(self.params)

    def make_batch(self, graphs: Sequence[Graph]) -> Batch:
        return make_batch(graphs, self.gnn_config.gnn_type, pad_label=self.num_node_label_values)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}


class GraphTrans(_Model):
    def __init__(self, config: ModelConfig, num_node_label_values: int, num_classes: int, seed: int = 0):
        self.config = config
        self.gnn_config = config.gnn
        self.num_node_label_values = num_node_label_values
        self.num_classes = num_classes
        rng = T.make_rng(seed)
        gnn = init_gnn_params(config.gnn, num_node_label_values, rng)
        d_in = config.gnn.hidden_dim * (2 if config.transformer.readout is Readout.CLS_CAT else 1)
        tf = init_transformer_params(config.transformer, d_in, num_classes, rng)
        self.params = GraphTransParams(gnn, tf)

    @property
    def has_cls(self) -> bool:
        return self.config.transformer.readout.uses_cls

    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        h, h0 = gnn_forward(batch, self.config.gnn, self.params.gnn, training, rng, return_input=True)
        return transformer_forward(h, batch, self.config.transformer, self.params.transformer, training, rng, h0)


@dataclass
class PooledHead:
    w: Tensor
    b: Tensor


@dataclass
class GnnClassifierParams:
    gnn: GnnParams
    head: PooledHead


class GnnClassifier(_Model):
    """GNN stack, masked mean pooling and a linear softmax head."""

    def __init__(self, gnn_config: GnnConfig, num_node_label_values: int, num_classes: int, seed: int = 0):
        self.gnn_config = gnn_config
        self.num_node_label_values = num_node_label_values
        self.num_classes = num_classes
        rng = T.make_rng(seed)
        gnn = init_gnn_params(gnn_config, num_node_label_values, rng)
        head = PooledHead(T.glorot(rng, gnn_config.hidden_dim, num_classes), T.zeros(num_classes))
        self.params = GnnClassifierParams(gnn, head)

    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        h = gnn_forward(batch, self.gnn_config, self.params.gnn, training, rng)
        m = batch.padding_mask[..., None].astype(T.get_dtype())
        inv = (1.0 / batch.graph_sizes)[:, None].astype(T.get_dtype())
        pooled = T.mul(T.tsum(T.mul(h, m), axis=1), inv)
        logits = T.linear(pooled, self.params.head.w, self.params.head.b)
        return ForwardResult(logits, T.softmax(logits))


def count_parameters(model: _Model) -> int:
    return sum(p.size for p in model.parameters().values())
