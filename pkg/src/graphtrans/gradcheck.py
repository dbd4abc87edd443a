"""Finite-difference checks of every primitive and of the full model on 5-node fixtures."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .gnn import GnnConfig
from .graphdata import Graph
from .model import GraphTrans, ModelConfig
from .training import cross_entropy, cross_entropy_logits
from .transformer import TransformerConfig

OP_THRESHOLD = 1e-5
MODEL_THRESHOLD = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.error < self.threshold


def fixture_graphs() -> list[Graph]:
    """A 5-cycle with a chord and a 5-node path, both binary-labelled."""
    house = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 4)], [0, 1, 2, 1, 0], 1)
    path = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], [2, 0, 1, 1, 2], 0)
    return [house, path]


def _weighted_sum(out: T.Tensor, weights: np.ndarray) -> T.Tensor:
    return T.tsum(T.mul(out, weights))


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[..., T.Tensor], list[np.ndarray]]]:
    def away_from_zero(*shape: int) -> np.ndarray:
        x = rng.normal(size=shape)
        return np.sign(x) * (np.abs(x) + 0.1)

    idx = np.array([[0, 2, 1], [3, 3, 0]])
    mask = np.array([[True, True, False, True], [True, False, False, True]])
    labels = np.array([1, 0, 2])
    drop_seed = int(rng.integers(1 << 30))
    return {
        "matmul": (lambda a, b: T.matmul(a, b), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        "batched_matmul": (lambda a, b: T.matmul(a, b), [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 2))]),
        "add": (lambda a, b: T.add(a, b), [rng.normal(size=(2, 3)), rng.normal(size=(3,))]),
        "sub": (lambda a, b: T.sub(a, b), [rng.normal(size=(2, 3)), rng.normal(size=(2, 1))]),
        "mul": (lambda a, b: T.mul(a, b), [rng.normal(size=(2, 3)), rng.normal(size=(1, 3))]),
        "scale": (lambda a: T.scale(a, -2.5), [rng.normal(size=(2, 3))]),
        "relu": (lambda a: T.relu(a), [away_from_zero(3, 4)]),
        "log": (lambda a: T.log(a), [rng.uniform(0.5, 2.0, size=(3, 2))]),
        "concat": (lambda a, b: T.concat([a, b], axis=-1), [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))]),
        "embedding": (lambda w: T.embedding(w, idx), [rng.normal(size=(4, 3))]),
        "gather_rows": (lambda x: T.gather_rows(x, np.array([2, 0])), [rng.normal(size=(2, 3, 4))]),
        "sum": (lambda a: T.tsum(a, axis=1), [rng.normal(size=(3, 4))]),
        "mean": (lambda a: T.mean(a, axis=0, keepdims=True), [rng.normal(size=(3, 4))]),
        "reshape_transpose": (
            lambda a: T.transpose(T.reshape(a, (2, 3, 2)), (1, 0, 2)),
            [rng.normal(size=(3, 4))],
        ),
        "masked_softmax": (lambda a: T.masked_softmax(a, mask), [rng.normal(size=(2, 4))]),
        "log_softmax": (lambda a: T.log_softmax(a), [rng.normal(size=(3, 4))]),
        "layer_norm": (
            lambda x, g, b: T.layer_norm(x, g, b),
            [rng.normal(size=(2, 4)), rng.normal(1.0, 0.2, size=4), rng.normal(size=4)],
        ),
        "dropout": (
            lambda a: T.dropout(a, 0.3, True, T.make_rng(drop_seed)),
            [rng.normal(size=(4, 5))],
        ),
        "cross_entropy": (
            lambda a: cross_entropy(T.softmax(a), labels),
            [rng.normal(size=(3, 3))],
        ),
        "cross_entropy_logits": (lambda a: cross_entropy_logits(a, labels), [rng.normal(size=(3, 3))]),
    }


def check_ops(seed: int = 0, step: float = 1e-5) -> list[CheckResult]:
    """Each primitive under a random linear functional of its output, at 64-bit."""
    results = []
    with T.precision(64):
        rng = np.random.default_rng(seed)
        for name, (fn, arrays) in _op_cases(rng).items():
            inputs = [T.parameter(a) for a in arrays]
            probe = fn(*inputs)
            weights = rng.normal(size=probe.shape)

            def forward(fn=fn, inputs=inputs, weights=weights) -> T.Tensor:
                return _weighted_sum(fn(*inputs), weights)

            results.append(CheckResult(name, T.grad_check(forward, inputs, step), OP_THRESHOLD))
    return results


def fixture_models() -> dict[str, ModelConfig]:
    small_tf = dict(d_model=4, ffn_dim=8, num_layers=2, num_heads=2, dropout=0.0)
    return {
        "graphtrans_gcn_cls": ModelConfig(GnnConfig("gcn", 2, 4, 0.0), TransformerConfig(**small_tf)),
        "graphtrans_gin_virtual_cls": ModelConfig(
            GnnConfig("gin", 2, 4, 0.0, use_virtual_node=True), TransformerConfig(**small_tf)
        ),
        "graphtrans_gcn_cls_cat": ModelConfig(
            GnnConfig("gcn", 2, 4, 0.0), TransformerConfig(**small_tf, readout="cls_cat")
        ),
        "graphtrans_gcn_mean": ModelConfig(GnnConfig("gcn", 2, 4, 0.0), TransformerConfig(**small_tf, readout="mean")),
        "graphtrans_gin_last": ModelConfig(GnnConfig("gin", 2, 4, 0.0), TransformerConfig(**small_tf, readout="last")),
        "masked_hop1": ModelConfig(GnnConfig("gcn", 0, 4, 0.0), TransformerConfig(**small_tf, mask_schedule="hop(1)")),
        "hybrid": ModelConfig(
            GnnConfig("gcn", 0, 4, 0.0), TransformerConfig(**small_tf, mask_schedule=["dense", "hop(1)"])
        ),
    }


def fixture_model(config: ModelConfig, seed: int = 0) -> GraphTrans:
    """Default initialisation, with embeddings and <CLS> redrawn at unit scale.

    At the default 0.02 scale a 1e-5 step is a sizeable fraction of the
    LayerNorm input norm and the central difference is truncation-dominated.
    """
    model = GraphTrans(config, num_node_label_values=3, num_classes=2, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in model.parameters().items():
        if name.endswith(("embedding", "cls")):
            p.data = rng.normal(size=p.shape).astype(p.data.dtype)
        elif p.ndim == 1:
            p.data = (p.data + rng.normal(0.0, 0.1, size=p.shape)).astype(p.data.dtype)
    return model


def check_model(config: ModelConfig, seed: int = 0, step: float = 1e-5) -> float:
    with T.precision(64):
        model = fixture_model(config, seed)
        batch = model.make_batch(fixture_graphs())

        def forward() -> T.Tensor:
            return cross_entropy_logits(model.forward(batch).logits, batch.labels)

        return T.grad_check(forward, list(model.parameters().values()), step)


def check_models(seed: int = 0, step: float = 1e-5) -> list[CheckResult]:
    return [CheckResult(name, check_model(cfg, seed, step), MODEL_THRESHOLD) for name, cfg in fixture_models().items()]


def run_all(seed: int = 0, step: float = 1e-5) -> list[CheckResult]:
    return check_ops(seed, step) + check_models(seed, step)
