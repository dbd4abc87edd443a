"""Global attention over GNN node embeddings with a learnable <CLS> readout.

Sequences are laid out as [graph, token, feature] and attention weights as
[graph, head, query, key].  When a <CLS> token is used it sits at index 0.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ParameterError, ShapeError
from .gnn import GnnConfig, GnnParams, gnn_forward
from .graphdata import Batch
from .tensor import Tensor

GAMMA = 1e9
_HOP = re.compile(r"^hop\(?\s*(\d+)\s*\)?$")


class Readout(str, Enum):
    CLS = "cls"
    MEAN = "mean"
    LAST = "last"
    CLS_CAT = "cls_cat"

    @property
    def uses_cls(self) -> bool:
        return self in (Readout.CLS, Readout.CLS_CAT)


def parse_mask_entry(entry: str | int | None) -> int | None:
    """``"dense"`` -> None, ``"hop(n)"`` (or an int n) -> n."""
    if entry is None or entry == "dense":
        return None
    if isinstance(entry, int) and not isinstance(entry, bool):
        hops = entry
    else:
        match = _HOP.match(str(entry).strip().lower())
        if not match:
            raise ParameterError(f"mask schedule entry must be 'dense' or 'hop(n)', got {entry!r}")
        hops = int(match.group(1))
    if hops < 1:
        raise ParameterError(f"hop radius must be >= 1, got {hops}")
    return hops


@dataclass
class TransformerConfig:
    d_model: int = 128
    ffn_dim: int = 512
    num_layers: int = 4
    num_heads: int = 4
    dropout: float = 0.1
    readout: Readout = Readout.CLS
    mask_schedule: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.readout = Readout(self.readout)
        if self.num_layers < 1:
            raise ParameterError("transformer.num_layers must be >= 1")
        if self.d_model % self.num_heads:
            raise ParameterError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        if isinstance(self.mask_schedule, str):
            self.mask_schedule = [self.mask_schedule] * self.num_layers
        schedule = [str(e) if not isinstance(e, int) else f"hop({e})" for e in self.mask_schedule]
        if not schedule:
            schedule = ["dense"] * self.num_layers
        if len(schedule) != self.num_layers:
            raise ParameterError(f"mask_schedule has {len(schedule)} entries for {self.num_layers} layers")
        for e in schedule:
            parse_mask_entry(e)
        self.mask_schedule = schedule

    @property
    def hops(self) -> list[int | None]:
        return [parse_mask_entry(e) for e in self.mask_schedule]


@dataclass
class TransformerParams:
    proj: Tensor
    ln_in: dict[str, Tensor]
    cls: Tensor
    layers: list[dict[str, Tensor]]
    out: Tensor


@dataclass
class AttentionMap:
    graph: int
    layer: int
    head: int
    weights: np.ndarray


def _ln(d: int) -> dict[str, Tensor]:
    return {"gain": T.parameter(np.ones(d)), "bias": T.zeros(d)}


def init_transformer_params(
    config: TransformerConfig, input_dim: int, num_classes: int, rng: np.random.Generator
) -> TransformerParams:
    d, f = config.d_model, config.ffn_dim
    layers = []
    for _ in range(config.num_layers):
        layers.append(
            {
                "wq": T.glorot(rng, d, d),
                "wk": T.glorot(rng, d, d),
                "wv": T.glorot(rng, d, d),
                "wo": T.glorot(rng, d, d), "bo": T.zeros(d),
                "w1": T.glorot(rng, d, f), "b1": T.zeros(f),
                "w2": T.glorot(rng, f, d), "b2": T.zeros(d),
                "ln1": _ln(d), "ln2": _ln(d),
            }
        )  # fmt: skip
    return TransformerParams(
        proj=T.glorot(rng, input_dim, d),
        ln_in=_ln(d),
        cls=T.parameter(rng.normal(0.0, 0.02, size=d)),
        layers=layers,
        out=T.glorot(rng, d, num_classes),
    )


def project_input(h_gnn: Tensor, params: TransformerParams, mask: np.ndarray | None = None) -> Tensor:
    """LayerNorm(h W_proj); padded rows are set back to zero."""
    if h_gnn.shape[-1] != params.proj.shape[0]:
        raise ShapeError(f"project_input: features {h_gnn.shape} do not match W_proj {params.proj.shape}")
    out = T.layer_norm(T.matmul(h_gnn, params.proj), params.ln_in["gain"], params.ln_in["bias"])
    if mask is not None:
        out = T.mul(out, mask[..., None].astype(T.get_dtype()))
    return out


def append_cls(h: Tensor, cls: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Prepend the <CLS> embedding to every sequence and mark it as a real token."""
    b, _, d = h.shape
    ones = T.Tensor(np.ones((b, 1, 1)))
    tokens = T.mul(ones, T.reshape(cls, (1, 1, d)))
    new_mask = np.concatenate([np.ones((b, 1), dtype=bool), mask], axis=1)
    return T.concat([tokens, h], axis=1), new_mask


def lift_structural_mask(reach: np.ndarray, with_cls: bool) -> np.ndarray:
    """Add an always-connected <CLS> row and column in front of [B, N, N] reachability."""
    if not with_cls:
        return reach
    b, n, _ = reach.shape
    out = np.ones((b, n + 1, n + 1), dtype=bool)
    out[:, 1:, 1:] = reach
    return out


def multi_head_attention(
    h: Tensor,
    padding_mask: np.ndarray,
    structural_mask: np.ndarray | None,
    p: dict[str, Tensor],
    num_heads: int,
    gamma: float = GAMMA,
) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over real tokens, heads mixed by ``wo``.

    Disallowed structural pairs get ``-gamma`` added to their score; padded keys
    are excluded outright.  Returns the mixed output and the weights [B, H, S, S].
    """
    b, s, d = h.shape
    dh = d // num_heads

    def heads(x: Tensor) -> Tensor:
        return T.transpose(T.reshape(x, (b, s, num_heads, dh)), (0, 2, 1, 3))

    q = heads(T.matmul(h, p["wq"]))
    k = heads(T.matmul(h, p["wk"]))
    v = heads(T.matmul(h, p["wv"]))
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(dh))
    if structural_mask is not None:
        penalty = -gamma * (1.0 - structural_mask.astype(np.float64))
        scores = T.add(scores, penalty[:, None, :, :])
    alpha = T.masked_softmax(scores, padding_mask[:, None, None, :])
    ctx = T.reshape(T.transpose(T.matmul(alpha, v), (0, 2, 1, 3)), (b, s, d))
    return T.linear(ctx, p["wo"], p["bo"]), alpha.data


def attention_layer(
    h: Tensor,
    padding_mask: np.ndarray,
    structural_mask: np.ndarray | None,
    p: dict[str, Tensor],
    num_heads: int,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    gamma: float = GAMMA,
) -> tuple[Tensor, np.ndarray]:
    """One post-norm encoder layer.

    Dropout -> LayerNorm (residual from the layer input), then FC -> relu ->
    Dropout -> FC -> Dropout -> LayerNorm (residual from before the first FC).
    """
    attn, alpha = multi_head_attention(h, padding_mask, structural_mask, p, num_heads, gamma)
    x = T.layer_norm(T.add(h, T.dropout(attn, dropout, training, rng)), p["ln1"]["gain"], p["ln1"]["bias"])
    f = T.dropout(T.relu(T.linear(x, p["w1"], p["b1"])), dropout, training, rng)
    f = T.dropout(T.linear(f, p["w2"], p["b2"]), dropout, training, rng)
    out = T.layer_norm(T.add(x, f), p["ln2"]["gain"], p["ln2"]["bias"])
    return T.mul(out, padding_mask[..., None].astype(T.get_dtype())), alpha


def readout(h: Tensor, mode: Readout | str, mask: np.ndarray, has_cls: bool) -> Tensor:
    """Collapse [B, S, d] token outputs to one [B, d] graph embedding."""
    mode = Readout(mode)
    if mode.uses_cls != has_cls:
        raise ParameterError(f"readout {mode.value} does not match a sequence {'with' if has_cls else 'without'} <CLS>")
    if mode.uses_cls:
        return T.gather_rows(h, np.zeros(h.shape[0], dtype=np.int64))
    sizes = mask.sum(axis=1)
    if mode is Readout.MEAN:
        m = mask[..., None].astype(T.get_dtype())
        inv = (1.0 / sizes)[:, None].astype(T.get_dtype())
        return T.mul(T.tsum(T.mul(h, m), axis=1), inv)
    return T.gather_rows(h, sizes - 1)


def predict(embedding: Tensor, w_out: Tensor) -> Tensor:
    """Class probabilities softmax(embedding W_out)."""
    return T.softmax(T.matmul(embedding, w_out))


@dataclass
class ForwardResult:
    logits: Tensor
    probs: Tensor
    attention: list[np.ndarray] = field(default_factory=list)

    def attention_maps(
        self, sizes: Sequence[int], has_cls: bool, layers: Sequence[int] | None = None
    ) -> list[AttentionMap]:
        """Per (graph, layer, head) weights restricted to real tokens."""
        maps = []
        offset = 1 if has_cls else 0
        for li, alpha in enumerate(self.attention):
            if layers is not None and li not in layers:
                continue
            for g, n in enumerate(sizes):
                s = int(n) + offset
                for head in range(alpha.shape[1]):
                    maps.append(AttentionMap(g, li, head, alpha[g, head, :s, :s].copy()))
        return maps


def transformer_forward(
    h_gnn: Tensor,
    batch: Batch,
    config: TransformerConfig,
    params: TransformerParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    h_input: Tensor | None = None,
) -> ForwardResult:
    mask = batch.padding_mask
    if config.readout is Readout.CLS_CAT:
        if h_input is None:
            raise ParameterError("cls_cat readout needs the initial node embeddings")
        h_gnn = T.concat([h_gnn, h_input], axis=-1)
    h = project_input(h_gnn, params, mask)
    has_cls = config.readout.uses_cls
    if has_cls:
        h, mask = append_cls(h, params.cls, mask)
    reach_cache: dict[int, np.ndarray] = {}
    attention = []
    for layer, hops in zip(params.layers, config.hops):
        structural = None
        if hops is not None:
            if hops not in reach_cache:
                reach_cache[hops] = lift_structural_mask(batch.hop_masks(hops), has_cls)
            structural = reach_cache[hops]
        h, alpha = attention_layer(h, mask, structural, layer, config.num_heads, config.dropout, training, rng)
        attention.append(alpha)
    emb = readout(h, config.readout, mask, has_cls)
    logits = T.matmul(emb, params.out)
    return ForwardResult(logits, T.softmax(logits), attention)


def graphtrans_forward(
    batch: Batch,
    gnn_config: GnnConfig,
    gnn_params: GnnParams,
    tf_config: TransformerConfig,
    tf_params: TransformerParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardResult:
    """GNN stack, projection, optional <CLS>, attention layers, readout and output head."""
    h, h0 = gnn_forward(batch, gnn_config, gnn_params, training, rng, return_input=True)
    return transformer_forward(h, batch, tf_config, tf_params, training, rng, h_input=h0)
