"""Experiment configuration: a YAML key-value tree mapped onto dataclasses.

Grammar (every key optional; unknown keys are rejected)::

    data:
      name: NCI1                 # TU dataset name
      directory: data            # folder holding {name}_A.txt etc.
      split: [0.8, 0.1, 0.1]
    model:
      kind: graphtrans           # graphtrans | gnn (mean-pooled GNN baseline)
    gnn:
      gnn_type: gcn              # gcn | gin
      num_layers: 3              # 0 = embedding lookup only
      hidden_dim: 128
      dropout: 0.1
      use_virtual_node: false
    transformer:
      d_model: 128
      ffn_dim: 512
      num_layers: 4
      num_heads: 4
      dropout: 0.1
      readout: cls               # cls | mean | last | cls_cat
      mask_schedule: dense       # one entry for all layers, or a list of dense / hop(n)
    train:
      epochs: 100
      batch_size: 256
      lr: 1.0e-4
      weight_decay: 1.0e-4
      cosine_anneal: true
      seeds: [0]
      freeze_gnn: false
      pretrained_gnn: null       # checkpoint whose gnn.* tensors initialise the GNN
    precision: 32                # 32 | 64

Overrides use dotted paths, e.g. ``train.epochs=5`` or
``transformer.mask_schedule=[hop(1), dense]``; values are parsed as YAML.
"""
from __future__ import annotations

import copy
import dataclasses
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import yaml

from .errors import GraphTransError, SchemaError
from .gnn import GnnConfig
from .model import ModelConfig
from .training import TrainConfig
from .transformer import TransformerConfig


@dataclass
class DataConfig:
    name: str = "NCI1"
    directory: str = "data"
    split: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class ModelKind:
    kind: str = "graphtrans"

    def __post_init__(self) -> None:
        if self.kind not in ("graphtrans", "gnn"):
            raise ValueError(f"model.kind must be graphtrans or gnn, got {self.kind!r}")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelKind = field(default_factory=ModelKind)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    precision: int = 32

    def __post_init__(self) -> None:
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(self.gnn, self.transformer)

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Enum):
        return obj.value
    return obj


_TABLE1 = {
    "data": {"name": "NCI1"},
    "gnn": {"gnn_type": "gcn", "num_layers": 3, "hidden_dim": 128, "dropout": 0.1},
    "transformer": {"d_model": 128, "ffn_dim": 512, "num_layers": 4, "num_heads": 4, "dropout": 0.1},
    "train": {"epochs": 100, "batch_size": 256, "lr": 1e-4, "weight_decay": 1e-4, "cosine_anneal": True},
}


def _preset(**sections: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(_TABLE1)
    for key, value in sections.items():
        if isinstance(value, dict):
            out.setdefault(key, {}).update(value)
        else:
            out[key] = value
    return out


PRESETS: dict[str, dict[str, Any]] = {
    "nci-small": _preset(),
    "nci-large": _preset(gnn={"gnn_type": "gin", "num_layers": 4, "hidden_dim": 300}),
    "transformer-only": _preset(gnn={"num_layers": 0}),
    "masked": _preset(gnn={"num_layers": 0}, transformer={"mask_schedule": "hop(1)"}),
    "hybrid": _preset(
        gnn={"num_layers": 0},
        transformer={"num_layers": 8, "mask_schedule": ["hop(1)"] * 4 + ["dense"] * 4},
    ),
    "gnn-pretrain": _preset(model={"kind": "gnn"}, gnn={"use_virtual_node": True}),
    "frozen-gnn": _preset(gnn={"use_virtual_node": True}, train={"freeze_gnn": True}),
    "finetune-gnn": _preset(gnn={"use_virtual_node": True}),
}


def _coerce(value: Any, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if origin in (list, Sequence, tuple):
        if tp is not None and args and args[0] is str and isinstance(value, str):
            return value  # single mask-schedule entry applied to all layers
        if not isinstance(value, (list, tuple)):
            raise SchemaError(key, f"expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{key}[{i}]") for i, v in enumerate(value)] if args else list(value)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(str(value).lower())
        except ValueError:
            choices = ", ".join(m.value for m in tp)
            raise SchemaError(key, f"expected one of {choices}, got {value!r}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise SchemaError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(key, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(key, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, (str, int, float)):
            raise SchemaError(key, f"expected a string, got {value!r}")
        return str(value)
    return value


def _build(cls: type, values: Any, prefix: str) -> Any:
    if not isinstance(values, dict):
        raise SchemaError(prefix or "<root>", f"expected a mapping, got {values!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in names:
            raise SchemaError(path, "unknown key")
        kwargs[key] = _coerce(value, hints[key], path)
    try:
        return cls(**kwargs)
    except SchemaError:
        raise
    except (GraphTransError, ValueError, TypeError) as exc:
        raise SchemaError(prefix or "<root>", str(exc)) from None


def _set_dotted(tree: dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise SchemaError(dotted, "cannot descend into a non-mapping")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise SchemaError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw) if raw.strip() else ""


def load_config(
    source: str | Path | dict[str, Any] | None = None, overrides: Sequence[str] = ()
) -> ExperimentConfig:
    """Build a config from a preset name, YAML file or plain tree plus ``key=value`` overrides."""
    tree: dict[str, Any] = {}
    if isinstance(source, dict):
        tree = copy.deepcopy(source)
    elif source is not None:
        if str(source) in PRESETS:
            tree = copy.deepcopy(PRESETS[str(source)])
        else:
            path = Path(source)
            if not path.exists():
                raise SchemaError("--config", f"no preset or file named {source!r} (presets: {', '.join(PRESETS)})")
            tree = yaml.safe_load(path.read_text()) or {}
    for text in overrides:
        key, value = parse_override(text)
        _set_dotted(tree, key, value)
    return _build(ExperimentConfig, tree, "")


def dump_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
