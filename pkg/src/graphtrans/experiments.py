"""Multi-seed experiment protocols shared by the CLI, scripts and the acceptance suite."""
from __future__ import annotations

import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, load_config
from .graphdata import Dataset, load_tu_dataset, split
from .model import GnnClassifier, GraphTrans, _Model
from .training import RunResult, load_parameters, read_checkpoint, save_checkpoint, train
from .transformer import Readout

log = logging.getLogger("graphtrans")

DATA_ENV = "GRAPHTRANS_DATA_DIR"


def build_model(cfg: ExperimentConfig, dataset: Dataset, seed: int) -> _Model:
    if cfg.model.kind == "gnn":
        return GnnClassifier(cfg.gnn, dataset.num_node_label_values, dataset.num_classes, seed)
    return GraphTrans(cfg.model_config, dataset.num_node_label_values, dataset.num_classes, seed)


def run_training(cfg: ExperimentConfig, dataset: Dataset, seed: int, out: Path) -> RunResult:
    """Train one seed; writes metrics.csv and checkpoint.npz into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    train_graphs, valid_graphs, test_graphs = split(dataset, cfg.data.split, seed)
    model = build_model(cfg, dataset, seed)
    if cfg.train.pretrained_gnn:
        arrays, _ = read_checkpoint(cfg.train.pretrained_gnn.format(seed=seed))
        load_parameters(model, arrays, prefix="gnn.")
    result = train(model, train_graphs, valid_graphs, test_graphs, cfg.train, seed)
    result.write_csv(out / "metrics.csv")
    snapshot = cfg.to_dict()
    snapshot["train"]["seeds"] = [seed]
    save_checkpoint(out / "checkpoint.npz", model, snapshot)
    log.info("seed %d: best epoch %d, val %.4f, test %.4f", seed, result.best_epoch, result.val_acc, result.test_acc)
    return result


def run_seeds(cfg: ExperimentConfig, dataset: Dataset, out: Path) -> list[RunResult]:
    return [run_training(cfg, dataset, s, out / f"seed_{s}") for s in cfg.train.seeds]


def mean_test(results: Sequence[RunResult]) -> float:
    return float(np.mean([r.test_acc for r in results]))


def find_dataset(name: str = "NCI1", candidates: Sequence[str | Path] = ()) -> Path | None:
    """First directory holding ``{name}_A.txt``: $GRAPHTRANS_DATA_DIR, then ``candidates``, then ./data."""
    dirs = [os.environ[DATA_ENV]] if os.environ.get(DATA_ENV) else []
    dirs += [*candidates, "data", Path("data") / name]
    for d in dirs:
        if (Path(d) / f"{name}_A.txt").exists():
            return Path(d)
    return None


class NciProtocol:
    """Lazily runs and caches the NCI variants compared by the accuracy criteria.

    Every variant uses the same seeds, hence the same splits.
    """

    def __init__(
        self,
        dataset_dir: str | Path,
        out: str | Path,
        seeds: Sequence[int] = (0, 1, 2),
        name: str = "NCI1",
        overrides: Sequence[str] = (),
    ):
        self.dataset = load_tu_dataset(dataset_dir, name)
        self.out = Path(out)
        self.seeds = list(seeds)
        self.name = name
        self.overrides = list(overrides)
        self._cache: dict[str, list[RunResult]] = {}

    def config(self, preset: str, *overrides: str) -> ExperimentConfig:
        common = [f"data.name={self.name}", f"train.seeds={self.seeds}", *self.overrides]
        return load_config(preset, [*common, *overrides])

    def run(self, key: str, cfg: ExperimentConfig) -> list[RunResult]:
        if key not in self._cache:
            self._cache[key] = run_seeds(cfg, self.dataset, self.out / key)
        return self._cache[key]

    def graphtrans_small(self) -> list[RunResult]:
        return self.run("nci-small", self.config("nci-small"))

    def transformer_only(self) -> list[RunResult]:
        return self.run("transformer-only", self.config("transformer-only"))

    def readout(self, mode: Readout | str) -> list[RunResult]:
        mode = Readout(mode)
        if mode is Readout.CLS:
            return self.graphtrans_small()
        cfg = self.config("nci-small")
        return self.run(f"readout-{mode.value}", replace(cfg, transformer=replace(cfg.transformer, readout=mode)))

    def _pretrained(self) -> str:
        self.run("gnn-pretrain", self.config("gnn-pretrain"))
        return str(self.out / "gnn-pretrain" / "seed_{seed}" / "checkpoint.npz")

    def pretrained_gnn(self) -> list[RunResult]:
        self._pretrained()
        return self._cache["gnn-pretrain"]

    def frozen_gnn(self) -> list[RunResult]:
        path = self._pretrained()
        return self.run("frozen-gnn", self.config("frozen-gnn", f"train.pretrained_gnn={path}"))

    def finetuned_gnn(self) -> list[RunResult]:
        path = self._pretrained()
        return self.run("finetune-gnn", self.config("finetune-gnn", f"train.pretrained_gnn={path}"))
