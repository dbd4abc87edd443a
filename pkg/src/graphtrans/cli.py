"""Command-line entry point: ``graphtrans {train,eval,gradcheck,profile,export-attention,ablate-readout}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import ExperimentConfig, dump_config, load_config
from .errors import GraphTransError, LoadError, SchemaError
from .gradcheck import run_all
from .experiments import build_model, run_training
from .graphdata import Dataset, load_tu_dataset, split
from .model import _Model
from .training import RunResult, evaluate, load_parameters, profile, read_checkpoint, write_profile_csv
from .transformer import Readout

log = logging.getLogger("graphtrans")

COMMANDS = ("train", "eval", "gradcheck", "profile", "export-attention", "ablate-readout")
SUMMARY_HEADER = "# graphtrans-summary v1"
EVAL_HEADER = "# graphtrans-eval v1"
ATTENTION_HEADER = "# graphtrans-attention v1"


@dataclass
class RunSpec:
    command: str
    config: str | dict | None = None
    overrides: list[str] = field(default_factory=list)
    out: Path = Path("runs")
    seed: int | None = None
    seeds: list[int] | None = None
    precision: int | None = None
    dataset_dir: str | None = None
    checkpoint: str | None = None
    graphs: list[int] = field(default_factory=lambda: [0])
    nodes: list[int] = field(default_factory=lambda: [500, 1000, 1200])
    densities: list[float] = field(default_factory=lambda: [0.2, 0.4])
    warmup: int = 5
    iters: int = 20


def parse_seeds(text: str) -> list[int]:
    """``"0..2"`` -> [0, 1, 2]; ``"1,5"`` -> [1, 5]."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def resolve_config(spec: RunSpec) -> ExperimentConfig:
    overrides = list(spec.overrides)
    if spec.dataset_dir is not None:
        overrides.append(f"data.directory={spec.dataset_dir}")
    if spec.precision is not None:
        overrides.append(f"precision={spec.precision}")
    if spec.seeds is not None:
        overrides.append(f"train.seeds={spec.seeds}")
    elif spec.seed is not None:
        overrides.append(f"train.seeds=[{spec.seed}]")
    return load_config(spec.config, overrides)


def write_summary(path: Path, rows: Sequence[tuple[str, int, RunResult]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", "seed", "best_epoch", "val_acc", "test_acc"])
        for variant, seed, r in rows:
            writer.writerow([variant, seed, r.best_epoch, repr(r.val_acc), repr(r.test_acc)])
        for variant in dict.fromkeys(v for v, _, _ in rows):
            tests = [r.test_acc for v, _, r in rows if v == variant]
            vals = [r.val_acc for v, _, r in rows if v == variant]
            writer.writerow([variant, "mean", "", repr(float(np.mean(vals))), repr(float(np.mean(tests)))])
            writer.writerow([variant, "std", "", repr(float(np.std(vals))), repr(float(np.std(tests)))])


def _load_dataset(cfg: ExperimentConfig) -> Dataset:
    return load_tu_dataset(cfg.data.directory, cfg.data.name)


def cmd_train(spec: RunSpec, cfg: ExperimentConfig) -> int:
    dataset = _load_dataset(cfg)
    rows = []
    for seed in cfg.train.seeds:
        rows.append(("train", seed, run_training(cfg, dataset, seed, spec.out / f"seed_{seed}")))
    write_summary(spec.out / "summary.csv", rows)
    return 0


def cmd_ablate_readout(spec: RunSpec, cfg: ExperimentConfig) -> int:
    dataset = _load_dataset(cfg)
    rows = []
    for mode in (Readout.MEAN, Readout.LAST, Readout.CLS, Readout.CLS_CAT):
        variant = replace(cfg, transformer=replace(cfg.transformer, readout=mode))
        for seed in cfg.train.seeds:
            result = run_training(variant, dataset, seed, spec.out / mode.value / f"seed_{seed}")
            rows.append((mode.value, seed, result))
    write_summary(spec.out / "readout_ablation.csv", rows)
    return 0


def _model_from_checkpoint(spec: RunSpec, cfg: ExperimentConfig, dataset: Dataset, seed: int) -> _Model:
    model = build_model(cfg, dataset, seed)
    if spec.checkpoint:
        arrays, _ = read_checkpoint(spec.checkpoint)
        load_parameters(model, arrays)
    return model


def _checkpoint_config(spec: RunSpec) -> ExperimentConfig:
    """Config stored in ``--checkpoint`` unless ``--config`` is given; flags still apply."""
    if spec.checkpoint and spec.config is None:
        _, meta = read_checkpoint(spec.checkpoint)
        return resolve_config(replace(spec, config=meta["config"]))
    return resolve_config(spec)


def cmd_eval(spec: RunSpec, cfg: ExperimentConfig) -> int:
    dataset = _load_dataset(cfg)
    seed = cfg.train.seeds[0]
    model = _model_from_checkpoint(spec, cfg, dataset, seed)
    parts = dict(zip(("train", "valid", "test"), split(dataset, cfg.data.split, seed)))
    accs = {name: evaluate(model, graphs, cfg.train.batch_size) for name, graphs in parts.items()}
    print(" ".join(f"{k}_acc={v:.4f}" for k, v in accs.items()))
    with open(spec.out / "eval.csv", "w", newline="") as fh:
        fh.write(EVAL_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["split", "size", "accuracy"])
        for name, graphs in parts.items():
            writer.writerow([name, len(graphs), repr(accs[name])])
    return 0


def cmd_gradcheck(spec: RunSpec, cfg: ExperimentConfig) -> int:
    results = run_all(seed=cfg.train.seeds[0])
    failed = 0
    with open(spec.out / "gradcheck.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["check", "max_relative_error", "threshold", "status"])
        for r in results:
            status = "pass" if r.passed else "FAIL"
            failed += not r.passed
            writer.writerow([r.name, f"{r.error:.3e}", r.threshold, status])
            print(f"{r.name:30s} {r.error:.3e}  (< {r.threshold:g})  {status}")
    worst = max(r.error for r in results)
    print(f"max relative error {worst:.3e}; {failed} check(s) failed")
    return 1 if failed else 0


def cmd_profile(spec: RunSpec, cfg: ExperimentConfig) -> int:
    rows = profile(spec.nodes, spec.densities, cfg.model_config, cfg.train.seeds[0], spec.warmup, spec.iters)
    write_profile_csv(rows, spec.out / "profile.csv")
    for r in rows:
        print(f"n={r.nodes:5d} density={r.density:.2f} {r.status:3s} "
              f"fwd {r.forward_ms:9.2f} +- {r.forward_std:.2f} ms  bwd {r.backward_ms:9.2f} +- {r.backward_std:.2f} ms")  # fmt: skip
    return 0


def cmd_export_attention(spec: RunSpec, cfg: ExperimentConfig) -> int:
    if cfg.model.kind != "graphtrans":
        raise SchemaError("model.kind", "attention export needs a graphtrans model")
    dataset = _load_dataset(cfg)
    model = _model_from_checkpoint(spec, cfg, dataset, cfg.train.seeds[0])
    graphs = [dataset.graphs[i] for i in spec.graphs]
    batch = model.make_batch(graphs)
    with T.no_grad():
        result = model.forward(batch)
    out_dir = spec.out / "attention"
    out_dir.mkdir(parents=True, exist_ok=True)
    for amap in result.attention_maps(batch.graph_sizes, model.has_cls):
        gid = spec.graphs[amap.graph]
        write_attention_csv(amap.weights, out_dir / f"graph{gid}_layer{amap.layer}_head{amap.head}.csv")
    print(f"wrote attention maps for {len(graphs)} graph(s) to {out_dir}")
    return 0


def write_attention_csv(weights: np.ndarray, path: Path) -> None:
    """Square CSV whose header row and first column hold token indices (<CLS> = 0 when present)."""
    with open(path, "w", newline="") as fh:
        fh.write(ATTENTION_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["token"] + list(range(weights.shape[0])))
        for i, row in enumerate(weights):
            writer.writerow([i] + [repr(float(x)) for x in row])


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "profile": cmd_profile,
    "export-attention": cmd_export_attention,
    "ablate-readout": cmd_ablate_readout,
}


def run(spec: RunSpec) -> int:
    """Execute one command; returns the process exit status."""
    try:
        cfg = _checkpoint_config(spec) if spec.command in ("eval", "export-attention") else resolve_config(spec)
        spec.out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, spec.out / "config.yaml")
        T.set_precision(cfg.precision)
        return HANDLERS[spec.command](spec, cfg)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LoadError as exc:
        print(f"load error: {exc}", file=sys.stderr)
        return 2
    except GraphTransError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        T.set_precision(32)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphtrans", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="preset name or YAML file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--out", type=Path, default=Path("runs"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--seeds", type=parse_seeds, metavar="N..M")
    parser.add_argument("--precision", type=int, choices=(32, 64))
    parser.add_argument("--dataset-dir")
    parser.add_argument("--checkpoint", help="eval / export-attention: parameters to load")
    parser.add_argument("--graphs", type=_int_list, default=[0], help="export-attention: dataset indices")
    parser.add_argument("--nodes", type=_int_list, default=[500, 1000, 1200], help="profile: node counts")
    parser.add_argument("--densities", type=_float_list, default=[0.2, 0.4], help="profile: edge densities")
    parser.add_argument("--warmup", type=int, default=5)
    parser.add_argument("--iters", type=int, default=20)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    spec = RunSpec(**{k: v for k, v in vars(args).items() if k != "verbose"})
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
