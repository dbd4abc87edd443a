"""Losses, optimiser, training loop, checkpoints and the timing profiler."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import LoadError, ParameterError
from .graphdata import Batch, Graph, erdos_renyi
from .model import GraphTrans, ModelConfig, _Model
from .tensor import Tensor

log = logging.getLogger(__name__)

METRICS_HEADER = "# graphtrans-metrics v1"
PROFILE_HEADER = "# graphtrans-profile v1"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cosine_anneal: bool = True
    seeds: list[int] = field(default_factory=lambda: [0])
    freeze_gnn: bool = False
    pretrained_gnn: str | None = None

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ParameterError("train.lr must be >= 0")
        if self.epochs < 1:
            raise ParameterError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("train.batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_acc: float
    test_acc: float


@dataclass
class RunResult:
    history: list[EpochRecord]
    best_epoch: int
    val_acc: float
    test_acc: float
    forward_ms: float = 0.0
    backward_ms: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(METRICS_HEADER + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "lr", "train_loss", "val_acc", "test_acc"])
            for r in self.history:
                writer.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_acc), repr(r.test_acc)])


# ------------------------------------------------------------------ losses


def cross_entropy(probs: Tensor, labels: np.ndarray, floor: float = 1e-12) -> Tensor:
    """-mean log p[label] for probabilities; ``floor`` bounds the log away from -inf."""
    labels = np.asarray(labels)
    if labels.size and labels.max() >= probs.shape[1]:
        raise ParameterError(f"label {labels.max()} >= number of classes {probs.shape[1]}")
    onehot = np.eye(probs.shape[1])[labels]
    picked = T.tsum(T.mul(probs, onehot), axis=1)
    return T.scale(T.tsum(T.log(T.add(picked, floor))), -1.0 / len(labels))


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Same loss computed from logits with log-sum-exp."""
    labels = np.asarray(labels)
    if labels.size and labels.max() >= logits.shape[1]:
        raise ParameterError(f"label {labels.max()} >= number of classes {logits.shape[1]}")
    onehot = np.eye(logits.shape[1])[labels]
    return T.scale(T.tsum(T.mul(T.log_softmax(logits), onehot)), -1.0 / len(labels))


# ------------------------------------------------------------------ optimiser


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    config: TrainConfig,
    frozen: Iterable[str] = (),
) -> None:
    """One Adam update with bias correction and decoupled weight decay, in place.

    Parameters whose name starts with a ``frozen`` prefix, or that have no
    gradient, are left untouched.
    """
    frozen = tuple(frozen)
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1 - b1**state.t, 1 - b2**state.t
    for name, p in params.items():
        if p.grad is None or (frozen and name.startswith(frozen)):
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        if config.weight_decay:
            update = update + lr * config.weight_decay * p.data
        p.data -= update.astype(p.data.dtype, copy=False)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs))


# ------------------------------------------------------------------ evaluation and training


def _batches(model: _Model, graphs: Sequence[Graph], batch_size: int) -> list[Batch]:
    return [model.make_batch(graphs[i : i + batch_size]) for i in range(0, len(graphs), batch_size)]


def _accuracy(model: _Model, batches: Sequence[Batch]) -> float:
    correct = total = 0
    with T.no_grad():
        for b in batches:
            pred = np.argmax(model.forward(b, training=False).logits.data, axis=1)
            correct += int((pred == b.labels).sum())
            total += len(b)
    return correct / total if total else 0.0


def evaluate(model: _Model, graphs: Sequence[Graph], batch_size: int = 256) -> float:
    """Argmax accuracy with dropout off; ties go to the lowest class index."""
    return _accuracy(model, _batches(model, graphs, batch_size))


def train(
    model: _Model,
    train_graphs: Sequence[Graph],
    valid_graphs: Sequence[Graph],
    test_graphs: Sequence[Graph],
    config: TrainConfig,
    seed: int = 0,
    frozen: Iterable[str] = (),
) -> RunResult:
    """Minibatch training; reports test accuracy at the best-validation epoch.

    ``frozen`` lists parameter-name prefixes that are never updated
    (``config.freeze_gnn`` adds ``"gnn."``).
    """
    frozen = set(frozen)
    if config.freeze_gnn:
        frozen.add("gnn.")
    shuffle_rng, dropout_rng = (T.make_rng(s) for s in np.random.SeedSequence(seed).generate_state(2))
    params = model.parameters()
    state = AdamState()
    valid_batches = _batches(model, valid_graphs, config.batch_size)
    test_batches = _batches(model, test_graphs, config.batch_size)
    history: list[EpochRecord] = []
    fwd_time = bwd_time = 0.0
    steps = 0
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr) if config.cosine_anneal else config.lr
        order = shuffle_rng.permutation(len(train_graphs))
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = model.make_batch([train_graphs[i] for i in order[start : start + config.batch_size]])
            for p in params.values():
                p.grad = None
            with T.Tape():
                t0 = time.perf_counter()
                loss = cross_entropy_logits(model.forward(batch, True, dropout_rng).logits, batch.labels)
                t1 = time.perf_counter()
                T.backward(loss)
                t2 = time.perf_counter()
            adam_step(params, state, lr, config, tuple(frozen))
            fwd_time += t1 - t0
            bwd_time += t2 - t1
            steps += 1
            loss_sum += float(loss.data) * len(batch)
        record = EpochRecord(
            epoch, lr, loss_sum / len(order), _accuracy(model, valid_batches), _accuracy(model, test_batches)
        )
        history.append(record)
        log.info("epoch %d lr %.3g loss %.4f val %.4f test %.4f", epoch, lr, record.train_loss, record.val_acc, record.test_acc)
    best = max(range(len(history)), key=lambda i: (history[i].val_acc, -i))
    return RunResult(
        history,
        best,
        history[best].val_acc,
        history[best].test_acc,
        1000 * fwd_time / max(steps, 1),
        1000 * bwd_time / max(steps, 1),
    )


# ------------------------------------------------------------------ checkpoints


def config_fingerprint(config: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path: str | Path, model: _Model, config: dict[str, Any] | None = None) -> None:
    """``.npz`` with one array per named parameter plus a JSON metadata entry."""
    state = model.state_dict()
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": config or {},
        "fingerprint": config_fingerprint(config or {}),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "num_node_label_values": model.num_node_label_values,
        "num_classes": getattr(model, "num_classes", None),
    }
    arrays = {f"param/{k}": v for k, v in state.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def read_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"checkpoint {path} not found")
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise LoadError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k[len("param/") :]: data[k] for k in data.files if k.startswith("param/")}
    return arrays, meta


def load_parameters(model: _Model, arrays: dict[str, np.ndarray], prefix: str = "") -> list[str]:
    """Copy checkpoint arrays whose names start with ``prefix`` into ``model``."""
    params = model.parameters()
    wanted = [k for k in params if k.startswith(prefix)]
    for name in wanted:
        if name not in arrays:
            raise LoadError(f"checkpoint has no parameter {name}")
        if arrays[name].shape != params[name].shape:
            raise LoadError(f"shape mismatch for {name}: checkpoint {arrays[name].shape}, model {params[name].shape}")
    for name in wanted:
        params[name].data = arrays[name].astype(params[name].data.dtype)
    return wanted


# ------------------------------------------------------------------ profiler


@dataclass
class ProfileRow:
    nodes: int
    density: float
    edges: int
    status: str
    forward_ms: float = float("nan")
    forward_std: float = float("nan")
    backward_ms: float = float("nan")
    backward_std: float = float("nan")
    iteration_ms: float = float("nan")
    iteration_std: float = float("nan")


def profile_graphs(node_counts: Sequence[int], densities: Sequence[float], seed: int, graphs_per_cell: int = 1):
    """The random graphs timed in each cell; identical for identical arguments."""
    cells = {}
    for n in node_counts:
        for d in densities:
            cell_seed = int(np.random.SeedSequence([seed, n, int(round(d * 1e6))]).generate_state(1)[0])
            cells[(n, d)] = [erdos_renyi(n, d, cell_seed + i) for i in range(graphs_per_cell)]
    return cells


def profile(
    node_counts: Sequence[int],
    densities: Sequence[float],
    model_config: ModelConfig,
    seed: int = 0,
    warmup: int = 5,
    iters: int = 20,
    graphs_per_cell: int = 1,
) -> list[ProfileRow]:
    """Time training iterations of a GraphTrans model on Erdos-Renyi graphs.

    Out-of-memory in a cell is recorded as ``status="OOM"``; the sweep continues.
    """
    train_cfg = TrainConfig(epochs=1)
    rows = []
    for (n, d), graphs in profile_graphs(node_counts, densities, seed, graphs_per_cell).items():
        edges = sum(g.num_edges for g in graphs)
        try:
            model = GraphTrans(model_config, num_node_label_values=1, num_classes=2, seed=seed)
            params = model.parameters()
            state = AdamState()
            rng = T.make_rng(seed)
            batch = model.make_batch(graphs)
            fwd, bwd, total = [], [], []
            for it in range(warmup + iters):
                for p in params.values():
                    p.grad = None
                t0 = time.perf_counter()
                with T.Tape():
                    loss = cross_entropy_logits(model.forward(batch, True, rng).logits, batch.labels)
                    t1 = time.perf_counter()
                    T.backward(loss)
                    t2 = time.perf_counter()
                adam_step(params, state, train_cfg.lr, train_cfg)
                t3 = time.perf_counter()
                if it >= warmup:
                    fwd.append(t1 - t0)
                    bwd.append(t2 - t1)
                    total.append(t3 - t0)
        except MemoryError:
            rows.append(ProfileRow(n, d, edges, "OOM"))
            continue
        ms = lambda xs: (1000 * float(np.mean(xs)), 1000 * float(np.std(xs)))  # noqa: E731
        rows.append(ProfileRow(n, d, edges, "ok", *ms(fwd), *ms(bwd), *ms(total)))
        log.info("profile n=%d density=%.2f: %.1f ms/iter", n, d, rows[-1].iteration_ms)
    return rows


def write_profile_csv(rows: Sequence[ProfileRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(PROFILE_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["nodes", "density", "edges", "status", "forward_ms", "forward_std",
             "backward_ms", "backward_std", "iteration_ms", "iteration_std"]
        )  # fmt: skip
        for r in rows:
            writer.writerow(
                [r.nodes, r.density, r.edges, r.status, f"{r.forward_ms:.3f}", f"{r.forward_std:.3f}",
                 f"{r.backward_ms:.3f}", f"{r.backward_std:.3f}", f"{r.iteration_ms:.3f}", f"{r.iteration_std:.3f}"]
            )  # fmt: skip
