"""Training loop, accuracy protocol, repeated-split experiments and result files."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .graph import MultiLayerGraph, Split, split_transductive
from .models import GraphContext, ModelConfig, build_context, build_model

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("realization", "seed", "frac", "accuracy", "final_loss", "epochs", "seconds", "status")


class TrainingDiverged(ad.NonFiniteError):
    def __init__(self, message: str, epoch: int, losses: list[float]):
        super().__init__(message)
        self.epoch = epoch
        self.losses = losses


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    epochs: int = 300
    train_fracs: tuple[float, ...] = (0.1, 0.2, 0.3)
    realizations: int = 20
    base_seed: int = 0
    weight_decay: float = 0.0
    early_stop: bool = False
    patience: int = 30
    min_delta: float = 1e-5
    missing_policy: str = "drop-edges"

    def __post_init__(self):
        object.__setattr__(self, "train_fracs", tuple(float(f) for f in self.train_fracs))
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if not self.train_fracs or any(not 0.0 < f < 1.0 for f in self.train_fracs):
            raise ValueError("train_fracs must be a non-empty list of values in (0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train_fracs"] = list(self.train_fracs)
        return out


@dataclass
class MetricsRecord:
    realization: int
    seed: int
    frac: float
    accuracy: float
    final_loss: float
    epochs: int
    seconds: float
    status: str = "ok"


@dataclass
class TrainResult:
    model: object
    features: np.ndarray
    context: GraphContext
    losses: list[float]
    epochs: int
    seconds: float

    def logits(self) -> np.ndarray:
        return self.model(self.context, self.features).value

    def embeddings(self) -> np.ndarray:
        return self.model.embed(self.context, self.features).value


def run_seed(base_seed: int, frac_index: int, realization: int) -> int:
    """Seed of one (fraction, realization) cell."""
    return base_seed + 1000 * frac_index + realization


def derived_seeds(seed: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent streams for the random features and the parameter init."""
    return np.random.SeedSequence([seed, 1]), np.random.SeedSequence([seed, 2])


def train_model(g: MultiLayerGraph, config: ModelConfig, split: Split, seed: int, epochs: int = 300,
                lr: float = 1e-3, weight_decay: float = 0.0, context: GraphContext | None = None,
                early_stop: bool = False, patience: int = 30, min_delta: float = 1e-5) -> TrainResult:
    """Full-batch Adam on the masked cross-entropy of ``split.train_idx``.

    ``losses[e]`` is the training loss evaluated at the start of epoch ``e + 1``,
    before that epoch's update.
    """
    train_idx = np.asarray(split.train_idx, dtype=np.int64)
    if len(train_idx) == 0:
        raise ValueError("the training split is empty")
    if (g.labels[train_idx] < 0).any():
        raise ValueError("the training split contains unlabeled nodes")
    start = time.perf_counter()
    feat_seed, init_seed = derived_seeds(seed)
    ctx = context if context is not None else build_context(g, config.variant)
    model = build_model(config, g.n_layers, g.n_classes, init_seed)
    x = model.make_features(g.n_nodes, feat_seed)
    opt = ad.Adam(model.parameters(), lr=lr, weight_decay=weight_decay)
    losses: list[float] = []
    best, stale = np.inf, 0
    for epoch in range(1, epochs + 1):
        opt.zero_grad()
        try:
            loss = ad.masked_cross_entropy(model(ctx, x), g.labels, train_idx)
            ad.backward(loss)
            opt.step()
        except ad.NonFiniteError as exc:
            tail = ", ".join(f"{v:.6g}" for v in losses[-5:])
            raise TrainingDiverged(f"non-finite value at epoch {epoch} ({exc}); last losses: [{tail}]",
                                   epoch, losses) from exc
        losses.append(float(loss.value))
        if early_stop:
            if loss.value < best - min_delta:
                best, stale = float(loss.value), 0
            else:
                stale += 1
                if stale >= patience:
                    break
    return TrainResult(model, x, ctx, losses, len(losses), time.perf_counter() - start)


def evaluate_accuracy(logits, labels, test_idx) -> float:
    """Percentage of correct argmax predictions; ties go to the lowest class index."""
    test_idx = np.asarray(test_idx, dtype=np.int64)
    if len(test_idx) == 0:
        raise ValueError("the test set is empty")
    logits = np.asarray(logits)
    pred = np.argmax(logits[test_idx], axis=1)
    return 100.0 * float(np.count_nonzero(pred == np.asarray(labels)[test_idx])) / len(test_idx)


def final_loss(result: TrainResult, g: MultiLayerGraph, split: Split) -> float:
    """Training loss after the last update."""
    logits = ad.Tensor(result.logits())
    return float(ad.masked_cross_entropy(logits, g.labels, split.train_idx).value)


def run_cell(g: MultiLayerGraph, config: ExperimentConfig, frac_index: int, realization: int,
             context: GraphContext | None = None) -> tuple[MetricsRecord, list[float]]:
    """Train and evaluate one (fraction, realization) cell."""
    frac = config.train_fracs[frac_index]
    seed = run_seed(config.base_seed, frac_index, realization)
    start = time.perf_counter()
    try:
        split = split_transductive(g.labeled_ids, frac, seed)
        result = train_model(g, config.model, split, seed, config.epochs, config.lr, config.weight_decay,
                             context, config.early_stop, config.patience, config.min_delta)
        acc = evaluate_accuracy(result.logits(), g.labels, split.test_idx)
        record = MetricsRecord(realization, seed, frac, acc, final_loss(result, g, split), result.epochs,
                               time.perf_counter() - start)
        return record, result.losses
    except (ad.NonFiniteError, ValueError) as exc:
        log.warning("run frac=%s realization=%d failed: %s", frac, realization, exc)
        status = "diverged" if isinstance(exc, ad.NonFiniteError) else "failed"
        losses = exc.losses if isinstance(exc, TrainingDiverged) else []
        return MetricsRecord(realization, seed, frac, float("nan"), float("nan"), len(losses),
                             time.perf_counter() - start, status), losses


# Worker-process state for the pool: the graph and its neighborhoods are built once per worker.
_WORKER: dict = {}


def _init_worker(g: MultiLayerGraph, config: ExperimentConfig) -> None:
    _WORKER["g"], _WORKER["config"] = g, config
    _WORKER["ctx"] = build_context(g, config.model.variant)


def _worker_cell(cell: tuple[int, int]):
    return run_cell(_WORKER["g"], _WORKER["config"], *cell, context=_WORKER["ctx"])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[MetricsRecord]
    losses: dict[tuple[int, int], list[float]]
    summary: dict


def summarize(records: list[MetricsRecord], fracs) -> dict:
    """Per-fraction mean and (population) standard deviation of successful runs."""
    out = {}
    for frac in fracs:
        accs = [r.accuracy for r in records if r.frac == frac and r.status == "ok"]
        failed = sum(1 for r in records if r.frac == frac and r.status != "ok")
        out[f"{frac:g}"] = {
            "frac": frac,
            "mean": float(np.mean(accs)) if accs else None,
            "std": float(np.std(accs)) if accs else None,
            "runs": len(accs),
            "failed": failed,
        }
    return out


def run_experiment(config: ExperimentConfig, g: MultiLayerGraph, workers: int = 1, out_dir=None) -> ExperimentResult:
    """Every fraction x realization cell: fresh split, features and init; then aggregate.

    A failing cell is recorded with a non-``ok`` status and the sweep goes on.
    """
    cells = [(fi, r) for fi in range(len(config.train_fracs)) for r in range(config.realizations)]
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(g, config)) as pool:
            outputs = list(pool.map(_worker_cell, cells))
    else:
        ctx = build_context(g, config.model.variant)
        outputs = []
        for fi, r in cells:
            outputs.append(run_cell(g, config, fi, r, ctx))
            rec = outputs[-1][0]
            log.info("frac=%g realization=%d accuracy=%.2f loss=%.4g (%.1fs)", rec.frac, r, rec.accuracy,
                     rec.final_loss, rec.seconds)
    records = [o[0] for o in outputs]
    losses = {cell: o[1] for cell, o in zip(cells, outputs)}
    result = ExperimentResult(config, records, losses, summarize(records, config.train_fracs))
    if out_dir is not None:
        write_results(result, out_dir)
    return result


# -- result files ----------------------------------------------------------------------------

def write_metrics(records: list[MetricsRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([r.realization, r.seed, repr(r.frac), repr(r.accuracy), repr(r.final_loss), r.epochs,
                        f"{r.seconds:.3f}", r.status])


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        return [MetricsRecord(int(row["realization"]), int(row["seed"]), float(row["frac"]),
                              float(row["accuracy"]), float(row["final_loss"]), int(row["epochs"]),
                              float(row["seconds"]), row["status"]) for row in csv.DictReader(fh)]


def write_summary(summary: dict, path, config: ExperimentConfig | None = None) -> None:
    doc = {"summary": summary}
    if config is not None:
        doc["config"] = config.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_loss_trace(losses, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch", "loss"))
        for e, v in enumerate(losses, start=1):
            w.writerow((e, repr(float(v))))


def write_results(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    (out / "losses").mkdir(parents=True, exist_ok=True)
    write_metrics(result.records, out / "metrics.csv")
    write_summary(result.summary, out / "summary.json", result.config)
    for (fi, r), trace in result.losses.items():
        write_loss_trace(trace, out / "losses" / f"frac{fi}_run{r:02d}.csv")
    return out


def export_embeddings(result: TrainResult, path, node_ids=None) -> Path:
    """Write the pre-classifier node representations, one row per node ID."""
    emb = result.embeddings()
    ids = np.arange(emb.shape[0]) if node_ids is None else np.asarray(node_ids)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", *(f"dim{j}" for j in range(emb.shape[1]))])
        for i, row in zip(ids, emb):
            w.writerow([int(i), *(format(float(v), ".17g") for v in row)])
    return path
