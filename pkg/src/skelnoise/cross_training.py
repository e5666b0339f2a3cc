"""Co-teaching trainer: two peers exchange small-loss selections per batch.

Each batch, both nets score every sample on the current (pre-update)
parameters; each keeps its ceil(R(T) * batch) smallest-loss indices, and
each net then takes an SGD step on the mean loss over the PEER's selection.
After the last epoch the peer with higher accuracy on the held-out split
becomes the modality expert.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

from skelnoise.exact import as_fraction, exact_ceil
from skelnoise.models import BackboneSpec, ReferenceSTGCN, SkeletonClassifier, build_backbone
from skelnoise.seeding import derive_seed, rng_for
from skelnoise.skeleton import Modality, SkeletonTopology

log = logging.getLogger(__name__)


class EmptyBatchError(ValueError):
    """Selection over zero losses is meaningless."""


class TrainingDivergedError(RuntimeError):
    """A non-finite loss appeared; carries where."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class SelectionSchedule:
    """Epoch-dependent keep ratio R(T) = 1 - min((T / warmup) * r, r)."""

    noise_ratio: float
    warmup_epochs: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_ratio < 1.0:
            raise ValueError(f"noise_ratio must be in [0, 1), got {self.noise_ratio}")
        if self.warmup_epochs < 1:
            raise ValueError(f"warmup_epochs must be positive, got {self.warmup_epochs}")

    def keep_fraction(self, epoch: int) -> Fraction:
        if epoch < 0:
            raise ValueError(f"epoch must be >= 0, got {epoch}")
        r = as_fraction(self.noise_ratio)
        ramp = Fraction(epoch, self.warmup_epochs) * r
        return 1 - min(ramp, r)

    def keep_ratio(self, epoch: int) -> float:
        return float(self.keep_fraction(epoch))


def keep_ratio(schedule: SelectionSchedule, epoch: int) -> float:
    return schedule.keep_ratio(epoch)


def small_loss_select(losses: np.ndarray, keep: float | Fraction) -> tuple[int, ...]:
    """Indices of the ceil(keep * n) smallest losses, ties to the lower index."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1:
        raise ValueError(f"losses must be a vector, got shape {losses.shape}")
    if losses.size == 0:
        raise EmptyBatchError("cannot select from an empty batch")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses contain non-finite entries")
    keep = as_fraction(keep)
    if not 0 < keep <= 1:
        raise ValueError(f"keep ratio must be in (0, 1], got {float(keep)}")
    count = exact_ceil(keep, losses.size)
    order = np.argsort(losses, kind="stable")
    return tuple(sorted(int(i) for i in order[:count]))


@dataclass(frozen=True)
class TrainHyperparams:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 4e-4
    epochs: int = 65
    batch_size: int = 64
    lr_decay_epochs: tuple[int, ...] = (35, 55)
    lr_decay_factor: float = 0.1

    def lr_at(self, epoch: int) -> float:
        """Step decay: multiply by the factor at each listed epoch."""
        steps = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.learning_rate * self.lr_decay_factor**steps


@dataclass(frozen=True)
class ModalityStream:
    """One derived modality of a training set, as dense arrays."""

    modality: Modality
    data: np.ndarray  # (N, T, V, C) float32
    labels: np.ndarray  # noisy labels, int64
    sample_ids: tuple[str, ...]
    class_count: int

    def __post_init__(self) -> None:
        if self.data.ndim != 4:
            raise ValueError(f"stream data must be (N, T, V, C), got {self.data.shape}")
        n = self.data.shape[0]
        if len(self.labels) != n or len(self.sample_ids) != n:
            raise ValueError("data, labels and sample_ids must align")

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass
class CoTeachingState:
    net1: SkeletonClassifier
    net2: SkeletonClassifier
    opt1: torch.optim.Optimizer
    opt2: torch.optim.Optimizer
    epoch: int = 0
    selection_log: list[tuple[int, int, str, str]] = field(default_factory=list)
    # rows: (epoch, batch, net, sample_id)
    last_losses1: np.ndarray | None = None  # pre-update per-sample losses, last batch
    last_losses2: np.ndarray | None = None


def _as_batch(data: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(data)).permute(0, 3, 1, 2).contiguous().float()


def co_teaching_step(
    state: CoTeachingState,
    batch: torch.Tensor,
    labels: torch.Tensor,
    keep: float | Fraction,
    batch_index: int = 0,
    sample_ids: tuple[str, ...] | None = None,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """One cross-update step; returns (selection of net1, selection of net2).

    Both selections come from the same pre-update parameter snapshot; each
    optimizer then steps on the mean loss over the other net's selection.
    """
    if batch.shape[0] == 0:
        raise EmptyBatchError("co-teaching step needs a nonempty batch")
    loss1 = state.net1.per_sample_loss(batch, labels)
    loss2 = state.net2.per_sample_loss(batch, labels)
    det1 = loss1.detach().numpy()
    det2 = loss2.detach().numpy()
    if not (np.all(np.isfinite(det1)) and np.all(np.isfinite(det2))):
        raise TrainingDivergedError(
            f"non-finite loss at epoch {state.epoch}, batch {batch_index}",
            epoch=state.epoch,
            batch=batch_index,
        )
    sel1 = small_loss_select(det1, keep)
    sel2 = small_loss_select(det2, keep)
    state.last_losses1 = det1
    state.last_losses2 = det2

    state.opt1.zero_grad(set_to_none=True)
    loss1[list(sel2)].mean().backward()
    state.opt1.step()

    state.opt2.zero_grad(set_to_none=True)
    loss2[list(sel1)].mean().backward()
    state.opt2.step()

    if sample_ids is not None:
        for i in sel1:
            state.selection_log.append((state.epoch, batch_index, "net1", sample_ids[i]))
        for i in sel2:
            state.selection_log.append((state.epoch, batch_index, "net2", sample_ids[i]))
    return sel1, sel2


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def evaluate_accuracy(
    model: SkeletonClassifier,
    data: np.ndarray,
    labels: np.ndarray,
    batch_size: int = 256,
) -> float:
    """Top-1 accuracy of a single classifier on (N, T, V, C) arrays."""
    if data.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty split")
    was_training = model.training
    model.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, data.shape[0], batch_size):
            xb = _as_batch(data[start : start + batch_size])
            logits = model(xb)
            hits += int((logits.argmax(dim=1).numpy() == labels[start : start + batch_size]).sum())
    if was_training:
        model.train()
    return hits / data.shape[0]


@dataclass
class CrossTrainResult:
    model: SkeletonClassifier
    chosen: str  # "net1" or "net2"
    accuracies: tuple[float, float]
    metrics: list[dict]
    selection_log: list[tuple[int, int, str, str]]


def _selection_quality(
    epoch_selected: set[str],
    sample_ids: tuple[str, ...],
    corrupted_mask: np.ndarray,
) -> tuple[float, float]:
    clean_ids = {sid for sid, bad in zip(sample_ids, corrupted_mask) if not bad}
    if not epoch_selected:
        return 0.0, 0.0
    n_clean_sel = len(epoch_selected & clean_ids)
    return n_clean_sel / len(epoch_selected), n_clean_sel / max(len(clean_ids), 1)


def cross_train(
    stream: ModalityStream,
    schedule: SelectionSchedule,
    hyperparams: TrainHyperparams,
    eval_data: np.ndarray,
    eval_labels: np.ndarray,
    topology: SkeletonTopology,
    backbone: BackboneSpec,
    seed: int,
    corrupted_mask: np.ndarray | None = None,
    out_dir: str | Path | None = None,
) -> CrossTrainResult:
    """Full co-teaching loop over one modality stream.

    eval_data/eval_labels pick the final peer; they must never carry
    injected noise. corrupted_mask (injection provenance, aligned with the
    stream) enables per-epoch selector precision/recall logging.
    """
    if eval_data.shape[0] == 0:
        raise ValueError("eval split is empty; cannot pick the final peer")
    if backbone.class_count != stream.class_count:
        raise ValueError(
            f"backbone has {backbone.class_count} classes, stream has {stream.class_count}"
        )

    net1 = build_backbone(backbone, topology, derive_seed(seed, "net", 1))
    net2 = build_backbone(backbone, topology, derive_seed(seed, "net", 2))

    def make_opt(net: SkeletonClassifier) -> torch.optim.Optimizer:
        return torch.optim.SGD(
            net.parameters(),
            lr=hyperparams.learning_rate,
            momentum=hyperparams.momentum,
            weight_decay=hyperparams.weight_decay,
        )

    state = CoTeachingState(net1=net1, net2=net2, opt1=make_opt(net1), opt2=make_opt(net2))
    labels_t = torch.from_numpy(stream.labels.astype(np.int64))
    n = len(stream)
    metrics: list[dict] = []

    for epoch in range(hyperparams.epochs):
        state.epoch = epoch
        keep = schedule.keep_fraction(epoch)
        lr = hyperparams.lr_at(epoch)
        _set_lr(state.opt1, lr)
        _set_lr(state.opt2, lr)
        net1.train()
        net2.train()
        order = rng_for(seed, "order", epoch).permutation(n)
        epoch_sel1: set[str] = set()
        epoch_sel2: set[str] = set()
        loss_sum1 = loss_sum2 = 0.0
        count1 = count2 = 0
        for batch_index, start in enumerate(range(0, n, hyperparams.batch_size)):
            idx = order[start : start + hyperparams.batch_size]
            xb = _as_batch(stream.data[idx])
            yb = labels_t[idx]
            ids = tuple(stream.sample_ids[i] for i in idx)
            sel1, sel2 = co_teaching_step(state, xb, yb, keep, batch_index, ids)
            epoch_sel1.update(ids[i] for i in sel1)
            epoch_sel2.update(ids[i] for i in sel2)
            loss_sum1 += float(np.sum(state.last_losses1[list(sel2)]))
            loss_sum2 += float(np.sum(state.last_losses2[list(sel1)]))
            count1 += len(sel2)
            count2 += len(sel1)
        row = {
            "epoch": epoch,
            "keep_ratio": float(keep),
            "lr": lr,
            "mean_selected_loss_net1": loss_sum1 / max(count1, 1),
            "mean_selected_loss_net2": loss_sum2 / max(count2, 1),
        }
        if corrupted_mask is not None:
            p1, r1 = _selection_quality(epoch_sel1, stream.sample_ids, corrupted_mask)
            p2, r2 = _selection_quality(epoch_sel2, stream.sample_ids, corrupted_mask)
            row.update(
                selector_precision_net1=p1,
                selector_recall_net1=r1,
                selector_precision_net2=p2,
                selector_recall_net2=r2,
            )
        metrics.append(row)

    acc1 = evaluate_accuracy(net1, eval_data, eval_labels)
    acc2 = evaluate_accuracy(net2, eval_data, eval_labels)
    chosen = "net1" if acc1 >= acc2 else "net2"
    model = net1 if chosen == "net1" else net2
    model.eval()
    log.info(
        "%s cross-train done: net1 %.4f, net2 %.4f, kept %s",
        stream.modality.value,
        acc1,
        acc2,
        chosen,
    )

    result = CrossTrainResult(
        model=model,
        chosen=chosen,
        accuracies=(acc1, acc2),
        metrics=metrics,
        selection_log=state.selection_log,
    )
    if out_dir is not None:
        _write_training_artifacts(result, stream.modality, Path(out_dir))
    return result


def _write_training_artifacts(result: CrossTrainResult, modality: Modality, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / f"cross_train_{modality.value}_metrics.jsonl"
    with open(metrics_path, "w") as fh:
        for row in result.metrics:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    log_path = out_dir / f"cross_train_{modality.value}_selections.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "batch", "net", "sample_id"])
        writer.writerows(result.selection_log)


def train_plain(
    stream: ModalityStream,
    hyperparams: TrainHyperparams,
    topology: SkeletonTopology,
    backbone: BackboneSpec,
    seed: int,
) -> SkeletonClassifier:
    """Single-network SGD baseline: no selection, every sample every epoch."""
    net = build_backbone(backbone, topology, derive_seed(seed, "plain"))
    opt = torch.optim.SGD(
        net.parameters(),
        lr=hyperparams.learning_rate,
        momentum=hyperparams.momentum,
        weight_decay=hyperparams.weight_decay,
    )
    labels_t = torch.from_numpy(stream.labels.astype(np.int64))
    n = len(stream)
    for epoch in range(hyperparams.epochs):
        _set_lr(opt, hyperparams.lr_at(epoch))
        net.train()
        order = rng_for(seed, "order", epoch).permutation(n)
        for batch_index, start in enumerate(range(0, n, hyperparams.batch_size)):
            idx = order[start : start + hyperparams.batch_size]
            xb = _as_batch(stream.data[idx])
            loss = net.per_sample_loss(xb, labels_t[idx])
            if not torch.isfinite(loss).all():
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}",
                    epoch=epoch,
                    batch=batch_index,
                )
            opt.zero_grad(set_to_none=True)
            loss.mean().backward()
            opt.step()
    net.eval()
    return net
