"""Gated fusion of three modality experts, plus the fixed-weight ensemble.

Inference derives joint/bone/motion from the raw sequence, takes each
frozen expert's SoftMax distribution, asks the gate for per-sample weights
on the 3-simplex, and returns the convex combination. Fine-tuning trains
only the gate (experts stay frozen and in eval mode by default, so their
parameters and batch-norm statistics cannot drift).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from skelnoise.models import (
    GateNetwork,
    SkeletonClassifier,
    load_checkpoint,
    save_checkpoint,
)
from skelnoise.seeding import rng_for
from skelnoise.skeleton import (
    MODALITIES,
    Modality,
    SkeletonSequence,
    SkeletonTopology,
    derive_streams,
)

log = logging.getLogger(__name__)


class DegenerateWeightsError(ValueError):
    """All-zero ensemble weights carry no signal."""


@dataclass(frozen=True)
class FusedPrediction:
    """Per-expert distributions, the mixing weights, and the combined score.

    fused sums to 1 only when the weights are convex (gate path); the
    fixed-weight ensemble uses its weights as-is.
    """

    scores: dict[Modality, np.ndarray]
    weights: np.ndarray
    fused: np.ndarray

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.fused))


@dataclass(frozen=True)
class FinetuneHyperparams:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 10
    batch_size: int = 64


@dataclass
class FusionModel:
    """Three modality experts plus the gate that weights their scores."""

    experts: dict[Modality, SkeletonClassifier]
    gate: GateNetwork
    class_count: int
    topology: SkeletonTopology
    center: bool = True
    frozen: dict[Modality, bool] = field(default_factory=lambda: {m: True for m in MODALITIES})

    def __post_init__(self) -> None:
        if set(self.experts) != set(MODALITIES):
            raise ValueError("experts must cover exactly joint, bone and motion")
        for m, expert in self.experts.items():
            if expert.class_count != self.class_count:
                raise ValueError(
                    f"{m.value} expert has {expert.class_count} classes, fusion expects "
                    f"{self.class_count}"
                )
        if self.gate.expert_count != len(MODALITIES):
            raise ValueError(f"gate emits {self.gate.expert_count} weights, need 3")

    def eval_mode(self) -> None:
        for expert in self.experts.values():
            expert.eval()
        self.gate.eval()

    def _stream_tensors(self, samples: list[SkeletonSequence]) -> dict[Modality, torch.Tensor]:
        streams = derive_streams(samples, self.topology, center=self.center)
        return {
            m: torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous().float()
            for m, arr in streams.items()
        }

    def predict(
        self, samples: list[SkeletonSequence]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (fused (N, K), weights (N, 3), expert scores (N, 3, K))."""
        if not samples:
            k = self.class_count
            return np.zeros((0, k)), np.zeros((0, 3)), np.zeros((0, 3, k))
        self.eval_mode()
        tensors = self._stream_tensors(samples)
        with torch.no_grad():
            scores = torch.stack(
                [self.experts[m].predict_scores(tensors[m]) for m in MODALITIES], dim=1
            )
            concat = torch.cat([tensors[m] for m in MODALITIES], dim=1)
            weights = self.gate(concat)
            fused = torch.einsum("ne,nek->nk", weights, scores)
        return fused.numpy(), weights.numpy(), scores.numpy()

    def predict_scores(self, samples: list[SkeletonSequence]) -> np.ndarray:
        fused, _, _ = self.predict(samples)
        return fused


def fuse(model: FusionModel, sample: SkeletonSequence) -> FusedPrediction:
    """Single-sample gated fusion; argmax of fused is the prediction."""
    fused, weights, scores = model.predict([sample])
    return FusedPrediction(
        scores={m: scores[0, i] for i, m in enumerate(MODALITIES)},
        weights=weights[0],
        fused=fused[0],
    )


def fixed_weight_ensemble(
    experts: dict[Modality, SkeletonClassifier],
    weights: tuple[float, float, float],
    sample: SkeletonSequence,
    topology: SkeletonTopology,
    center: bool = True,
) -> FusedPrediction:
    """S = sum of weight_m * SoftMax_m, weights used as-is (argmax only cares
    about relative scale)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (3,) or not np.all(np.isfinite(w)):
        raise ValueError(f"need 3 finite weights, got {weights}")
    if np.all(w == 0):
        raise DegenerateWeightsError("all-zero ensemble weights")
    streams = derive_streams([sample], topology, center=center)
    scores = {}
    with torch.no_grad():
        for m in MODALITIES:
            expert = experts[m]
            expert.eval()
            xb = torch.from_numpy(streams[m]).permute(0, 3, 1, 2).contiguous().float()
            scores[m] = expert.predict_scores(xb).numpy()[0]
    fused = sum(w[i] * scores[m] for i, m in enumerate(MODALITIES))
    return FusedPrediction(scores=scores, weights=w, fused=fused)


class FixedEnsemblePredictor:
    """Batch wrapper over fixed_weight_ensemble semantics, for evaluation."""

    def __init__(
        self,
        experts: dict[Modality, SkeletonClassifier],
        weights: tuple[float, float, float],
        topology: SkeletonTopology,
        center: bool = True,
    ):
        w = np.asarray(weights, dtype=np.float64)
        if np.all(w == 0):
            raise DegenerateWeightsError("all-zero ensemble weights")
        self.experts = experts
        self.weights = w
        self.topology = topology
        self.center = center

    def predict_scores(self, samples: list[SkeletonSequence]) -> np.ndarray:
        if not samples:
            k = next(iter(self.experts.values())).class_count
            return np.zeros((0, k))
        streams = derive_streams(samples, self.topology, center=self.center)
        total = None
        with torch.no_grad():
            for i, m in enumerate(MODALITIES):
                expert = self.experts[m]
                expert.eval()
                xb = torch.from_numpy(streams[m]).permute(0, 3, 1, 2).contiguous().float()
                part = self.weights[i] * expert.predict_scores(xb).numpy()
                total = part if total is None else total + part
        return total


def finetune_gate(
    model: FusionModel,
    samples: list[SkeletonSequence],
    hyperparams: FinetuneHyperparams,
    seed: int,
    out_dir: str | Path | None = None,
) -> tuple[FusionModel, list[dict]]:
    """Train the gate on the clean set with cross-entropy over the fused score.

    Frozen experts contribute fixed score tensors (precomputed once); their
    parameters and buffers are untouched. Unfrozen experts join the
    optimizer and run in train mode. Returns the model and per-epoch
    gate-weight statistics.
    """
    if not samples:
        raise ValueError("clean set is empty; nothing to fine-tune on")

    labels = torch.tensor([s.label for s in samples], dtype=torch.int64)
    tensors = model._stream_tensors(samples)
    fixed_scores: dict[Modality, torch.Tensor] = {}
    for m in MODALITIES:
        expert = model.experts[m]
        if model.frozen[m]:
            expert.eval()
            for p in expert.parameters():
                p.requires_grad_(False)
            with torch.no_grad():
                fixed_scores[m] = expert.predict_scores(tensors[m])
    concat = torch.cat([tensors[m] for m in MODALITIES], dim=1)

    params = list(model.gate.parameters())
    for m in MODALITIES:
        if not model.frozen[m]:
            params += list(model.experts[m].parameters())
    optimizer = torch.optim.SGD(
        params,
        lr=hyperparams.learning_rate,
        momentum=hyperparams.momentum,
        weight_decay=hyperparams.weight_decay,
    )
    n = len(samples)
    metrics: list[dict] = []
    for epoch in range(hyperparams.epochs):
        model.gate.train()
        for m in MODALITIES:
            if not model.frozen[m]:
                model.experts[m].train()
        order = rng_for(seed, "gate-order", epoch).permutation(n)
        loss_sum = 0.0
        weight_sum = np.zeros(3)
        for start in range(0, n, hyperparams.batch_size):
            idx = torch.from_numpy(order[start : start + hyperparams.batch_size].copy())
            scores = torch.stack(
                [
                    fixed_scores[m][idx]
                    if m in fixed_scores
                    else model.experts[m].predict_scores(tensors[m][idx])
                    for m in MODALITIES
                ],
                dim=1,
            )
            weights = model.gate(concat[idx])
            fused = torch.einsum("ne,nek->nk", weights, scores)
            loss = torch.nn.functional.nll_loss(torch.log(fused.clamp_min(1e-12)), labels[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach()) * len(idx)
            weight_sum += weights.detach().numpy().sum(axis=0)
        mean_w = weight_sum / n
        metrics.append(
            {
                "epoch": epoch,
                "loss": loss_sum / n,
                "mean_weight_joint": float(mean_w[0]),
                "mean_weight_bone": float(mean_w[1]),
                "mean_weight_motion": float(mean_w[2]),
            }
        )
    model.eval_mode()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gate_finetune_metrics.jsonl", "w") as fh:
            for row in metrics:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return model, metrics


def save_fusion(
    model: FusionModel,
    out_dir: str | Path,
    seed: int,
    epoch: int,
    extra: dict | None = None,
) -> Path:
    """Bundle expert + gate checkpoints with a JSON header."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for m in MODALITIES:
        save_checkpoint(model.experts[m], out / f"expert_{m.value}.ckpt", seed, epoch, m.value)
    save_checkpoint(model.gate, out / "gate.ckpt", seed, epoch, "gate")
    header = {
        "format": "skelnoise-fusion-v1",
        "class_count": model.class_count,
        "center": model.center,
        "frozen": {m.value: bool(model.frozen[m]) for m in MODALITIES},
        "experts": {m.value: f"expert_{m.value}.ckpt" for m in MODALITIES},
        "gate": "gate.ckpt",
    }
    if extra:
        header["extra"] = extra
    path = out / "fusion.json"
    path.write_text(json.dumps(header, indent=2, sort_keys=True))
    return path


def load_fusion(path: str | Path) -> FusionModel:
    path = Path(path)
    if path.is_dir():
        path = path / "fusion.json"
    header = json.loads(path.read_text())
    if header.get("format") != "skelnoise-fusion-v1":
        raise ValueError(f"{path}: unknown fusion bundle format")
    experts = {}
    for m in MODALITIES:
        expert, _ = load_checkpoint(path.parent / header["experts"][m.value])
        experts[m] = expert
    gate, _ = load_checkpoint(path.parent / header["gate"])
    topology = gate.topology
    return FusionModel(
        experts=experts,
        gate=gate,
        class_count=int(header["class_count"]),
        topology=topology,
        center=bool(header["center"]),
        frozen={m: bool(header["frozen"][m.value]) for m in MODALITIES},
    )
