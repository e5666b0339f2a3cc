"""Experiment orchestration: config, staged pipeline, evaluation, reports.

Pipeline stages run in order (inject, derive, cross-train per modality,
select, fuse, evaluate) with artifacts written after each; a rerun picks up
from whatever artifacts already exist. Test labels are never corrupted:
injection touches only the training split, and the pipeline asserts that
before evaluating.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from skelnoise.cross_training import (
    ModalityStream,
    SelectionSchedule,
    TrainHyperparams,
    cross_train,
    train_plain,
)
from skelnoise.data import SyntheticSpec, generate_synthetic_dataset, load_dataset, split_dataset
from skelnoise.fusion import (
    FinetuneHyperparams,
    FixedEnsemblePredictor,
    FusionModel,
    finetune_gate,
    load_fusion,
    save_fusion,
)
from skelnoise.models import (
    BackboneSpec,
    SkeletonClassifier,
    build_gate,
    load_checkpoint,
    save_checkpoint,
)
from skelnoise.noise import NoiseManifest, NoisyDataset, inject_symmetric_noise, selector_quality
from skelnoise.seeding import derive_seed, rng_for
from skelnoise.selection import rank_by_loss, select_clean
from skelnoise.skeleton import (
    MODALITIES,
    Modality,
    SkeletonSequence,
    SkeletonTopology,
    default_topology,
    derive_streams,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Configuration failed validation."""


class StageError(RuntimeError):
    """A pipeline stage failed; earlier artifacts remain for resume."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


class NothingToPlotError(ValueError):
    """No completed runs to draw."""


class TestSplitContaminationError(AssertionError):
    """A noisy label leaked into the test split."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run needs, JSON-serializable."""

    output_dir: str
    noise_ratio: float = 0.4
    seed: int = 0
    dataset_kind: str = "synthetic"  # "synthetic" or "array"
    dataset_path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    dataset_seed: int = 7
    split_protocol: str = "random"
    test_fraction: float = 0.25
    split_seed: int = 11
    peer_eval_fraction: float = 0.1
    warmup_epochs: int = 10
    selection_fraction: float | None = None  # None -> 1 - noise_ratio
    backbone_channels: tuple[int, ...] = (16, 32, 64, 64)
    temporal_kernel: int = 5
    gate_channels: tuple[int, int] = (16, 32)
    train: TrainHyperparams = field(default_factory=TrainHyperparams)
    finetune: FinetuneHyperparams = field(default_factory=FinetuneHyperparams)
    ensemble_weights: tuple[float, float, float] = (0.6, 0.6, 0.4)
    center: bool = True

    def validate(self) -> None:
        if not 0.0 <= self.noise_ratio < 1.0:
            raise ConfigError(f"noise_ratio must be in [0, 1), got {self.noise_ratio}")
        if self.dataset_kind not in ("synthetic", "array"):
            raise ConfigError(f"unknown dataset_kind {self.dataset_kind!r}")
        if self.dataset_kind == "array":
            if not self.dataset_path:
                raise ConfigError("dataset_kind 'array' requires dataset_path")
            if not Path(self.dataset_path).exists():
                raise ConfigError(f"dataset_path {self.dataset_path!r} does not exist")
        if self.split_protocol not in ("random", "xsub", "xview"):
            raise ConfigError(f"unknown split protocol {self.split_protocol!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not 0.0 < self.peer_eval_fraction < 1.0:
            raise ConfigError(
                f"peer_eval_fraction must be in (0, 1), got {self.peer_eval_fraction}"
            )
        if self.warmup_epochs < 1:
            raise ConfigError(f"warmup_epochs must be positive, got {self.warmup_epochs}")
        if self.selection_fraction is not None and not 0.0 < self.selection_fraction <= 1.0:
            raise ConfigError(
                f"selection_fraction must be in (0, 1], got {self.selection_fraction}"
            )
        if self.dataset_kind == "synthetic":
            self.synthetic.validate()

    @property
    def effective_selection_fraction(self) -> float:
        if self.selection_fraction is not None:
            return self.selection_fraction
        return 1.0 - self.noise_ratio

    def to_json(self) -> dict:
        return {
            "output_dir": self.output_dir,
            "noise_ratio": self.noise_ratio,
            "seed": self.seed,
            "dataset_kind": self.dataset_kind,
            "dataset_path": self.dataset_path,
            "synthetic": self.synthetic.to_json(),
            "dataset_seed": self.dataset_seed,
            "split_protocol": self.split_protocol,
            "test_fraction": self.test_fraction,
            "split_seed": self.split_seed,
            "peer_eval_fraction": self.peer_eval_fraction,
            "warmup_epochs": self.warmup_epochs,
            "selection_fraction": self.selection_fraction,
            "backbone_channels": list(self.backbone_channels),
            "temporal_kernel": self.temporal_kernel,
            "gate_channels": list(self.gate_channels),
            "train": vars(self.train) | {"lr_decay_epochs": list(self.train.lr_decay_epochs)},
            "finetune": dict(vars(self.finetune)),
            "ensemble_weights": list(self.ensemble_weights),
            "center": self.center,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ExperimentConfig":
        train_raw = dict(payload.get("train", {}))
        if "lr_decay_epochs" in train_raw:
            train_raw["lr_decay_epochs"] = tuple(train_raw["lr_decay_epochs"])
        config = cls(
            output_dir=payload["output_dir"],
            noise_ratio=float(payload.get("noise_ratio", 0.4)),
            seed=int(payload.get("seed", 0)),
            dataset_kind=payload.get("dataset_kind", "synthetic"),
            dataset_path=payload.get("dataset_path"),
            synthetic=SyntheticSpec.from_json(payload["synthetic"])
            if "synthetic" in payload
            else SyntheticSpec(),
            dataset_seed=int(payload.get("dataset_seed", 7)),
            split_protocol=payload.get("split_protocol", "random"),
            test_fraction=float(payload.get("test_fraction", 0.25)),
            split_seed=int(payload.get("split_seed", 11)),
            peer_eval_fraction=float(payload.get("peer_eval_fraction", 0.1)),
            warmup_epochs=int(payload.get("warmup_epochs", 10)),
            selection_fraction=payload.get("selection_fraction"),
            backbone_channels=tuple(payload.get("backbone_channels", (16, 32, 64, 64))),
            temporal_kernel=int(payload.get("temporal_kernel", 5)),
            gate_channels=tuple(payload.get("gate_channels", (16, 32))),
            train=TrainHyperparams(**train_raw),
            finetune=FinetuneHyperparams(**payload.get("finetune", {})),
            ensemble_weights=tuple(payload.get("ensemble_weights", (0.6, 0.6, 0.4))),
            center=bool(payload.get("center", True)),
        )
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class RunReport:
    """Everything a run produced. Hashing excludes wall-clock fields."""

    config: dict
    stages: dict[str, dict]
    artifact_hashes: dict[str, str]
    timing_seconds: dict[str, float] = field(default_factory=dict)

    def canonical_bytes(self) -> bytes:
        # output_dir is operational, not part of the experiment identity, so
        # runs written to different places can still compare equal.
        payload = {
            "config": {k: v for k, v in self.config.items() if k != "output_dir"},
            "stages": self.stages,
            "artifact_hashes": self.artifact_hashes,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()

    def report_hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "stages": self.stages,
            "artifact_hashes": self.artifact_hashes,
            "timing_seconds": self.timing_seconds,
            "report_hash": self.report_hash(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RunReport":
        payload = json.loads(Path(path).read_text())
        return cls(
            config=payload["config"],
            stages=payload["stages"],
            artifact_hashes=payload["artifact_hashes"],
            timing_seconds=payload.get("timing_seconds", {}),
        )


@dataclass(frozen=True)
class EvalMetrics:
    top1: float
    topk: float
    k: int
    per_class: dict[int, float]
    count: int

    def to_json(self) -> dict:
        return {
            "top1": self.top1,
            f"top{self.k}": self.topk,
            "per_class": {str(c): acc for c, acc in sorted(self.per_class.items())},
            "count": self.count,
        }


class ModalityPredictor:
    """Adapts a single-modality classifier to raw skeleton sequences."""

    def __init__(
        self,
        model: SkeletonClassifier,
        modality: Modality,
        topology: SkeletonTopology,
        center: bool = True,
    ):
        self.model = model
        self.modality = modality
        self.topology = topology
        self.center = center

    def predict_scores(self, samples: list[SkeletonSequence]) -> np.ndarray:
        if not samples:
            return np.zeros((0, self.model.class_count))
        streams = derive_streams(samples, self.topology, center=self.center)
        xb = (
            torch.from_numpy(streams[self.modality])
            .permute(0, 3, 1, 2)
            .contiguous()
            .float()
        )
        self.model.eval()
        with torch.no_grad():
            return self.model.predict_scores(xb).numpy()


def evaluate(predictor, samples: list[SkeletonSequence], batch_size: int = 256) -> EvalMetrics:
    """Top-1, top-min(5, K), and per-class accuracy on ground-truth labels."""
    if not samples:
        raise ConfigError("cannot evaluate on an empty split")
    chunks = [
        predictor.predict_scores(samples[i : i + batch_size])
        for i in range(0, len(samples), batch_size)
    ]
    scores = np.concatenate(chunks, axis=0)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    k = min(5, scores.shape[1])
    top1_pred = scores.argmax(axis=1)
    top1 = float(np.mean(top1_pred == labels))
    topk_idx = np.argsort(-scores, kind="stable", axis=1)[:, :k]
    topk = float(np.mean([labels[i] in topk_idx[i] for i in range(len(labels))]))
    per_class: dict[int, float] = {}
    for c in np.unique(labels):
        mask = labels == c
        per_class[int(c)] = float(np.mean(top1_pred[mask] == labels[mask]))
    return EvalMetrics(top1=top1, topk=topk, k=k, per_class=per_class, count=len(samples))


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_split(config: ExperimentConfig) -> tuple[list[SkeletonSequence], list[SkeletonSequence], int, SkeletonTopology]:
    if config.dataset_kind == "synthetic":
        seqs = generate_synthetic_dataset(config.synthetic, config.dataset_seed)
        class_count = config.synthetic.class_count
        topology = config.synthetic.topology()
    else:
        seqs, class_count = load_dataset(config.dataset_path)
        topology = default_topology(seqs[0].joint_count)
    train, test = split_dataset(
        seqs, config.split_protocol, config.test_fraction, config.split_seed
    )
    return train, test, class_count, topology


def _apply_manifest(train: list[SkeletonSequence], manifest: NoiseManifest) -> NoisyDataset:
    """Rebuild the NoisyDataset recorded by a manifest (resume path)."""
    by_id = {sid: (t, nzy) for sid, t, nzy in manifest.records}
    if {s.sample_id for s in train} != set(by_id):
        raise ValueError("noise manifest does not cover the training split")
    samples = [s.with_label(by_id[s.sample_id][1]) for s in train]
    true_labels = np.array([by_id[s.sample_id][0] for s in train], dtype=np.int64)
    for s, t in zip(train, true_labels):
        if s.label != t:
            raise ValueError(f"manifest true label disagrees with dataset for {s.sample_id!r}")
    corrupted = np.array([s.label != t for s, t in zip(samples, true_labels)], dtype=bool)
    return NoisyDataset(
        samples=samples,
        true_labels=true_labels,
        corrupted_mask=corrupted,
        noise_ratio=manifest.noise_ratio,
        seed=manifest.seed,
        class_count=manifest.class_count,
        manifest=manifest,
    )


def _peer_eval_split(
    noisy: NoisyDataset, fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Hold out a slice of the noisy training set to pick the better peer."""
    n = len(noisy)
    count = max(1, int(round(fraction * n)))
    if count >= n:
        raise ConfigError("peer_eval_fraction leaves no training data")
    order = rng_for(seed, "peer-eval").permutation(n)
    eval_idx = sorted(int(i) for i in order[:count])
    train_idx = sorted(int(i) for i in order[count:])
    return train_idx, eval_idx


PIPELINE_STAGES = (
    "inject",
    "derive",
    "cross_train_joint",
    "cross_train_bone",
    "cross_train_motion",
    "select",
    "fuse",
    "evaluate",
)


def run_pipeline(config: ExperimentConfig, stop_after: str | None = None) -> RunReport:
    """Execute inject, derive, cross-train x3, select, fuse, evaluate.

    stop_after names a stage to halt at (artifacts stay on disk for a later
    resume); None runs to completion and writes the final report.
    """
    config.validate()
    if stop_after is not None and stop_after not in PIPELINE_STAGES:
        raise ConfigError(f"unknown stage {stop_after!r}; stages are {PIPELINE_STAGES}")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_json(), indent=2, sort_keys=True))

    stages: dict[str, dict] = {}
    hashes: dict[str, str] = {}
    timing: dict[str, float] = {}

    def partial_report() -> RunReport:
        return RunReport(
            config=config.to_json(),
            stages=stages,
            artifact_hashes=hashes,
            timing_seconds={k: round(v, 3) for k, v in timing.items()},
        )

    def timed(name: str):
        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                timing[name] = time.perf_counter() - self.t0
                if exc is not None:
                    raise StageError(name, exc) from exc

        return _Timer()

    with timed("data"):
        train, test, class_count, topology = _load_split(config)
        test_label_snapshot = {s.sample_id: s.label for s in test}

    backbone = BackboneSpec(
        class_count=class_count,
        in_channels=train[0].frames.shape[-1],
        channels=config.backbone_channels,
        temporal_kernel=config.temporal_kernel,
    )
    schedule = SelectionSchedule(config.noise_ratio, config.warmup_epochs)

    with timed("inject"):
        manifest_path = out / "noise_manifest.json"
        if manifest_path.exists():
            noisy = _apply_manifest(train, NoiseManifest.load(manifest_path))
        else:
            noisy = inject_symmetric_noise(
                train, config.noise_ratio, derive_seed(config.seed, "noise"), class_count
            )
            noisy.manifest.save(manifest_path)
        hashes["noise_manifest"] = hashlib.sha256(noisy.manifest.canonical_bytes()).hexdigest()
        stages["inject"] = {
            "noise_ratio": config.noise_ratio,
            "corrupted": int(noisy.corrupted_mask.sum()),
            "train_size": len(noisy),
        }
    if stop_after == "inject":
        return partial_report()

    with timed("derive"):
        train_idx, eval_idx = _peer_eval_split(
            noisy, config.peer_eval_fraction, config.seed
        )
        streams = derive_streams(noisy.samples, topology, center=config.center)
        noisy_labels = noisy.noisy_labels
    if stop_after == "derive":
        return partial_report()

    experts: dict[Modality, SkeletonClassifier] = {}
    for modality in MODALITIES:
        stage_name = f"cross_train_{modality.value}"
        with timed(stage_name):
            ckpt_path = out / f"expert_{modality.value}.ckpt"
            metrics_path = out / f"cross_train_{modality.value}_metrics.jsonl"
            summary_path = out / f"cross_train_{modality.value}_summary.json"
            if ckpt_path.exists() and metrics_path.exists() and summary_path.exists():
                expert, _ = load_checkpoint(ckpt_path)
                metrics = [json.loads(line) for line in metrics_path.read_text().splitlines()]
                summary = json.loads(summary_path.read_text())
                chosen = summary["chosen"]
                accs = tuple(summary["peer_accuracies"])
            else:
                stream = ModalityStream(
                    modality=modality,
                    data=streams[modality][train_idx],
                    labels=noisy_labels[train_idx],
                    sample_ids=tuple(noisy.sample_ids[i] for i in train_idx),
                    class_count=class_count,
                )
                result = cross_train(
                    stream,
                    schedule,
                    config.train,
                    eval_data=streams[modality][eval_idx],
                    eval_labels=noisy_labels[eval_idx],
                    topology=topology,
                    backbone=backbone,
                    seed=derive_seed(config.seed, "cross", modality.value),
                    corrupted_mask=noisy.corrupted_mask[train_idx],
                    out_dir=out,
                )
                expert = result.model
                metrics = result.metrics
                chosen = result.chosen
                accs = result.accuracies
                save_checkpoint(
                    expert, ckpt_path, config.seed, config.train.epochs, modality.value
                )
                summary_path.write_text(
                    json.dumps(
                        {"chosen": chosen, "peer_accuracies": [round(a, 6) for a in accs]},
                        sort_keys=True,
                    )
                )
            experts[modality] = expert
            hashes[f"expert_{modality.value}"] = _sha256_file(ckpt_path)
            last = metrics[-1] if metrics else {}
            stages[stage_name] = {
                "chosen": chosen,
                "peer_accuracies": [round(a, 6) for a in accs],
                "final_keep_ratio": last.get("keep_ratio"),
                "final_selector_precision": last.get(
                    "selector_precision_net1" if chosen == "net1" else "selector_precision_net2"
                ),
            }
        if stop_after == stage_name:
            return partial_report()

    with timed("select"):
        selection_path = out / "selection.json"
        p = config.effective_selection_fraction
        tables = {
            m: rank_by_loss(
                experts[m],
                streams[m],
                noisy_labels,
                noisy.sample_ids,
                m,
            )
            for m in MODALITIES
        }
        selection = select_clean(tables, p)
        selection.save(selection_path, noisy)
        hashes["selection"] = _sha256_file(selection_path)
        precision, recall = selector_quality(selection.union_set, noisy)
        stages["select"] = {
            "fraction": p,
            "union_size": len(selection.union),
            "per_modality_size": {m.value: len(selection.per_modality[m]) for m in MODALITIES},
            "precision": round(precision, 6),
            "recall": round(recall, 6),
        }
    if stop_after == "select":
        return partial_report()

    with timed("fuse"):
        fusion_dir = out / "fusion"
        gate_metrics_path = out / "gate_finetune_metrics.jsonl"
        if (fusion_dir / "fusion.json").exists() and gate_metrics_path.exists():
            fusion = load_fusion(fusion_dir)
            gate_metrics = [
                json.loads(line) for line in gate_metrics_path.read_text().splitlines()
            ]
        else:
            gate = build_gate(
                topology,
                in_channels=3 * backbone.in_channels,
                seed=derive_seed(config.seed, "gate"),
                channels=config.gate_channels,
                temporal_kernel=config.temporal_kernel,
            )
            fusion = FusionModel(
                experts=experts,
                gate=gate,
                class_count=class_count,
                topology=topology,
                center=config.center,
            )
            id_to_sample = {s.sample_id: s for s in noisy.samples}
            clean_samples = [id_to_sample[sid] for sid in selection.union]
            fusion, gate_metrics = finetune_gate(
                fusion,
                clean_samples,
                config.finetune,
                seed=derive_seed(config.seed, "finetune"),
                out_dir=out,
            )
            save_fusion(
                fusion,
                fusion_dir,
                config.seed,
                config.finetune.epochs,
                extra={"selection_hash": hashes["selection"]},
            )
        hashes["fusion"] = _sha256_file(fusion_dir / "fusion.json")
        hashes["gate"] = _sha256_file(fusion_dir / "gate.ckpt")
        stages["fuse"] = {
            "epochs": config.finetune.epochs,
            "epoch_mean_weights": [
                [
                    row["mean_weight_joint"],
                    row["mean_weight_bone"],
                    row["mean_weight_motion"],
                ]
                for row in gate_metrics
            ],
        }
    if stop_after == "fuse":
        return partial_report()

    with timed("evaluate"):
        for s in test:
            if s.label != test_label_snapshot[s.sample_id]:
                raise TestSplitContaminationError(f"test label changed for {s.sample_id!r}")
        manifest_ids = {sid for sid, _, _ in noisy.manifest.records}
        overlap = manifest_ids & set(test_label_snapshot)
        if overlap:
            raise TestSplitContaminationError(
                f"noise manifest covers test samples: {sorted(overlap)[:5]}"
            )
        expert_metrics = {
            m.value: evaluate(
                ModalityPredictor(experts[m], m, topology, config.center), test
            ).to_json()
            for m in MODALITIES
        }
        fused_metrics = evaluate(fusion, test).to_json()
        stages["evaluate"] = {"experts": expert_metrics, "fused": fused_metrics}

    report = RunReport(
        config=config.to_json(),
        stages=stages,
        artifact_hashes=hashes,
        timing_seconds={k: round(v, 3) for k, v in timing.items()},
    )
    report.save(out / "report.json")
    _write_metrics_csv(report, out / "metrics.csv")
    return report


def _write_metrics_csv(report: RunReport, path: Path) -> None:
    """Flatten stage metrics into stage,key,value rows."""

    def walk(prefix: str, value) -> list[tuple[str, str]]:
        if isinstance(value, dict):
            rows = []
            for k, v in sorted(value.items()):
                rows.extend(walk(f"{prefix}.{k}" if prefix else str(k), v))
            return rows
        if isinstance(value, list):
            return [(prefix, json.dumps(value))]
        return [(prefix, json.dumps(value))]

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "metric", "value"])
        for stage, metrics in sorted(report.stages.items()):
            for key, val in walk("", metrics):
                writer.writerow([stage, key, val])


def run_ablation_suite(config: ExperimentConfig) -> dict:
    """Four arms at shared seeds: plain, cross-training, fixed ensemble, full.

    All arms see the identical noise manifest; the full-pipeline run
    produces the experts the ensemble arms reuse.
    """
    config.validate()
    out = Path(config.output_dir)
    pipeline_config = replace(config, output_dir=str(out / "full"))
    report = run_pipeline(pipeline_config)

    train, test, class_count, topology = _load_split(config)
    manifest = NoiseManifest.load(out / "full" / "noise_manifest.json")
    noisy = _apply_manifest(train, manifest)
    train_idx, eval_idx = _peer_eval_split(noisy, config.peer_eval_fraction, config.seed)
    streams = derive_streams(noisy.samples, topology, center=config.center)
    noisy_labels = noisy.noisy_labels
    backbone = BackboneSpec(
        class_count=class_count,
        in_channels=train[0].frames.shape[-1],
        channels=config.backbone_channels,
        temporal_kernel=config.temporal_kernel,
    )

    manifest_hash = hashlib.sha256(manifest.canonical_bytes()).hexdigest()

    plain_stream = ModalityStream(
        modality=Modality.JOINT,
        data=streams[Modality.JOINT][train_idx],
        labels=noisy_labels[train_idx],
        sample_ids=tuple(noisy.sample_ids[i] for i in train_idx),
        class_count=class_count,
    )
    plain = train_plain(
        plain_stream, config.train, topology, backbone, derive_seed(config.seed, "plain-arm")
    )
    plain_metrics = evaluate(
        ModalityPredictor(plain, Modality.JOINT, topology, config.center), test
    )

    experts = {m: load_checkpoint(out / "full" / f"expert_{m.value}.ckpt")[0] for m in MODALITIES}
    expert_acc = {
        m.value: report.stages["evaluate"]["experts"][m.value]["top1"] for m in MODALITIES
    }
    ensemble = FixedEnsemblePredictor(experts, config.ensemble_weights, topology, config.center)
    ensemble_metrics = evaluate(ensemble, test)

    rows = [
        {
            "arm": "plain",
            "top1": plain_metrics.top1,
            "detail": {"modality": Modality.JOINT.value},
            "noise_manifest_hash": manifest_hash,
        },
        {
            "arm": "cross_training",
            "top1": max(expert_acc.values()),
            "detail": {"per_modality": expert_acc},
            "noise_manifest_hash": manifest_hash,
        },
        {
            "arm": "fixed_ensemble",
            "top1": ensemble_metrics.top1,
            "detail": {"weights": list(config.ensemble_weights)},
            "noise_manifest_hash": manifest_hash,
        },
        {
            "arm": "full_pipeline",
            "top1": report.stages["evaluate"]["fused"]["top1"],
            "detail": {"selection_precision": report.stages["select"]["precision"]},
            "noise_manifest_hash": manifest_hash,
        },
    ]
    suite = {
        "noise_ratio": config.noise_ratio,
        "seed": config.seed,
        "rows": rows,
        "report_hash": report.report_hash(),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(suite, indent=2, sort_keys=True))
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "top1", "noise_manifest_hash"])
        for row in rows:
            writer.writerow([row["arm"], row["top1"], row["noise_manifest_hash"]])
    return suite


def emit_plots(reports: list[RunReport], out_dir: str | Path) -> list[Path]:
    """Accuracy-vs-noise curves plus gate-weight evolution per report."""
    if not reports:
        raise NothingToPlotError("no completed runs to plot")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    by_ratio = sorted(reports, key=lambda r: r.config["noise_ratio"])
    ratios = [r.config["noise_ratio"] for r in by_ratio]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(
        ratios,
        [r.stages["evaluate"]["fused"]["top1"] for r in by_ratio],
        marker="o",
        label="gated fusion",
    )
    for m in MODALITIES:
        ax.plot(
            ratios,
            [r.stages["evaluate"]["experts"][m.value]["top1"] for r in by_ratio],
            marker=".",
            linestyle="--",
            label=f"{m.value} expert",
        )
    ax.set_xlabel("noise ratio")
    ax.set_ylabel("top-1 accuracy")
    ax.set_xticks(sorted(set(ratios)))
    ax.set_ylim(0, 1)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    acc_path = out / "accuracy_vs_noise.png"
    fig.savefig(acc_path, dpi=120)
    plt.close(fig)
    written.append(acc_path)

    for i, report in enumerate(by_ratio):
        weights = report.stages.get("fuse", {}).get("epoch_mean_weights") or []
        if not weights:
            continue
        arr = np.asarray(weights)
        fig, ax = plt.subplots(figsize=(6, 4))
        for j, m in enumerate(MODALITIES):
            ax.plot(range(1, len(weights) + 1), arr[:, j], marker="o", label=f"{m.value} weight")
        ax.set_xlabel("fine-tune epoch")
        ax.set_ylabel("mean gate weight")
        ax.set_ylim(0, 1)
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out / f"gate_weights_r{str(report.config['noise_ratio']).replace('.', '_')}_{i}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
