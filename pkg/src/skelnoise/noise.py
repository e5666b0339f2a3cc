"""Seeded symmetric label noise with full provenance.

Corruption flips exactly floor(ratio * n) labels, chosen uniformly without
replacement; each flipped label is drawn uniformly from the other K-1
classes, never the true one. The manifest records every (true, noisy) pair
so selector quality can be measured later. Never apply this to a test
split; evaluation labels stay clean.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from skelnoise.exact import exact_floor
from skelnoise.skeleton import SkeletonSequence


class EmptySelectionError(ValueError):
    """Selector quality is undefined for an empty selection."""


@dataclass(frozen=True)
class NoiseManifest:
    """Audit record of one injection: seed, ratio, and per-sample labels."""

    seed: int
    noise_ratio: float
    class_count: int
    records: tuple[tuple[str, int, int], ...]  # (sample_id, true, noisy)
    created_at: str = ""

    def canonical_bytes(self) -> bytes:
        """Deterministic byte form: everything except the volatile timestamp."""
        payload = {
            "seed": self.seed,
            "noise_ratio": self.noise_ratio,
            "class_count": self.class_count,
            "records": [list(r) for r in self.records],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "noise_ratio": self.noise_ratio,
            "class_count": self.class_count,
            "created_at": self.created_at,
            "records": [
                {"sample_id": sid, "true_label": t, "noisy_label": nzy}
                for sid, t, nzy in self.records
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "NoiseManifest":
        return cls(
            seed=int(payload["seed"]),
            noise_ratio=float(payload["noise_ratio"]),
            class_count=int(payload["class_count"]),
            records=tuple(
                (r["sample_id"], int(r["true_label"]), int(r["noisy_label"]))
                for r in payload["records"]
            ),
            created_at=payload.get("created_at", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "NoiseManifest":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class NoisyDataset:
    """Training samples with noisy labels plus the provenance to audit them."""

    samples: list[SkeletonSequence]
    true_labels: np.ndarray
    corrupted_mask: np.ndarray
    noise_ratio: float
    seed: int
    class_count: int
    manifest: NoiseManifest | None = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(s.sample_id for s in self.samples)

    @property
    def noisy_labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def index_of(self, sample_id: str) -> int:
        try:
            return self.sample_ids.index(sample_id)
        except ValueError:
            raise KeyError(f"unknown sample_id {sample_id!r}") from None


def inject_symmetric_noise(
    data: list[SkeletonSequence],
    ratio: float,
    seed: int,
    class_count: int,
) -> NoisyDataset:
    """Flip floor(ratio * n) labels to uniformly random wrong classes.

    Deterministic given (data, ratio, seed). Tensors, sample ids and order
    are untouched; only labels change.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"noise ratio must be in [0, 1), got {ratio}")
    if class_count < 2:
        raise ValueError(f"need at least 2 classes to corrupt labels, got {class_count}")
    for s in data:
        if s.label >= class_count:
            raise ValueError(f"sample {s.sample_id!r} has label {s.label} >= K={class_count}")

    n = len(data)
    n_corrupt = exact_floor(ratio, n)
    rng = np.random.default_rng(seed)
    corrupt_idx = np.sort(rng.choice(n, size=n_corrupt, replace=False))
    # Uniform over the K-1 wrong classes: draw in [0, K-1) and skip the true one.
    draws = rng.integers(0, class_count - 1, size=n_corrupt)

    true_labels = np.array([s.label for s in data], dtype=np.int64)
    corrupted = np.zeros(n, dtype=bool)
    samples = list(data)
    for pos, idx in enumerate(corrupt_idx):
        idx = int(idx)
        wrong = int(draws[pos])
        if wrong >= true_labels[idx]:
            wrong += 1
        samples[idx] = samples[idx].with_label(wrong)
        corrupted[idx] = True

    manifest = NoiseManifest(
        seed=seed,
        noise_ratio=ratio,
        class_count=class_count,
        records=tuple(
            (s.sample_id, int(t), int(s.label))
            for s, t in zip(samples, true_labels)
        ),
        created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )
    return NoisyDataset(
        samples=samples,
        true_labels=true_labels,
        corrupted_mask=corrupted,
        noise_ratio=ratio,
        seed=seed,
        class_count=class_count,
        manifest=manifest,
    )


def inject_asymmetric_noise(
    data: list[SkeletonSequence],
    confusion: np.ndarray,
    seed: int,
    class_count: int,
) -> NoisyDataset:
    """Reserved: class-dependent confusion noise. Calibrating the confusion
    matrix is out of scope, so this interface is declared but not built."""
    raise NotImplementedError("asymmetric noise injection is not implemented")


def selector_quality(
    selected_ids: set[str],
    noisy: NoisyDataset,
) -> tuple[float, float]:
    """Precision and recall of a selection against injection provenance.

    Precision: fraction of selected samples that are uncorrupted.
    Recall: fraction of all uncorrupted samples that were selected.
    """
    if not selected_ids:
        raise EmptySelectionError("precision is undefined for an empty selection")
    id_to_idx = {sid: i for i, sid in enumerate(noisy.sample_ids)}
    unknown = selected_ids - id_to_idx.keys()
    if unknown:
        raise KeyError(f"unknown sample ids in selection: {sorted(unknown)[:5]}")
    sel = np.array([id_to_idx[sid] for sid in selected_ids], dtype=np.intp)
    clean = ~noisy.corrupted_mask
    n_clean_selected = int(clean[sel].sum())
    precision = n_clean_selected / len(sel)
    recall = n_clean_selected / int(clean.sum())
    return precision, recall
