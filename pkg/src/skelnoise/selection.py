"""Global clean-set selection: per-modality small-loss prefixes, then union.

Each modality's expert ranks the whole training set by per-sample loss in
eval mode; the ceil(p * n) smallest per modality form D_joint, D_bone,
D_motion, and their union is the clean set used for fusion fine-tuning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from skelnoise.exact import as_fraction, exact_ceil
from skelnoise.models import SkeletonClassifier
from skelnoise.noise import NoisyDataset, selector_quality
from skelnoise.skeleton import MODALITIES, Modality

_MODALITY_BIT = {Modality.JOINT: 1, Modality.BONE: 2, Modality.MOTION: 4}


class CorruptModelError(RuntimeError):
    """A ranking pass produced a non-finite loss."""


class InconsistentTablesError(ValueError):
    """Loss tables do not cover the same sample ids."""


@dataclass(frozen=True)
class LossTable:
    """Per-sample losses for one modality, in a fixed sample order."""

    modality: Modality
    sample_ids: tuple[str, ...]
    losses: np.ndarray

    def __post_init__(self) -> None:
        if len(self.sample_ids) != len(self.losses):
            raise ValueError("sample_ids and losses must align")

    def __len__(self) -> int:
        return len(self.sample_ids)

    def as_dict(self) -> dict[str, float]:
        return {sid: float(v) for sid, v in zip(self.sample_ids, self.losses)}


def rank_by_loss(
    model: SkeletonClassifier,
    data: np.ndarray,
    labels: np.ndarray,
    sample_ids: tuple[str, ...],
    modality: Modality,
    batch_size: int = 256,
) -> LossTable:
    """One eval-mode loss per sample; batch partitioning does not affect values."""
    n = data.shape[0]
    if n != len(labels) or n != len(sample_ids):
        raise ValueError("data, labels and sample_ids must align")
    model.eval()
    labels_t = torch.from_numpy(np.asarray(labels, dtype=np.int64))
    out = np.empty(n, dtype=np.float64)
    with torch.no_grad():
        for start in range(0, n, batch_size):
            xb = (
                torch.from_numpy(np.ascontiguousarray(data[start : start + batch_size]))
                .permute(0, 3, 1, 2)
                .contiguous()
                .float()
            )
            losses = model.per_sample_loss(xb, labels_t[start : start + batch_size])
            out[start : start + xb.shape[0]] = losses.numpy()
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise CorruptModelError(
            f"non-finite loss for sample {sample_ids[int(bad[0])]!r} ({modality.value})"
        )
    return LossTable(modality=modality, sample_ids=tuple(sample_ids), losses=out)


@dataclass(frozen=True)
class GlobalSelection:
    """Per-modality selections, their union, and membership provenance."""

    fraction: float
    per_modality: dict[Modality, tuple[str, ...]]
    union: tuple[str, ...]
    membership: dict[str, int]  # sample_id -> bitmask (1 joint, 2 bone, 4 motion)

    def __post_init__(self) -> None:
        if set(self.union) != set(self.membership):
            raise ValueError("union and membership must cover the same ids")

    @property
    def union_set(self) -> set[str]:
        return set(self.union)

    def to_json(self, quality: dict | None = None) -> dict:
        payload = {
            "fraction": self.fraction,
            "selected": {m.value: list(ids) for m, ids in self.per_modality.items()},
            "union": list(self.union),
            "membership": dict(sorted(self.membership.items())),
        }
        if quality is not None:
            payload["quality"] = quality
        return payload

    def save(self, path: str | Path, noisy: NoisyDataset | None = None) -> None:
        """Write the selection manifest, with precision/recall when provenance exists."""
        quality = None
        if noisy is not None:
            quality = {}
            for m, ids in self.per_modality.items():
                p, r = selector_quality(set(ids), noisy)
                quality[m.value] = {"precision": p, "recall": r}
            p, r = selector_quality(self.union_set, noisy)
            quality["union"] = {"precision": p, "recall": r}
        Path(path).write_text(json.dumps(self.to_json(quality), indent=2, sort_keys=True))


def select_clean(
    tables: dict[Modality, LossTable],
    fraction: float,
) -> GlobalSelection:
    """Take each modality's ceil(p * n) smallest-loss ids and union them.

    Ties break toward the sample's position in the reference (joint-table)
    ordering, so reruns are deterministic.
    """
    p = as_fraction(fraction)
    if not 0 < p <= 1:
        raise ValueError(f"selection fraction must be in (0, 1], got {fraction}")
    missing = [m for m in MODALITIES if m not in tables]
    if missing:
        raise InconsistentTablesError(f"missing loss tables for {[m.value for m in missing]}")

    reference = tables[MODALITIES[0]].sample_ids
    ref_set = set(reference)
    if len(ref_set) != len(reference):
        raise InconsistentTablesError("duplicate sample ids in loss table")
    for m in MODALITIES[1:]:
        if set(tables[m].sample_ids) != ref_set:
            raise InconsistentTablesError(
                f"{m.value} table covers different sample ids than {MODALITIES[0].value}"
            )

    n = len(reference)
    count = exact_ceil(p, n)
    position = {sid: i for i, sid in enumerate(reference)}
    per_modality: dict[Modality, tuple[str, ...]] = {}
    membership: dict[str, int] = {}
    for m in MODALITIES:
        table = tables[m]
        # Align every table to the reference order before ranking.
        ordered = sorted(
            range(len(table.sample_ids)),
            key=lambda i: position[table.sample_ids[i]],
        )
        losses = table.losses[ordered]
        order = np.argsort(losses, kind="stable")
        chosen = sorted(
            (table.sample_ids[ordered[int(i)]] for i in order[:count]),
            key=position.__getitem__,
        )
        per_modality[m] = tuple(chosen)
        for sid in chosen:
            membership[sid] = membership.get(sid, 0) | _MODALITY_BIT[m]

    union = tuple(sorted(membership, key=position.__getitem__))
    return GlobalSelection(
        fraction=float(p),
        per_modality=per_modality,
        union=union,
        membership=membership,
    )
