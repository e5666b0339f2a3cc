"""Dataset persistence, synthetic benchmark generation, and split rules.

On-disk dataset layout ("array" format): one binary tensor file per sample
plus a JSON manifest. Each tensor file is the magic ``SKL1`` followed by
three little-endian uint32 (T, V, C) and the row-major float32 payload.
The manifest lists per-sample metadata and the dataset-level class and
joint counts.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from skelnoise.seeding import derive_seed
from skelnoise.skeleton import SkeletonSequence, SkeletonTopology, chain_topology

_MAGIC = b"SKL1"
MANIFEST_NAME = "dataset.json"


def _write_tensor(path: Path, frames: np.ndarray) -> None:
    T, V, C = frames.shape
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", T, V, C))
        f.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def _read_tensor(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic, not a skeleton tensor file")
    T, V, C = struct.unpack("<III", raw[4:16])
    expected = 16 + T * V * C * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for shape ({T},{V},{C}), got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(T, V, C)
    return np.ascontiguousarray(data)


def save_dataset(seqs: list[SkeletonSequence], out_dir: str | Path, class_count: int) -> Path:
    """Write sequences in the array-container format; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    joint_count = seqs[0].joint_count if seqs else 0
    for seq in sorted(seqs, key=lambda s: s.sample_id):
        fname = f"{seq.sample_id}.skl"
        _write_tensor(out / fname, seq.frames)
        records.append(
            {
                "sample_id": seq.sample_id,
                "label": int(seq.label),
                "subject_id": int(seq.subject_id),
                "camera_id": int(seq.camera_id),
                "file": fname,
            }
        )
    manifest = {
        "class_count": int(class_count),
        "joint_count": int(joint_count),
        "samples": records,
    }
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def load_dataset(path: str | Path, format: str = "array") -> tuple[list[SkeletonSequence], int]:
    """Load a dataset; returns (sequences ordered by sample_id, class_count).

    ``format="array"`` reads the binary-tensor + JSON-manifest layout
    (``path`` is the dataset directory or its manifest file).
    ``format="synthetic"`` reads a JSON synthetic spec and generates the
    dataset deterministically from the seed recorded in the file.
    """
    p = Path(path)
    if format == "synthetic":
        payload = json.loads(p.read_text())
        spec = SyntheticSpec(**payload["spec"])
        return generate_synthetic_dataset(spec, payload["seed"]), spec.class_count
    if format != "array":
        raise ValueError(f"unknown dataset format {format!r}")

    manifest_path = p / MANIFEST_NAME if p.is_dir() else p
    if not manifest_path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    joint_count = int(manifest["joint_count"])
    seqs = []
    for rec in sorted(manifest["samples"], key=lambda r: r["sample_id"]):
        frames = _read_tensor(base / rec["file"])
        if frames.shape[1] != joint_count:
            raise ValueError(
                f"{rec['sample_id']}: file has {frames.shape[1]} joints, "
                f"manifest declares {joint_count}"
            )
        seqs.append(
            SkeletonSequence(
                sample_id=rec["sample_id"],
                frames=frames,
                label=int(rec["label"]),
                subject_id=int(rec["subject_id"]),
                camera_id=int(rec["camera_id"]),
            )
        )
    return seqs, int(manifest["class_count"])


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic, separable toy dataset.

    Each class gets its own oscillation frequency and per-joint amplitude
    pattern, so all three derived streams carry class signal. Per-sample
    phase, speed and coordinate jitter make samples distinct.
    """

    class_count: int = 3
    samples_per_class: int = 300
    frame_count: int = 32
    joint_count: int = 9
    subject_count: int = 9
    camera_count: int = 3
    noise_scale: float = 0.05

    def validate(self) -> None:
        if self.class_count < 2:
            raise ValueError(f"need at least 2 classes, got {self.class_count}")
        if self.frame_count < 2:
            raise ValueError(f"need at least 2 frames, got {self.frame_count}")
        if self.joint_count < 2 or self.subject_count < 1 or self.samples_per_class < 1:
            raise ValueError("joint_count >= 2, subject_count >= 1, samples_per_class >= 1")

    def topology(self) -> SkeletonTopology:
        return chain_topology(self.joint_count)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "SyntheticSpec":
        return cls(**payload)


def generate_synthetic_dataset(spec: SyntheticSpec, seed: int) -> list[SkeletonSequence]:
    """Generate the toy dataset; bitwise deterministic given (spec, seed)."""
    spec.validate()
    K, n, T, V = spec.class_count, spec.samples_per_class, spec.frame_count, spec.joint_count

    base_pose = np.zeros((V, 3), dtype=np.float64)
    base_pose[:, 1] = 0.3 * np.arange(V)

    # Class cues are balanced across the three derived streams: a static
    # pose offset separates classes in raw coordinates and joint
    # differences, while the oscillation frequency separates them in
    # frame-to-frame displacement. The amplitude pattern is shared by all
    # classes so no single stream gets an outsized advantage.
    freqs = 1.0 + 0.75 * np.arange(K)
    shared_rng = np.random.default_rng(derive_seed(seed, "shared"))
    amps = 0.25 * shared_rng.standard_normal((V, 3))
    joint_phases = []
    offsets = []
    for k in range(K):
        rng_k = np.random.default_rng(derive_seed(seed, "class", k))
        joint_phases.append(rng_k.uniform(0.0, 2.0 * np.pi, size=V))
        offsets.append(0.2 * rng_k.standard_normal((V, 3)))

    subject_scales = {
        s: 0.95 + 0.1 * np.random.default_rng(derive_seed(seed, "subject", s)).random()
        for s in range(spec.subject_count)
    }

    t_grid = np.arange(T, dtype=np.float64) / T
    seqs = []
    for k in range(K):
        for i in range(n):
            rng = np.random.default_rng(derive_seed(seed, "sample", k, i))
            phase = rng.uniform(0.0, 2.0 * np.pi)
            speed = rng.uniform(0.9, 1.1)
            angle = (
                2.0 * np.pi * freqs[k] * speed * t_grid[:, None]
                + phase
                + joint_phases[k][None, :]
            )
            frames = (
                base_pose[None, :, :]
                + offsets[k][None, :, :]
                + amps[None, :, :] * np.sin(angle)[:, :, None]
            )
            frames += spec.noise_scale * rng.standard_normal((T, V, 3))
            subject = (k * n + i) % spec.subject_count
            frames *= subject_scales[subject]
            seqs.append(
                SkeletonSequence(
                    sample_id=f"synth-{k:02d}-{i:05d}",
                    frames=frames.astype(np.float32),
                    label=k,
                    subject_id=subject,
                    camera_id=(k * n + i) % spec.camera_count,
                )
            )
    seqs.sort(key=lambda s: s.sample_id)
    return seqs


def split_dataset(
    seqs: list[SkeletonSequence],
    protocol: str,
    test_fraction: float,
    seed: int,
) -> tuple[list[SkeletonSequence], list[SkeletonSequence]]:
    """Split into (train, test) by the given protocol.

    ``xsub`` holds out a random subject-disjoint fraction, ``xview`` a
    camera-disjoint fraction, ``random`` a per-sample holdout.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(derive_seed(seed, "split", protocol))
    if protocol in ("xsub", "xview"):
        key = (lambda s: s.subject_id) if protocol == "xsub" else (lambda s: s.camera_id)
        groups = sorted({key(s) for s in seqs})
        if len(groups) < 2:
            raise ValueError(f"{protocol} split needs at least 2 groups, got {len(groups)}")
        perm = rng.permutation(len(groups))
        n_test = max(1, math.ceil(test_fraction * len(groups)))
        test_groups = {groups[i] for i in perm[:n_test]}
        train = [s for s in seqs if key(s) not in test_groups]
        test = [s for s in seqs if key(s) in test_groups]
    elif protocol == "random":
        perm = rng.permutation(len(seqs))
        n_test = max(1, math.ceil(test_fraction * len(seqs)))
        test_idx = set(perm[:n_test].tolist())
        train = [s for i, s in enumerate(seqs) if i not in test_idx]
        test = [s for i, s in enumerate(seqs) if i in test_idx]
    else:
        raise ValueError(f"unknown split protocol {protocol!r}")
    if not train or not test:
        raise ValueError(f"{protocol} split produced an empty side")
    return train, test
