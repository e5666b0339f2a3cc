"""Skeleton data model and derivation of the three modality streams.

A sample is a sequence of 3D joint coordinates with shape (T, V, C):
T frames, V joints, C=3 coordinates. From the raw coordinates two further
streams are derived: bone vectors (per-joint difference to the paired
joint) and motion vectors (frame-to-frame displacement).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np


class Modality(str, enum.Enum):
    JOINT = "joint"
    BONE = "bone"
    MOTION = "motion"


MODALITIES = (Modality.JOINT, Modality.BONE, Modality.MOTION)


@dataclass(frozen=True)
class SkeletonSequence:
    """One sample: joint coordinates over time plus label and identity.

    Attributes:
        sample_id: Unique identifier; datasets are ordered by it.
        frames: float array of shape (T, V, C), T >= 2, all entries finite.
        label: Class index in [0, K) for the dataset's class count K.
        subject_id: Performer identity (drives cross-subject splits).
        camera_id: Viewpoint identity (drives cross-view splits).
    """

    sample_id: str
    frames: np.ndarray
    label: int
    subject_id: int = 0
    camera_id: int = 0

    def __post_init__(self) -> None:
        f = self.frames
        if f.ndim != 3:
            raise ValueError(
                f"sample {self.sample_id!r}: frames must be (T, V, C), got shape {f.shape}"
            )
        if f.shape[0] < 2:
            raise ValueError(
                f"sample {self.sample_id!r}: need at least 2 frames, got {f.shape[0]}"
            )
        if not np.all(np.isfinite(f)):
            raise ValueError(f"sample {self.sample_id!r}: non-finite coordinates")
        if self.label < 0:
            raise ValueError(f"sample {self.sample_id!r}: negative label {self.label}")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1]

    def with_label(self, label: int) -> "SkeletonSequence":
        return replace(self, label=label)

    def with_frames(self, frames: np.ndarray) -> "SkeletonSequence":
        return replace(self, frames=frames)


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint graph: V joints, V (child, pair) bone pairs, derived adjacency.

    The root joint pairs with itself, so there are exactly V bone pairs for
    V joints and the root's bone vector is zero.
    """

    joint_count: int
    bone_pairs: tuple[tuple[int, int], ...]
    root: int = 0

    def __post_init__(self) -> None:
        V = self.joint_count
        if len(self.bone_pairs) != V:
            raise ValueError(
                f"expected {V} bone pairs (one per joint), got {len(self.bone_pairs)}"
            )
        if [i for i, _ in self.bone_pairs] != list(range(V)):
            raise ValueError("bone pairs must list every joint once as child, in order")
        for i, j in self.bone_pairs:
            if not (0 <= i < V and 0 <= j < V):
                raise ValueError(f"bone pair ({i}, {j}) out of range for V={V}")
        if self.bone_pairs[self.root] != (self.root, self.root):
            raise ValueError("root joint must pair with itself")

    @property
    def adjacency(self) -> np.ndarray:
        """Binary adjacency with self-loops, symmetric. Shape (V, V)."""
        A = np.eye(self.joint_count, dtype=np.float32)
        for i, j in self.bone_pairs:
            A[i, j] = 1.0
            A[j, i] = 1.0
        return A

    def normalized_adjacency(self) -> np.ndarray:
        """Symmetrically degree-normalized adjacency D^-1/2 A D^-1/2."""
        A = self.adjacency
        d = A.sum(axis=1) ** -0.5
        return (d[:, None] * A * d[None, :]).astype(np.float32)

    def permuted(self, perm: np.ndarray) -> "SkeletonTopology":
        """Topology after relabeling joint i as perm[i]."""
        pairs = [None] * self.joint_count
        for i, j in self.bone_pairs:
            pairs[int(perm[i])] = (int(perm[i]), int(perm[j]))
        return SkeletonTopology(
            joint_count=self.joint_count,
            bone_pairs=tuple(pairs),
            root=int(perm[self.root]),
        )


@dataclass(frozen=True)
class ModalityTensor:
    """A derived stream: (T, V, C) array tagged with its modality."""

    modality: Modality
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValueError(f"modality data must be (T, V, C), got {self.data.shape}")


def chain_topology(joint_count: int) -> SkeletonTopology:
    """Simple chain skeleton: joint v pairs with its predecessor, joint 0 is root."""
    pairs = tuple((v, max(v - 1, 0)) for v in range(joint_count))
    return SkeletonTopology(joint_count=joint_count, bone_pairs=pairs, root=0)


# Kinect V2 25-joint skeleton: each joint paired with its parent toward the
# spine base (joint 0), which pairs with itself. Pair list follows the
# standard inward edge set for this skeleton.
_NTU25_PARENTS = (
    0, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10,
    0, 12, 13, 14, 0, 16, 17, 18, 1, 7, 7, 11, 11,
)


def ntu25_topology() -> SkeletonTopology:
    """Default 25-joint topology (one bone pair per joint, spine-base root)."""
    pairs = tuple((i, p) for i, p in enumerate(_NTU25_PARENTS))
    return SkeletonTopology(joint_count=25, bone_pairs=pairs, root=0)


def default_topology(joint_count: int) -> SkeletonTopology:
    """25 joints get the full-body topology, anything else a chain."""
    return ntu25_topology() if joint_count == 25 else chain_topology(joint_count)


def derive_joint(seq: SkeletonSequence) -> ModalityTensor:
    """The raw coordinate stream, unchanged."""
    return ModalityTensor(Modality.JOINT, seq.frames)


def derive_bone(seq: SkeletonSequence, topo: SkeletonTopology) -> ModalityTensor:
    """Per-joint bone vectors: output[t, i] = frames[t, j] - frames[t, i]
    for each bone pair (i, j). The root's self-pair yields a zero vector.
    """
    if topo.joint_count != seq.joint_count:
        raise ValueError(
            f"topology has {topo.joint_count} joints, sequence has {seq.joint_count}"
        )
    frames = seq.frames
    child = np.fromiter((i for i, _ in topo.bone_pairs), dtype=np.intp)
    pair = np.fromiter((j for _, j in topo.bone_pairs), dtype=np.intp)
    out = np.zeros_like(frames)
    out[:, child, :] = frames[:, pair, :] - frames[:, child, :]
    return ModalityTensor(Modality.BONE, out)


def derive_motion(seq: SkeletonSequence) -> ModalityTensor:
    """Frame-to-frame displacement: output[t] = frames[t+1] - frames[t].

    The final frame is zero padding so the stream keeps the source shape.
    """
    frames = seq.frames
    out = np.zeros_like(frames)
    out[:-1] = frames[1:] - frames[:-1]
    return ModalityTensor(Modality.MOTION, out)


def derive(seq: SkeletonSequence, modality: Modality, topo: SkeletonTopology) -> ModalityTensor:
    if modality is Modality.JOINT:
        return derive_joint(seq)
    if modality is Modality.BONE:
        return derive_bone(seq, topo)
    return derive_motion(seq)


def center_on_root(seq: SkeletonSequence, topo: SkeletonTopology) -> SkeletonSequence:
    """Subtract the root joint's frame-0 position from every coordinate.

    The only preprocessing applied before modality derivation.
    """
    origin = seq.frames[0, topo.root, :]
    return seq.with_frames(seq.frames - origin)


def derive_streams(
    seqs: list[SkeletonSequence],
    topo: SkeletonTopology,
    center: bool = True,
) -> dict[Modality, np.ndarray]:
    """Stack all three modality streams for a dataset.

    Returns {modality: float32 array of shape (N, T, V, C)}. All sequences
    must share (T, V, C).
    """
    if center:
        seqs = [center_on_root(s, topo) for s in seqs]
    joint = np.stack([derive_joint(s).data for s in seqs]).astype(np.float32)
    bone = np.stack([derive_bone(s, topo).data for s in seqs]).astype(np.float32)
    motion = np.stack([derive_motion(s).data for s in seqs]).astype(np.float32)
    return {Modality.JOINT: joint, Modality.BONE: bone, Modality.MOTION: motion}
