"""Classifier interface, reference spatio-temporal GCN, and the gate network.

The backbone is deliberately small: fixed normalized adjacency, a 1x1
channel mix after spatial aggregation, a temporal convolution, batch norm
and a residual per block, then global average pooling over time and joints
into a linear head. No dropout anywhere so eval mode is bit-deterministic.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from skelnoise.skeleton import SkeletonTopology

log = logging.getLogger(__name__)

_CKPT_MAGIC = b"SKC1"

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
}


class InvalidLabelError(ValueError):
    """A label fell outside [0, K)."""


@dataclass(frozen=True)
class BackboneSpec:
    """Architecture knobs for the reference backbone."""

    class_count: int
    in_channels: int = 3
    channels: tuple[int, ...] = (16, 32, 64, 64)
    temporal_kernel: int = 5

    def __post_init__(self) -> None:
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if not self.channels:
            raise ValueError("need at least one block")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal_kernel must be odd positive, got {self.temporal_kernel}")

    def to_json(self) -> dict:
        return {
            "class_count": self.class_count,
            "in_channels": self.in_channels,
            "channels": list(self.channels),
            "temporal_kernel": self.temporal_kernel,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "BackboneSpec":
        return cls(
            class_count=int(payload["class_count"]),
            in_channels=int(payload["in_channels"]),
            channels=tuple(int(c) for c in payload["channels"]),
            temporal_kernel=int(payload["temporal_kernel"]),
        )


def batch_to_tensor(batch: np.ndarray | torch.Tensor) -> torch.Tensor:
    """(N, T, V, C) array -> (N, C, T, V) float32 tensor, the model layout."""
    if isinstance(batch, np.ndarray):
        batch = torch.from_numpy(np.ascontiguousarray(batch))
    if batch.ndim != 4:
        raise ValueError(f"expected (N, T, V, C) batch, got shape {tuple(batch.shape)}")
    return batch.permute(0, 3, 1, 2).contiguous().float()


class SpatioTemporalBlock(nn.Module):
    """Spatial aggregation over the graph, channel mix, temporal conv, residual."""

    def __init__(self, in_channels: int, out_channels: int, temporal_kernel: int):
        super().__init__()
        self.mix = nn.Conv2d(in_channels, out_channels, 1)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.temporal = nn.Conv2d(
            out_channels,
            out_channels,
            (temporal_kernel, 1),
            padding=(temporal_kernel // 2, 0),
        )
        self.bn2 = nn.BatchNorm2d(out_channels)
        if in_channels != out_channels:
            self.residual: nn.Module = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.residual = nn.Identity()

    def forward(self, x: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        res = self.residual(x)
        y = torch.einsum("nctv,vw->nctw", x, adjacency)
        y = F.relu(self.bn1(self.mix(y)))
        y = self.bn2(self.temporal(y))
        return F.relu(y + res)


class SkeletonClassifier(nn.Module):
    """Base classifier: (N, C, T, V) batch in, (N, K) logits out.

    Subclasses set self.class_count and implement forward. Loss is plain
    per-sample cross-entropy, no reduction, so callers can rank samples.
    """

    class_count: int

    def per_sample_loss(self, batch: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.class_count):
            bad = labels[(labels < 0) | (labels >= self.class_count)][0]
            raise InvalidLabelError(
                f"label {int(bad)} outside [0, {self.class_count})"
            )
        logits = self(batch)
        return F.cross_entropy(logits, labels, reduction="none")

    def predict_scores(self, batch: torch.Tensor) -> torch.Tensor:
        """SoftMax class distributions, shape (N, K)."""
        return F.softmax(self(batch), dim=1)


class ReferenceSTGCN(SkeletonClassifier):
    """Small fixed-adjacency spatio-temporal graph conv classifier."""

    def __init__(self, spec: BackboneSpec, topology: SkeletonTopology):
        super().__init__()
        self.spec = spec
        self.topology = topology
        self.class_count = spec.class_count
        adjacency = torch.from_numpy(topology.normalized_adjacency())
        self.register_buffer("adjacency", adjacency)
        widths = (spec.in_channels, *spec.channels)
        self.blocks = nn.ModuleList(
            SpatioTemporalBlock(widths[i], widths[i + 1], spec.temporal_kernel)
            for i in range(len(spec.channels))
        )
        self.head = nn.Linear(spec.channels[-1], spec.class_count)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels or x.shape[3] != self.topology.joint_count:
            raise ValueError(
                f"expected (N, {self.spec.in_channels}, T, {self.topology.joint_count}) "
                f"batch, got {tuple(x.shape)}"
            )
        adjacency = self.adjacency.to(x.dtype)
        for block in self.blocks:
            x = block(x, adjacency)
        pooled = x.mean(dim=(2, 3))
        return self.head(pooled)

    def architecture(self) -> dict:
        return {
            "kind": "backbone",
            "spec": self.spec.to_json(),
            "topology": _topology_to_json(self.topology),
        }


class GateNetwork(nn.Module):
    """Maps a channel-concatenated tri-modal batch to per-expert weights.

    Two graph blocks, global average pooling, then a linear head whose
    SoftMax output lies on the expert simplex. The head starts at zero so
    an untrained gate weights all experts uniformly.
    """

    def __init__(
        self,
        topology: SkeletonTopology,
        in_channels: int = 9,
        channels: tuple[int, int] = (16, 32),
        temporal_kernel: int = 5,
        expert_count: int = 3,
    ):
        super().__init__()
        if len(channels) != 2:
            raise ValueError(f"gate body is exactly two blocks, got {len(channels)}")
        self.topology = topology
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.temporal_kernel = temporal_kernel
        self.expert_count = expert_count
        adjacency = torch.from_numpy(topology.normalized_adjacency())
        self.register_buffer("adjacency", adjacency)
        self.blocks = nn.ModuleList(
            [
                SpatioTemporalBlock(in_channels, channels[0], temporal_kernel),
                SpatioTemporalBlock(channels[0], channels[1], temporal_kernel),
            ]
        )
        self.head = nn.Linear(channels[1], expert_count)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(N, 3C, T, V) concatenated batch -> (N, expert_count) simplex rows."""
        if x.ndim != 4 or x.shape[1] != self.in_channels or x.shape[3] != self.topology.joint_count:
            raise ValueError(
                f"expected (N, {self.in_channels}, T, {self.topology.joint_count}) "
                f"batch, got {tuple(x.shape)}"
            )
        adjacency = self.adjacency.to(x.dtype)
        for block in self.blocks:
            x = block(x, adjacency)
        pooled = x.mean(dim=(2, 3))
        return F.softmax(self.head(pooled), dim=1)

    def architecture(self) -> dict:
        return {
            "kind": "gate",
            "in_channels": self.in_channels,
            "channels": list(self.channels),
            "temporal_kernel": self.temporal_kernel,
            "expert_count": self.expert_count,
            "topology": _topology_to_json(self.topology),
        }


def _topology_to_json(topology: SkeletonTopology) -> dict:
    return {
        "joint_count": topology.joint_count,
        "bone_pairs": [list(p) for p in topology.bone_pairs],
        "root": topology.root,
    }


def _topology_from_json(payload: dict) -> SkeletonTopology:
    return SkeletonTopology(
        joint_count=int(payload["joint_count"]),
        bone_pairs=tuple((int(i), int(j)) for i, j in payload["bone_pairs"]),
        root=int(payload["root"]),
    )


def build_backbone(spec: BackboneSpec, topology: SkeletonTopology, seed: int) -> ReferenceSTGCN:
    """Construct a backbone with seeded init; same seed, same parameters."""
    torch.manual_seed(seed)
    model = ReferenceSTGCN(spec, topology)
    log.info(
        "built backbone: %d blocks, %d parameters",
        len(spec.channels),
        parameter_count(model),
    )
    return model


def build_gate(
    topology: SkeletonTopology,
    in_channels: int,
    seed: int,
    channels: tuple[int, int] = (16, 32),
    temporal_kernel: int = 5,
) -> GateNetwork:
    torch.manual_seed(seed)
    gate = GateNetwork(topology, in_channels, channels, temporal_kernel)
    log.info("built gate: %d parameters", parameter_count(gate))
    return gate


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def model_from_architecture(arch: dict) -> nn.Module:
    topology = _topology_from_json(arch["topology"])
    if arch["kind"] == "backbone":
        return ReferenceSTGCN(BackboneSpec.from_json(arch["spec"]), topology)
    if arch["kind"] == "gate":
        return GateNetwork(
            topology,
            in_channels=int(arch["in_channels"]),
            channels=tuple(int(c) for c in arch["channels"]),
            temporal_kernel=int(arch["temporal_kernel"]),
            expert_count=int(arch["expert_count"]),
        )
    raise ValueError(f"unknown architecture kind {arch['kind']!r}")


def save_checkpoint(
    model: nn.Module,
    path: str | Path,
    seed: int,
    epoch: int,
    mode: str,
) -> None:
    """Write magic + JSON header + concatenated raw little-endian tensors.

    The header's tensor table (name, shape, dtype) fixes the blob layout, so
    the file is deterministic for a given state dict.
    """
    state = model.state_dict()
    table = []
    chunks = []
    for name, tensor in state.items():
        t = tensor.detach().cpu().contiguous()
        dtype = str(t.dtype).removeprefix("torch.")
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {dtype} for {name}")
        table.append({"name": name, "shape": list(t.shape), "dtype": dtype})
        chunks.append(t.numpy().astype(f"<{np.dtype(dtype).str[1:]}").tobytes())
    if not hasattr(model, "architecture"):
        raise TypeError(f"{type(model).__name__} does not describe its architecture")
    header = {
        "format": "skelnoise-checkpoint-v1",
        "architecture": model.architecture(),
        "seed": seed,
        "epoch": epoch,
        "mode": mode,
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    """Rebuild the model described by a checkpoint and load its tensors."""
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + header_len].decode())
    if header.get("format") != "skelnoise-checkpoint-v1":
        raise ValueError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    model = model_from_architecture(header["architecture"])
    offset = 8 + header_len
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        np_dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np_dtype.itemsize
        arr = np.frombuffer(raw, dtype=np_dtype, count=count, offset=offset).reshape(shape)
        offset += nbytes
        state[entry["name"]] = torch.from_numpy(arr.copy())
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensor blob")
    model.load_state_dict(state)
    model.eval()
    return model, header


def state_bytes(model: nn.Module) -> bytes:
    """Canonical byte form of all parameters and buffers, for bit-equality checks."""
    parts = []
    for name, tensor in sorted(model.state_dict().items()):
        parts.append(name.encode())
        parts.append(tensor.detach().cpu().contiguous().numpy().tobytes())
    return b"".join(parts)
