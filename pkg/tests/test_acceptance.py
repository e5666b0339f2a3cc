"""Acceptance suite: eight end-to-end criteria, one printed line each.

Run with `pytest tests/test_acceptance.py -s` to see the PASS/FAIL lines.
The toy-benchmark criterion trains real models and takes a couple of
minutes on one CPU core; everything else finishes in seconds.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
import torch
from scipy import stats

from skelnoise.cross_training import (
    SelectionSchedule,
    TrainHyperparams,
    keep_ratio,
    small_loss_select,
)
from skelnoise.data import SyntheticSpec
from skelnoise.fusion import (
    FinetuneHyperparams,
    FusionModel,
    fixed_weight_ensemble,
)
from skelnoise.harness import ExperimentConfig, run_ablation_suite, run_pipeline
from skelnoise.models import BackboneSpec, GateNetwork, build_backbone, build_gate
from skelnoise.noise import inject_symmetric_noise
from skelnoise.selection import LossTable, select_clean
from skelnoise.skeleton import (
    MODALITIES,
    Modality,
    SkeletonSequence,
    chain_topology,
    default_topology,
    derive,
)


def _criterion(n: int, ok: bool, detail: str) -> None:
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})", flush=True)
    assert ok, f"criterion {n}: {detail}"


def _bone_oracle(frames: np.ndarray, pairs) -> np.ndarray:
    out = np.zeros_like(frames)
    for t in range(frames.shape[0]):
        for child, parent in pairs:
            for c in range(frames.shape[2]):
                out[t, child, c] = frames[t, parent, c] - frames[t, child, c]
    return out


def _motion_oracle(frames: np.ndarray) -> np.ndarray:
    out = np.zeros_like(frames)
    for t in range(frames.shape[0] - 1):
        for v in range(frames.shape[1]):
            for c in range(frames.shape[2]):
                out[t, v, c] = frames[t + 1, v, c] - frames[t, v, c]
    return out


def test_criterion_1_modality_oracles():
    """100 random sequences, all three derivations bitwise vs scalar loops."""
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    checked = 0
    for i in range(100):
        joints = int(rng.integers(2, 26))
        frames_n = int(rng.integers(2, 65))
        frames = rng.standard_normal((frames_n, joints, 3)).astype(np.float32)
        seq = SkeletonSequence(sample_id=f"a{i}", frames=frames, label=0)
        topo = default_topology(joints)
        assert np.array_equal(derive(seq, Modality.JOINT, topo).data, frames)
        assert np.array_equal(
            derive(seq, Modality.BONE, topo).data, _bone_oracle(frames, topo.bone_pairs)
        )
        assert np.array_equal(derive(seq, Modality.MOTION, topo).data, _motion_oracle(frames))
        checked += 1
    elapsed = time.perf_counter() - t0
    _criterion(1, checked == 100 and elapsed < 10, f"{checked} sequences bitwise, {elapsed:.2f}s")


def test_criterion_2_injector_statistics():
    """n=10,000: exact floor counts, never-self, uniform wrong classes."""
    frames = np.zeros((2, 2, 3), dtype=np.float32)
    rng = np.random.default_rng(2024)
    labels = rng.integers(0, 10, size=10_000)
    seqs = [
        SkeletonSequence(sample_id=f"n{i:05d}", frames=frames, label=int(y))
        for i, y in enumerate(labels)
    ]
    t0 = time.perf_counter()
    worst_p = 1.0
    for ratio in (0.2, 0.4, 0.5, 0.8):
        noisy = inject_symmetric_noise(seqs, ratio, seed=27, class_count=10)
        rerun = inject_symmetric_noise(seqs, ratio, seed=27, class_count=10)
        assert noisy.manifest.canonical_bytes() == rerun.manifest.canonical_bytes()
        want = math.floor(Fraction(str(ratio)) * 10_000)
        assert int(noisy.corrupted_mask.sum()) == want
        true, new = noisy.true_labels, noisy.noisy_labels
        assert not np.any(new[noisy.corrupted_mask] == true[noisy.corrupted_mask])
        assert np.array_equal(new[~noisy.corrupted_mask], true[~noisy.corrupted_mask])
        for c in range(10):
            sel = noisy.corrupted_mask & (true == c)
            wrong = np.delete(np.bincount(new[sel], minlength=10), c)
            worst_p = min(worst_p, float(stats.chisquare(wrong).pvalue))
    elapsed = time.perf_counter() - t0
    _criterion(
        2,
        worst_p > 0.01 and elapsed < 30,
        f"floor counts exact, worst chi-square p={worst_p:.3f}, {elapsed:.2f}s",
    )


def test_criterion_3_keep_schedule():
    """R(T) grid matches the rational oracle with zero tolerance."""
    mismatches = 0
    for r in ("0.2", "0.5", "0.8"):
        for warmup in (5, 10):
            sched = SelectionSchedule(noise_ratio=float(r), warmup_epochs=warmup)
            rf = Fraction(r)
            for epoch in range(31):
                want = 1 - min(Fraction(epoch, warmup) * rf, rf)
                if sched.keep_fraction(epoch) != want:
                    mismatches += 1
                if keep_ratio(sched, epoch) != float(want):
                    mismatches += 1
    _criterion(3, mismatches == 0, "186 grid points exact")


def test_criterion_4_selection_oracles():
    """1000 randomized instances each for both selection primitives."""
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(1, 1025))
        losses = rng.integers(0, 64, size=n) / 8.0
        keep = int(rng.integers(1, 1001)) / 1000
        count = math.ceil(Fraction(str(keep)) * n)
        order = np.lexsort((np.arange(n), losses))
        want = tuple(sorted(int(i) for i in order[:count]))
        assert small_loss_select(losses, keep) == want

    for trial in range(1000):
        n = int(rng.integers(1, 2049))
        ids = tuple(f"q{i}" for i in range(n))
        tables = {
            m: LossTable(modality=m, sample_ids=ids, losses=rng.integers(0, 16, size=n) / 4.0)
            for m in MODALITIES
        }
        fraction = int(rng.integers(1, 101)) / 100
        sel = select_clean(tables, fraction)
        count = math.ceil(Fraction(str(fraction)) * n)
        membership: dict[str, int] = {}
        for bit, m in zip((1, 2, 4), MODALITIES):
            order = np.lexsort((np.arange(n), tables[m].losses))
            chosen = sorted(int(i) for i in order[:count])
            assert sel.per_modality[m] == tuple(ids[i] for i in chosen)
            for i in chosen:
                membership[ids[i]] = membership.get(ids[i], 0) | bit
        assert sel.membership == membership
        assert tuple(sorted(sel.union, key=ids.index)) == sel.union
        assert count <= len(sel.union) <= min(3 * count, n)
    elapsed = time.perf_counter() - t0
    _criterion(4, elapsed < 60, f"2000 instances match oracles, {elapsed:.2f}s")


def test_criterion_5_gradient_check():
    """Analytic gradients vs central differences along 20 random directions."""
    torch.manual_seed(0)
    spec = BackboneSpec(class_count=3, channels=(4, 8), temporal_kernel=3)
    model = build_backbone(spec, chain_topology(4), seed=2).double()
    model.eval()
    gen = torch.Generator().manual_seed(7)
    batch = torch.randn(4, 3, 6, 4, generator=gen).double()
    labels = torch.tensor([0, 1, 2, 1])

    model.zero_grad()
    model.per_sample_loss(batch, labels).mean().backward()
    params = [p for p in model.parameters() if p.requires_grad]
    grads = [p.grad.detach().clone() for p in params]

    def loss_value() -> float:
        with torch.no_grad():
            return float(model.per_sample_loss(batch, labels).mean())

    eps = 1e-6
    worst = 0.0
    for _ in range(20):
        direction = [torch.randn(p.shape, generator=gen, dtype=torch.float64) for p in params]
        norm = math.sqrt(sum(float((d * d).sum()) for d in direction))
        direction = [d / norm for d in direction]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, direction))
        with torch.no_grad():
            for p, d in zip(params, direction):
                p += eps * d
        plus = loss_value()
        with torch.no_grad():
            for p, d in zip(params, direction):
                p -= 2 * eps * d
        minus = loss_value()
        with torch.no_grad():
            for p, d in zip(params, direction):
                p += eps * d
        numeric = (plus - minus) / (2 * eps)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    _criterion(5, worst < 1e-4, f"20 directions, worst relative error {worst:.2e}")


class _OneHotGate(GateNetwork):
    def __init__(self, topology, hot: int):
        super().__init__(topology, in_channels=9, channels=(4, 8), temporal_kernel=3)
        self.hot = hot

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w = torch.zeros(x.shape[0], 3)
        w[:, self.hot] = 1.0
        return w


def test_criterion_6_fusion_arithmetic():
    """One-hot routing bitwise, simplex weights at scale, fixed weights exact."""
    topo = chain_topology(4)
    spec = BackboneSpec(class_count=3, channels=(4, 8), temporal_kernel=3)
    experts = {m: build_backbone(spec, topo, seed=i) for i, m in enumerate(MODALITIES)}
    rng = np.random.default_rng(5)
    samples = [
        SkeletonSequence(
            sample_id=f"f{i}",
            frames=rng.standard_normal((6, 4, 3)).astype(np.float32),
            label=int(i % 3),
        )
        for i in range(1000)
    ]

    one_hot_ok = True
    for hot in range(3):
        model = FusionModel(
            experts=experts, gate=_OneHotGate(topo, hot), class_count=3, topology=topo
        )
        fused, _, scores = model.predict(samples[:20])
        one_hot_ok &= np.array_equal(fused, scores[:, hot, :])

    gate = build_gate(topo, in_channels=9, seed=31, channels=(4, 8), temporal_kernel=3)
    with torch.no_grad():
        torch.manual_seed(13)
        gate.head.weight.normal_(std=0.5)
        gate.head.bias.normal_()
    model = FusionModel(experts=experts, gate=gate, class_count=3, topology=topo)
    worst_sum = 0.0
    out_of_range = 0
    for start in range(0, 1000, 250):
        fused, weights, _ = model.predict(samples[start : start + 250])
        worst_sum = max(worst_sum, float(np.abs(fused.sum(axis=1) - 1).max()))
        worst_sum = max(worst_sum, float(np.abs(weights.sum(axis=1) - 1).max()))
        out_of_range += int(np.sum((fused < 0) | (fused > 1 + 1e-9)))
        out_of_range += int(np.sum((weights < 0) | (weights > 1 + 1e-9)))

    w = np.asarray((0.6, 0.6, 0.4), dtype=np.float64)
    fixed_ok = True
    for sample in samples[:5]:
        pred = fixed_weight_ensemble(experts, (0.6, 0.6, 0.4), sample, topo)
        want = (
            w[0] * pred.scores[Modality.JOINT]
            + w[1] * pred.scores[Modality.BONE]
            + w[2] * pred.scores[Modality.MOTION]
        )
        fixed_ok &= np.array_equal(pred.fused, want)

    ok = one_hot_ok and worst_sum <= 1e-6 and out_of_range == 0 and fixed_ok
    _criterion(
        6,
        ok,
        f"one-hot bitwise, 1000 rows sum within {worst_sum:.1e}, fixed weights exact",
    )


def _toy_config(out_dir, seed: int, noise_ratio: float) -> ExperimentConfig:
    return ExperimentConfig(
        output_dir=str(out_dir),
        noise_ratio=noise_ratio,
        seed=seed,
        synthetic=SyntheticSpec(
            class_count=3,
            samples_per_class=300,
            frame_count=24,
            joint_count=7,
            noise_scale=0.15,
        ),
        test_fraction=1 / 3,
        warmup_epochs=10,
        backbone_channels=(16, 32),
        temporal_kernel=3,
        gate_channels=(8, 16),
        train=TrainHyperparams(epochs=65, batch_size=64, lr_decay_epochs=(35, 50)),
        finetune=FinetuneHyperparams(learning_rate=0.01, epochs=5, batch_size=64),
    )


def test_criterion_7_toy_benchmark(tmp_path):
    """Cross-training beats plain training under noise and is harmless without."""
    t0 = time.perf_counter()
    margins, precisions, fused_vs_best = [], [], []
    for seed in (201, 202, 203):
        suite = run_ablation_suite(_toy_config(tmp_path / f"r04-s{seed}", seed, 0.4))
        rows = {row["arm"]: row for row in suite["rows"]}
        plain = rows["plain"]["top1"]
        best = rows["cross_training"]["top1"]
        full = rows["full_pipeline"]["top1"]
        margins.append(best - plain)
        precisions.append(rows["full_pipeline"]["detail"]["selection_precision"])
        fused_vs_best.append(full - best)

    clean = run_ablation_suite(_toy_config(tmp_path / "r0-s201", 201, 0.0))
    clean_rows = {row["arm"]: row for row in clean["rows"]}
    clean_margin = clean_rows["full_pipeline"]["top1"] - clean_rows["plain"]["top1"]
    elapsed = time.perf_counter() - t0

    a = float(np.mean(margins))
    b = min(precisions)
    c = min(fused_vs_best)
    ok = a >= 0.05 and b > 0.6 and c >= 0.0 and clean_margin >= -0.02 and elapsed < 900
    _criterion(
        7,
        ok,
        f"noise gain {a:+.4f} (need >= +0.05), selection precision {b:.3f} (need > 0.6), "
        f"fused vs best expert {c:+.4f} (need >= 0), clean-data gap {clean_margin:+.4f} "
        f"(need >= -0.02), {elapsed:.0f}s",
    )


def test_criterion_8_run_determinism(tmp_path):
    """The same config in two directories yields identical report hashes."""
    def config(out_dir) -> ExperimentConfig:
        return ExperimentConfig(
            output_dir=str(out_dir),
            noise_ratio=0.4,
            seed=17,
            synthetic=SyntheticSpec(
                class_count=3,
                samples_per_class=40,
                frame_count=12,
                joint_count=5,
                subject_count=3,
                camera_count=3,
                noise_scale=0.1,
            ),
            test_fraction=0.25,
            warmup_epochs=3,
            backbone_channels=(8, 16),
            temporal_kernel=3,
            gate_channels=(4, 8),
            train=TrainHyperparams(epochs=6, batch_size=32, lr_decay_epochs=(4,)),
            finetune=FinetuneHyperparams(epochs=2, batch_size=32),
        )

    first = run_pipeline(config(tmp_path / "one"))
    second = run_pipeline(config(tmp_path / "two"))
    ok = first.report_hash() == second.report_hash()
    _criterion(8, ok, f"report hash {first.report_hash()[:16]} reproduced")
