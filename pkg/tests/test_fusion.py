"""Gated score fusion, the fixed-weight ensemble, and gate fine-tuning."""

import json

import numpy as np
import pytest
import torch

from skelnoise.fusion import (
    DegenerateWeightsError,
    FinetuneHyperparams,
    FixedEnsemblePredictor,
    FusionModel,
    finetune_gate,
    fixed_weight_ensemble,
    fuse,
    load_fusion,
    save_fusion,
)
from skelnoise.models import (
    BackboneSpec,
    GateNetwork,
    SkeletonClassifier,
    build_backbone,
    build_gate,
    state_bytes,
)
from skelnoise.skeleton import MODALITIES, Modality, SkeletonSequence, chain_topology

TOPO = chain_topology(4)
SPEC = BackboneSpec(class_count=3, channels=(4, 8), temporal_kernel=3)


def _samples(n: int, seed: int = 0) -> list[SkeletonSequence]:
    rng = np.random.default_rng(seed)
    return [
        SkeletonSequence(
            sample_id=f"s{i:03d}",
            frames=rng.standard_normal((6, 4, 3)).astype(np.float32),
            label=int(i % 3),
        )
        for i in range(n)
    ]


def _experts(seed: int = 0) -> dict[Modality, SkeletonClassifier]:
    return {m: build_backbone(SPEC, TOPO, seed=seed + i) for i, m in enumerate(MODALITIES)}


def _gate(seed: int = 9) -> GateNetwork:
    return build_gate(TOPO, in_channels=9, seed=seed, channels=(4, 8), temporal_kernel=3)


def _fusion(seed: int = 0, **kwargs) -> FusionModel:
    return FusionModel(
        experts=_experts(seed), gate=_gate(seed + 100), class_count=3, topology=TOPO, **kwargs
    )


class _OneHotGate(GateNetwork):
    """Routes every sample entirely to one expert."""

    def __init__(self, hot: int):
        super().__init__(TOPO, in_channels=9, channels=(4, 8), temporal_kernel=3)
        self.hot = hot

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w = torch.zeros(x.shape[0], 3)
        w[:, self.hot] = 1.0
        return w


class TestFusionModel:
    def test_one_hot_gate_reproduces_expert_bitwise(self):
        samples = _samples(5)
        for hot in range(3):
            model = FusionModel(
                experts=_experts(), gate=_OneHotGate(hot), class_count=3, topology=TOPO
            )
            fused, weights, scores = model.predict(samples)
            # 1*a + 0*b + 0*c is exact in float arithmetic, any order.
            assert np.array_equal(fused, scores[:, hot, :])
            assert np.array_equal(weights[:, hot], np.ones(5))

    def test_zero_init_gate_averages_experts(self):
        model = _fusion()
        fused, weights, scores = model.predict(_samples(6, seed=1))
        np.testing.assert_allclose(weights, np.full((6, 3), 1 / 3), atol=1e-7)
        np.testing.assert_allclose(fused, scores.mean(axis=1), atol=1e-6)

    def test_matches_scalar_loop(self):
        model = _fusion(seed=3)
        with torch.no_grad():
            model.gate.head.weight.normal_(std=0.5)
            model.gate.head.bias.normal_()
        fused, weights, scores = model.predict(_samples(4, seed=2))
        for n in range(4):
            for k in range(3):
                want = sum(float(weights[n, e]) * float(scores[n, e, k]) for e in range(3))
                assert fused[n, k] == pytest.approx(want, abs=1e-6)

    def test_fused_rows_stay_on_simplex(self):
        model = _fusion(seed=5)
        with torch.no_grad():
            model.gate.head.weight.normal_()
        fused, _, _ = model.predict(_samples(10, seed=3))
        assert np.all(fused >= 0)
        np.testing.assert_allclose(fused.sum(axis=1), np.ones(10), atol=1e-6)

    def test_empty_batch(self):
        fused, weights, scores = _fusion().predict([])
        assert fused.shape == (0, 3)
        assert weights.shape == (0, 3)
        assert scores.shape == (0, 3, 3)

    def test_expert_coverage_enforced(self):
        experts = _experts()
        del experts[Modality.MOTION]
        with pytest.raises(ValueError, match="cover"):
            FusionModel(experts=experts, gate=_gate(), class_count=3, topology=TOPO)

    def test_class_count_mismatch(self):
        with pytest.raises(ValueError, match="classes"):
            FusionModel(experts=_experts(), gate=_gate(), class_count=4, topology=TOPO)

    def test_single_sample_wrapper(self):
        model = _fusion(seed=7)
        sample = _samples(1, seed=4)[0]
        pred = fuse(model, sample)
        fused, weights, scores = model.predict([sample])
        assert np.array_equal(pred.fused, fused[0])
        assert np.array_equal(pred.weights, weights[0])
        assert set(pred.scores) == set(MODALITIES)
        assert pred.predicted_class == int(np.argmax(fused[0]))


class TestFixedWeightEnsemble:
    def test_exact_weighted_sum(self):
        sample = _samples(1, seed=5)[0]
        pred = fixed_weight_ensemble(_experts(seed=2), (0.6, 0.6, 0.4), sample, TOPO)
        # Same accumulation order and dtypes as the implementation, so the
        # comparison can be bitwise.
        w = np.asarray((0.6, 0.6, 0.4), dtype=np.float64)
        want = (
            w[0] * pred.scores[Modality.JOINT]
            + w[1] * pred.scores[Modality.BONE]
            + w[2] * pred.scores[Modality.MOTION]
        )
        assert np.array_equal(pred.fused, want)

    def test_joint_only_weights_match_joint_argmax(self):
        experts = _experts(seed=3)
        sample = _samples(1, seed=6)[0]
        pred = fixed_weight_ensemble(experts, (1.0, 0.0, 0.0), sample, TOPO)
        assert pred.predicted_class == int(np.argmax(pred.scores[Modality.JOINT]))

    def test_positive_scaling_leaves_argmax_alone(self):
        experts = _experts(seed=4)
        sample = _samples(1, seed=7)[0]
        small = fixed_weight_ensemble(experts, (0.6, 0.6, 0.4), sample, TOPO)
        large = fixed_weight_ensemble(experts, (6.0, 6.0, 4.0), sample, TOPO)
        assert small.predicted_class == large.predicted_class
        np.testing.assert_allclose(large.fused, 10 * small.fused, rtol=1e-6)

    def test_weight_validation(self):
        experts = _experts()
        sample = _samples(1)[0]
        with pytest.raises(ValueError, match="3 finite"):
            fixed_weight_ensemble(experts, (0.5, 0.5), sample, TOPO)  # type: ignore[arg-type]
        with pytest.raises(ValueError, match="finite"):
            fixed_weight_ensemble(experts, (0.5, float("nan"), 0.5), sample, TOPO)
        with pytest.raises(DegenerateWeightsError):
            fixed_weight_ensemble(experts, (0.0, 0.0, 0.0), sample, TOPO)

    def test_batch_predictor_matches_single_sample(self):
        experts = _experts(seed=5)
        samples = _samples(4, seed=8)
        predictor = FixedEnsemblePredictor(experts, (0.6, 0.6, 0.4), TOPO)
        batch_scores = predictor.predict_scores(samples)
        for i, sample in enumerate(samples):
            single = fixed_weight_ensemble(experts, (0.6, 0.6, 0.4), sample, TOPO)
            np.testing.assert_allclose(batch_scores[i], single.fused, atol=1e-6)

    def test_batch_predictor_rejects_zero_weights_and_handles_empty(self):
        experts = _experts()
        with pytest.raises(DegenerateWeightsError):
            FixedEnsemblePredictor(experts, (0.0, 0.0, 0.0), TOPO)
        predictor = FixedEnsemblePredictor(experts, (1.0, 1.0, 1.0), TOPO)
        assert predictor.predict_scores([]).shape == (0, 3)


class TestFinetuneGate:
    def test_frozen_experts_do_not_drift(self, tmp_path):
        model = _fusion(seed=11)
        before = {m: state_bytes(model.experts[m]) for m in MODALITIES}
        gate_before = state_bytes(model.gate)
        _, metrics = finetune_gate(
            model,
            _samples(8, seed=9),
            FinetuneHyperparams(epochs=2, batch_size=4),
            seed=1,
            out_dir=tmp_path,
        )
        for m in MODALITIES:
            assert state_bytes(model.experts[m]) == before[m]
        assert state_bytes(model.gate) != gate_before
        assert len(metrics) == 2
        assert {"epoch", "loss", "mean_weight_joint"} <= metrics[0].keys()
        lines = (tmp_path / "gate_finetune_metrics.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        row = json.loads(lines[0])
        total = row["mean_weight_joint"] + row["mean_weight_bone"] + row["mean_weight_motion"]
        assert total == pytest.approx(1.0, abs=1e-5)

    def test_zero_epochs_is_identity(self):
        model = _fusion(seed=13)
        before = state_bytes(model.gate)
        _, metrics = finetune_gate(
            model, _samples(4, seed=10), FinetuneHyperparams(epochs=0), seed=1
        )
        assert metrics == []
        assert state_bytes(model.gate) == before

    def test_unfrozen_expert_trains(self):
        frozen = {Modality.JOINT: False, Modality.BONE: True, Modality.MOTION: True}
        model = _fusion(seed=17, frozen=frozen)
        before = {m: state_bytes(model.experts[m]) for m in MODALITIES}
        finetune_gate(model, _samples(8, seed=11), FinetuneHyperparams(epochs=2, batch_size=4), seed=2)
        assert state_bytes(model.experts[Modality.JOINT]) != before[Modality.JOINT]
        assert state_bytes(model.experts[Modality.BONE]) == before[Modality.BONE]
        assert state_bytes(model.experts[Modality.MOTION]) == before[Modality.MOTION]

    def test_deterministic(self):
        kwargs = dict(
            samples=_samples(8, seed=12),
            hyperparams=FinetuneHyperparams(epochs=2, batch_size=4),
            seed=3,
        )
        m1, _ = finetune_gate(_fusion(seed=19), **kwargs)
        m2, _ = finetune_gate(_fusion(seed=19), **kwargs)
        assert state_bytes(m1.gate) == state_bytes(m2.gate)

    def test_empty_clean_set(self):
        with pytest.raises(ValueError, match="empty"):
            finetune_gate(_fusion(), [], FinetuneHyperparams(), seed=1)


class TestBundle:
    def test_round_trip_preserves_everything(self, tmp_path):
        model = _fusion(seed=23, center=False)
        with torch.no_grad():
            model.gate.head.weight.normal_()
        path = save_fusion(model, tmp_path, seed=5, epoch=7, extra={"note": "x"})
        loaded = load_fusion(path)
        for m in MODALITIES:
            assert state_bytes(loaded.experts[m]) == state_bytes(model.experts[m])
        assert state_bytes(loaded.gate) == state_bytes(model.gate)
        assert loaded.class_count == 3
        assert loaded.center is False
        assert loaded.frozen == model.frozen

        samples = _samples(3, seed=13)
        want, _, _ = model.predict(samples)
        got, _, _ = loaded.predict(samples)
        assert np.array_equal(want, got)

    def test_load_accepts_directory(self, tmp_path):
        model = _fusion(seed=29)
        save_fusion(model, tmp_path, seed=1, epoch=0)
        loaded = load_fusion(tmp_path)
        assert state_bytes(loaded.gate) == state_bytes(model.gate)

    def test_unknown_format_rejected(self, tmp_path):
        (tmp_path / "fusion.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValueError, match="format"):
            load_fusion(tmp_path)
