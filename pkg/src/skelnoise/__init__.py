"""Noise-robust skeleton action recognition.

Pipeline: inject symmetric label noise with provenance, derive joint/bone/motion
streams, co-teach a pair of classifiers per stream, pool a clean training set
from the per-stream small-loss rankings, and fuse the three experts with a
learned gate.
"""

from skelnoise.skeleton import (
    MODALITIES,
    Modality,
    ModalityTensor,
    SkeletonSequence,
    SkeletonTopology,
    center_on_root,
    chain_topology,
    default_topology,
    derive,
    derive_bone,
    derive_joint,
    derive_motion,
    derive_streams,
    ntu25_topology,
)
from skelnoise.data import (
    SyntheticSpec,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from skelnoise.noise import (
    NoiseManifest,
    NoisyDataset,
    inject_symmetric_noise,
    selector_quality,
)
from skelnoise.cross_training import (
    SelectionSchedule,
    TrainHyperparams,
    cross_train,
    keep_ratio,
    small_loss_select,
    train_plain,
)
from skelnoise.models import (
    BackboneSpec,
    GateNetwork,
    ReferenceSTGCN,
    build_backbone,
    build_gate,
    load_checkpoint,
    save_checkpoint,
)
from skelnoise.selection import GlobalSelection, LossTable, rank_by_loss, select_clean
from skelnoise.fusion import (
    FinetuneHyperparams,
    FusedPrediction,
    FusionModel,
    finetune_gate,
    fixed_weight_ensemble,
    fuse,
    load_fusion,
    save_fusion,
)
from skelnoise.harness import (
    ExperimentConfig,
    RunReport,
    emit_plots,
    evaluate,
    run_ablation_suite,
    run_pipeline,
)

__version__ = "0.1.0"
