"""Two-stage embedding finetuning with cluster-geometry diagnostics.

Stage 1 finetunes a small feed-forward encoder over pooled feature
sequences with a triplet, cross-correlation, or combined objective; stage 2
freezes it and fits a classifier adapter. The metrics module quantifies how
the finetuning reshapes the embedding clusters.
"""

from .data import Manifest, SynthSpec, load_manifest, load_pooled_split, sample_triplets, synth_generate
from .errors import EmtuneError
from .losses import barlow_twins_loss, combined_loss, cross_correlation, cross_entropy_loss, triplet_loss
from .metrics import (
    ClusterReport,
    accuracy,
    age_mae,
    cluster_report,
    davies_bouldin,
    invariant_distance,
    pca_project,
    tsne_project,
)
from .model import (
    AdapterConfig,
    Checkpoint,
    EncoderConfig,
    adapter_forward,
    encoder_forward,
    init_adapter,
    init_encoder,
    load_checkpoint,
    mean_pool,
    save_checkpoint,
)
from .training import (
    EvalReport,
    RunLog,
    TrainConfig,
    evaluate,
    fit_adapter,
    fit_encoder,
    fit_end2end,
    train_end2end_baseline,
    train_stage1,
    train_stage2,
)
from .verification import run_gradient_suite

__version__ = "0.1.0"
