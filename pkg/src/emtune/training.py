"""Two-stage training protocol and the single-stage baseline.

Stage 1 finetunes the encoder with a triplet, correlation, or combined
objective over sampled triplets. Stage 2 freezes the encoder and fits the
adapter classifier with cross-entropy. The baseline trains encoder and
adapter jointly with cross-entropy only. Every run is a pure function of
(data bytes, config, seed).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Manifest, SplitData, load_pooled_split, sample_triplets
from .errors import ConfigError, DataError, StateError
from .linalg import adam_update, init_adam_state
from .losses import barlow_twins_loss, combined_loss, cross_entropy_loss, triplet_loss
from .model import (
    AdapterConfig,
    EncoderConfig,
    init_adapter,
    init_encoder,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
)

logger = logging.getLogger(__name__)

LOSS_MODES = ("contrastive", "noncontrastive", "combined")

__all__ = [
    "LOSS_MODES",
    "TrainConfig",
    "EpochRecord",
    "RunLog",
    "EvalReport",
    "fit_encoder",
    "fit_adapter",
    "fit_end2end",
    "train_stage1",
    "train_stage2",
    "train_end2end_baseline",
    "evaluate",
    "predict",
]


@dataclass
class TrainConfig:
    loss_mode: str = "combined"
    margin: float = 1.0
    lambd: float = 0.005  # off-diagonal weight inside the correlation term
    beta: float = 0.01  # weight of the correlation term in combined mode
    center: bool = False
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got '{self.loss_mode}'")
        if self.margin < 0.0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.lambd < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambd}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_metric: float | None = None


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    checkpoint_path: str | None = None

    def save(self, path) -> None:
        """Line-delimited JSON, one record per epoch."""
        lines = [json.dumps(asdict(rec), sort_keys=True) for rec in self.records]
        if self.checkpoint_path is not None:
            lines.append(json.dumps({"checkpoint": self.checkpoint_path}, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _epoch_mean(batch_losses) -> float:
    return float(np.mean(batch_losses))


def _stage1_batch(params, features, batch, config: TrainConfig):
    """Loss and accumulated parameter gradients for one triplet batch."""
    emb_anchor, cache_anchor = mlp_forward_cached(params, features[batch.anchors])
    emb_positive, cache_positive = mlp_forward_cached(params, features[batch.positives])
    roles = []
    if config.loss_mode == "contrastive":
        emb_negative, cache_negative = mlp_forward_cached(params, features[batch.negatives])
        out = triplet_loss(emb_anchor, emb_positive, emb_negative, config.margin)
        roles = [
            (cache_anchor, out.grad_anchor),
            (cache_positive, out.grad_positive),
            (cache_negative, out.grad_negative),
        ]
    elif config.loss_mode == "noncontrastive":
        out = barlow_twins_loss(emb_anchor, emb_positive, config.lambd, config.center)
        roles = [(cache_anchor, out.grad_anchor), (cache_positive, out.grad_positive)]
    else:
        emb_negative, cache_negative = mlp_forward_cached(params, features[batch.negatives])
        out = combined_loss(
            emb_anchor,
            emb_positive,
            emb_negative,
            config.margin,
            config.lambd,
            config.beta,
            config.center,
        )
        roles = [
            (cache_anchor, out.grad_anchor),
            (cache_positive, out.grad_positive),
            (cache_negative, out.grad_negative),
        ]

    grads = [np.zeros_like(p) for p in params]
    for cache, upstream in roles:
        role_grads, _ = mlp_backward(params, cache, upstream)
        for acc, g in zip(grads, role_grads):
            acc += g
    return out.loss, grads


def fit_encoder(features, labels, encoder_config: EncoderConfig, config: TrainConfig):
    """Stage-1 loop over in-memory pooled features. Returns (params, RunLog)."""
    config.validate()
    encoder_config.validate()
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != len(labels):
        raise DataError(f"features {features.shape} do not match {len(labels)} labels")
    if features.shape[1] != encoder_config.input_dim:
        raise ConfigError(
            f"encoder input_dim {encoder_config.input_dim} != feature dim {features.shape[1]}"
        )
    if len(np.unique(labels)) < 2:
        raise ConfigError("stage-1 training needs at least 2 classes")

    # Correlation statistics are only meaningful at the configured batch
    # size, so those modes drop the trailing partial batch entirely.
    drop_partial = config.loss_mode in ("noncontrastive", "combined")
    params = init_encoder(encoder_config)
    state = init_adam_state(params)
    log = RunLog()
    for epoch in range(1, config.epochs + 1):
        batches = sample_triplets(labels, config.batch_size, config.seed, epoch)
        if drop_partial:
            batches = [b for b in batches if len(b) == config.batch_size]
        if not batches:
            raise DataError(
                f"no usable batches at batch_size {config.batch_size}; reduce it or add data"
            )
        batch_losses = []
        for batch in batches:
            loss, grads = _stage1_batch(params, features, batch, config)
            params, state = adam_update(params, grads, state, config.learning_rate)
            batch_losses.append(loss)
        log.records.append(EpochRecord(epoch, _epoch_mean(batch_losses)))
        logger.info("stage1 epoch %d/%d: loss %.6f", epoch, config.epochs, log.records[-1].train_loss)
    return params, log


def _minibatches(n: int, batch_size: int, rng) -> list:
    order = rng.permutation(n)
    return [order[start : start + batch_size] for start in range(0, n, batch_size)]


def fit_adapter(
    features,
    labels,
    encoder_params,
    adapter_config: AdapterConfig,
    config: TrainConfig,
    dev_features=None,
    dev_labels=None,
):
    """Stage 2: cross-entropy on top of a frozen encoder.

    The encoder parameters are read once to embed the data and never
    written. Returns (adapter params, RunLog); dev accuracy is logged per
    epoch when a dev set is supplied.
    """
    config.validate()
    adapter_config.validate()
    labels = np.asarray(labels, dtype=np.int64)
    embeddings = mlp_forward(encoder_params, np.asarray(features, dtype=np.float64))
    if embeddings.shape[1] != adapter_config.input_dim:
        raise ConfigError(
            f"adapter input_dim {adapter_config.input_dim} != embedding dim {embeddings.shape[1]}"
        )
    dev_embeddings = None
    if dev_features is not None and len(dev_features) > 0:
        dev_embeddings = mlp_forward(encoder_params, np.asarray(dev_features, dtype=np.float64))
        dev_labels = np.asarray(dev_labels, dtype=np.int64)

    params = init_adapter(adapter_config)
    state = init_adam_state(params)
    log = RunLog()
    for epoch in range(1, config.epochs + 1):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, epoch, 1])))
        batch_losses = []
        for idx in _minibatches(len(labels), config.batch_size, rng):
            logits, cache = mlp_forward_cached(params, embeddings[idx])
            out = cross_entropy_loss(logits, labels[idx])
            grads, _ = mlp_backward(params, cache, out.grad_logits)
            params, state = adam_update(params, grads, state, config.learning_rate)
            batch_losses.append(out.loss)
        dev_metric = None
        if dev_embeddings is not None:
            preds = np.argmax(mlp_forward(params, dev_embeddings), axis=1)
            dev_metric = float(np.mean(preds == dev_labels))
        log.records.append(EpochRecord(epoch, _epoch_mean(batch_losses), dev_metric))
        logger.info(
            "stage2 epoch %d/%d: loss %.6f dev %s",
            epoch,
            config.epochs,
            log.records[-1].train_loss,
            "-" if dev_metric is None else f"{dev_metric:.4f}",
        )
    return params, log


def fit_end2end(
    features,
    labels,
    encoder_config: EncoderConfig,
    adapter_config: AdapterConfig,
    config: TrainConfig,
    dev_features=None,
    dev_labels=None,
):
    """Baseline: encoder and adapter trained jointly with cross-entropy.

    Returns (encoder params, adapter params, RunLog).
    """
    config.validate()
    encoder_config.validate()
    adapter_config.validate()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if adapter_config.input_dim != encoder_config.bottleneck_dim:
        raise ConfigError(
            f"adapter input_dim {adapter_config.input_dim} != bottleneck {encoder_config.bottleneck_dim}"
        )
    dev_ready = dev_features is not None and len(dev_features) > 0
    if dev_ready:
        dev_features = np.asarray(dev_features, dtype=np.float64)
        dev_labels = np.asarray(dev_labels, dtype=np.int64)

    enc_params = init_encoder(encoder_config)
    adp_params = init_adapter(adapter_config)
    n_enc = len(enc_params)
    params = enc_params + adp_params
    state = init_adam_state(params)
    log = RunLog()
    for epoch in range(1, config.epochs + 1):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, epoch, 2])))
        batch_losses = []
        for idx in _minibatches(len(labels), config.batch_size, rng):
            emb, cache_enc = mlp_forward_cached(params[:n_enc], features[idx])
            logits, cache_adp = mlp_forward_cached(params[n_enc:], emb)
            out = cross_entropy_loss(logits, labels[idx])
            grads_adp, grad_emb = mlp_backward(params[n_enc:], cache_adp, out.grad_logits)
            grads_enc, _ = mlp_backward(params[:n_enc], cache_enc, grad_emb)
            params, state = adam_update(params, grads_enc + grads_adp, state, config.learning_rate)
            batch_losses.append(out.loss)
        dev_metric = None
        if dev_ready:
            emb = mlp_forward(params[:n_enc], dev_features)
            preds = np.argmax(mlp_forward(params[n_enc:], emb), axis=1)
            dev_metric = float(np.mean(preds == dev_labels))
        log.records.append(EpochRecord(epoch, _epoch_mean(batch_losses), dev_metric))
        logger.info(
            "end2end epoch %d/%d: loss %.6f dev %s",
            epoch,
            config.epochs,
            log.records[-1].train_loss,
            "-" if dev_metric is None else f"{dev_metric:.4f}",
        )
    return params[:n_enc], params[n_enc:], log


# ---------------------------------------------------------------------------
# manifest-level entry points


def train_stage1(manifest: Manifest, encoder_config: EncoderConfig, config: TrainConfig):
    """Stage 1 over the manifest's train split. Returns (params, RunLog)."""
    data = load_pooled_split(manifest, "train")
    return fit_encoder(data.features, data.labels, encoder_config, config)


def _optional_dev(manifest: Manifest):
    try:
        dev = load_pooled_split(manifest, "dev")
        return dev.features, dev.labels
    except DataError:
        return None, None


def train_stage2(manifest: Manifest, encoder_params, adapter_config: AdapterConfig, config: TrainConfig):
    """Stage 2 over the manifest's train split, dev accuracy when available."""
    data = load_pooled_split(manifest, "train")
    dev_features, dev_labels = _optional_dev(manifest)
    return fit_adapter(
        data.features, data.labels, encoder_params, adapter_config, config, dev_features, dev_labels
    )


def train_end2end_baseline(
    manifest: Manifest, encoder_config: EncoderConfig, adapter_config: AdapterConfig, config: TrainConfig
):
    """Joint cross-entropy baseline over the manifest's train split."""
    data = load_pooled_split(manifest, "train")
    dev_features, dev_labels = _optional_dev(manifest)
    return fit_end2end(
        data.features, data.labels, encoder_config, adapter_config, config, dev_features, dev_labels
    )


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    split: str
    count: int
    accuracy: float
    mae: float | None = None


def predict(encoder_params, adapter_params, features) -> np.ndarray:
    """Class predictions; argmax ties resolve to the lowest class index."""
    if adapter_params is None:
        raise StateError("prediction requires an adapter; this checkpoint has none")
    embeddings = mlp_forward(encoder_params, np.asarray(features, dtype=np.float64))
    logits = mlp_forward(adapter_params, embeddings)
    return np.argmax(logits, axis=1)


def evaluate(manifest: Manifest, split: str, encoder_params, adapter_params) -> EvalReport:
    """Accuracy (and bucket-midpoint MAE when defined) on one split."""
    data = load_pooled_split(manifest, split)
    preds = predict(encoder_params, adapter_params, data.features)
    accuracy = float(np.mean(preds == data.labels))
    mae = None
    midpoints = manifest.class_midpoints()
    if midpoints is not None:
        from .metrics import age_mae

        mae = age_mae(preds, data.labels, midpoints)
    return EvalReport(split=split, count=len(data.labels), accuracy=accuracy, mae=mae)
