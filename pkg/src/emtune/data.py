"""Datasets: feature files, manifests, synthetic generation, triplet sampling.

A dataset is a JSONL manifest plus one binary feature file per utterance.
Feature files hold a frames x dim float32 matrix; everything is widened to
float64 on load. All randomness runs through seeded PCG64 generators so a
dataset or an epoch of triplets is reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .model import mean_pool

logger = logging.getLogger(__name__)

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
SPLITS = ("train", "dev", "test")
TRAIN_FRACTION = 0.7
DEV_FRACTION = 0.15

# Bucket midpoints used when a manifest carries age-style labels without
# explicit midpoints of its own.
DEFAULT_AGE_MIDPOINTS = {
    "twenties": 25.0,
    "thirties": 35.0,
    "forties": 45.0,
    "fifties": 55.0,
    "sixties+": 65.0,
}

__all__ = [
    "FEAT_MAGIC",
    "FEAT_VERSION",
    "SPLITS",
    "DEFAULT_AGE_MIDPOINTS",
    "ManifestRecord",
    "Manifest",
    "SplitData",
    "SynthSpec",
    "TripletBatch",
    "write_feature_file",
    "read_feature_file",
    "write_manifest",
    "load_manifest",
    "load_pooled_split",
    "synth_generate",
    "sample_triplets",
]


# ---------------------------------------------------------------------------
# feature files


def write_feature_file(path, values) -> None:
    """Store a frames x dim matrix as float32 rows behind a fixed header."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {arr.shape}")
    frames, dim = arr.shape
    if frames < 1 or dim < 1:
        raise DataError(f"feature matrix must be non-empty, got shape {arr.shape}")
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<III", FEAT_VERSION, frames, dim))
        fh.write(payload)


def read_feature_file(path, expected_dim: int | None = None) -> np.ndarray:
    """Read a feature file back as float64, enforcing the exact byte count."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != FEAT_MAGIC:
        raise ParseError(f"{path}: bad feature-file magic {buf[:4]!r}", offset=0)
    if len(buf) < 16:
        raise ParseError(f"{path}: truncated feature-file header", offset=len(buf))
    version, frames, dim = struct.unpack("<III", buf[4:16])
    if version != FEAT_VERSION:
        raise ParseError(f"{path}: unsupported feature-file version {version}", offset=4)
    if frames < 1 or dim < 1:
        raise ParseError(f"{path}: header declares empty matrix {frames} x {dim}", offset=8)
    expected_bytes = 16 + frames * dim * 4
    if len(buf) != expected_bytes:
        raise ParseError(
            f"{path}: expected {expected_bytes} bytes for {frames} x {dim}, found {len(buf)}",
            offset=min(len(buf), expected_bytes),
        )
    if expected_dim is not None and dim != expected_dim:
        raise DataError(f"{path}: feature dim {dim} does not match expected dim {expected_dim}")
    return np.frombuffer(buf[16:], dtype="<f4").reshape(frames, dim).astype(np.float64)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestRecord:
    id: str
    feature_path: str  # relative to the manifest location
    label: str
    split: str
    midpoint: float | None = None


@dataclass
class Manifest:
    records: list
    label_map: dict  # label -> contiguous class index, sorted by label
    root: Path

    def split_records(self, split: str) -> list:
        if split not in SPLITS:
            raise ConfigError(f"unknown split '{split}', expected one of {SPLITS}")
        return [r for r in self.records if r.split == split]

    def class_midpoints(self) -> dict | None:
        """Class index -> midpoint, or None unless every class has one."""
        by_label = {}
        for rec in self.records:
            if rec.midpoint is not None:
                by_label[rec.label] = rec.midpoint
            elif rec.label in DEFAULT_AGE_MIDPOINTS:
                by_label.setdefault(rec.label, DEFAULT_AGE_MIDPOINTS[rec.label])
        if set(by_label) != set(self.label_map):
            return None
        return {self.label_map[label]: mp for label, mp in by_label.items()}


def write_manifest(records, path) -> None:
    path = Path(path)
    lines = []
    for rec in records:
        row = {"id": rec.id, "feature_path": rec.feature_path, "label": rec.label, "split": rec.split}
        if rec.midpoint is not None:
            row["midpoint"] = rec.midpoint
        lines.append(json.dumps(row, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> Manifest:
    """Parse and validate a JSONL manifest.

    Duplicate ids and unknown splits are reported with 1-based line numbers;
    midpoints must agree across records of the same label.
    """
    path = Path(path)
    records = []
    lines_by_id = {}
    midpoint_by_label = {}
    text = path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc.msg}", line=lineno) from exc
        missing = [key for key in ("id", "feature_path", "label", "split") if key not in row]
        if missing:
            raise DataError(f"{path} line {lineno}: missing fields {missing}")
        rec = ManifestRecord(
            id=str(row["id"]),
            feature_path=str(row["feature_path"]),
            label=str(row["label"]),
            split=str(row["split"]),
            midpoint=float(row["midpoint"]) if "midpoint" in row else None,
        )
        if rec.split not in SPLITS:
            raise DataError(f"{path} line {lineno}: unknown split '{rec.split}', expected one of {SPLITS}")
        lines_by_id.setdefault(rec.id, []).append(lineno)
        if rec.midpoint is not None:
            seen = midpoint_by_label.get(rec.label)
            if seen is not None and seen != rec.midpoint:
                raise DataError(
                    f"{path} line {lineno}: label '{rec.label}' has conflicting midpoints {seen} and {rec.midpoint}"
                )
            midpoint_by_label[rec.label] = rec.midpoint
        records.append(rec)

    duplicates = {rid: nums for rid, nums in lines_by_id.items() if len(nums) > 1}
    if duplicates:
        detail = "; ".join(
            f"id '{rid}' on lines {','.join(str(n) for n in nums)}" for rid, nums in sorted(duplicates.items())
        )
        raise DataError(f"{path}: duplicate ids: {detail}")
    if not records:
        raise DataError(f"{path}: manifest is empty")

    label_map = {label: idx for idx, label in enumerate(sorted({r.label for r in records}))}
    return Manifest(records=records, label_map=label_map, root=path.parent)


@dataclass
class SplitData:
    """One split, pooled: a row per utterance."""

    ids: list
    features: np.ndarray  # N x dim, float64
    labels: np.ndarray  # N, int class indices
    label_names: list  # class index -> label string


def load_pooled_split(manifest: Manifest, split: str) -> SplitData:
    """Load one split and mean-pool every sequence into a single row.

    All files read by this call must agree on the feature dimension; the
    first file read sets the expectation.
    """
    records = manifest.split_records(split)
    if not records:
        raise DataError(f"split '{split}' is empty")
    label_names = sorted(manifest.label_map, key=manifest.label_map.get)
    ids, rows, labels = [], [], []
    expected_dim = None
    for rec in records:
        seq = read_feature_file(manifest.root / rec.feature_path, expected_dim)
        if expected_dim is None:
            expected_dim = seq.shape[1]
        ids.append(rec.id)
        rows.append(mean_pool(seq))
        labels.append(manifest.label_map[rec.label])
    return SplitData(ids, np.vstack(rows), np.asarray(labels, dtype=np.int64), label_names)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthSpec:
    """Gaussian class clusters rendered as frame sequences.

    Class means are drawn once, centered, and rescaled so the minimum
    pairwise distance equals `separation`; each utterance is mean plus
    white noise of scale `noise`, with a frame count drawn uniformly from
    `frames_range` (inclusive).
    """

    num_classes: int = 4
    samples_per_class: int = 50
    dim: int = 16
    frames_range: tuple = (5, 15)
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.samples_per_class < 1:
            raise ConfigError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        lo, hi = self.frames_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"frames_range must satisfy 1 <= lo <= hi, got {self.frames_range}")
        if self.separation < 0.0:
            raise ConfigError(f"separation must be >= 0, got {self.separation}")
        if self.noise <= 0.0:
            raise ConfigError(f"noise must be > 0, got {self.noise}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


def _class_means(spec: SynthSpec, rng) -> np.ndarray:
    means = rng.standard_normal((spec.num_classes, spec.dim))
    means -= means.mean(axis=0, keepdims=True)
    gaps = [
        np.linalg.norm(means[i] - means[j])
        for i in range(spec.num_classes)
        for j in range(i + 1, spec.num_classes)
    ]
    smallest = min(gaps)
    if spec.separation == 0.0:
        return np.zeros_like(means)
    if smallest == 0.0:
        raise DataError("degenerate draw: two class means coincided; change the seed")
    return means * (spec.separation / smallest)


def synth_generate(spec: SynthSpec, out_dir) -> Path:
    """Write a complete dataset tree; byte-identical for identical specs.

    Returns the manifest path. Layout: out_dir/manifest.jsonl and
    out_dir/features/<id>.feat. Splits are per class in sample order:
    floor(70%) train, floor(15%) dev, remainder test.
    """
    spec.validate()
    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    means = _class_means(spec, rng)

    n = spec.samples_per_class
    n_train = int(n * TRAIN_FRACTION)
    n_dev = int(n * DEV_FRACTION)
    lo, hi = spec.frames_range
    records = []
    for c in range(spec.num_classes):
        label = f"class_{c:02d}"
        for i in range(n):
            frames = int(rng.integers(lo, hi + 1))
            sample = means[c] + rng.standard_normal((frames, spec.dim)) * spec.noise
            sample_id = f"{label}_s{i:04d}"
            rel_path = f"features/{sample_id}.feat"
            write_feature_file(out_dir / rel_path, sample)
            split = "train" if i < n_train else ("dev" if i < n_train + n_dev else "test")
            records.append(ManifestRecord(id=sample_id, feature_path=rel_path, label=label, split=split))
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(records, manifest_path)
    return manifest_path


# ---------------------------------------------------------------------------
# triplet sampling


@dataclass
class TripletBatch:
    """Index triples into whatever array the labels describe."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self) -> int:
        return len(self.anchors)


def sample_triplets(labels, batch_size: int, seed: int, epoch: int) -> list:
    """One epoch of triplet batches over the labeled samples.

    Every sample whose class has at least two members anchors exactly one
    triple per epoch, in seeded-shuffled order. Positives are drawn
    uniformly from the anchor's class (excluding the anchor), negatives
    uniformly from all other classes. A final partial batch is kept only
    if it holds at least 2 triples.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] < 2:
        raise DataError(f"labels must be a 1-D array with >= 2 entries, got shape {labels.shape}")
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    if seed < 0 or epoch < 1:
        raise ConfigError(f"need seed >= 0 and epoch >= 1, got seed {seed}, epoch {epoch}")

    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ConfigError(f"triplet sampling needs >= 2 classes, found {len(classes)}")
    singletons = [int(c) for c, k in zip(classes, counts) if k < 2]
    if singletons:
        logger.warning("sample_triplets: skipping singleton classes %s (no positive available)", singletons)

    members = {int(c): np.flatnonzero(labels == c) for c in classes}
    others = {int(c): np.flatnonzero(labels != c) for c in classes}
    eligible = np.flatnonzero(np.isin(labels, [c for c, k in zip(classes, counts) if k >= 2]))
    if len(eligible) == 0:
        raise DataError("no eligible anchors: every class is a singleton")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))
    order = eligible[rng.permutation(len(eligible))]
    anchors, positives, negatives = [], [], []
    for a in order:
        cls = int(labels[a])
        same = members[cls]
        pos = int(rng.choice(same[same != a]))
        neg = int(rng.choice(others[cls]))
        anchors.append(int(a))
        positives.append(pos)
        negatives.append(neg)

    batches = []
    for start in range(0, len(anchors), batch_size):
        chunk = slice(start, start + batch_size)
        batch = TripletBatch(
            np.asarray(anchors[chunk], dtype=np.int64),
            np.asarray(positives[chunk], dtype=np.int64),
            np.asarray(negatives[chunk], dtype=np.int64),
        )
        if len(batch) >= 2:
            batches.append(batch)
    return batches
