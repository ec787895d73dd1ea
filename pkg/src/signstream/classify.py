"""Per-stream classifier training with early stopping, inference, and score fusion.

The 3-D CNN itself sits behind the ClassifierBackend seam (real deployments
plug in a pretrained video backbone; tests and the desk-scale fixture use the
tiny torch stand-in from torch_backend). This module owns the training loop
semantics: early stopping on validation loss and best-checkpoint restoration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from .streams import BRIGHTNESS_RANGE, CLIP_FRAMES, CLIP_SIZE, INTENSITY_STREAMS, MAX_AUGMENT_SHIFT, augment


class TrainingDivergedError(RuntimeError):
    """Training hit a NaN loss; carries the epoch for diagnostics."""


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """One stream's per-class probability vector (non-negative, sums to 1)."""

    stream: str
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1:
            raise ValueError(f"probs must be 1-D, got shape {probs.shape}")
        if probs.size == 0 or (probs < 0).any() or not np.isfinite(probs).all():
            raise ValueError("probs must be non-negative and finite")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"probs must sum to 1 within 1e-6, got {probs.sum()!r}")
        object.__setattr__(self, "probs", probs)


@dataclass
class TrainConfig:
    num_classes: int
    batch_size: int = 4
    patience: int = 3
    max_epochs: int = 30
    learning_rate: float = 1e-3
    seed: int = 0
    augment: bool = False
    max_shift: int = MAX_AUGMENT_SHIFT
    brightness_range: tuple[float, float] = BRIGHTNESS_RANGE

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0          # 1-based
    epochs_run: int = 0

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
        }


class ClassifierBackend(Protocol):
    """Adapter contract for the per-stream video classifier.

    `prepare` converts raw clips into whatever input representation the model
    consumes; it is called once per split unless augmentation forces a
    per-epoch rebuild. State getters/setters let the harness keep the
    best-validation checkpoint.
    """

    name: str

    def build(self, num_classes: int, seed: int, learning_rate: float) -> Any: ...

    def prepare(self, model: Any, clips: Sequence[np.ndarray]) -> Any: ...

    def train_epoch(self, model: Any, inputs: Any, labels: np.ndarray, batches: Sequence[np.ndarray]) -> float: ...

    def val_loss(self, model: Any, inputs: Any, labels: np.ndarray, batch_size: int) -> float: ...

    def predict_proba(self, model: Any, inputs: Any, batch_size: int) -> np.ndarray: ...

    def get_state(self, model: Any) -> Any: ...

    def set_state(self, model: Any, state: Any) -> None: ...


def _check_labels(labels: np.ndarray, num_classes: int, split: str) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError(f"{split} split is empty")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(
            f"{split} labels must lie in [0, {num_classes}), "
            f"found range [{labels.min()}, {labels.max()}]"
        )
    return labels


def _augmented(
    clips: Sequence[np.ndarray],
    cfg: TrainConfig,
    stream: str,
    epoch: int,
) -> list[np.ndarray]:
    # One transform draw per sample per epoch, seeded independently of the
    # stream so all streams of a sample see the same geometry.
    intensity = stream in INTENSITY_STREAMS
    out = []
    for i, clip in enumerate(clips):
        rng = np.random.default_rng([cfg.seed, epoch, i, 0xA06])
        dx, dy = rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=2)
        factor = float(rng.uniform(*cfg.brightness_range))
        out.append(
            augment(
                np.asarray(clip, dtype=np.float32),
                (int(dx), int(dy)),
                factor,
                intensity=intensity,
                max_shift=cfg.max_shift,
                brightness_range=cfg.brightness_range,
            )
        )
    return out


def train_stream(
    train_clips: Sequence[np.ndarray],
    train_labels: np.ndarray,
    val_clips: Sequence[np.ndarray],
    val_labels: np.ndarray,
    cfg: TrainConfig,
    backend: ClassifierBackend,
    *,
    stream: str = "rgb",
) -> tuple[Any, TrainHistory]:
    """Fit one stream's classifier with early stopping on validation loss.

    Training stops once validation loss has failed to improve for
    `cfg.patience` consecutive epochs; the returned model is restored to the
    best-validation-loss checkpoint.
    """
    train_labels = _check_labels(train_labels, cfg.num_classes, "train")
    val_labels = _check_labels(val_labels, cfg.num_classes, "val")
    if len(train_clips) != train_labels.size or len(val_clips) != val_labels.size:
        raise ValueError("clip and label counts disagree")

    model = backend.build(cfg.num_classes, cfg.seed, cfg.learning_rate)
    static_train = None if cfg.augment else backend.prepare(model, train_clips)
    val_inputs = backend.prepare(model, val_clips)

    order_rng = np.random.default_rng([cfg.seed, 0x5EED])
    history = TrainHistory()
    best_val = math.inf
    best_state = backend.get_state(model)
    bad_epochs = 0

    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.augment:
            train_inputs = backend.prepare(model, _augmented(train_clips, cfg, stream, epoch))
        else:
            train_inputs = static_train
        perm = order_rng.permutation(train_labels.size)
        batches = [perm[i : i + cfg.batch_size] for i in range(0, perm.size, cfg.batch_size)]

        train_loss = backend.train_epoch(model, train_inputs, train_labels, batches)
        val_loss = backend.val_loss(model, val_inputs, val_labels, cfg.batch_size)
        history.train_loss.append(float(train_loss))
        history.val_loss.append(float(val_loss))
        history.epochs_run = epoch
        if math.isnan(train_loss) or math.isnan(val_loss):
            raise TrainingDivergedError(
                f"NaN loss at epoch {epoch} (train={train_loss}, val={val_loss}); "
                f"history so far: {history.val_loss}"
            )

        if val_loss < best_val:
            best_val = val_loss
            best_state = backend.get_state(model)
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    backend.set_state(model, best_state)
    return model, history


def predict_scores(
    backend: ClassifierBackend,
    model: Any,
    clip: np.ndarray,
    *,
    stream: str,
    batch_size: int = 4,
) -> ScoreVector:
    """Class probabilities for a single clip."""
    clip = np.asarray(clip, dtype=np.float32)
    if clip.ndim != 4 or clip.shape != (CLIP_FRAMES, CLIP_SIZE, CLIP_SIZE, 3):
        raise ValueError(
            f"clip must have shape {(CLIP_FRAMES, CLIP_SIZE, CLIP_SIZE, 3)}, got {clip.shape}"
        )
    probs = backend.predict_proba(model, backend.prepare(model, [clip]), batch_size)[0]
    probs = np.asarray(probs, dtype=np.float64)
    return ScoreVector(stream=stream, probs=probs / probs.sum())


def fuse_scores(
    vectors: Sequence[ScoreVector],
    weights: Sequence[float] | None = None,
    *,
    mode: str = "prob",
) -> tuple[ScoreVector, int]:
    """Score-level fusion: weighted arithmetic mean of the probability vectors.

    With mode="logit" the mean is taken over log-probabilities instead
    (re-normalized through softmax). Ties in the fused argmax break toward
    the smallest class index.
    """
    if not vectors:
        raise ValueError("fuse_scores needs at least one score vector")
    length = vectors[0].probs.size
    for v in vectors:
        if v.probs.size != length:
            raise ValueError(
                f"score vectors disagree in length: {length} vs {v.probs.size} ({v.stream})"
            )
    if weights is None:
        w = np.ones(len(vectors), dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(vectors),):
            raise ValueError(f"need one weight per vector, got {w.shape}")
        if (w < 0).any() or w.sum() <= 0:
            raise ValueError("weights must be non-negative and not all zero")

    stacked = np.stack([v.probs for v in vectors])
    if mode == "prob":
        fused = (w[:, None] * stacked).sum(axis=0) / w.sum()
    elif mode == "logit":
        logs = (w[:, None] * np.log(np.clip(stacked, 1e-12, None))).sum(axis=0) / w.sum()
        logs -= logs.max()
        fused = np.exp(logs)
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    fused = fused / fused.sum()
    return ScoreVector(stream="fused", probs=fused), int(np.argmax(fused))
