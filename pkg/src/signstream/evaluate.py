"""Accuracy metrics, the median-of-five protocol, and the ablation table."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .config import ConfigError

# Cumulative ablation rows over the six streams: the base system is flow + RGB,
# then the segmentation streams are added in their published order.
ABLATION_ROWS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("Base", ("flow", "rgb")),
    ("+ Body_RGB", ("flow", "rgb", "body_rgb")),
    ("+ Body_RGB + Body_Logits", ("flow", "rgb", "body_rgb", "body_logits")),
    (
        "+ Body_RGB + Body_Logits + Hands_RGB + Hands_Logits",
        ("flow", "rgb", "body_rgb", "body_logits", "hands_rgb", "hands_logits"),
    ),
)


class MissingModelError(ValueError):
    """An ablation subset needs stream scores that were never produced."""

    def __init__(self, row: str, missing: Sequence[str]) -> None:
        self.row = row
        self.missing = tuple(missing)
        super().__init__(
            f"ablation row {row!r} needs scores for streams {list(self.missing)}; "
            f"train and eval those streams first"
        )


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of exact matches."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError(
            f"preds and labels must be equal-length non-empty 1-D arrays, "
            f"got {preds.shape} vs {labels.shape}"
        )
    return float((preds == labels).mean())


def per_class_accuracy(preds: Sequence[int], labels: Sequence[int]) -> dict[int, float]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    out = {}
    for cls in np.unique(labels):
        sel = labels == cls
        out[int(cls)] = float((preds[sel] == labels[sel]).mean())
    return out


@dataclass(frozen=True)
class RunSummary:
    """One training run in the five-run protocol."""

    seed: int
    val_accuracy: float
    payload: object = None


@dataclass(frozen=True)
class MedianReport:
    selected: RunSummary
    mean: float
    std: float  # population standard deviation over the five runs


def median_of_five(runs: Sequence[RunSummary]) -> MedianReport:
    """Pick the run with rank-3 validation accuracy out of exactly five.

    Ties on the median value resolve to the run with the smallest seed, which
    also makes the selection invariant to the order runs are passed in. The
    report carries the mean and population standard deviation of all five.
    """
    if len(runs) != 5:
        raise ConfigError(f"the median protocol needs exactly 5 runs, got {len(runs)}")
    accs = np.asarray([r.val_accuracy for r in runs], dtype=np.float64)
    median_value = float(np.sort(accs)[2])
    candidates = [r for r in runs if r.val_accuracy == median_value]
    selected = min(candidates, key=lambda r: r.seed)
    return MedianReport(selected=selected, mean=float(accs.mean()), std=float(accs.std()))


@dataclass(frozen=True)
class AblationRow:
    label: str
    streams: tuple[str, ...]
    fused_accuracy: float


def fuse_probs(
    stream_probs: Mapping[str, np.ndarray],
    streams: Sequence[str],
    *,
    weights: Mapping[str, float] | None = None,
    mode: str = "prob",
) -> np.ndarray:
    """Fused (num_samples, num_classes) probabilities over a stream subset."""
    stacked = np.stack([np.asarray(stream_probs[s], dtype=np.float64) for s in streams])
    w = np.asarray([1.0 if weights is None else weights[s] for s in streams], dtype=np.float64)
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("weights must be non-negative and not all zero")
    if mode == "prob":
        fused = (w[:, None, None] * stacked).sum(axis=0) / w.sum()
    elif mode == "logit":
        logs = (w[:, None, None] * np.log(np.clip(stacked, 1e-12, None))).sum(axis=0) / w.sum()
        fused = np.exp(logs - logs.max(axis=1, keepdims=True))
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    return fused / fused.sum(axis=1, keepdims=True)


def ablation_table(
    stream_probs: Mapping[str, np.ndarray],
    labels: Sequence[int],
    *,
    weights: Mapping[str, float] | None = None,
    mode: str = "prob",
    rows: Sequence[tuple[str, tuple[str, ...]]] = ABLATION_ROWS,
) -> list[AblationRow]:
    """Fused accuracy per cumulative stream subset, in the published row order.

    Accuracies are reported, not ordered: a fixture need not reproduce the
    published monotone improvement.
    """
    labels = np.asarray(labels)
    out = []
    for label_text, streams in rows:
        missing = [s for s in streams if s not in stream_probs]
        if missing:
            raise MissingModelError(label_text, missing)
        fused = fuse_probs(stream_probs, streams, weights=weights, mode=mode)
        preds = np.argmax(fused, axis=1)
        out.append(AblationRow(label_text, tuple(streams), accuracy(preds, labels)))
    return out


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    width = max(len(r.label) for r in rows) + 2
    lines = [f"{'Input Streams':<{width}}Fused Acc"]
    for r in rows:
        lines.append(f"{r.label:<{width}}{r.fused_accuracy:.4f}")
    return "\n".join(lines)


@dataclass
class EvalReport:
    split: str
    seed: int
    config_digest: str
    num_videos: int
    streams: tuple[str, ...]
    fusion_mode: str
    fusion_weights: tuple[float, ...] | None
    per_stream_accuracy: dict[str, float] = field(default_factory=dict)
    fused_accuracy: float = 0.0
    per_class_accuracy: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "split": self.split,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "num_videos": self.num_videos,
            "streams": list(self.streams),
            "fusion_mode": self.fusion_mode,
            "fusion_weights": list(self.fusion_weights) if self.fusion_weights else None,
            "per_stream_accuracy": {k: round(v, 4) for k, v in self.per_stream_accuracy.items()},
            "fused_accuracy": round(self.fused_accuracy, 4),
            "per_class_accuracy": {k: round(v, 4) for k, v in self.per_class_accuracy.items()},
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def load_reference_baselines() -> dict:
    """Published ChaLearn249 IsoGD reference numbers, for side-by-side display only."""
    ref = resources.files("signstream.data").joinpath("chalearn249_baselines.json")
    return json.loads(ref.read_text(encoding="utf-8"))
