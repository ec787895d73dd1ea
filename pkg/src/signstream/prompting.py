"""Point-prompt construction: keypoints on one frame become positive/negative prompts."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pose import KeypointFrame, KeypointTaxonomy

PROMPT_TARGETS = ("body", "left_hand", "right_hand")

Point = tuple[float, float]


@dataclass(frozen=True)
class PromptSet:
    """Positive/negative 2-D point prompts for one segmentation target.

    Every point derives from a detected keypoint; undetected keypoints are
    ignored. An empty positives list marks the set unpromptable and the caller
    decides the fallback.
    """

    target: str
    anchor_frame: int
    positives: tuple[Point, ...]
    negatives: tuple[Point, ...]

    @property
    def unpromptable(self) -> bool:
        return len(self.positives) == 0


def _detected_points(kf: KeypointFrame, indices: np.ndarray) -> tuple[Point, ...]:
    sel = kf.detected_subset(indices)
    return tuple((float(x), float(y)) for x, y in kf.xy[sel])


def _unique(points: tuple[Point, ...]) -> tuple[Point, ...]:
    seen: set[Point] = set()
    out = []
    for p in points:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return tuple(out)


def body_prompts(kf: KeypointFrame, taxonomy: KeypointTaxonomy) -> PromptSet:
    """Body target: every detected coarse-body keypoint is a positive; no negatives."""
    positives = _detected_points(kf, taxonomy.indices("body_core"))
    return PromptSet(
        target="body",
        anchor_frame=kf.frame_index,
        positives=positives,
        negatives=(),
    )


def hand_prompts(kf: KeypointFrame, taxonomy: KeypointTaxonomy, hand: str) -> PromptSet:
    """Hand target: detected first-joint knuckles are positives (at most five);
    detected major-body and face keypoints are negatives.

    A negative that collides with a positive on exact coordinates (possible
    after bound clamping) is dropped; positives carry the target definition.
    """
    if hand not in ("left", "right"):
        raise ValueError(f"hand must be 'left' or 'right', got {hand!r}")
    positives = _detected_points(kf, taxonomy.indices(f"{hand}_hand_first_joints"))
    negatives = _unique(
        _detected_points(kf, taxonomy.indices("body_negatives"))
        + _detected_points(kf, taxonomy.indices("face_negatives"))
    )
    pos_set = set(positives)
    negatives = tuple(p for p in negatives if p not in pos_set)
    return PromptSet(
        target=f"{hand}_hand",
        anchor_frame=kf.frame_index,
        positives=positives,
        negatives=negatives,
    )


def prompts_for_frame(kf: KeypointFrame, taxonomy: KeypointTaxonomy) -> dict[str, PromptSet]:
    """All three targets' prompt sets for one anchor frame."""
    return {
        "body": body_prompts(kf, taxonomy),
        "left_hand": hand_prompts(kf, taxonomy, "left"),
        "right_hand": hand_prompts(kf, taxonomy, "right"),
    }


def save_prompts(prompts: dict[str, PromptSet], path: str | Path, *, video_id: str = "") -> None:
    payload = {
        "video_id": video_id,
        "targets": {
            name: {
                "anchor_frame": ps.anchor_frame,
                "positives": [[x, y] for x, y in ps.positives],
                "negatives": [[x, y] for x, y in ps.negatives],
                "unpromptable": ps.unpromptable,
            }
            for name, ps in prompts.items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_prompts(path: str | Path) -> dict[str, PromptSet]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    out = {}
    for name, rec in raw["targets"].items():
        out[name] = PromptSet(
            target=name,
            anchor_frame=int(rec["anchor_frame"]),
            positives=tuple((float(x), float(y)) for x, y in rec["positives"]),
            negatives=tuple((float(x), float(y)) for x, y in rec["negatives"]),
        )
    return out
