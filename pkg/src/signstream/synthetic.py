"""Deterministic moving-shape fixture: videos, ground-truth masks, and the
color-keyed pose/segmentation backends used for desk-scale end-to-end runs.

A synthetic signer is a flat-colored torso+head with two flat-colored hand
disks; classes are hand trajectory patterns. Because every part has a unique
exact color, ground-truth masks are derivable and the color-region segmenter
tracks parts losslessly, which makes the fixture's expected behavior
computable without any pretrained model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .pose import KeypointFrame, KeypointTaxonomy
from .segmentation import EMPTY_LOGIT

BACKGROUND = (24, 24, 28)
BODY_COLOR = (64, 96, 200)
LEFT_HAND_COLOR = (64, 200, 96)
RIGHT_HAND_COLOR = (216, 72, 64)

NUM_TRAJECTORY_CLASSES = 4

# Fixed vertical layout (only the horizontal center jitters per video).
HEAD_CENTER_Y = 42
HEAD_RADIUS = 18
TORSO_TOP = 60
TORSO_BOTTOM = 150
TORSO_HALF_WIDTH = 26
HAND_RADIUS = 9
HAND_ANCHOR_Y = 104


@dataclass(frozen=True)
class _VideoParams:
    cx: float
    amp: float
    v_amp: float
    cycles: float
    phase: float


def _draw_params(rng: np.random.Generator) -> _VideoParams:
    return _VideoParams(
        cx=80.0 + float(rng.uniform(-4.0, 4.0)),
        amp=float(rng.uniform(14.0, 18.0)),
        v_amp=float(rng.uniform(30.0, 40.0)),
        cycles=float(rng.uniform(1.5, 2.5)),
        phase=float(rng.uniform(0.0, 2.0 * np.pi)),
    )


def _hand_centers(class_id: int, t: float, p: _VideoParams) -> tuple[tuple[float, float], tuple[float, float]]:
    theta = 2.0 * np.pi * p.cycles * t + p.phase
    lx0, rx0 = p.cx - 30.0, p.cx + 30.0
    if class_id == 0:  # antiphase horizontal sweep
        dx = p.amp * np.sin(theta)
        return (lx0 + dx, HAND_ANCHOR_Y), (rx0 - dx, HAND_ANCHOR_Y)
    if class_id == 1:  # synchronous vertical raise
        y = HAND_ANCHOR_Y - p.v_amp * (0.5 + 0.5 * np.sin(theta))
        return (lx0, y), (rx0, y)
    if class_id == 2:  # counter-rotating circles
        return (
            (lx0 + p.amp * np.cos(theta), 100.0 + p.amp * np.sin(theta)),
            (rx0 - p.amp * np.cos(theta), 100.0 - p.amp * np.sin(theta)),
        )
    if class_id == 3:  # static hold near the chest
        return (p.cx - 24.0, 74.0), (p.cx + 24.0, 74.0)
    raise ValueError(f"class_id must be in [0, {NUM_TRAJECTORY_CLASSES}), got {class_id}")


def _disk(size: int, cx: float, cy: float, r: float) -> np.ndarray:
    ys, xs = np.ogrid[0:size, 0:size]
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r


def render_video(
    class_id: int,
    num_frames: int,
    rng: np.random.Generator,
    *,
    size: int = 160,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """One synthetic video plus its ground-truth masks.

    Returns (frames uint8 (T, S, S, 3), masks) where masks has boolean
    (T, S, S) entries for "body" (the whole signer including hands),
    "left_hand" and "right_hand" (visible pixels; the right hand is drawn on
    top of the left, both on top of the torso).
    """
    params = _draw_params(rng)
    frames = np.empty((num_frames, size, size, 3), dtype=np.uint8)
    gt = {
        "body": np.zeros((num_frames, size, size), dtype=bool),
        "left_hand": np.zeros((num_frames, size, size), dtype=bool),
        "right_hand": np.zeros((num_frames, size, size), dtype=bool),
    }
    torso_x0 = int(round(params.cx - TORSO_HALF_WIDTH))
    torso_x1 = int(round(params.cx + TORSO_HALF_WIDTH))

    for i in range(num_frames):
        t = i / num_frames
        (lx, ly), (rx, ry) = _hand_centers(class_id, t, params)
        body_raw = _disk(size, params.cx, HEAD_CENTER_Y, HEAD_RADIUS)
        body_raw[TORSO_TOP:TORSO_BOTTOM, torso_x0:torso_x1] = True
        left_raw = _disk(size, lx, ly, HAND_RADIUS)
        right_raw = _disk(size, rx, ry, HAND_RADIUS)

        left_vis = left_raw & ~right_raw
        body_vis = body_raw & ~left_raw & ~right_raw

        img = np.empty((size, size, 3), dtype=np.uint8)
        img[:] = BACKGROUND
        img[body_vis] = BODY_COLOR
        img[left_vis] = LEFT_HAND_COLOR
        img[right_raw] = RIGHT_HAND_COLOR
        frames[i] = img
        gt["body"][i] = body_raw | left_raw | right_raw
        gt["left_hand"][i] = left_vis
        gt["right_hand"][i] = right_raw
    return frames, gt


def _color_mask(frame: np.ndarray, color: tuple[int, int, int]) -> np.ndarray:
    return (frame == np.asarray(color, dtype=frame.dtype)).all(axis=-1)


class ShapeColorPoseEstimator:
    """Pose backend for the fixture: localizes parts by their exact colors.

    Emits the full default 116-point layout. Knees and ankles stay undetected
    (waist-up framing); a hand that is fully occluded or absent leaves its 21
    points and its wrist undetected. Confidences follow a smooth deterministic
    per-frame pattern so frame scoring has real variation.
    """

    name = "shape-color"

    # role offsets within the coarse body group (nose..ankles, COCO order)
    _UNDETECTED_BODY = (13, 14, 15, 16)  # knees and ankles

    def __init__(self, taxonomy: KeypointTaxonomy) -> None:
        if taxonomy.total_count != 116:
            raise ValueError("the fixture pose backend requires the default 116-point layout")
        self.taxonomy = taxonomy

    def estimate(self, frame: np.ndarray, frame_index: int) -> KeypointFrame:
        frame = np.asarray(frame)
        n = self.taxonomy.total_count
        xy = np.zeros((n, 2), dtype=np.float64)
        detected = np.zeros(n, dtype=bool)

        body_px = _color_mask(frame, BODY_COLOR)
        if not body_px.any():
            return KeypointFrame(frame_index, xy, np.zeros(n), detected)
        ys, xs = np.nonzero(body_px)
        cx = float(xs.mean())

        def put(idx: int, x: float, y: float) -> None:
            xy[idx] = (x, y)
            detected[idx] = True

        # coarse body points
        put(0, cx, HEAD_CENTER_Y)                        # nose
        put(1, cx - 6, HEAD_CENTER_Y - 4)                # eyes
        put(2, cx + 6, HEAD_CENTER_Y - 4)
        put(3, cx - 12, HEAD_CENTER_Y + 2)               # ears
        put(4, cx + 12, HEAD_CENTER_Y + 2)
        put(5, cx - 22, TORSO_TOP + 6)                   # shoulders
        put(6, cx + 22, TORSO_TOP + 6)
        put(7, cx - 22, TORSO_TOP + 32)                  # elbows
        put(8, cx + 22, TORSO_TOP + 32)
        put(11, cx - 18, TORSO_BOTTOM - 6)               # hips
        put(12, cx + 18, TORSO_BOTTOM - 6)

        # face-detail ring inside the head
        face = self.taxonomy.indices("face_detail")
        angles = np.linspace(0.0, 2.0 * np.pi, num=face.size, endpoint=False)
        xy[face, 0] = cx + 12.0 * np.cos(angles)
        xy[face, 1] = HEAD_CENTER_Y + 12.0 * np.sin(angles)
        detected[face] = True

        for side, color, wrist in (("left", LEFT_HAND_COLOR, 9), ("right", RIGHT_HAND_COLOR, 10)):
            hand_px = _color_mask(frame, color)
            if not hand_px.any():
                continue
            hys, hxs = np.nonzero(hand_px)
            hx, hy = float(hxs.mean()), float(hys.mean())
            put(wrist, hx, hy + 4)
            hand = self.taxonomy.indices(f"{side}_hand_all")
            first = set(self.taxonomy.indices(f"{side}_hand_first_joints").tolist())
            spokes = np.linspace(0.0, 2.0 * np.pi, num=hand.size, endpoint=False)
            for k, idx in enumerate(hand):
                radius = 3.0 if int(idx) in first else 5.5
                xy[idx] = (hx + radius * np.cos(spokes[k]), hy + radius * np.sin(spokes[k]))
                detected[idx] = True

        base = np.full(n, 0.9)
        base[self.taxonomy.indices("face_detail")] = 0.85
        base[self.taxonomy.indices("left_hand_all")] = 0.8
        base[self.taxonomy.indices("right_hand_all")] = 0.8
        wobble = 0.08 * np.sin(0.61 * frame_index + 0.13 * np.arange(n))
        confidence = np.clip(base + wobble, 0.0, 1.0)
        return KeypointFrame(frame_index, xy, confidence, detected)


def _encode_colors(pixels: np.ndarray) -> np.ndarray:
    px = pixels.astype(np.int64)
    return (px[..., 0] << 16) | (px[..., 1] << 8) | px[..., 2]


class ColorRegionSegmenter:
    """Segmenter backend for the fixture: tracks the exact colors sampled at
    the anchor frame's positive prompts (minus any colors under negatives).

    Logits are a fixed +/-magnitude step, so the logits stream carries the
    same silhouettes at intermediate gray levels.
    """

    name = "color-region"

    def __init__(self, magnitude: float = 16.0) -> None:
        self.magnitude = float(magnitude)

    def open_session(self, frames: Sequence[np.ndarray]) -> "_ColorSession":
        return _ColorSession(np.asarray(frames), self.magnitude)


class _ColorSession:
    def __init__(self, frames: np.ndarray, magnitude: float) -> None:
        self.frames = frames
        self.magnitude = magnitude
        self.anchor: int | None = None
        self.targets: np.ndarray | None = None

    def _sample(self, frame: np.ndarray, points) -> set[int]:
        h, w = frame.shape[:2]
        colors = set()
        for x, y in points:
            col = int(np.clip(round(x), 0, w - 1))
            row = int(np.clip(round(y), 0, h - 1))
            colors.add(int(_encode_colors(frame[row, col])))
        return colors

    def add_points(self, frame_index, positives, negatives, object_id=1):
        self.anchor = int(frame_index)
        anchor_frame = self.frames[self.anchor]
        pos = self._sample(anchor_frame, positives)
        neg = self._sample(anchor_frame, negatives)
        self.targets = np.asarray(sorted(pos - neg), dtype=np.int64)

    def propagate(self, direction: str) -> Iterator[tuple[int, np.ndarray]]:
        if self.anchor is None or self.targets is None:
            raise RuntimeError("add_points must be called before propagate")
        if direction == "forward":
            indices = range(self.anchor, self.frames.shape[0])
        elif direction == "backward":
            indices = range(self.anchor - 1, -1, -1)
        else:
            raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
        for i in indices:
            encoded = _encode_colors(self.frames[i])
            mask = np.isin(encoded, self.targets)
            logits = np.where(mask, self.magnitude, -self.magnitude).astype(np.float32)
            if self.targets.size == 0:
                logits = np.full(mask.shape, EMPTY_LOGIT, dtype=np.float32)
            yield i, logits
