"""Fixed-shape classification inputs: the six per-video stream clips.

Every stream yields a 40x224x224x3 float clip with values in [0, 1]:
optical flow, plain RGB, body-masked RGB, body logits, hands-masked RGB and
hands logits. Masking happens after temporal sampling and center cropping so
mask/pixel alignment stays exact; masklets are kept at source resolution and
cropped with the same geometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .segmentation import LOGIT_CLAMP, Masklet

STREAM_NAMES = ("flow", "rgb", "body_rgb", "body_logits", "hands_rgb", "hands_logits")

CLIP_FRAMES = 40
CLIP_SIZE = 224

MAX_AUGMENT_SHIFT = 16
BRIGHTNESS_RANGE = (0.8, 1.2)

# Streams whose channel values are intensities; brightness augmentation only
# ever touches these. Logits and flow clips receive geometric shifts only.
INTENSITY_STREAMS = ("rgb", "body_rgb", "hands_rgb")


@dataclass(frozen=True, eq=False)
class StreamClip:
    stream: str
    frames: np.ndarray  # (CLIP_FRAMES, CLIP_SIZE, CLIP_SIZE, 3) float32 in [0, 1]

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        object.__setattr__(self, "frames", frames)


def sample_indices(video_len: int, num_samples: int = CLIP_FRAMES) -> np.ndarray:
    """Uniform temporal sampling: index_i = floor(i * video_len / num_samples)."""
    if video_len < 1:
        raise ValueError(f"video_len must be >= 1, got {video_len}")
    return np.floor(np.arange(num_samples) * video_len / num_samples).astype(np.intp)


def center_crop(frame: np.ndarray, size: int = CLIP_SIZE, *, fill: float = 0.0) -> np.ndarray:
    """Centered size x size crop; inputs smaller than `size` are padded first.

    Padding is symmetric (extra pixel goes to the bottom/right) and uses
    `fill`, which lets logit planes pad with the negative clamp instead of 0.
    """
    arr = np.asarray(frame)
    out = arr
    for axis in (0, 1):
        n = out.shape[axis]
        if n < size:
            before = (size - n) // 2
            after = size - n - before
            pad = [(0, 0)] * out.ndim
            pad[axis] = (before, after)
            out = np.pad(out, pad, mode="constant", constant_values=fill)
        elif n > size:
            start = (n - size) // 2
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(start, start + size)
            out = out[tuple(sl)]
    return out


def mask_rgb(frames: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Zero out every pixel outside the mask, per frame and channel."""
    frames = np.asarray(frames, dtype=np.float32)
    masks = np.asarray(masks, dtype=bool)
    if frames.shape[:3] != masks.shape:
        raise ValueError(f"frames {frames.shape} and masks {masks.shape} do not align")
    return frames * masks[..., None]


def logits_clip(logits: np.ndarray, *, clamp: float = LOGIT_CLAMP) -> np.ndarray:
    """Affine map of clamped logits into [0, 1], replicated to 3 channels."""
    logits = np.asarray(logits, dtype=np.float32)
    values = (np.clip(logits, -clamp, clamp) + clamp) / (2.0 * clamp)
    return np.repeat(values[..., None], 3, axis=-1).astype(np.float32)


def merge_hands(left: Masklet, right: Masklet) -> Masklet:
    """Union of the two hand targets: elementwise max of logits.

    The max keeps each hand's own confidence and makes the merged mask the
    union of the per-hand masks; an all-empty masklet is the identity.
    """
    if left.logits.shape != right.logits.shape:
        raise ValueError(
            f"hand masklets disagree in shape: {left.logits.shape} vs {right.logits.shape}"
        )
    return Masklet(
        target="hands",
        anchor_frame=left.anchor_frame,
        logits=np.maximum(left.logits, right.logits),
        backend=left.backend if left.backend == right.backend else f"{left.backend}+{right.backend}",
    )


class FlowAdapter(Protocol):
    """Dense optical flow between two consecutive RGB frames, in pixels."""

    name: str

    def flow(self, prev_frame: np.ndarray, next_frame: np.ndarray) -> np.ndarray: ...


class ZeroFlow:
    name = "zero"

    def flow(self, prev_frame, next_frame):
        h, w = np.asarray(prev_frame).shape[:2]
        return np.zeros((h, w, 2), dtype=np.float32)


class TranslationFlow:
    """Synthetic backend reporting a constant (dx, dy) field; test oracle."""

    name = "translation"

    def __init__(self, dx: float, dy: float) -> None:
        self.dx = float(dx)
        self.dy = float(dy)

    def flow(self, prev_frame, next_frame):
        h, w = np.asarray(prev_frame).shape[:2]
        out = np.empty((h, w, 2), dtype=np.float32)
        out[..., 0] = self.dx
        out[..., 1] = self.dy
        return out


class FarnebackFlow:
    """Dense flow via OpenCV Farneback (single-threaded for reproducibility)."""

    name = "farneback"

    def __init__(self) -> None:
        import cv2

        cv2.setNumThreads(1)
        self._cv2 = cv2

    def flow(self, prev_frame, next_frame):
        cv2 = self._cv2
        prev_gray = self._to_gray(prev_frame)
        next_gray = self._to_gray(next_frame)
        return cv2.calcOpticalFlowFarneback(
            prev_gray, next_gray, None,
            pyr_scale=0.5, levels=3, winsize=15,
            iterations=3, poly_n=5, poly_sigma=1.2, flags=0,
        ).astype(np.float32)

    @staticmethod
    def _to_gray(frame: np.ndarray) -> np.ndarray:
        arr = np.asarray(frame, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr.mean(axis=2)
        if arr.max() <= 1.0:
            arr = arr * 255.0
        return arr.astype(np.uint8)


def compute_flow(
    frames: np.ndarray,
    adapter: FlowAdapter,
    *,
    flow_max: float = 20.0,
) -> np.ndarray:
    """Per-frame flow channels: x and y displacement in [0, 1] around 0.5,
    plus normalized flow magnitude. Frame 0 duplicates frame 1's flow.

    Adapter failures are hard errors for the video.
    """
    frames = np.asarray(frames)
    n = frames.shape[0]
    if n < 2:
        raise ValueError("optical flow needs at least 2 frames")
    h, w = frames.shape[1:3]
    out = np.empty((n, h, w, 3), dtype=np.float32)
    for i in range(1, n):
        uv = np.asarray(adapter.flow(frames[i - 1], frames[i]), dtype=np.float32)
        if uv.shape != (h, w, 2):
            raise ValueError(f"flow backend returned shape {uv.shape}, expected {(h, w, 2)}")
        out[i, ..., 0] = np.clip(0.5 + uv[..., 0] / (2.0 * flow_max), 0.0, 1.0)
        out[i, ..., 1] = np.clip(0.5 + uv[..., 1] / (2.0 * flow_max), 0.0, 1.0)
        out[i, ..., 2] = np.clip(np.hypot(uv[..., 0], uv[..., 1]) / flow_max, 0.0, 1.0)
    out[0] = out[1]
    return out


def augment(
    frames: np.ndarray,
    shift: tuple[int, int],
    brightness: float,
    *,
    intensity: bool = True,
    max_shift: int = MAX_AUGMENT_SHIFT,
    brightness_range: tuple[float, float] = BRIGHTNESS_RANGE,
) -> np.ndarray:
    """Shift a clip with zero fill and optionally scale brightness (clamped to [0, 1]).

    The same transform applies to all frames of the clip. Logits and flow
    clips must pass intensity=False so they only receive the shift.
    """
    dx, dy = int(shift[0]), int(shift[1])
    if abs(dx) > max_shift or abs(dy) > max_shift:
        raise ValueError(f"shift {shift} exceeds +/-{max_shift} px")
    lo, hi = brightness_range
    if not lo <= brightness <= hi:
        raise ValueError(f"brightness {brightness} outside [{lo}, {hi}]")

    frames = np.asarray(frames, dtype=np.float32)
    out = frames
    if dx or dy:
        out = np.zeros_like(frames)
        h, w = frames.shape[1:3]
        src_x = slice(max(0, -dx), min(w, w - dx))
        dst_x = slice(max(0, dx), min(w, w + dx))
        src_y = slice(max(0, -dy), min(h, h - dy))
        dst_y = slice(max(0, dy), min(h, h + dy))
        out[:, dst_y, dst_x] = frames[:, src_y, src_x]
    if intensity and brightness != 1.0:
        out = np.clip(out * brightness, 0.0, 1.0)
    return out


def maybe_augment(
    frames: np.ndarray,
    *,
    mode: str,
    shift: tuple[int, int],
    brightness: float,
    intensity: bool,
) -> np.ndarray:
    """Augmentation gate: the identity in every mode except training."""
    if mode != "train":
        return frames
    return augment(frames, shift, brightness, intensity=intensity)


def build_stream_clips(
    video_frames: np.ndarray,
    body: Masklet,
    hands: Masklet,
    flow_adapter: FlowAdapter,
    *,
    streams: Sequence[str] = STREAM_NAMES,
    num_frames: int = CLIP_FRAMES,
    crop_size: int = CLIP_SIZE,
    logit_clamp: float = LOGIT_CLAMP,
    flow_max: float = 20.0,
) -> dict[str, StreamClip]:
    """Build the requested stream clips for one video.

    `video_frames` is (T, H, W, 3) uint8; masklets must match T, H, W.
    """
    video_frames = np.asarray(video_frames)
    unknown = set(streams) - set(STREAM_NAMES)
    if unknown:
        raise ValueError(f"unknown streams: {sorted(unknown)}")
    t = video_frames.shape[0]
    for m, name in ((body, "body"), (hands, "hands")):
        if m.logits.shape != (t, *video_frames.shape[1:3]):
            raise ValueError(
                f"{name} masklet shape {m.logits.shape} does not match video "
                f"{video_frames.shape[:3]}"
            )

    idx = sample_indices(t, num_frames)
    rgb = np.stack(
        [center_crop(video_frames[i].astype(np.float32) / 255.0, crop_size) for i in idx]
    )

    out: dict[str, StreamClip] = {}
    if "rgb" in streams:
        out["rgb"] = StreamClip("rgb", rgb)
    if "flow" in streams:
        out["flow"] = StreamClip("flow", compute_flow(rgb, flow_adapter, flow_max=flow_max))

    def cropped_logits(masklet: Masklet) -> np.ndarray:
        return np.stack(
            [center_crop(masklet.logits[i], crop_size, fill=-logit_clamp) for i in idx]
        )

    if "body_rgb" in streams or "body_logits" in streams:
        body_logits = cropped_logits(body)
        if "body_rgb" in streams:
            out["body_rgb"] = StreamClip("body_rgb", mask_rgb(rgb, body_logits > 0))
        if "body_logits" in streams:
            out["body_logits"] = StreamClip("body_logits", logits_clip(body_logits, clamp=logit_clamp))
    if "hands_rgb" in streams or "hands_logits" in streams:
        hands_logits = cropped_logits(hands)
        if "hands_rgb" in streams:
            out["hands_rgb"] = StreamClip("hands_rgb", mask_rgb(rgb, hands_logits > 0))
        if "hands_logits" in streams:
            out["hands_logits"] = StreamClip("hands_logits", logits_clip(hands_logits, clamp=logit_clamp))
    return out
