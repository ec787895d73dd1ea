"""Masklet generation by bidirectional prompt propagation, plus masklet storage.

A promptable video segmenter is driven through the SegmenterAdapter seam: the
pipeline opens a session on the video frames, places the anchor-frame point
prompts once, and propagates forward then backward so every frame is covered
exactly once. Backends must expose raw per-frame logits; mask-only backends
can be wrapped with MaskOnlyAdapter.
"""

from __future__ import annotations

import json
import os
import shutil
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import numpy as np
from PIL import Image

from .prompting import PromptSet

LOGIT_CLAMP = 32.0
EMPTY_LOGIT = -LOGIT_CLAMP


class SegmentationSessionError(RuntimeError):
    """A segmenter session failed; carries the video and target so callers can retry."""

    def __init__(self, message: str, *, video_id: str, target: str) -> None:
        super().__init__(message)
        self.video_id = video_id
        self.target = target


class MaskletFormatError(ValueError):
    """A stored masklet is inconsistent with its manifest or itself."""


@dataclass(eq=False)
class Masklet:
    """Per-frame logit maps for one tracked target across a whole video.

    Binary masks are always the positive side of the logits, so only logits
    are stored; masks are derived.
    """

    target: str
    anchor_frame: int
    logits: np.ndarray  # (num_frames, height, width) float32
    backend: str = "unknown"

    def __post_init__(self) -> None:
        logits = np.asarray(self.logits, dtype=np.float32)
        if logits.ndim != 3:
            raise ValueError(f"logits must be (frames, height, width), got {logits.shape}")
        self.logits = logits

    @property
    def num_frames(self) -> int:
        return self.logits.shape[0]

    @property
    def height(self) -> int:
        return self.logits.shape[1]

    @property
    def width(self) -> int:
        return self.logits.shape[2]

    @property
    def masks(self) -> np.ndarray:
        return self.logits > 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Masklet):
            return NotImplemented
        return (
            self.target == other.target
            and self.anchor_frame == other.anchor_frame
            and np.array_equal(self.logits, other.logits)
        )


def empty_masklet(
    target: str,
    num_frames: int,
    height: int,
    width: int,
    *,
    anchor_frame: int = 0,
    backend: str = "empty",
) -> Masklet:
    return Masklet(
        target=target,
        anchor_frame=anchor_frame,
        logits=np.full((num_frames, height, width), EMPTY_LOGIT, dtype=np.float32),
        backend=backend,
    )


class SegmenterSession(Protocol):
    """One tracked object in one video.

    propagate("forward") must yield (frame_index, logits) for the anchor frame
    through the last frame in ascending order; propagate("backward") yields
    anchor-1 down to frame 0, so the anchor is emitted exactly once overall.
    """

    def add_points(
        self,
        frame_index: int,
        positives: Sequence[tuple[float, float]],
        negatives: Sequence[tuple[float, float]],
        object_id: int = 1,
    ) -> None: ...

    def propagate(self, direction: str) -> Iterator[tuple[int, np.ndarray]]: ...


class SegmenterAdapter(Protocol):
    name: str

    def open_session(self, frames: Sequence[np.ndarray]) -> SegmenterSession: ...


class DiskPromptSegmenter:
    """Deterministic mock backend: each positive prompt seeds a disk.

    Per-pixel logits are radius minus the distance to the nearest positive
    point, identical on every frame, so the anchor mask always contains the
    positive prompts and propagation is trivially consistent.
    """

    name = "disk"

    def __init__(self, radius: float = 20.0) -> None:
        self.radius = float(radius)

    def open_session(self, frames: Sequence[np.ndarray]) -> "_DiskSession":
        height, width = np.asarray(frames[0]).shape[:2]
        return _DiskSession(len(frames), height, width, self.radius)


class _DiskSession:
    def __init__(self, num_frames: int, height: int, width: int, radius: float) -> None:
        self.num_frames = num_frames
        self.height = height
        self.width = width
        self.radius = radius
        self.anchor: int | None = None
        self.positives: list[tuple[float, float]] = []

    def add_points(self, frame_index, positives, negatives, object_id=1):
        self.anchor = int(frame_index)
        self.positives = [(float(x), float(y)) for x, y in positives]

    def _field(self) -> np.ndarray:
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        logits = np.full((self.height, self.width), EMPTY_LOGIT, dtype=np.float32)
        for x, y in self.positives:
            dist = np.sqrt((xs - x) ** 2 + (ys - y) ** 2)
            logits = np.maximum(logits, (self.radius - dist).astype(np.float32))
        return logits

    def propagate(self, direction: str) -> Iterator[tuple[int, np.ndarray]]:
        if self.anchor is None:
            raise RuntimeError("add_points must be called before propagate")
        field = self._field()
        if direction == "forward":
            indices = range(self.anchor, self.num_frames)
        elif direction == "backward":
            indices = range(self.anchor - 1, -1, -1)
        else:
            raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
        for i in indices:
            yield i, field.copy()


class MaskOnlyAdapter:
    """Wraps a backend whose sessions yield binary masks instead of logits.

    Masks become logits at the clamp endpoints (+/-32), which keeps the
    logits-stream contract intact for backends without confidence maps.
    """

    def __init__(self, inner: SegmenterAdapter, magnitude: float = LOGIT_CLAMP) -> None:
        self.inner = inner
        self.magnitude = float(magnitude)
        self.name = f"{getattr(inner, 'name', 'mask-only')}+logits"

    def open_session(self, frames: Sequence[np.ndarray]) -> "_MaskOnlySession":
        return _MaskOnlySession(self.inner.open_session(frames), self.magnitude)


class _MaskOnlySession:
    def __init__(self, inner, magnitude: float) -> None:
        self.inner = inner
        self.magnitude = magnitude

    def add_points(self, frame_index, positives, negatives, object_id=1):
        self.inner.add_points(frame_index, positives, negatives, object_id)

    def propagate(self, direction: str) -> Iterator[tuple[int, np.ndarray]]:
        for index, mask in self.inner.propagate(direction):
            mask = np.asarray(mask)
            yield index, np.where(mask > 0, self.magnitude, -self.magnitude).astype(np.float32)


def segment_video(
    frames: Sequence[np.ndarray],
    prompts: PromptSet,
    adapter: SegmenterAdapter,
    *,
    video_id: str = "",
) -> Masklet:
    """Propagate one target's prompts bidirectionally from its anchor frame.

    Unpromptable prompt sets degrade to an all-empty masklet (every logit at
    the negative clamp) with a warning. Adapter failures raise a retriable
    SegmentationSessionError carrying the video id and target.
    """
    num_frames = len(frames)
    height, width = np.asarray(frames[0]).shape[:2]
    backend = getattr(adapter, "name", "unknown")

    if prompts.unpromptable:
        warnings.warn(
            f"{video_id or 'video'}: target {prompts.target!r} has no positive prompts; "
            f"emitting an empty masklet",
            stacklevel=2,
        )
        return empty_masklet(
            prompts.target, num_frames, height, width,
            anchor_frame=prompts.anchor_frame, backend=backend,
        )
    if not 0 <= prompts.anchor_frame < num_frames:
        raise ValueError(
            f"anchor frame {prompts.anchor_frame} outside video of {num_frames} frames"
        )

    logits = np.empty((num_frames, height, width), dtype=np.float32)
    seen = np.zeros(num_frames, dtype=np.int64)
    try:
        session = adapter.open_session(frames)
        session.add_points(prompts.anchor_frame, prompts.positives, prompts.negatives)
        for direction in ("forward", "backward"):
            for index, frame_logits in session.propagate(direction):
                frame_logits = np.asarray(frame_logits, dtype=np.float32)
                if frame_logits.shape != (height, width):
                    raise ValueError(
                        f"backend emitted logits of shape {frame_logits.shape}, "
                        f"expected {(height, width)}"
                    )
                seen[index] += 1
                logits[index] = frame_logits
    except Exception as exc:
        raise SegmentationSessionError(
            f"segmenter session failed for {video_id or 'video'} target {prompts.target!r}: {exc}",
            video_id=video_id,
            target=prompts.target,
        ) from exc

    if not (seen == 1).all():
        missing = np.flatnonzero(seen == 0).tolist()
        dupes = np.flatnonzero(seen > 1).tolist()
        raise SegmentationSessionError(
            f"bidirectional coverage violated for {video_id or 'video'} target "
            f"{prompts.target!r}: missing frames {missing}, duplicated frames {dupes}",
            video_id=video_id,
            target=prompts.target,
        )
    return Masklet(
        target=prompts.target,
        anchor_frame=prompts.anchor_frame,
        logits=logits,
        backend=backend,
    )


def _quantize_logits(logits: np.ndarray, clamp: float) -> np.ndarray:
    clipped = np.clip(logits, -clamp, clamp)
    codes = np.round(clipped / clamp * 32767.0).astype(np.int16)
    # Tiny positive logits can round to code 0; snap them up one code so
    # mask == (logits > 0) survives the round trip (error stays < 1e-3).
    return np.where(logits > 0, np.maximum(codes, np.int16(1)), np.minimum(codes, np.int16(0)))


def _dequantize_logits(codes: np.ndarray, clamp: float) -> np.ndarray:
    return (codes.astype(np.float32) / 32767.0) * np.float32(clamp)


def save_masklet(masklet: Masklet, directory: str | Path, *, clamp: float = LOGIT_CLAMP) -> None:
    """Write a masklet directory: manifest, 1-bit PNG masks, quantized logits.

    Logits are clamped to [-clamp, clamp] and stored as int16 fixed-point
    (absolute round-trip error < 1e-3). The write is atomic: a temp directory
    is built and swapped into place.
    """
    directory = Path(directory)
    tmp = directory.with_name(f".{directory.name}.tmp{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "masks").mkdir(parents=True)

    masks = masklet.masks
    for i in range(masklet.num_frames):
        img = Image.fromarray((masks[i] * np.uint8(255)), mode="L").convert("1")
        img.save(tmp / "masks" / f"frame_{i:05d}.png", optimize=True)

    codes = _quantize_logits(masklet.logits, clamp)
    np.savez_compressed(
        tmp / "logits.npz",
        **{f"frame_{i:05d}": codes[i] for i in range(masklet.num_frames)},
    )
    manifest = {
        "target": masklet.target,
        "anchor_frame": masklet.anchor_frame,
        "height": masklet.height,
        "width": masklet.width,
        "num_frames": masklet.num_frames,
        "backend": masklet.backend,
        "logit_clamp": clamp,
        "logit_encoding": "int16 fixed-point over [-logit_clamp, logit_clamp]",
    }
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    if directory.exists():
        shutil.rmtree(directory)
    os.replace(tmp, directory)


def load_masklet(directory: str | Path) -> Masklet:
    """Read a masklet directory, verifying dimensions and mask/logit consistency."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise MaskletFormatError(f"{directory}: missing manifest.json") from None
    height = int(manifest["height"])
    width = int(manifest["width"])
    num_frames = int(manifest["num_frames"])
    clamp = float(manifest.get("logit_clamp", LOGIT_CLAMP))

    with np.load(directory / "logits.npz") as store:
        logits = np.empty((num_frames, height, width), dtype=np.float32)
        for i in range(num_frames):
            key = f"frame_{i:05d}"
            if key not in store:
                raise MaskletFormatError(f"{directory}: logits missing frame {i}")
            frame = store[key]
            if frame.shape != (height, width):
                raise MaskletFormatError(
                    f"{directory}: frame {i} logits shape {frame.shape} does not match "
                    f"manifest {(height, width)}"
                )
            logits[i] = _dequantize_logits(frame, clamp)

    for i in range(num_frames):
        path = directory / "masks" / f"frame_{i:05d}.png"
        if not path.exists():
            raise MaskletFormatError(f"{directory}: missing mask image for frame {i}")
        mask = np.array(Image.open(path).convert("1"), dtype=bool)
        if mask.shape != (height, width):
            raise MaskletFormatError(
                f"{directory}: frame {i} mask shape {mask.shape} does not match "
                f"manifest {(height, width)}"
            )
        if not np.array_equal(mask, logits[i] > 0):
            raise MaskletFormatError(
                f"{directory}: frame {i} mask disagrees with logits sign"
            )

    return Masklet(
        target=str(manifest["target"]),
        anchor_frame=int(manifest["anchor_frame"]),
        logits=logits,
        backend=str(manifest.get("backend", "unknown")),
    )
