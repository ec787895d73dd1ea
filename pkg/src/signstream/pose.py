"""Whole-body pose ingestion: keypoint taxonomy, per-frame tracks, estimator adapters.

Coordinates are image pixels with origin at the top-left corner, x growing
right and y growing down. A keypoint that a backend reports outside the image
is clamped to the frame bounds and kept detected, so downstream point prompts
always lie in-frame.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

GROUP_NAMES = (
    "body_core",
    "face_detail",
    "left_hand_all",
    "right_hand_all",
    "left_hand_first_joints",
    "right_hand_first_joints",
    "face_negatives",
    "body_negatives",
)

_DEFAULT_TAXONOMY_RESOURCE = "taxonomy_116.json"


class TaxonomyError(ValueError):
    """A keypoint taxonomy config violates its structural invariants."""


class PoseTrackParseError(ValueError):
    """A pose track file is malformed; the message names the offending frame."""


@dataclass(frozen=True)
class KeypointTaxonomy:
    """Named index groups over a fixed whole-body keypoint layout.

    The layout itself (which index means which joint) lives in a config file;
    code only relies on group membership, so alternative pose backends can
    ship their own mapping.
    """

    total_count: int
    groups: dict[str, tuple[int, ...]]
    notes: str = ""

    def __post_init__(self) -> None:
        if self.total_count < 1:
            raise TaxonomyError("total_count must be >= 1")
        missing = [g for g in GROUP_NAMES if g not in self.groups]
        if missing:
            raise TaxonomyError(f"missing groups: {', '.join(missing)}")
        norm = {}
        for name, idxs in self.groups.items():
            idxs = tuple(int(i) for i in idxs)
            for i in idxs:
                if not 0 <= i < self.total_count:
                    raise TaxonomyError(
                        f"group {name!r} index {i} outside [0, {self.total_count})"
                    )
            if len(set(idxs)) != len(idxs):
                raise TaxonomyError(f"group {name!r} has duplicate indices")
            norm[name] = idxs
        object.__setattr__(self, "groups", norm)

        hands = set(norm["left_hand_all"]) | set(norm["right_hand_all"])
        for side in ("left", "right"):
            first = norm[f"{side}_hand_first_joints"]
            if len(first) != 5:
                raise TaxonomyError(
                    f"{side}_hand_first_joints must list exactly 5 indices, got {len(first)}"
                )
            if not set(first) <= set(norm[f"{side}_hand_all"]):
                raise TaxonomyError(
                    f"{side}_hand_first_joints must be a subset of {side}_hand_all"
                )
        clash = set(norm["face_negatives"]) & hands
        if clash:
            raise TaxonomyError(f"face_negatives overlap hand indices: {sorted(clash)}")
        body_clash = set(norm["body_core"]) & (set(norm["face_detail"]) | hands)
        if body_clash:
            raise TaxonomyError(
                f"body_core overlaps face/hand detail indices: {sorted(body_clash)}"
            )

    def indices(self, name: str) -> np.ndarray:
        try:
            return np.asarray(self.groups[name], dtype=np.intp)
        except KeyError:
            raise TaxonomyError(f"unknown group {name!r}") from None

    def digest(self) -> str:
        payload = json.dumps(
            {"total_count": self.total_count, "groups": {k: list(v) for k, v in sorted(self.groups.items())}},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {
            "total_count": self.total_count,
            "notes": self.notes,
            "groups": {k: list(v) for k, v in self.groups.items()},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "KeypointTaxonomy":
        try:
            return cls(
                total_count=int(raw["total_count"]),
                groups={k: tuple(v) for k, v in raw["groups"].items()},
                notes=str(raw.get("notes", "")),
            )
        except (KeyError, TypeError) as exc:
            raise TaxonomyError(f"bad taxonomy config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "KeypointTaxonomy":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def default_taxonomy() -> KeypointTaxonomy:
    """The packaged 116-point layout (see the file's notes field for the mapping)."""
    ref = resources.files("signstream.data").joinpath(_DEFAULT_TAXONOMY_RESOURCE)
    return KeypointTaxonomy.from_dict(json.loads(ref.read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class KeypointFrame:
    """One frame's keypoints: (x, y) pixels, confidence, and a detected flag.

    Undetected entries are excluded from every downstream computation; their
    stored coordinates/confidences are meaningless placeholders.
    """

    frame_index: int
    xy: np.ndarray          # (total_count, 2) float64
    confidence: np.ndarray  # (total_count,) float64
    detected: np.ndarray    # (total_count,) bool

    def __post_init__(self) -> None:
        xy = np.asarray(self.xy, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        det = np.asarray(self.detected, dtype=bool)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValueError(f"xy must have shape (n, 2), got {xy.shape}")
        if conf.shape != (xy.shape[0],) or det.shape != (xy.shape[0],):
            raise ValueError("confidence/detected length must match xy")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "detected", det)

    @property
    def num_keypoints(self) -> int:
        return self.xy.shape[0]

    def detected_subset(self, indices: np.ndarray | Sequence[int]) -> np.ndarray:
        """Indices from `indices` whose keypoint is detected, in the given order."""
        idx = np.asarray(indices, dtype=np.intp)
        return idx[self.detected[idx]]

    def validate(self, taxonomy: KeypointTaxonomy) -> None:
        if self.num_keypoints != taxonomy.total_count:
            raise TaxonomyError(
                f"frame {self.frame_index}: {self.num_keypoints} keypoints, "
                f"taxonomy expects {taxonomy.total_count}"
            )
        conf = self.confidence[self.detected]
        if conf.size and (not np.isfinite(conf).all() or conf.min() < 0.0 or conf.max() > 1.0):
            raise ValueError(
                f"frame {self.frame_index}: detected confidences outside [0, 1]"
            )
        if not np.isfinite(self.xy[self.detected]).all():
            raise ValueError(f"frame {self.frame_index}: non-finite coordinates")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KeypointFrame):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.confidence, other.confidence)
            and np.array_equal(self.detected, other.detected)
        )


def undetected_frame(frame_index: int, total_count: int) -> KeypointFrame:
    return KeypointFrame(
        frame_index=frame_index,
        xy=np.zeros((total_count, 2)),
        confidence=np.zeros(total_count),
        detected=np.zeros(total_count, dtype=bool),
    )


@dataclass(frozen=True, eq=False)
class VideoPoseTrack:
    """Per-frame keypoints covering every source frame of one video."""

    video_id: str
    width: int
    height: int
    frames: tuple[KeypointFrame, ...]

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a pose track needs at least one frame")
        for i, kf in enumerate(frames):
            if kf.frame_index != i:
                raise ValueError(
                    f"frame indices must be consecutive from 0; position {i} has "
                    f"frame_index {kf.frame_index}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoPoseTrack):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.width == other.width
            and self.height == other.height
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )


class PoseEstimator(Protocol):
    """Adapter contract for pose backends: one frame in, one KeypointFrame out.

    Implementations may raise on individual frames; the caller keeps the frame
    with every keypoint marked undetected so frame indexing stays aligned with
    the video.
    """

    name: str

    def estimate(self, frame: np.ndarray, frame_index: int) -> KeypointFrame: ...


class ConstantPoseEstimator:
    """Returns the same keypoints for every frame; deterministic test backend."""

    name = "constant"

    def __init__(
        self,
        xy: np.ndarray,
        confidence: np.ndarray | None = None,
        detected: np.ndarray | None = None,
    ) -> None:
        self.xy = np.asarray(xy, dtype=np.float64)
        n = self.xy.shape[0]
        self.confidence = (
            np.full(n, 0.9) if confidence is None else np.asarray(confidence, dtype=np.float64)
        )
        self.detected = (
            np.ones(n, dtype=bool) if detected is None else np.asarray(detected, dtype=bool)
        )

    def estimate(self, frame: np.ndarray, frame_index: int) -> KeypointFrame:
        return KeypointFrame(
            frame_index=frame_index,
            xy=self.xy.copy(),
            confidence=self.confidence.copy(),
            detected=self.detected.copy(),
        )


def estimate_pose(
    frames: Sequence[np.ndarray],
    estimator: PoseEstimator,
    taxonomy: KeypointTaxonomy,
    *,
    video_id: str = "",
) -> VideoPoseTrack:
    """Run the estimator over every frame of one video.

    A backend failure on a frame yields an all-undetected frame rather than
    aborting the video; a keypoint-count mismatch with the taxonomy is a hard
    error. Detected coordinates are clamped to frame bounds and confidences
    clipped into [0, 1].
    """
    n = len(frames)
    if n == 0:
        raise ValueError("video has no frames")
    height, width = np.asarray(frames[0]).shape[:2]

    out = []
    for i in range(n):
        try:
            kf = estimator.estimate(np.asarray(frames[i]), i)
        except Exception:
            out.append(undetected_frame(i, taxonomy.total_count))
            continue
        if kf.num_keypoints != taxonomy.total_count:
            raise TaxonomyError(
                f"{video_id or 'video'} frame {i}: estimator {getattr(estimator, 'name', '?')!r} "
                f"returned {kf.num_keypoints} keypoints, taxonomy expects {taxonomy.total_count}"
            )
        xy = kf.xy.copy()
        xy[:, 0] = np.clip(xy[:, 0], 0.0, width - 1.0)
        xy[:, 1] = np.clip(xy[:, 1], 0.0, height - 1.0)
        kf = KeypointFrame(
            frame_index=i,
            xy=xy,
            confidence=np.clip(kf.confidence, 0.0, 1.0),
            detected=kf.detected,
        )
        kf.validate(taxonomy)
        out.append(kf)
    return VideoPoseTrack(video_id=video_id, width=int(width), height=int(height), frames=tuple(out))


def save_pose_track(track: VideoPoseTrack, path: str | Path) -> None:
    """Write a track as line-delimited JSON: a header record, then one record per frame."""
    lines = [
        json.dumps(
            {
                "video_id": track.video_id,
                "width": track.width,
                "height": track.height,
                "num_keypoints": track.frames[0].num_keypoints,
                "num_frames": len(track),
            },
            sort_keys=True,
        )
    ]
    for kf in track.frames:
        points = [
            [float(x), float(y), float(c), int(d)]
            for (x, y), c, d in zip(kf.xy, kf.confidence, kf.detected)
        ]
        lines.append(json.dumps({"frame_index": kf.frame_index, "points": points}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pose_track(path: str | Path) -> VideoPoseTrack:
    with open(path, "r", encoding="utf-8") as f:
        raw = [line for line in f.read().splitlines() if line.strip()]
    if not raw:
        raise PoseTrackParseError(f"{path}: empty pose track file")
    try:
        header = json.loads(raw[0])
        num_frames = int(header["num_frames"])
        num_keypoints = int(header["num_keypoints"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise PoseTrackParseError(f"{path}: bad header line: {exc}") from exc

    if len(raw) - 1 != num_frames:
        raise PoseTrackParseError(
            f"{path}: header promises {num_frames} frames but file has {len(raw) - 1}; "
            f"first missing frame index {len(raw) - 1}"
        )

    frames = []
    for i, line in enumerate(raw[1:]):
        try:
            rec = json.loads(line)
            points = rec["points"]
            if int(rec["frame_index"]) != i:
                raise ValueError(f"expected frame_index {i}, found {rec['frame_index']}")
            if len(points) != num_keypoints:
                raise ValueError(f"{len(points)} points, expected {num_keypoints}")
            arr = np.asarray(points, dtype=np.float64)
            if arr.shape != (num_keypoints, 4):
                raise ValueError(f"points must be (x, y, confidence, detected) rows")
            frames.append(
                KeypointFrame(
                    frame_index=i,
                    xy=arr[:, :2],
                    confidence=arr[:, 2],
                    detected=arr[:, 3] > 0.5,
                )
            )
        except PoseTrackParseError:
            raise
        except Exception as exc:
            raise PoseTrackParseError(f"{path}: frame {i}: {exc}") from exc
    return VideoPoseTrack(
        video_id=str(header.get("video_id", "")),
        width=int(header.get("width", 0)),
        height=int(header.get("height", 0)),
        frames=tuple(frames),
    )
