"""Per-frame quality scoring and selection of the segmentation anchor frame.

Each frame gets three scores: mean confidence over detected keypoints, area of
the bounding box around all detected keypoints (how sprawled the signer is),
and the worst hand/face bounding-box overlap. Confidence and area are
normalized by their per-video maximum, overlap is already a ratio; the frame
maximizing conf_norm * area_norm * (1 - overlap) wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pose import KeypointFrame, KeypointTaxonomy, VideoPoseTrack


@dataclass(frozen=True)
class FrameScore:
    frame_index: int
    avg_conf: float
    bbox_area: float
    overlap: float
    combined: float


def avg_confidence(kf: KeypointFrame) -> float:
    """Mean confidence over detected keypoints; 0 if none are detected."""
    det = kf.detected
    if not det.any():
        return 0.0
    return float(kf.confidence[det].mean())


def keypoint_bbox_area(kf: KeypointFrame, indices: np.ndarray) -> float:
    """Axis-aligned bounding-box area over the detected keypoints in `indices`.

    Fewer than two distinct detected points give area 0.
    """
    sel = kf.detected_subset(indices)
    if sel.size < 2:
        return 0.0
    pts = kf.xy[sel]
    return float((pts[:, 0].max() - pts[:, 0].min()) * (pts[:, 1].max() - pts[:, 1].min()))


def _bbox(kf: KeypointFrame, indices: np.ndarray) -> tuple[float, float, float, float] | None:
    sel = kf.detected_subset(indices)
    if sel.size == 0:
        return None
    pts = kf.xy[sel]
    return (
        float(pts[:, 0].min()),
        float(pts[:, 1].min()),
        float(pts[:, 0].max()),
        float(pts[:, 1].max()),
    )


def _box_area(box: tuple[float, float, float, float]) -> float:
    x0, y0, x1, y1 = box
    return max(0.0, x1 - x0) * max(0.0, y1 - y0)


def face_hand_overlap(kf: KeypointFrame, taxonomy: KeypointTaxonomy) -> float:
    """Worst overlap between a hand's bounding box and the face bounding box.

    Overlap of two boxes is intersection area over the smaller box's area, so
    a hand fully in front of the face scores exactly 1. Any degenerate box
    makes that hand contribute 0. Result is clamped to [0, 1].
    """
    face = _bbox(kf, taxonomy.indices("face_detail"))
    if face is None or _box_area(face) == 0.0:
        return 0.0
    face_area = _box_area(face)

    worst = 0.0
    for side in ("left", "right"):
        hand = _bbox(kf, taxonomy.indices(f"{side}_hand_all"))
        if hand is None:
            continue
        hand_area = _box_area(hand)
        if hand_area == 0.0:
            continue
        ix0 = max(face[0], hand[0])
        iy0 = max(face[1], hand[1])
        ix1 = min(face[2], hand[2])
        iy1 = min(face[3], hand[3])
        inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
        worst = max(worst, inter / min(face_area, hand_area))
    return float(min(1.0, max(0.0, worst)))


def score_frames(track: VideoPoseTrack, taxonomy: KeypointTaxonomy) -> list[FrameScore]:
    """All frames' component and combined scores; 0/0 normalizations yield 0."""
    all_indices = np.arange(taxonomy.total_count)
    confs = [avg_confidence(kf) for kf in track.frames]
    areas = [keypoint_bbox_area(kf, all_indices) for kf in track.frames]
    overlaps = [face_hand_overlap(kf, taxonomy) for kf in track.frames]

    max_conf = max(confs)
    max_area = max(areas)
    out = []
    for kf, c, a, ov in zip(track.frames, confs, areas, overlaps):
        c_norm = c / max_conf if max_conf > 0.0 else 0.0
        a_norm = a / max_area if max_area > 0.0 else 0.0
        out.append(
            FrameScore(
                frame_index=kf.frame_index,
                avg_conf=c,
                bbox_area=a,
                overlap=ov,
                combined=c_norm * a_norm * (1.0 - ov),
            )
        )
    return out


def select_best_frame(track: VideoPoseTrack, taxonomy: KeypointTaxonomy) -> int:
    """Index of the frame with the highest combined score.

    Ties break toward the smallest frame index; an all-zero track falls back
    to frame 0 so the pipeline never aborts.
    """
    best_index = 0
    best_score = -1.0
    for score in score_frames(track, taxonomy):
        if score.combined > best_score:
            best_score = score.combined
            best_index = score.frame_index
    return best_index


def format_score_table(video_id: str, scores: list[FrameScore], selected: int) -> str:
    """Audit table for the select-frame CLI stage."""
    lines = [
        f"video {video_id}: selected frame {selected}",
        f"{'frame':>5}  {'avg_conf':>9}  {'bbox_area':>12}  {'overlap':>8}  {'combined':>9}",
    ]
    for s in scores:
        marker = " *" if s.frame_index == selected else ""
        lines.append(
            f"{s.frame_index:>5}  {s.avg_conf:>9.4f}  {s.bbox_area:>12.1f}  "
            f"{s.overlap:>8.4f}  {s.combined:>9.4f}{marker}"
        )
    return "\n".join(lines)
