"""Dataset manifests (IsoGD-style split list files) and the synthetic fixture writer.

Split files follow the list-file convention: one
``<rgb_path> <depth_path> [label]`` line per sample. The depth column is
parsed and discarded (depth-based processing is out of scope); labels are
0-based and required everywhere except the test split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .synthetic import NUM_TRAJECTORY_CLASSES, render_video

SPLIT_FILES = (("train", "train.txt"), ("val", "valid.txt"), ("test", "test.txt"))


class ManifestError(ValueError):
    """Manifest validation failed; `problems` itemizes every offending line."""

    def __init__(self, problems: list[str]) -> None:
        self.problems = list(problems)
        super().__init__(
            "manifest validation failed:\n" + "\n".join(f"  - {p}" for p in self.problems)
        )


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    rgb_path: str  # relative to the dataset root
    label: int | None
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    records: tuple[VideoRecord, ...]
    num_classes: int

    def by_split(self, split: str) -> list[VideoRecord]:
        return [r for r in self.records if r.split == split]

    @property
    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.split] = counts.get(r.split, 0) + 1
        return counts

    def video_path(self, record: VideoRecord) -> Path:
        return self.root / record.rgb_path


def load_manifest(root: str | Path, num_classes: int | None = None) -> DatasetManifest:
    """Read and validate the split list files under `root`.

    `num_classes` may be omitted when the dataset ships a meta.json declaring
    it. Every problem is collected into one itemized ManifestError rather than
    failing on the first.
    """
    root = Path(root)
    if num_classes is None:
        meta_path = root / "meta.json"
        if not meta_path.exists():
            raise ManifestError([f"{root}: num_classes not given and no meta.json found"])
        num_classes = int(json.loads(meta_path.read_text())["num_classes"])

    problems: list[str] = []
    records: list[VideoRecord] = []
    seen: dict[str, str] = {}

    for split, filename in SPLIT_FILES:
        path = root / filename
        if not path.exists():
            continue
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            where = f"{filename}:{lineno}"
            if len(tokens) == 3:
                rgb, _depth, label_token = tokens
                try:
                    label = int(label_token)
                except ValueError:
                    problems.append(f"{where}: label {label_token!r} is not an integer")
                    continue
            elif len(tokens) == 2:
                if split != "test":
                    problems.append(f"{where}: missing label (only the test split may omit labels)")
                    continue
                rgb, _depth = tokens
                label = None
            else:
                problems.append(f"{where}: expected 'rgb depth [label]', got {len(tokens)} fields")
                continue

            video_id = Path(rgb).stem
            if video_id in seen:
                problems.append(
                    f"{where}: duplicate video id {video_id!r} (first seen in {seen[video_id]})"
                )
                continue
            seen[video_id] = where
            if label is not None and not 0 <= label < num_classes:
                problems.append(f"{where}: label {label} outside [0, {num_classes})")
                continue
            if not (root / rgb).exists():
                problems.append(f"{where}: rgb file {rgb!r} does not exist under {root}")
                continue
            records.append(VideoRecord(video_id=video_id, rgb_path=rgb, label=label, split=split))

    if problems:
        raise ManifestError(problems)
    return DatasetManifest(root=root, records=tuple(records), num_classes=num_classes)


def save_manifest(manifest: DatasetManifest, root: str | Path | None = None) -> None:
    """Write the split list files (depth column is a placeholder path)."""
    root = Path(root) if root is not None else manifest.root
    root.mkdir(parents=True, exist_ok=True)
    for split, filename in SPLIT_FILES:
        records = manifest.by_split(split)
        if not records:
            continue
        lines = []
        for r in records:
            depth = f"depth/{r.video_id}.npy"
            if r.label is None:
                lines.append(f"{r.rgb_path} {depth}")
            else:
                lines.append(f"{r.rgb_path} {depth} {r.label}")
        (root / filename).write_text("\n".join(lines) + "\n")


def read_video(path: str | Path) -> np.ndarray:
    """Load a video as (frames, height, width, 3) uint8.

    `.npy` tensors are read directly; anything else goes through OpenCV.
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.ndim != 4 or arr.shape[-1] != 3:
            raise ValueError(f"{path}: expected (frames, h, w, 3), got {arr.shape}")
        return arr.astype(np.uint8)
    import cv2

    cap = cv2.VideoCapture(str(path))
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    cap.release()
    if not frames:
        raise ValueError(f"{path}: no decodable frames")
    return np.stack(frames)


def load_ground_truth_masks(root: str | Path, video_id: str) -> dict[str, np.ndarray]:
    """Fixture ground truth: boolean (frames, h, w) masks per target."""
    arr = np.load(Path(root) / "gt" / f"{video_id}.npy")
    return {"body": arr[0], "left_hand": arr[1], "right_hand": arr[2]}


def synth_dataset(
    root: str | Path,
    *,
    num_classes: int = NUM_TRAJECTORY_CLASSES,
    per_class_train: int = 10,
    per_class_val: int = 3,
    seed: int = 0,
    size: int = 160,
    frames_range: tuple[int, int] = (32, 48),
) -> DatasetManifest:
    """Write a deterministic moving-shape dataset under `root`.

    Layout: videos/<id>.npy, gt/<id>.npy (stacked body/left/right masks),
    train.txt + valid.txt split files, meta.json. Identical arguments produce
    bit-identical files.
    """
    if num_classes < 1 or num_classes > NUM_TRAJECTORY_CLASSES:
        raise ValueError(
            f"num_classes must be in [1, {NUM_TRAJECTORY_CLASSES}] "
            f"(one trajectory pattern per class)"
        )
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)

    records: list[VideoRecord] = []
    for split_idx, (split, count) in enumerate((("train", per_class_train), ("val", per_class_val))):
        for class_id in range(num_classes):
            for k in range(count):
                video_id = f"{split}_c{class_id}_{k:03d}"
                rng = np.random.default_rng([seed, split_idx, class_id, k])
                num_frames = int(rng.integers(frames_range[0], frames_range[1] + 1))
                frames, gt = render_video(class_id, num_frames, rng, size=size)
                np.save(root / "videos" / f"{video_id}.npy", frames)
                np.save(
                    root / "gt" / f"{video_id}.npy",
                    np.stack([gt["body"], gt["left_hand"], gt["right_hand"]]),
                )
                records.append(
                    VideoRecord(
                        video_id=video_id,
                        rgb_path=f"videos/{video_id}.npy",
                        label=class_id,
                        split=split,
                    )
                )

    manifest = DatasetManifest(root=root, records=tuple(records), num_classes=num_classes)
    save_manifest(manifest, root)
    (root / "meta.json").write_text(
        json.dumps(
            {
                "num_classes": num_classes,
                "seed": seed,
                "size": size,
                "frames_range": list(frames_range),
                "per_class": {"train": per_class_train, "val": per_class_val},
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    # Reload through the validator so a broken generator can't hand back a bad manifest.
    return load_manifest(root, num_classes)
