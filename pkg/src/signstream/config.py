"""Pipeline configuration: JSON schema, validation, per-stage cache digests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .cache import digest_payload
from .pose import KeypointTaxonomy, default_taxonomy
from .streams import STREAM_NAMES


class ConfigError(ValueError):
    """A pipeline config is malformed or references something unavailable."""


_TOP_LEVEL_KEYS = {
    "dataset_root", "cache_root", "output_root", "num_classes", "taxonomy",
    "backends", "segmenter_options", "streams", "fusion", "train", "clip",
    "eval_split", "seed", "workers",
}


@dataclass
class PipelineConfig:
    dataset_root: Path
    cache_root: Path
    output_root: Path
    num_classes: int
    taxonomy_path: Path | None = None
    pose_backend: str = "shape-color"
    segmenter_backend: str = "color-region"
    flow_backend: str = "farneback"
    classifier_backend: str = "tiny3d"
    segmenter_options: dict = field(default_factory=dict)
    streams: tuple[str, ...] = STREAM_NAMES
    fusion_weights: tuple[float, ...] | None = None
    fusion_mode: str = "prob"
    batch_size: int = 4
    patience: int = 3
    max_epochs: int = 30
    learning_rate: float = 1e-3
    augment: bool = False
    max_shift: int = 16
    brightness_range: tuple[float, float] = (0.8, 1.2)
    clip_frames: int = 40
    crop_size: int = 224
    logit_clamp: float = 32.0
    flow_max_px: float = 20.0
    eval_split: str = "val"
    seed: int = 0
    workers: int = 1

    _taxonomy_cache: KeypointTaxonomy | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.streams:
            raise ConfigError("stream subset must be nonempty")
        unknown = set(self.streams) - set(STREAM_NAMES)
        if unknown:
            raise ConfigError(
                f"unknown streams {sorted(unknown)}; expected a subset of {list(STREAM_NAMES)}"
            )
        if self.fusion_weights is not None and len(self.fusion_weights) != len(self.streams):
            raise ConfigError("fusion weights must match the stream subset length")
        if self.fusion_mode not in ("prob", "logit"):
            raise ConfigError(f"fusion mode must be 'prob' or 'logit', got {self.fusion_mode!r}")
        if self.eval_split not in ("train", "val", "test"):
            raise ConfigError(f"eval_split must be train/val/test, got {self.eval_split!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict, *, base_dir: Path | None = None) -> "PipelineConfig":
        unknown = set(raw) - _TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def resolve(p: str) -> Path:
            path = Path(p)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return path

        try:
            backends = raw.get("backends", {})
            fusion = raw.get("fusion", {})
            train = raw.get("train", {})
            clip = raw.get("clip", {})
            weights = fusion.get("weights")
            brightness = train.get("brightness_range", (0.8, 1.2))
            return cls(
                dataset_root=resolve(raw["dataset_root"]),
                cache_root=resolve(raw["cache_root"]),
                output_root=resolve(raw["output_root"]),
                num_classes=int(raw["num_classes"]),
                taxonomy_path=resolve(raw["taxonomy"]) if raw.get("taxonomy") else None,
                pose_backend=backends.get("pose", "shape-color"),
                segmenter_backend=backends.get("segmenter", "color-region"),
                flow_backend=backends.get("flow", "farneback"),
                classifier_backend=backends.get("classifier", "tiny3d"),
                segmenter_options=dict(raw.get("segmenter_options", {})),
                streams=tuple(raw.get("streams", STREAM_NAMES)),
                fusion_weights=tuple(float(w) for w in weights) if weights else None,
                fusion_mode=fusion.get("mode", "prob"),
                batch_size=int(train.get("batch_size", 4)),
                patience=int(train.get("patience", 3)),
                max_epochs=int(train.get("max_epochs", 30)),
                learning_rate=float(train.get("learning_rate", 1e-3)),
                augment=bool(train.get("augment", False)),
                max_shift=int(train.get("max_shift", 16)),
                brightness_range=(float(brightness[0]), float(brightness[1])),
                clip_frames=int(clip.get("frames", 40)),
                crop_size=int(clip.get("crop_size", 224)),
                logit_clamp=float(clip.get("logit_clamp", 32.0)),
                flow_max_px=float(clip.get("flow_max_px", 20.0)),
                eval_split=raw.get("eval_split", "val"),
                seed=int(raw.get("seed", 0)),
                workers=int(raw.get("workers", 1)),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc!r}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def with_overrides(
        self,
        *,
        streams: tuple[str, ...] | None = None,
        workers: int | None = None,
        seed: int | None = None,
    ) -> "PipelineConfig":
        cfg = self
        if streams is not None:
            cfg = replace(cfg, streams=streams)
        if workers is not None:
            cfg = replace(cfg, workers=workers)
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        return cfg

    def validate_paths(self) -> None:
        if not self.dataset_root.exists():
            raise ConfigError(f"dataset root {self.dataset_root} does not exist")
        if self.taxonomy_path is not None and not self.taxonomy_path.exists():
            raise ConfigError(f"taxonomy file {self.taxonomy_path} does not exist")

    def taxonomy(self) -> KeypointTaxonomy:
        if self._taxonomy_cache is None:
            tax = (
                KeypointTaxonomy.load(self.taxonomy_path)
                if self.taxonomy_path is not None
                else default_taxonomy()
            )
            object.__setattr__(self, "_taxonomy_cache", tax)
        return self._taxonomy_cache

    # --- per-stage cache digests -------------------------------------------------
    # Each stage's digest covers exactly the fields that influence its output,
    # chained through its upstream stages, so changing a training knob never
    # invalidates cached masklets.

    def _stage_payload(self, stage: str, stream: str | None = None) -> dict:
        payload: dict = {"pose": self.pose_backend, "taxonomy": self.taxonomy().digest()}
        if stage == "pose":
            return payload
        if stage in ("select-frame", "prompt"):
            return payload  # selection and prompting add no knobs of their own
        payload.update(
            segmenter=self.segmenter_backend,
            segmenter_options=self.segmenter_options,
            logit_clamp=self.logit_clamp,
        )
        if stage == "segment":
            return payload
        payload.update(
            flow=self.flow_backend,
            clip_frames=self.clip_frames,
            crop_size=self.crop_size,
            flow_max_px=self.flow_max_px,
        )
        if stage == "prepare-streams":
            return payload
        payload.update(
            classifier=self.classifier_backend,
            num_classes=self.num_classes,
            batch_size=self.batch_size,
            patience=self.patience,
            max_epochs=self.max_epochs,
            learning_rate=self.learning_rate,
            augment=self.augment,
            max_shift=self.max_shift,
            brightness_range=list(self.brightness_range),
            seed=self.seed,
        )
        if stage == "train":
            payload["stream"] = stream
            return payload
        if stage == "eval":
            payload.update(
                streams=sorted(self.streams),
                fusion_weights=list(self.fusion_weights) if self.fusion_weights else None,
                fusion_mode=self.fusion_mode,
                eval_split=self.eval_split,
            )
            return payload
        if stage == "visualize":
            return {
                "pose": self.pose_backend,
                "taxonomy": self.taxonomy().digest(),
                "segmenter": self.segmenter_backend,
                "segmenter_options": self.segmenter_options,
                "logit_clamp": self.logit_clamp,
            }
        raise ConfigError(f"unknown stage {stage!r}")

    def stage_digest(self, stage: str, stream: str | None = None) -> str:
        return digest_payload(self._stage_payload(stage, stream))
