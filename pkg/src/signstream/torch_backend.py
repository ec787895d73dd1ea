"""Tiny trainable torch backend standing in for a pretrained video backbone.

Clips are average-pooled to a coarse spatio-temporal grid before two small
3-D convolutions, which keeps desk-scale training fast while preserving the
where-and-when structure the synthetic classes differ in. Single-threaded so
repeated runs with the same seed are bit-identical.
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np
import torch
from torch import nn

POOLED_SHAPE = (8, 28, 28)


class _TinyVideoNet(nn.Module):
    def __init__(self, num_classes: int) -> None:
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv3d(3, 16, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.MaxPool3d(2),
            nn.Conv3d(16, 32, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool3d((4, 2, 2)),
        )
        self.head = nn.Linear(32 * 4 * 2 * 2, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.features(x)
        return self.head(z.flatten(1))


class TinyVideoBackend:
    """ClassifierBackend implementation backed by _TinyVideoNet."""

    name = "tiny3d"

    def __init__(self) -> None:
        torch.set_num_threads(1)

    def build(self, num_classes: int, seed: int, learning_rate: float) -> dict[str, Any]:
        torch.manual_seed(seed)
        net = _TinyVideoNet(num_classes)
        optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate)
        return {"net": net, "optimizer": optimizer, "loss": nn.CrossEntropyLoss()}

    def prepare(self, model: dict, clips: Sequence[np.ndarray]) -> torch.Tensor:
        pooled = []
        for clip in clips:
            x = torch.from_numpy(np.ascontiguousarray(clip, dtype=np.float32))
            x = x.permute(3, 0, 1, 2).unsqueeze(0)  # (1, C, T, H, W)
            pooled.append(torch.nn.functional.adaptive_avg_pool3d(x, POOLED_SHAPE))
        return torch.cat(pooled, dim=0)

    def train_epoch(
        self,
        model: dict,
        inputs: torch.Tensor,
        labels: np.ndarray,
        batches: Sequence[np.ndarray],
    ) -> float:
        net, optimizer, loss_fn = model["net"], model["optimizer"], model["loss"]
        net.train()
        target = torch.from_numpy(np.asarray(labels, dtype=np.int64))
        total = 0.0
        count = 0
        for batch in batches:
            idx = torch.from_numpy(np.asarray(batch, dtype=np.int64))
            optimizer.zero_grad()
            loss = loss_fn(net(inputs[idx]), target[idx])
            loss.backward()
            optimizer.step()
            total += float(loss.item()) * len(batch)
            count += len(batch)
        return total / count

    def val_loss(self, model: dict, inputs: torch.Tensor, labels: np.ndarray, batch_size: int) -> float:
        net, loss_fn = model["net"], model["loss"]
        net.eval()
        target = torch.from_numpy(np.asarray(labels, dtype=np.int64))
        total = 0.0
        with torch.no_grad():
            for start in range(0, inputs.shape[0], batch_size):
                sl = slice(start, start + batch_size)
                loss = loss_fn(net(inputs[sl]), target[sl])
                total += float(loss.item()) * (min(inputs.shape[0], start + batch_size) - start)
        return total / inputs.shape[0]

    def predict_proba(self, model: dict, inputs: torch.Tensor, batch_size: int) -> np.ndarray:
        net = model["net"]
        net.eval()
        chunks = []
        with torch.no_grad():
            for start in range(0, inputs.shape[0], batch_size):
                logits = net(inputs[start : start + batch_size])
                chunks.append(torch.softmax(logits, dim=1).numpy())
        return np.concatenate(chunks, axis=0).astype(np.float64)

    def get_state(self, model: dict) -> dict:
        return {k: v.detach().clone() for k, v in model["net"].state_dict().items()}

    def set_state(self, model: dict, state: dict) -> None:
        model["net"].load_state_dict(state)

    def save(self, model: dict, path) -> None:
        torch.save({"state": model["net"].state_dict()}, path)

    def load(self, path, num_classes: int) -> dict:
        model = self.build(num_classes, seed=0, learning_rate=1e-3)
        payload = torch.load(path, map_location="cpu", weights_only=True)
        model["net"].load_state_dict(payload["state"])
        return model
