"""Residual U-net with squeeze-and-excitation normalization for tumour segmentation."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint_io import read_params, write_params
from .metrics import dice_score
from .volume import Mask, Volume


@dataclass(frozen=True)
class SegConfig:
    levels: int = 2
    base_channels: int = 8
    epochs: int = 30
    batch_size: int = 4
    threshold: float = 0.5
    learning_rate: float = 3e-3
    seed: int = 0

    def validate(self):
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


class SENorm(nn.Module):
    """Instance norm whose affine scale and shift come from a squeeze-excitation branch."""

    def __init__(self, channels: int, reduction: int = 2):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.norm = nn.InstanceNorm3d(channels, affine=False)
        self.fc1 = nn.Linear(channels, hidden)
        self.gamma = nn.Linear(hidden, channels)
        self.beta = nn.Linear(hidden, channels)

    def forward(self, x):
        squeeze = F.relu(self.fc1(x.mean(dim=(2, 3, 4))))
        gamma = torch.sigmoid(self.gamma(squeeze))[:, :, None, None, None]
        beta = torch.tanh(self.beta(squeeze))[:, :, None, None, None]
        return gamma * self.norm(x) + beta


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv3d(cin, cout, 3, padding=1)
        self.norm1 = SENorm(cout)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1)
        self.norm2 = SENorm(cout)
        self.skip = nn.Conv3d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(h + self.skip(x))


class SegmenterNet(nn.Module):
    """Encoder-decoder on PET-only input; output is a per-voxel probability map."""

    def __init__(self, config: SegConfig):
        super().__init__()
        config.validate()
        self.config = config
        widths = [config.base_channels * 2 ** i for i in range(config.levels)]
        self.encoders = nn.ModuleList()
        prev = 1
        for w in widths:
            self.encoders.append(ResidualBlock(prev, w))
            prev = w
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for w in reversed(widths[:-1]):
            self.ups.append(nn.ConvTranspose3d(prev, w, 2, 2))
            self.decoders.append(ResidualBlock(2 * w, w))
            prev = w
        self.out = nn.Conv3d(prev, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x (B, T, H, W) -> probabilities (B, T, H, W)
        h = x.unsqueeze(1)
        skips = []
        for i, enc in enumerate(self.encoders):
            if i > 0:
                h = F.max_pool3d(h, 2)
            h = enc(h)
            skips.append(h)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips[:-1])):
            h = dec(torch.cat([up(h), skip], dim=1))
        return torch.sigmoid(self.out(h)).squeeze(1)

    def segment(self, volume: Volume, threshold: float | None = None) -> Mask:
        return segment(self, volume, self.config.threshold if threshold is None else threshold)


def soft_dice_loss(probs: torch.Tensor, target: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """1 - soft Dice, computed per sample and averaged."""
    dims = tuple(range(1, probs.dim()))
    inter = (probs * target).sum(dims)
    denom = probs.sum(dims) + target.sum(dims)
    return 1.0 - ((2.0 * inter + smooth) / (denom + smooth)).mean()


def parameter_digest(net: nn.Module) -> str:
    h = hashlib.sha256()
    for name, v in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def train_segmenter(images: Sequence[Volume], masks: Sequence[Mask], config: SegConfig) -> SegmenterNet:
    config.validate()
    if not images or len(images) != len(masks):
        raise ValueError("need a nonempty, paired image/mask collection")
    shapes = {v.data.shape for v in images} | {m.data.shape for m in masks}
    if len(shapes) != 1:
        raise ValueError(f"collection mixes grid sizes: {sorted(shapes)}")
    shape = shapes.pop()
    scale = 2 ** (config.levels - 1)
    if any(s % scale for s in shape):
        raise ValueError(f"grid {shape} not divisible by {scale} for {config.levels} levels")

    torch.manual_seed(config.seed)
    rng = torch.Generator().manual_seed(config.seed)
    net = SegmenterNet(config)
    net.grid = shape
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    x = torch.as_tensor(np.stack([v.data for v in images]), dtype=torch.float32)
    y = torch.as_tensor(np.stack([m.data for m in masks]), dtype=torch.float32)
    n = len(images)
    for epoch in range(config.epochs):
        order = torch.randperm(n, generator=rng)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            loss = soft_dice_loss(net(x[idx]), y[idx])
            if not math.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite segmentation loss in epoch {epoch + 1}")
            loss.backward()
            opt.step()
    net.eval()
    return net


def predict_probabilities(net: SegmenterNet, volume: Volume) -> np.ndarray:
    with torch.no_grad():
        return net(torch.as_tensor(volume.data[None], dtype=torch.float32))[0].numpy()


def segment(net: SegmenterNet, volume: Volume, threshold: float = 0.5) -> Mask:
    """Binary mask of voxels whose predicted probability exceeds ``threshold``."""
    grid = getattr(net, "grid", None)
    if grid is not None and volume.data.shape != grid:
        raise ValueError(f"volume grid {volume.data.shape} != training grid {grid}")
    probs = predict_probabilities(net, volume)
    return Mask((probs > threshold).astype(np.uint8), volume.voxel_size)


def mean_training_dice(net: SegmenterNet, images, masks, threshold: float = 0.5) -> float:
    return float(np.mean([dice_score(segment(net, v, threshold), m) for v, m in zip(images, masks)]))


def save_segmenter(net: SegmenterNet, path):
    meta = {"kind": "segmenter", "config": asdict(net.config),
            "grid": list(getattr(net, "grid", ()) or ())}
    state = {k: v.detach().numpy() for k, v in net.state_dict().items()}
    return write_params(path, {"segmenter": state}, meta)


def load_segmenter(path) -> SegmenterNet:
    groups, meta = read_params(path)
    if meta.get("kind") != "segmenter":
        raise ValueError(f"{path} is not a segmenter checkpoint")
    net = SegmenterNet(SegConfig(**meta["config"]))
    net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in groups["segmenter"].items()})
    if meta.get("grid"):
        net.grid = tuple(meta["grid"])
    net.eval()
    return net
