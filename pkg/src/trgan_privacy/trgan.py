"""Transversal GAN: slice-sequence generator, mask-weighted critic, WGAN training.

The generator is split in two stages. ``TemporalGenerator`` maps a latent z0 to
a length-T sequence of slice latents z1(t) with 1-D transposed convolutions, and
``ImageGenerator`` renders slice t from (z0, z1(t), mask slice t). The critic
sees the two-channel input ((1 - omega) * image, omega * mask).
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint_io import read_params, write_params
from .volume import Mask, Sample, Volume

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrganConfig:
    dims: tuple[int, int, int] = (16, 16, 8)
    d0: int = 32
    d1: int = 32
    omega: float = 0.01
    learning_rate: float = 5e-5
    batch_size: int = 8
    svc_interval: int = 5
    total_steps: int = 1000
    checkpoint_interval: int = 100
    n_critic: int = 1
    temporal_channels: tuple[int, ...] = (32,)
    gen_channels: tuple[int, ...] = (32, 16)
    mask_channels: int = 8
    disc_channels: tuple[int, ...] = (16, 32)
    clip_generator: bool = False
    seed: int = 0

    def __post_init__(self):
        # normalise list-valued fields coming from JSON/YAML
        for name in ("dims", "temporal_channels", "gen_channels", "disc_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def validate(self):
        if not 0.0 < self.omega < 1.0:
            raise ValueError(f"omega must be in (0, 1), got {self.omega}")
        if self.svc_interval < 1:
            raise ValueError("svc_interval must be >= 1")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        if self.total_steps < 1 or self.batch_size < 1 or self.n_critic < 1:
            raise ValueError("total_steps, batch_size and n_critic must be >= 1")
        if self.d0 < 1 or self.d1 < 1:
            raise ValueError("latent dimensions must be >= 1")
        w, h, _ = self.dims
        scale = 2 ** len(self.gen_channels)
        if w % scale or h % scale:
            raise ValueError(f"slice size {w}x{h} must be divisible by {scale}")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class LatentSeed:
    z0: torch.Tensor
    z1: Optional[torch.Tensor] = None


def _temporal_plan(depth: int) -> tuple[int, int]:
    """Initial kernel length and number of doubling layers reaching ``depth``."""
    k0 = depth if depth < 4 else 4
    n = 0
    length = k0
    while length < depth:
        length *= 2
        n += 1
    if length != depth:
        raise ValueError(f"depth {depth} must be k * 2**n with k = min(depth, 4)")
    return k0, n


class TemporalGenerator(nn.Module):
    """G0: z0 -> z1(1..T) using 1-D transposed convolutions from length 1."""

    def __init__(self, d0: int, d1: int, depth: int, channels: Sequence[int] = (32,)):
        super().__init__()
        k0, n_up = _temporal_plan(depth)
        widths = list(channels[:n_up]) + [channels[-1]] * max(0, n_up - len(channels))
        layers: list[nn.Module] = []
        prev = d0
        if n_up == 0:
            layers.append(nn.ConvTranspose1d(d0, d1, k0))
        else:
            layers += [nn.ConvTranspose1d(prev, widths[0], k0), nn.LeakyReLU(0.2)]
            prev = widths[0]
            for i in range(1, n_up):
                layers += [nn.ConvTranspose1d(prev, widths[i], 4, 2, 1), nn.LeakyReLU(0.2)]
                prev = widths[i]
            layers.append(nn.ConvTranspose1d(prev, d1, 4, 2, 1))
        self.net = nn.Sequential(*layers)
        self.depth = depth
        self.d0 = d0
        self.d1 = d1

    def forward(self, z0: torch.Tensor) -> torch.Tensor:
        if z0.shape[-1] != self.d0:
            raise ValueError(f"z0 has dimension {z0.shape[-1]}, expected {self.d0}")
        out = self.net(z0.unsqueeze(-1))  # (B, d1, T)
        return torch.tanh(out).transpose(1, 2)  # (B, T, d1)


class ImageGenerator(nn.Module):
    """G1: (z0, z1(t), mask slice) -> image slice in [-1, 1]."""

    def __init__(self, d0: int, d1: int, width: int, height: int,
                 channels: Sequence[int] = (32, 16), mask_channels: int = 8):
        super().__init__()
        n_up = len(channels)
        self.low = (height // 2 ** n_up, width // 2 ** n_up)
        self.c0 = channels[0]
        self.project = nn.Linear(d0 + d1, channels[0] * self.low[0] * self.low[1])
        enc: list[nn.Module] = []
        prev = 1
        for _ in range(n_up):
            enc += [nn.Conv2d(prev, mask_channels, 4, 2, 1), nn.LeakyReLU(0.2)]
            prev = mask_channels
        self.mask_encoder = nn.Sequential(*enc)
        ups: list[nn.Module] = []
        prev = channels[0] + mask_channels
        for i in range(n_up):
            out = channels[i + 1] if i + 1 < n_up else 1
            ups.append(nn.ConvTranspose2d(prev, out, 4, 2, 1))
            if i + 1 < n_up:
                ups.append(nn.LeakyReLU(0.2))
            prev = out
        self.upsample = nn.Sequential(*ups)

    def forward(self, z0: torch.Tensor, z1: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # z0 (N, d0), z1 (N, d1), mask (N, H, W) -> (N, H, W)
        feat = F.leaky_relu(self.project(torch.cat([z0, z1], dim=1)), 0.2)
        feat = feat.view(-1, self.c0, *self.low)
        menc = self.mask_encoder(mask.unsqueeze(1))
        out = self.upsample(torch.cat([feat, menc], dim=1))
        return torch.tanh(out.squeeze(1))


class Generator(nn.Module):
    def __init__(self, config: TrganConfig):
        super().__init__()
        w, h, d = config.dims
        self.dims = (w, h, d)
        self.d0 = config.d0
        self.temporal = TemporalGenerator(config.d0, config.d1, d, config.temporal_channels)
        self.image = ImageGenerator(config.d0, config.d1, w, h, config.gen_channels,
                                    config.mask_channels)

    def render(self, z0: torch.Tensor, z1: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        """Render volumes (B, T, H, W) slice by slice from z0 (B, d0), z1 (B, T, d1)."""
        b, t, _ = z1.shape
        if masks.shape[1] != t:
            raise ValueError(f"latent sequence length {t} != mask depth {masks.shape[1]}")
        z0_rep = z0.unsqueeze(1).expand(b, t, z0.shape[1]).reshape(b * t, -1)
        slices = self.image(z0_rep, z1.reshape(b * t, -1),
                            masks.reshape(b * t, *masks.shape[2:]))
        return slices.view(b, t, *slices.shape[1:])

    def forward(self, z0: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        return self.render(z0, self.temporal(z0), masks)


class Discriminator(nn.Module):
    """3-D convolutional critic ending in a tanh-bounded scalar."""

    def __init__(self, config: TrganConfig):
        super().__init__()
        w, h, d = config.dims
        layers: list[nn.Module] = []
        prev = 2
        shape = [d, h, w]
        for c in config.disc_channels:
            layers += [nn.Conv3d(prev, c, 4, 2, 1), nn.LeakyReLU(0.2)]
            prev = c
            shape = [(s + 2 - 4) // 2 + 1 for s in shape]
            if min(shape) < 1:
                raise ValueError(f"grid {config.dims} too small for {len(config.disc_channels)} critic layers")
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev * int(np.prod(shape)), 1)

    def forward(self, weighted: torch.Tensor) -> torch.Tensor:
        # weighted (B, 2, T, H, W) -> (B,)
        feat = self.features(weighted).flatten(1)
        return torch.tanh(self.head(feat)).squeeze(1)


def weight_inputs(images: torch.Tensor, masks: torch.Tensor, omega: float) -> torch.Tensor:
    """Stack ((1 - omega) * I, omega * M) as two channels: (B, 2, T, H, W)."""
    if images.shape != masks.shape:
        raise ValueError(f"image grid {tuple(images.shape)} != mask grid {tuple(masks.shape)}")
    return torch.stack([(1.0 - omega) * images, omega * masks.to(images.dtype)], dim=1)


def critic_scores(disc: Discriminator, images: torch.Tensor, masks: torch.Tensor,
                  omega: float) -> torch.Tensor:
    return disc(weight_inputs(images, masks, omega))


# --- single-sample API on Volume/Mask values ---------------------------------

def sample_latent(config: TrganConfig, rng: torch.Generator, batch: Optional[int] = None) -> LatentSeed:
    shape = (config.d0,) if batch is None else (batch, config.d0)
    return LatentSeed(z0=torch.randn(shape, generator=rng))


def temporal_generate(gen: Generator, z0: torch.Tensor) -> torch.Tensor:
    """Slice latents z1(1..T) for a single z0 of shape (d0,); returns (T, d1)."""
    with torch.no_grad():
        return gen.temporal(z0.reshape(1, -1).float())[0]


def _mask_tensor(masks) -> torch.Tensor:
    return torch.as_tensor(np.stack([m.data for m in masks]), dtype=torch.float32)


def generate_volume(gen: Generator, seed: LatentSeed, mask: Mask) -> Volume:
    z0 = seed.z0.reshape(1, -1).float()
    with torch.no_grad():
        z1 = seed.z1 if seed.z1 is not None else gen.temporal(z0)[0]
        z1 = z1.reshape(1, *z1.shape[-2:]).float()
        if z1.shape[1] != mask.depth:
            raise ValueError(f"latent sequence length {z1.shape[1]} != mask depth {mask.depth}")
        out = gen.render(z0, z1, _mask_tensor([mask]))[0]
    return Volume(out.numpy(), mask.voxel_size)


def discriminate(disc: Discriminator, volume: Volume, mask: Mask, omega: float) -> float:
    if volume.data.shape != mask.data.shape:
        raise ValueError(f"volume grid {volume.dims} != mask grid {mask.dims}")
    with torch.no_grad():
        img = torch.as_tensor(volume.data[None], dtype=torch.float32)
        return float(critic_scores(disc, img, _mask_tensor([mask]), omega)[0])


def generate_population(gen: Generator, masks: Sequence[Mask], seed: int) -> list[Volume]:
    """One synthetic volume per mask with latents drawn from ``seed``."""
    rng = torch.Generator().manual_seed(int(seed))
    z0 = torch.randn(len(masks), gen.d0, generator=rng)
    with torch.no_grad():
        out = gen(z0, _mask_tensor(masks))
    return [Volume(v.numpy(), m.voxel_size) for v, m in zip(out, masks)]


# --- singular value clipping -------------------------------------------------

def _weight_parameters(module: nn.Module):
    for name, p in module.named_parameters():
        if p.dim() >= 2:
            yield name, p


def singular_value_clip(module: nn.Module, bound: float = 1.0) -> nn.Module:
    """Cap every singular value of each weight (reshaped out x rest) at ``bound``.

    Weights are reshaped along their first stored axis (out-channels for Linear
    and ConvNd; in-channels for transposed convolutions). Biases are untouched.
    """
    with torch.no_grad():
        for _, p in _weight_parameters(module):
            mat = p.reshape(p.shape[0], -1).double()
            u, s, vh = torch.linalg.svd(mat, full_matrices=False)
            if s.max() <= bound:
                continue
            clipped = (u * s.clamp(max=bound)) @ vh
            p.copy_(clipped.reshape(p.shape).to(p.dtype))
    return module


def max_singular_values(module: nn.Module) -> dict[str, float]:
    return {name: float(np.linalg.norm(p.detach().reshape(p.shape[0], -1).double().numpy(), 2))
            for name, p in _weight_parameters(module)}


# --- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    step: int
    generator: dict[str, np.ndarray]
    discriminator: dict[str, np.ndarray]
    config_digest: str
    rng_state: bytes = b""
    config: Optional[dict] = None

    def parameter_digest(self) -> str:
        h = hashlib.sha256()
        for group in (self.generator, self.discriminator):
            for name in sorted(group):
                h.update(name.encode())
                h.update(np.ascontiguousarray(group[name], dtype="<f4").tobytes())
        return h.hexdigest()

    def build(self, config: TrganConfig) -> tuple[Generator, Discriminator]:
        if config.digest() != self.config_digest:
            raise ValueError(f"checkpoint digest {self.config_digest} does not match config "
                             f"digest {config.digest()}")
        gen, disc = Generator(config), Discriminator(config)
        gen.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.generator.items()})
        disc.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.discriminator.items()})
        gen.eval()
        disc.eval()
        return gen, disc


def _state_arrays(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float32).copy()
            for k, v in module.state_dict().items()}


def make_checkpoint(step: int, gen: Generator, disc: Discriminator, config: TrganConfig,
                    rng: Optional[torch.Generator] = None) -> Checkpoint:
    state = bytes(rng.get_state().numpy().tobytes()) if rng is not None else b""
    return Checkpoint(step=step, generator=_state_arrays(gen), discriminator=_state_arrays(disc),
                      config_digest=config.digest(), rng_state=state, config=asdict(config))


# --- training ----------------------------------------------------------------

def _stack_samples(samples: Sequence[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.as_tensor(np.stack([s.volume.data for s in samples]), dtype=torch.float32)
    masks = torch.as_tensor(np.stack([s.mask.data for s in samples]), dtype=torch.float32)
    return images, masks


def critic_objective(disc, gen, real, masks, z0, omega):
    """Wasserstein critic objective to maximize: E D(real) - E D(G(z))."""
    fake = gen(z0, masks)
    return (critic_scores(disc, real, masks, omega).mean()
            - critic_scores(disc, fake, masks, omega).mean())


def generator_objective(disc, gen, masks, z0, omega):
    """Generator objective to maximize: E D(G(z))."""
    return critic_scores(disc, gen(z0, masks), masks, omega).mean()


StepCallback = Callable[[int, Generator, Discriminator, bool], None]


def train_trgan(dataset: Sequence[Sample], config: TrganConfig,
                callback: Optional[StepCallback] = None) -> list[Checkpoint]:
    """Alternating WGAN updates with RMSProp and singular value clipping on the critic.

    Returns checkpoints every ``checkpoint_interval`` steps and at the final step.
    ``callback(step, gen, disc, clipped)`` runs after every step.
    """
    config.validate()
    if not dataset:
        raise ValueError("training set is empty")
    shapes = {s.volume.data.shape for s in dataset}
    w, h, d = config.dims
    if shapes != {(d, h, w)}:
        raise ValueError(f"dataset grids {shapes} do not match config dims {config.dims}")

    torch.manual_seed(config.seed)
    rng = torch.Generator().manual_seed(config.seed)
    gen, disc = Generator(config), Discriminator(config)
    singular_value_clip(disc)
    if config.clip_generator:
        singular_value_clip(gen)
    opt_g = torch.optim.RMSprop(gen.parameters(), lr=config.learning_rate)
    opt_d = torch.optim.RMSprop(disc.parameters(), lr=config.learning_rate)
    images, masks = _stack_samples(dataset)
    n = len(dataset)
    bs = min(config.batch_size, n)

    checkpoints: list[Checkpoint] = []
    order = torch.randperm(n, generator=rng)
    cursor = 0

    def next_batch():
        nonlocal order, cursor
        if cursor + bs > n:
            order = torch.randperm(n, generator=rng)
            cursor = 0
        idx = order[cursor:cursor + bs]
        cursor += bs
        return images[idx], masks[idx]

    for step in range(1, config.total_steps + 1):
        for _ in range(config.n_critic):
            real, m = next_batch()
            z0 = torch.randn(bs, config.d0, generator=rng)
            opt_d.zero_grad()
            d_loss = -critic_objective(disc, gen, real, m, z0, config.omega)
            d_loss.backward()
            opt_d.step()

        clipped = step % config.svc_interval == 0
        if clipped:
            singular_value_clip(disc)
            if config.clip_generator:
                singular_value_clip(gen)

        _, m = next_batch()
        z0 = torch.randn(bs, config.d0, generator=rng)
        opt_g.zero_grad()
        g_loss = -generator_objective(disc, gen, m, z0, config.omega)
        g_loss.backward()
        opt_g.step()

        if not (math.isfinite(d_loss.item()) and math.isfinite(g_loss.item())):
            raise TrainingError(f"non-finite loss at step {step}: critic={d_loss.item()}, "
                                f"generator={g_loss.item()}")
        if callback is not None:
            callback(step, gen, disc, clipped)
        if step % config.checkpoint_interval == 0 or step == config.total_steps:
            checkpoints.append(make_checkpoint(step, gen, disc, config, rng))
            log.info("step %d critic %.4f generator %.4f", step, -d_loss.item(), -g_loss.item())
    return checkpoints


def save_checkpoint(ckpt: Checkpoint, path):
    meta = {"kind": "trgan", "step": ckpt.step, "config_digest": ckpt.config_digest,
            "rng_state": ckpt.rng_state.hex(), "config": ckpt.config}
    return write_params(path, {"generator": ckpt.generator,
                               "discriminator": ckpt.discriminator}, meta)


def load_checkpoint(path) -> Checkpoint:
    groups, meta = read_params(path)
    if meta.get("kind") != "trgan":
        raise ValueError(f"{path} is not a TrGAN checkpoint")
    return Checkpoint(step=int(meta["step"]), generator=groups.get("generator", {}),
                      discriminator=groups.get("discriminator", {}),
                      config_digest=meta["config_digest"],
                      rng_state=bytes.fromhex(meta.get("rng_state", "")), config=meta.get("config"))
