"""Module with the 12-channel velocity UNet.

Input channels: ``[0]`` target brightfield, ``[1:6]`` noised target paint,
``[6]`` reference brightfield, ``[7:12]`` reference paint. An absent reference
is simply zero planes. The output is a 5-channel velocity field.
"""

import logging
import math
from collections import OrderedDict
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from src.configs import Configs, Tier
from src.utils.errors import ConfigError, InvalidArgumentError
from src.utils.seeding import torch_generator

logger = logging.getLogger(__name__)

IN_CHANNELS = 12
OUT_CHANNELS = 5
DEPTH_MULTIPLIERS = (1, 2, 4)

ModelParams = Dict[str, torch.Tensor]


class ModelConfig(BaseModel):
    """Shape settings of the network.

    Attributes:
        base_width (int): Channels at full resolution.
        attention_heads (int): Heads of the bottleneck self-attention.
        time_embed_dim (int, optional): Width of the time MLP. Defaults to ``4 * base_width``.
        group_count (int): Groups of every group normalization.
        tier (Tier, optional): Tier label, informative only.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    base_width: int = Field(16, ge=2)
    depth_multipliers: Tuple[int, int, int] = DEPTH_MULTIPLIERS
    attention_heads: int = Field(4, ge=1)
    time_embed_dim: Optional[int] = Field(None, ge=1)
    group_count: int = Field(8, ge=1)
    tier: Optional[Tier] = None

    @model_validator(mode="after")
    def check_divisibility(self) -> "ModelConfig":
        """Check width divisibility by groups and heads."""
        if tuple(self.depth_multipliers) != DEPTH_MULTIPLIERS:
            raise ValueError(f"depth_multipliers must be {DEPTH_MULTIPLIERS}")
        if self.base_width % 2:
            raise ValueError("base_width must be even for the sinusoidal time embedding")
        if self.base_width % self.group_count:
            raise ValueError("base_width must be divisible by group_count")
        if (4 * self.base_width) % self.attention_heads:
            raise ValueError("bottleneck width must be divisible by attention_heads")
        return self

    @property
    def time_dim(self) -> int:
        """Resolved width of the time MLP."""
        return self.time_embed_dim or 4 * self.base_width

    @classmethod
    def for_tier(cls, tier, attention_heads: int = 4, group_count: int = 8) -> "ModelConfig":
        """Build the config of a named tier.

        Args:
            tier (Tier | str): One of S, M, L.
            attention_heads (int, optional): Bottleneck heads. Defaults to 4.
            group_count (int, optional): Normalization groups. Defaults to 8.

        Raises:
            ConfigError: If the tier is unknown.

        Returns:
            ModelConfig: The tier's config.
        """
        try:
            tier = Tier(tier)
        except ValueError as e:
            raise ConfigError(f"Unknown tier {tier!r}, expected one of S, M, L") from e
        width = Configs.tiers[tier.value]["base_width"]
        return cls(
            base_width=width,
            attention_heads=attention_heads,
            group_count=group_count,
            tier=tier,
        )


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of times in [0, 1], scaled onto the 1000-step grid.

    Args:
        t (torch.Tensor): Times of shape (B,).
        dim (int): Even embedding width.

    Returns:
        torch.Tensor: (B, dim) embedding, sines then cosines.
    """
    half = dim // 2
    dtype = t.dtype if t.is_floating_point() else torch.float32
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype, device=t.device) / half
    )
    args = 1000.0 * t.to(dtype)[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    """Two 3x3 convs with group norm, SiLU and an additive time bias."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, groups: int) -> None:
        """Initialize the ResBlock class.

        Args:
            in_ch (int): Input channels.
            out_ch (int): Output channels.
            time_dim (int): Width of the time embedding.
            groups (int): Group normalization groups.
        """
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        """Apply the block; ``temb`` is the activated time embedding."""
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class AttentionBlock(nn.Module):
    """Multi-head self-attention over every spatial position, with a residual.

    No positional encoding is added, so the block commutes with any
    permutation of spatial positions.
    """

    def __init__(self, channels: int, heads: int, groups: int) -> None:
        """Initialize the AttentionBlock class.

        Args:
            channels (int): Feature channels.
            heads (int): Attention heads, dividing ``channels``.
            groups (int): Group normalization groups.
        """
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(groups, channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Attend over the H*W positions of a BxCxHxW map."""
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)

        def split(z):
            return z.reshape(b, h * w, self.heads, c // self.heads).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(c // self.heads), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, h * w, c)
        return x + self.proj(out).transpose(1, 2).reshape(b, c, h, w)


class Upsample(nn.Module):
    """Nearest-neighbour x2 resize followed by a 3x3 conv."""

    def __init__(self, in_ch: int, out_ch: int) -> None:
        """Initialize the Upsample class."""
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Double the spatial size."""
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class VelocityUNet(nn.Module):
    """UNet predicting the flow velocity of the five paint channels.

    Args:
        config (ModelConfig): Network shape.
    """

    def __init__(self, config: ModelConfig) -> None:
        """Initialize the VelocityUNet class.

        Args:
            config (ModelConfig): Network shape.
        """
        super().__init__()
        self.config = config
        w, t_dim, g = config.base_width, config.time_dim, config.group_count

        self.time_mlp = nn.Sequential(nn.Linear(w, t_dim), nn.SiLU(), nn.Linear(t_dim, t_dim))

        self.stem = nn.Conv2d(IN_CHANNELS, w, 3, padding=1)
        self.enc1 = ResBlock(w, w, t_dim, g)
        self.down1 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.enc2 = ResBlock(2 * w, 2 * w, t_dim, g)
        self.down2 = nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1)
        self.mid1 = ResBlock(4 * w, 4 * w, t_dim, g)
        self.attention = AttentionBlock(4 * w, config.attention_heads, g)
        self.mid2 = ResBlock(4 * w, 4 * w, t_dim, g)
        self.up2 = Upsample(4 * w, 2 * w)
        self.dec2 = ResBlock(4 * w, 2 * w, t_dim, g)
        self.up1 = Upsample(2 * w, w)
        self.dec1 = ResBlock(2 * w, w, t_dim, g)
        self.out_norm = nn.GroupNorm(g, w)
        self.head = nn.Conv2d(w, OUT_CHANNELS, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """Predict velocities.

        Args:
            x (torch.Tensor): Bx12xHxW inputs, H and W divisible by 4.
            t (torch.Tensor): (B,) times in [0, 1].

        Returns:
            torch.Tensor: Bx5xHxW velocities.
        """
        temb = F.silu(self.time_mlp(timestep_embedding(t, self.config.base_width)))

        h1 = self.enc1(self.stem(x), temb)
        h2 = self.enc2(self.down1(h1), temb)
        h = self.mid1(self.down2(h2), temb)
        h = self.mid2(self.attention(h), temb)
        h = self.dec2(torch.cat([self.up2(h), h2], dim=1), temb)
        h = self.dec1(torch.cat([self.up1(h), h1], dim=1), temb)
        return self.head(F.silu(self.out_norm(h)))

    def params(self) -> ModelParams:
        """Named parameter tensors in registration order."""
        return OrderedDict((name, p) for name, p in self.named_parameters())

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Shape of every named parameter."""
        return {name: tuple(p.shape) for name, p in self.named_parameters()}


@torch.no_grad()
def init_params(config: ModelConfig, rng_seed: int) -> VelocityUNet:
    """Build a network with deterministic initial weights.

    Weights are uniform in +-sqrt(1 / fan_in), biases are zero, normalization
    gains are one and the output head is all zeros, so a fresh network predicts
    the zero velocity field.

    Args:
        config (ModelConfig): Network shape.
        rng_seed (int): Initialization seed.

    Returns:
        VelocityUNet: The initialized network in training mode.
    """
    model = VelocityUNet(config)
    generator = torch_generator(rng_seed, 0x1417)

    for name, p in model.named_parameters():
        if name.startswith("head."):
            p.zero_()
        elif name.endswith("bias"):
            p.zero_()
        elif p.ndim == 1:
            p.fill_(1.0)
        else:
            bound = math.sqrt(1.0 / p[0].numel())
            p.copy_(torch.rand(p.shape, generator=generator) * 2.0 * bound - bound)

    logger.debug("Initialized %d parameters with seed %s", count_params(config), rng_seed)
    return model


def _batched(inputs: torch.Tensor, t) -> Tuple[torch.Tensor, torch.Tensor, bool]:
    inputs = torch.as_tensor(inputs, dtype=torch.float32)
    single = inputs.ndim == 3
    if single:
        inputs = inputs[None]
    if inputs.ndim != 4 or inputs.shape[1] != IN_CHANNELS:
        raise InvalidArgumentError(
            f"Expected {IN_CHANNELS}xHxW or Bx{IN_CHANNELS}xHxW input, got {tuple(inputs.shape)}"
        )
    if inputs.shape[-2] % 4 or inputs.shape[-1] % 4:
        raise InvalidArgumentError(f"H and W must be divisible by 4, got {tuple(inputs.shape[-2:])}")

    t = torch.as_tensor(t, dtype=torch.float32).reshape(-1)
    if t.numel() == 1:
        t = t.expand(inputs.shape[0])
    if t.numel() != inputs.shape[0]:
        raise InvalidArgumentError("One time per batch element is required")
    return inputs, t, single


def forward(model: VelocityUNet, inputs, t) -> torch.Tensor:
    """Evaluate the network on one input or a batch.

    Args:
        model (VelocityUNet): Network.
        inputs (torch.Tensor): 12xHxW or Bx12xHxW.
        t (float | torch.Tensor): A scalar or one time per batch element.

    Raises:
        InvalidArgumentError: On a channel or size mismatch.

    Returns:
        torch.Tensor: 5xHxW or Bx5xHxW velocities.
    """
    inputs, t, single = _batched(inputs, t)
    out = model(inputs, t)
    return out[0] if single else out


def backward(
    model: VelocityUNet, inputs, t, output_cotangent
) -> Tuple[ModelParams, torch.Tensor]:
    """Vector-Jacobian product of ``forward`` for parameters and input.

    Args:
        model (VelocityUNet): Network.
        inputs (torch.Tensor): Same shape contract as ``forward``.
        t (float | torch.Tensor): Times.
        output_cotangent (torch.Tensor): Cotangent with the output's shape.

    Returns:
        tuple: (parameter gradients by name, input gradient).
    """
    inputs = torch.as_tensor(inputs, dtype=torch.float32).detach().requires_grad_(True)
    out = forward(model, inputs, t)

    cotangent = torch.as_tensor(output_cotangent, dtype=out.dtype)
    if cotangent.shape != out.shape:
        raise InvalidArgumentError(
            f"Cotangent shape {tuple(cotangent.shape)} does not match output {tuple(out.shape)}"
        )

    names, tensors = zip(*model.named_parameters())
    grads = torch.autograd.grad(out, (*tensors, inputs), grad_outputs=cotangent)
    return OrderedDict(zip(names, grads[:-1])), grads[-1]


def _conv(ci: int, co: int, k: int) -> int:
    return ci * co * k * k + co


def _linear(i: int, o: int) -> int:
    return i * o + o


def _norm(c: int) -> int:
    return 2 * c


def _resblock(ci: int, co: int, t_dim: int) -> int:
    total = _norm(ci) + _conv(ci, co, 3) + _linear(t_dim, co) + _norm(co) + _conv(co, co, 3)
    return total + (_conv(ci, co, 1) if ci != co else 0)


def _attention(c: int) -> int:
    return _norm(c) + _linear(c, 3 * c) + _linear(c, c)


def count_params(config: ModelConfig) -> int:
    """Closed-form parameter count of ``VelocityUNet(config)``."""
    w, t_dim = config.base_width, config.time_dim
    return (
        _linear(w, t_dim)
        + _linear(t_dim, t_dim)
        + _conv(IN_CHANNELS, w, 3)
        + _resblock(w, w, t_dim)
        + _conv(w, 2 * w, 3)
        + _resblock(2 * w, 2 * w, t_dim)
        + _conv(2 * w, 4 * w, 3)
        + 2 * _resblock(4 * w, 4 * w, t_dim)
        + _attention(4 * w)
        + _conv(4 * w, 2 * w, 3)
        + _resblock(4 * w, 2 * w, t_dim)
        + _conv(2 * w, w, 3)
        + _resblock(2 * w, w, t_dim)
        + _norm(w)
        + _conv(w, OUT_CHANNELS, 3)
    )
