"""Module with the flow-matching forward process and the Euler sampler.

Time runs from pure noise at ``t = 0`` to clean data at ``t = 1``:
``x_t = t * c + (1 - t) * epsilon`` with velocity ``c - epsilon``.
"""

import logging
from typing import Callable, Optional, Union

import torch

from src.configs import Configs
from src.utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

TRAIN_TIME_STEPS = 1000
PAINT_CHANNELS = len(Configs.paint_channels)

# Any callable mapping (Bx12xHxW inputs, (B,) times) to Bx5xHxW velocities.
VelocityField = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
Time = Union[float, torch.Tensor]


def _time_like(t: Time, x: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=x.dtype)
    if t.ndim == 1 and x.ndim == 4:
        t = t[:, None, None, None]
    if torch.any((t < 0) | (t > 1)):
        raise InvalidArgumentError("t must lie in [0, 1]")
    return t


def forward_noise(c: torch.Tensor, t: Time, epsilon: torch.Tensor) -> torch.Tensor:
    """Interpolate between noise and clean paint.

    Args:
        c (torch.Tensor): Clean paint, 5xHxW or Bx5xHxW.
        t (float | torch.Tensor): A scalar or one time per batch element, in [0, 1].
        epsilon (torch.Tensor): Noise with the shape of ``c``.

    Raises:
        InvalidArgumentError: On a shape mismatch or t outside [0, 1].

    Returns:
        torch.Tensor: ``t * c + (1 - t) * epsilon``.
    """
    if c.shape != epsilon.shape:
        raise InvalidArgumentError(f"Shape mismatch: {tuple(c.shape)} vs {tuple(epsilon.shape)}")
    t = _time_like(t, c)
    return t * c + (1 - t) * epsilon


def flow_target(c: torch.Tensor, epsilon: torch.Tensor) -> torch.Tensor:
    """Velocity of the linear path, ``c - epsilon``."""
    if c.shape != epsilon.shape:
        raise InvalidArgumentError(f"Shape mismatch: {tuple(c.shape)} vs {tuple(epsilon.shape)}")
    return c - epsilon


def model_input(
    target_bf: torch.Tensor, x_t: torch.Tensor, reference: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Assemble Bx12xHxW inputs: target brightfield, noised paint, reference planes.

    An absent reference is encoded as six zero planes.
    """
    if reference is None:
        reference = torch.zeros(
            (x_t.shape[0], 1 + PAINT_CHANNELS) + tuple(x_t.shape[-2:]), dtype=x_t.dtype
        )
    return torch.cat([target_bf, x_t, reference], dim=1)


def initial_noise(
    shape, generator: Optional[torch.Generator] = None
) -> torch.Tensor:
    """Standard normal draw used as the sampler's starting point."""
    return torch.randn(shape, generator=generator, dtype=torch.float32)


@torch.no_grad()
def sample(
    model: VelocityField,
    target_bf: torch.Tensor,
    reference: Optional[torch.Tensor] = None,
    steps: int = Configs.sample_steps,
    generator: Optional[torch.Generator] = None,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Integrate the learned velocity field from noise to paint with Euler steps.

    Args:
        model (VelocityField): Network or any compatible callable.
        target_bf (torch.Tensor): 1xHxW or Bx1xHxW normalized brightfield.
        reference (torch.Tensor, optional): 6xHxW or Bx6xHxW reference planes; zeros when absent.
        steps (int, optional): Euler steps. Defaults to 50.
        generator (torch.Generator, optional): Source of the initial noise.
        noise (torch.Tensor, optional): Explicit initial noise, overriding ``generator``.

    Raises:
        InvalidArgumentError: If steps < 1 or the spatial size is not divisible by 4.

    Returns:
        torch.Tensor: 5xHxW or Bx5xHxW paint, unclamped.
    """
    if steps < 1:
        raise InvalidArgumentError("steps must be at least 1")

    target_bf = torch.as_tensor(target_bf, dtype=torch.float32)
    single = target_bf.ndim == 3
    if single:
        target_bf = target_bf[None]
        reference = None if reference is None else torch.as_tensor(reference)[None]
    height, width = target_bf.shape[-2:]
    if height % 4 or width % 4:
        raise InvalidArgumentError(f"H and W must be divisible by 4, got {height}x{width}")
    batch = target_bf.shape[0]

    if reference is not None:
        reference = torch.as_tensor(reference, dtype=torch.float32)
    if noise is None:
        x = initial_noise((batch, PAINT_CHANNELS, height, width), generator)
    else:
        x = torch.as_tensor(noise, dtype=torch.float32).reshape(batch, PAINT_CHANNELS, height, width).clone()

    dt = 1.0 / steps
    for i in range(steps):
        t = torch.full((batch,), i / steps, dtype=torch.float32)
        x = x + dt * model(model_input(target_bf, x, reference), t)

    return x[0] if single else x
