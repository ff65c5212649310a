"""Module to test the flow-matching process and the Euler sampler."""

import pytest
import torch

from src.ml_core.diffusion import (
    flow_target,
    forward_noise,
    initial_noise,
    model_input,
    sample,
)
from src.utils.errors import InvalidArgumentError


def _zero_field(inputs, t):
    return torch.zeros((inputs.shape[0], 5) + tuple(inputs.shape[-2:]))


def test_forward_noise_endpoints():
    """t = 1 returns the clean paint and t = 0 the noise, exactly."""
    c, eps = torch.randn(5, 4, 4), torch.randn(5, 4, 4)
    assert torch.equal(forward_noise(c, 1.0, eps), c)
    assert torch.equal(forward_noise(c, 0.0, eps), eps)


def test_forward_noise_arithmetic():
    """0.3 * 0.5 + 0.7 * -1.0 = -0.55 on every pixel."""
    out = forward_noise(torch.full((5, 2, 2), 0.5), 0.3, torch.full((5, 2, 2), -1.0))
    torch.testing.assert_close(out, torch.full((5, 2, 2), -0.55))


def test_forward_noise_per_example_times():
    """One time per batch element broadcasts over channels and pixels."""
    c, eps = torch.ones(2, 5, 2, 2), torch.zeros(2, 5, 2, 2)
    out = forward_noise(c, torch.tensor([0.25, 0.75]), eps)
    assert torch.all(out[0] == 0.25) and torch.all(out[1] == 0.75)


def test_forward_noise_rejects_bad_inputs():
    """Times outside [0, 1] and mismatched shapes are invalid."""
    with pytest.raises(InvalidArgumentError):
        forward_noise(torch.zeros(5, 2, 2), 1.5, torch.zeros(5, 2, 2))
    with pytest.raises(InvalidArgumentError):
        forward_noise(torch.zeros(5, 2, 2), 0.5, torch.zeros(5, 2, 3))


def test_flow_target_values():
    """The velocity is zero on a stationary path and 2 from -1 to 1."""
    x = torch.randn(5, 3, 3)
    assert torch.count_nonzero(flow_target(x, x)) == 0
    assert torch.all(flow_target(torch.ones(5, 2, 2), -torch.ones(5, 2, 2)) == 2.0)


def test_flow_target_is_time_derivative():
    """A central difference of the path in t equals the velocity."""
    c, eps = torch.randn(5, 4, 4, dtype=torch.float64), torch.randn(5, 4, 4, dtype=torch.float64)
    h = 1e-3
    derivative = (forward_noise(c, 0.4 + h, eps) - forward_noise(c, 0.4 - h, eps)) / (2 * h)
    assert (derivative - flow_target(c, eps)).abs().max() < 1e-6


def test_model_input_layout():
    """Inputs stack target brightfield, noised paint and six zero planes when no reference."""
    bf, x_t = torch.full((2, 1, 4, 4), 3.0), torch.full((2, 5, 4, 4), 7.0)
    inputs = model_input(bf, x_t)
    assert inputs.shape == (2, 12, 4, 4)
    assert torch.all(inputs[:, 0] == 3.0) and torch.all(inputs[:, 1:6] == 7.0)
    assert torch.count_nonzero(inputs[:, 6:]) == 0


def test_zero_field_returns_initial_noise():
    """With zero velocity the sampler returns its starting noise unchanged."""
    out = sample(_zero_field, torch.zeros(1, 8, 8), generator=torch.Generator().manual_seed(4))
    assert torch.equal(out, initial_noise((5, 8, 8), torch.Generator().manual_seed(4)))


def test_same_seed_same_sample():
    """Sampling is deterministic in the generator seed."""

    def field(inputs, t):
        return torch.sin(inputs[:, 1:6]) + t[:, None, None, None]

    bf = torch.randn(2, 1, 8, 8)
    first = sample(field, bf, steps=10, generator=torch.Generator().manual_seed(1))
    second = sample(field, bf, steps=10, generator=torch.Generator().manual_seed(1))
    assert torch.equal(first, second)


def test_reference_reaches_the_field():
    """The reference planes appear in channels 6..11 of every model call."""
    seen = []

    def field(inputs, t):
        seen.append(inputs[:, 6:].clone())
        return torch.zeros((inputs.shape[0], 5) + tuple(inputs.shape[-2:]))

    reference = torch.full((6, 4, 4), 0.5)
    sample(field, torch.zeros(1, 4, 4), reference, steps=3)
    assert len(seen) == 3
    assert all(torch.all(s == 0.5) for s in seen)


def test_euler_converges_on_linear_oracle():
    """A velocity 2t(c - x0) integrates to c; the Euler error shrinks with more steps."""
    target = torch.ones(1, 5, 4, 4)

    def field(inputs, t):
        return 2 * t[:, None, None, None] * target

    errors = []
    for steps in (5, 10, 25, 50):
        out = sample(field, torch.zeros(1, 1, 4, 4), steps=steps, noise=torch.zeros(1, 5, 4, 4))
        errors.append(float((out - target).abs().max()))

    assert errors == sorted(errors, reverse=True) and len(set(errors)) == 4
    assert errors[-1] < 0.05


def test_sampler_argument_checks():
    """Zero steps and sizes not divisible by 4 are rejected."""
    with pytest.raises(InvalidArgumentError):
        sample(_zero_field, torch.zeros(1, 8, 8), steps=0)
    with pytest.raises(InvalidArgumentError):
        sample(_zero_field, torch.zeros(1, 6, 8))
