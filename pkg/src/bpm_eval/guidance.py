"""Masked classifier-free guidance composition over noise-prediction fields.

The composition is a pure array formula; the loop below wires it to an
abstract one-step denoiser so the two-round enhancement path can be
exercised end to end without any model.
"""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np

from .errors import ShapeMismatch
from .geometry import BinaryMask


def _as_field(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeMismatch(f"noise field must be (channels, h, w), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeMismatch("noise field contains non-finite values")
    return arr


def compose_guided_noise(
    eps_uncond,
    eps_img,
    eps_full,
    s_image: float,
    s_text: float,
    mask: BinaryMask,
) -> np.ndarray:
    """Image-conditioned guidance everywhere; text-conditioned guidance only
    inside the mask.

    out = eps_uncond + s_image*(eps_img - eps_uncond)
                     + s_text*(eps_full - eps_img) * mask
    with the (h, w) mask broadcast across channels.
    """
    u = _as_field(eps_uncond)
    i = _as_field(eps_img)
    f = _as_field(eps_full)
    if not (u.shape == i.shape == f.shape):
        raise ShapeMismatch(f"field shapes differ: {u.shape}, {i.shape}, {f.shape}")
    if (mask.height, mask.width) != u.shape[1:]:
        raise ShapeMismatch(
            f"mask {mask.height}x{mask.width} does not match fields {u.shape[1:]}"
        )
    m = mask.bits[None, :, :].astype(np.float64)
    return u + s_image * (i - u) + s_text * (f - i) * m


class StepDenoiser(Protocol):
    """One denoising step's three conditional noise predictions."""

    def __call__(self, z: np.ndarray, step: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (eps_uncond, eps_img, eps_full) for state z at this step."""
        ...


def stub_enhancement_loop(
    denoiser: StepDenoiser,
    z0: np.ndarray,
    mask: BinaryMask,
    steps: int,
    s_image: float,
    s_text: float,
) -> list[np.ndarray]:
    """Iterate guided updates z <- z - composed_eps for a fixed step count.

    Returns the trajectory [z0, z1, ..., z_steps]; steps=0 returns just the
    input state.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    z = _as_field(z0)
    trajectory = [z]
    for step in range(steps):
        eps_uncond, eps_img, eps_full = denoiser(z, step)
        composed = compose_guided_noise(eps_uncond, eps_img, eps_full, s_image, s_text, mask)
        z = z - composed
        trajectory.append(z)
    return trajectory


def linear_stub_denoiser(
    scale_uncond: float = 0.1,
    scale_img: float = 0.2,
    scale_full: float = 0.3,
) -> Callable:
    """Deterministic denoiser whose predictions are scalar multiples of the
    state; closed-form trajectories make loop tests exact."""

    def step_fn(z: np.ndarray, step: int):
        return scale_uncond * z, scale_img * z, scale_full * z

    return step_fn
