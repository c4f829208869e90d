"""Rasterizer configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Z_NEAR, ValidationError


@dataclass
class RenderConfig:
    tile_size: int = 16
    sh_degree: int = 1
    background: tuple = (0.0, 0.0, 0.0)
    transmittance_floor: float = 1e-4  # early-termination cutoff on T
    alpha_min: float = 1.0 / 255.0  # minimal contributing alpha
    low_pass: float = 0.3  # screen-space covariance dilation, px^2
    z_near: float = Z_NEAR
    guard_band: float = 1.3  # frustum cull margin on the projected mean
    threads: int = 1
    deterministic: bool = True  # fixed reduction order in backward
    backend: str = "auto"  # auto | compiled | python

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValidationError("tile_size must be >= 1")
        if not (0 <= self.transmittance_floor < 1):
            raise ValidationError("transmittance_floor must lie in [0, 1)")
        if not (0 <= self.alpha_min < 1):
            raise ValidationError("alpha_min must lie in [0, 1)")
        if self.guard_band < 1:
            raise ValidationError("guard_band must be >= 1")
        bg = np.asarray(self.background, dtype=np.float64).reshape(3)
        if np.any(bg < 0) or np.any(bg > 1):
            raise ValidationError("background must lie in [0, 1]^3")
        self.background = tuple(bg)
