"""The case-study scenario: tunnel, wall, random inputs, error model, strain limit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .building import BuildingGeometry
from .distributions import RandomModel, default_random_model
from .errors import ContractError
from .ground import TunnelGeometry


@dataclass(frozen=True)
class Scenario:
    tunnel: TunnelGeometry = field(default_factory=TunnelGeometry)
    building: BuildingGeometry = field(default_factory=BuildingGeometry)
    model: RandomModel = field(default_factory=default_random_model)
    sigma_m: float = 1.0  # measurement error std, mm
    sigma_f: float = 2.0  # settlement-model error std, mm
    eps_lim: float = 5e-4  # limiting tensile strain (0.05 %)
    zone_strain: str = "mean"

    def __post_init__(self):
        if self.sigma_m <= 0 or self.sigma_f <= 0:
            raise ContractError("error standard deviations must be positive")
        if self.eps_lim <= 0:
            raise ContractError("eps_lim must be positive")
        if self.zone_strain not in ("mean", "max"):
            raise ContractError(f"zone_strain must be 'mean' or 'max' (got {self.zone_strain!r})")

    @property
    def sigma_e(self) -> float:
        """Std of the combined settlement error (model + measurement), mm."""
        return math.hypot(self.sigma_m, self.sigma_f)

    def with_face(self, y_s: float) -> "Scenario":
        return replace(self, tunnel=replace(self.tunnel, y_s=y_s))
