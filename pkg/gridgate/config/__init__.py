"""
Settings for gridgate.

Values come from a TOML file (``settings.toml`` next to this module by
default, or the path in ``GRIDGATE_SETTINGS``), then environment
variables, then whatever the command line overrides.  Copy
``settings.example.toml`` to start a new configuration.
"""

from __future__ import annotations

import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..models import EconomicParams, LimitSet, RuleConfig

logger = logging.getLogger(__name__)

DEFAULT_SETTINGS_PATH = Path(__file__).with_name("settings.toml")

DEFAULT_LAMBDAS = [0.0, 1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class GridSection(_Section):
    s_base_kva: float = Field(default=100.0, gt=0)
    slack_voltage_pu: float = Field(default=1.0, gt=0)


class RulesSection(_Section):
    kappa: float = Field(default=1.5, gt=1)
    length_floor_m: float = Field(default=25.0, ge=0)
    section_min_mm2: float = Field(default=10.0, gt=0)
    section_max_mm2: float = Field(default=400.0, gt=0)

    def to_rule_config(self) -> RuleConfig:
        return RuleConfig(
            kappa=self.kappa,
            length_floor_m=self.length_floor_m,
            section_min=self.section_min_mm2,
            section_max=self.section_max_mm2,
        )


class LimitsSection(_Section):
    v_band_lv: float = 0.10
    v_band_mv: float = 0.05
    gcp_ampacity_a: Optional[float] = None

    def to_limit_set(self) -> LimitSet:
        return LimitSet(
            v_band_lv=self.v_band_lv,
            v_band_mv=self.v_band_mv,
            gcp_ampacity=self.gcp_ampacity_a,
        )


class ProfilesSection(_Section):
    dt_minutes: float = Field(default=10.0, gt=0)
    power_factor: float = Field(default=0.9, gt=0, le=1)


class PowerflowSection(_Section):
    tolerance: float = Field(default=1e-8, gt=0)
    max_iterations: int = Field(default=30, ge=1)


class EconomicsSection(_Section):
    c_cap: float = 1500.0
    lifespan_years: float = 20.0
    discount_rate: float = 0.02
    c_plus: float = 0.25
    c_minus: float = 0.14

    def to_params(self) -> EconomicParams:
        return EconomicParams(
            c_cap=self.c_cap,
            lifespan=self.lifespan_years,
            discount=self.discount_rate,
            c_plus=self.c_plus,
            c_minus=self.c_minus,
        )


class HostingSection(_Section):
    lambdas: List[float] = Field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    polygon_sides: int = Field(default=16, ge=4)
    refine_passes: int = Field(default=1, ge=1, le=5)
    refine_tolerance_kwp: float = Field(default=0.1, gt=0)
    solver: str = "CLARABEL"
    kkt_tolerance: float = Field(default=1e-6, gt=0)

    @field_validator("lambdas")
    @classmethod
    def _non_negative(cls, values: List[float]) -> List[float]:
        if any(v < 0 for v in values):
            raise ValueError("lambda values must be non-negative")
        return values


class RuntimeSection(_Section):
    threads: int = Field(default=1, ge=1)


class Settings(_Section):
    grid: GridSection = Field(default_factory=GridSection)
    rules: RulesSection = Field(default_factory=RulesSection)
    limits: LimitsSection = Field(default_factory=LimitsSection)
    profiles: ProfilesSection = Field(default_factory=ProfilesSection)
    powerflow: PowerflowSection = Field(default_factory=PowerflowSection)
    economics: EconomicsSection = Field(default_factory=EconomicsSection)
    hosting: HostingSection = Field(default_factory=HostingSection)
    runtime: RuntimeSection = Field(default_factory=RuntimeSection)

    @property
    def dt_hours(self) -> float:
        return self.profiles.dt_minutes / 60.0

    def with_overrides(self, **sections: dict) -> "Settings":
        """Return a copy with some fields of some sections replaced.

        Replaced sections are validated again, so an out-of-range
        override raises ``pydantic.ValidationError``.
        """
        update = {}
        for name, fields in sections.items():
            if fields:
                section = getattr(self, name)
                update[name] = type(section).model_validate({**section.model_dump(), **fields})
        return self.model_copy(update=update)


def load_settings(path: Optional[os.PathLike] = None) -> Settings:
    """Load settings from TOML, applying environment overrides.

    Args:
        path: TOML file.  Falls back to ``GRIDGATE_SETTINGS`` and then
            to the packaged ``settings.toml``; a missing default file
            simply yields the built-in defaults.
    """
    candidate = path or os.environ.get("GRIDGATE_SETTINGS") or DEFAULT_SETTINGS_PATH
    candidate = Path(candidate)
    data: dict = {}
    if candidate.exists():
        with candidate.open("rb") as f:
            data = tomllib.load(f)
        logger.debug(f"Loaded settings from {candidate}")
    elif path is not None:
        raise FileNotFoundError(candidate)

    settings = Settings.model_validate(data)

    threads = os.environ.get("GRIDGATE_THREADS")
    if threads:
        settings = settings.with_overrides(runtime={"threads": max(1, int(threads))})
    return settings
