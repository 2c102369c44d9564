"""Tracker configuration and its JSON form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..encoders import DEFAULT_SA, SaLayerSpec, validate_sa_specs
from ..geometry import GridSpec, grid_preset
from ..head import LossWeights

STRATEGIES = ("first-gt", "prev", "first-gt+prev", "all-prev")


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 1024
    image_mode: str = "conv"
    d_img: int = 8
    sa_layers: tuple[SaLayerSpec, ...] = DEFAULT_SA
    vfe_width: int = 16
    bev_width: int = 32
    out_width: int = 32
    deform_points: int = 4
    sim_hidden: int = 32
    head_hidden: int = 32

    def __post_init__(self):
        if self.image_mode not in ("conv", "rgb"):
            raise ValueError(f"image_mode must be 'conv' or 'rgb', got {self.image_mode!r}")
        if len(self.sa_layers) != 3:
            raise ValueError("the texture encoder has exactly three set-abstraction layers")
        validate_sa_specs(self.sa_layers)
        if self.deform_points < 1:
            raise ValueError("deform_points must be >= 1")

    @property
    def image_width(self) -> int:
        return 3 if self.image_mode == "rgb" else self.d_img

    @property
    def level_widths(self) -> tuple[int, ...]:
        return tuple(s.width for s in self.sa_layers)


@dataclass(frozen=True)
class TrackerConfig:
    category: str = "car"
    model: ModelConfig = field(default_factory=ModelConfig)
    strategy: str = "first-gt+prev"
    diagnostic: bool = False
    seed: int = 0
    search_range: float | None = None
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown template strategy {self.strategy!r}; choose from {STRATEGIES}")
        grid_preset(self.category)

    @property
    def grid(self) -> GridSpec:
        g = grid_preset(self.category)
        if self.search_range is not None:
            g = replace(g, xy_range=float(self.search_range))
        return g

    @property
    def image_mode(self) -> str:
        return "rgb" if self.diagnostic else self.model.image_mode

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrackerConfig":
        d = dict(d)
        model = dict(d.pop("model", {}) or {})
        if "sa_layers" in model:
            model["sa_layers"] = tuple(SaLayerSpec(**s) for s in model["sa_layers"])
        loss = d.pop("loss", {}) or {}
        return cls(model=ModelConfig(**model), loss=LossWeights(**loss), **d)


def load_json_section(path, section: str) -> dict:
    """Read ``section`` from a JSON config, falling back to the top-level object."""
    if path is None:
        return {}
    data = json.loads(Path(path).read_text() or "{}")
    if section in data and isinstance(data[section], dict):
        return data[section]
    known = {"tracker", "synth"}
    return {k: v for k, v in data.items() if k not in known}


def load_tracker_config(path) -> TrackerConfig:
    return TrackerConfig.from_dict(load_json_section(path, "tracker"))
