"""Per-class configuration, read from and written to YAML."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .anomaly import FusionConfig
from .errors import ConfigInfeasibleError
from .normality import KINDS
from .saab import HopSpec

# Model kind that best suits each MVTec AD class: aligned objects use per-location
# statistics, homogeneous textures a pooled Gaussian, and grid/screw (strong
# per-image pose changes) the per-image self-reference model.
CLASS_MODEL_KINDS = {
    "carpet": "location_independent", "leather": "location_independent", "tile": "location_independent",
    "wood": "location_independent", "grid": "self_reference", "screw": "self_reference",
    "bottle": "location_aware", "cable": "location_aware", "capsule": "location_aware",
    "hazelnut": "location_aware", "metal_nut": "location_aware", "pill": "location_aware",
    "toothbrush": "location_aware", "transistor": "location_aware", "zipper": "location_aware",
}

_KEYS = {"class_name", "color_mode", "resize", "hops", "model_kind", "hops_used",
         "fusion", "epsilon", "energy_threshold", "seed"}


@dataclass
class ClassConfig:
    class_name: str
    hop_specs: list[HopSpec]
    color_mode: str = "rgb"
    resize: int = 224
    model_kind: str | list[str] = "location_aware"
    hops_used: list[int] = field(default_factory=list)
    weights: list[float] | None = None
    smooth_sigma: float = 0.0
    normalize_per_hop: bool = False
    target_size: int | None = None
    epsilon: float = 0.01
    energy_threshold: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.hop_specs:
            raise ConfigInfeasibleError("config needs at least one hop")
        if not self.hops_used:
            self.hops_used = list(range(1, len(self.hop_specs) + 1))
        self.hops_used = sorted(int(h) for h in self.hops_used)
        if self.color_mode not in ("rgb", "gray"):
            raise ConfigInfeasibleError(f"color_mode must be rgb or gray, got {self.color_mode!r}")
        if self.resize < 32:
            raise ConfigInfeasibleError(f"resize must be >= 32, got {self.resize}")
        if len(set(self.hops_used)) != len(self.hops_used) or not all(
                1 <= h <= len(self.hop_specs) for h in self.hops_used):
            raise ConfigInfeasibleError(f"hops_used {self.hops_used} not within 1..{len(self.hop_specs)}")
        kinds = self.kinds
        if len(kinds) != len(self.hops_used) or any(k not in KINDS for k in kinds):
            raise ConfigInfeasibleError(f"bad model_kind {self.model_kind!r}")
        if self.weights is not None and len(self.weights) != len(self.hops_used):
            raise ConfigInfeasibleError(f"{len(self.weights)} fusion weights for {len(self.hops_used)} hops")
        if self.epsilon < 0:
            raise ConfigInfeasibleError("epsilon must be >= 0")

    @property
    def kinds(self) -> list[str]:
        """Model kind for each used hop, in ``hops_used`` order."""
        if isinstance(self.model_kind, str):
            return [self.model_kind] * len(self.hops_used)
        return list(self.model_kind)

    @property
    def fusion(self) -> FusionConfig:
        weights = self.weights if self.weights is not None else [1.0] * len(self.hops_used)
        return FusionConfig(weights=list(weights), target_size=self.target_size or self.resize,
                            smooth_sigma=self.smooth_sigma, normalize_per_hop=self.normalize_per_hop)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassConfig":
        unknown = set(d) - _KEYS - {"search"}
        if unknown:
            raise ConfigInfeasibleError(f"unknown config keys: {sorted(unknown)}")
        try:
            hops = [HopSpec(int(h["window"]), int(h["keep"]),
                            bool(h.get("pool_after", i < len(d["hops"]) - 1)))
                    for i, h in enumerate(d["hops"])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInfeasibleError(f"invalid hops section: {exc}") from exc
        fusion = d.get("fusion") or {}
        return cls(
            class_name=str(d.get("class_name", "unnamed")),
            hop_specs=hops,
            color_mode=d.get("color_mode", "rgb"),
            resize=int(d.get("resize", 224)),
            model_kind=d.get("model_kind", "location_aware"),
            hops_used=list(d.get("hops_used") or []),
            weights=None if fusion.get("weights") is None else [float(w) for w in fusion["weights"]],
            smooth_sigma=float(fusion.get("smooth_sigma", 0.0)),
            normalize_per_hop=bool(fusion.get("normalize_per_hop", False)),
            target_size=fusion.get("target_size"),
            epsilon=float(d.get("epsilon", 0.01)),
            energy_threshold=float(d.get("energy_threshold", 1e-4)),
            seed=int(d.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        fusion = {"smooth_sigma": self.smooth_sigma, "normalize_per_hop": self.normalize_per_hop}
        if self.weights is not None:
            fusion["weights"] = list(self.weights)
        if self.target_size is not None:
            fusion["target_size"] = self.target_size
        return {
            "class_name": self.class_name,
            "color_mode": self.color_mode,
            "resize": self.resize,
            "hops": [{"window": h.window, "keep": h.keep, "pool_after": h.pool_after}
                     for h in self.hop_specs],
            "model_kind": self.model_kind if isinstance(self.model_kind, str) else list(self.model_kind),
            "hops_used": list(self.hops_used),
            "fusion": fusion,
            "epsilon": self.epsilon,
            "energy_threshold": self.energy_threshold,
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def parse_config(text: str) -> ClassConfig:
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigInfeasibleError("config file must hold a mapping")
    return ClassConfig.from_dict(data)


def load_config(path) -> tuple[ClassConfig, str]:
    """Parse a config file; returns the config and its verbatim text."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text), text


def preset_text(name: str) -> str:
    return resources.files("anomalyhop").joinpath("presets", f"{name}.yaml").read_text(encoding="utf-8")
