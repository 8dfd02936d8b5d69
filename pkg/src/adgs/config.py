"""Run configuration: defaults, YAML/JSON loading and ablation presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .density import EPS_ALPHA, EPS_LOW, TAU_LOW, TAU_POS, DensifyParams
from .errors import InvalidParameterError
from .losses import LossWeights
from .optim import OptimizerConfig

LOSS_SCHEDULES = ("alternating", "photometric", "combined")
DENSIFY_SCHEDULES = ("alternating", "single")
ABLATIONS = ("A", "B", "C", "D", "E", "F")


@dataclass(frozen=True)
class PhaseSchedule:
    warmup_iters: int = 1500
    low_iters: int = 100
    high_iters: int = 100
    total_iters: int = 10000
    low_first: bool = True

    def __post_init__(self):
        if self.warmup_iters < 0 or self.low_iters < 1 or self.high_iters < 1:
            raise InvalidParameterError("need warmup_iters >= 0 and phase lengths >= 1")
        if self.total_iters < self.warmup_iters:
            raise InvalidParameterError("total_iters must be at least warmup_iters")


@dataclass(frozen=True)
class DensifyConfig:
    high_grad_threshold: float = TAU_POS
    high_opacity_threshold: float = EPS_ALPHA
    low_grad_threshold: float = TAU_LOW
    low_opacity_threshold: float = EPS_LOW
    scale_split_threshold: float = 0.01
    split_count: int = 2
    split_scale_divisor: float = 1.6
    warmup_densify: bool = True
    warmup_interval: int = 100

    def _params(self, tau, eps) -> DensifyParams:
        return DensifyParams(tau, eps, self.scale_split_threshold, self.split_count,
                             self.split_scale_divisor)

    @property
    def high(self) -> DensifyParams:
        return self._params(self.high_grad_threshold, self.high_opacity_threshold)

    @property
    def low(self) -> DensifyParams:
        return self._params(self.low_grad_threshold, self.low_opacity_threshold)


@dataclass(frozen=True)
class PseudoViewConfig:
    max_angle_deg: float = 3.0
    max_trans_frac: float = 0.02


@dataclass(frozen=True)
class RunConfig:
    schedule: PhaseSchedule = field(default_factory=PhaseSchedule)
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pseudo_view: PseudoViewConfig = field(default_factory=PseudoViewConfig)
    loss_schedule: str = "alternating"
    densify_schedule: str = "alternating"
    seed: int = 0
    sh_degree: int = 0
    checkpoint_every: int = 1000
    ablation: str | None = None

    def __post_init__(self):
        if self.loss_schedule not in LOSS_SCHEDULES:
            raise InvalidParameterError(f"loss_schedule must be one of {LOSS_SCHEDULES}")
        if self.densify_schedule not in DENSIFY_SCHEDULES:
            raise InvalidParameterError(f"densify_schedule must be one of {DENSIFY_SCHEDULES}")
        if not 0 <= self.sh_degree <= 2:
            raise InvalidParameterError("sh_degree must be 0, 1 or 2")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"schedule": PhaseSchedule, "densify": DensifyConfig, "loss": LossWeights,
             "optimizer": OptimizerConfig, "pseudo_view": PseudoViewConfig}


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InvalidParameterError(f"unknown {where} keys: {', '.join(sorted(unknown))}")
    return cls(**data)


def config_from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, None) or {}
        if not isinstance(section, dict):
            raise InvalidParameterError(f"config section '{name}' must be a mapping")
        kwargs[name] = _build(cls, section, name)
    top = _build(RunConfig, {**data, **kwargs}, "top-level")
    return apply_ablation(top, top.ablation) if top.ablation else top


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    return config_from_dict(yaml.safe_load(text) or {})


def apply_ablation(config: RunConfig, name: str | None) -> RunConfig:
    """Ablation presets.

    A  single-phase densification, alternating losses kept
    B  alternating densification, photometric loss only
    C  combined loss every iteration, single-phase densification
    D  no pseudo-view consistency (lambda3 = 0)
    E  no edge-aware smoothness sum, depth-range term kept
    F  no depth smoothness at all (lambda2 = 0)
    """
    if name is None:
        return config
    name = name.upper()
    if name not in ABLATIONS:
        raise InvalidParameterError(f"unknown ablation '{name}' (choose from {', '.join(ABLATIONS)})")
    c = replace(config, ablation=name)
    if name == "A":
        return replace(c, densify_schedule="single")
    if name == "B":
        return replace(c, loss_schedule="photometric")
    if name == "C":
        return replace(c, loss_schedule="combined", densify_schedule="single")
    if name == "D":
        return replace(c, loss=replace(c.loss, lambda3=0.0))
    if name == "E":
        return replace(c, loss=replace(c.loss, smoothness_term=False))
    return replace(c, loss=replace(c.loss, lambda2=0.0))
