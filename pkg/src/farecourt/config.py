"""Pipeline configuration: schema, defaults, validation and the effective-config echo."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .mutation import LABELS, MutationConfig
from .render import RenderSpec
from .reward import RewardConfig
from .seeding import derive_seed

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


Color = tuple[int, int, int, int]


class NetworkSection(_Section):
    width: int = Field(10, ge=3)
    height: int = Field(10, ge=3)
    jitter: float = Field(10.0, ge=0, lt=50)
    knockout_fraction: float = Field(0.1, ge=0, le=0.3)
    seed: int | None = None


class MutationSection(_Section):
    sigma: float = Field(12.0, ge=0, le=30)
    lambda_min: float = Field(150.0, gt=0)
    lambda_max: float = Field(400.0, gt=0)
    delta: float = Field(300.0, gt=0)
    tau_thresh: float = Field(250.0, gt=0)
    label_drift: bool = True
    drift_mutations: bool = False
    spacing: float = Field(10.0, gt=0)
    seed: int | None = None

    @model_validator(mode="after")
    def _range(self):
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min must not exceed lambda_max")
        return self


class RenderSection(_Section):
    width: int = Field(768, ge=64)
    height: int = Field(768, ge=64)
    margin: float = Field(0.08, ge=0, lt=0.5)
    road_color: Color = (170, 170, 170, 255)
    nav_color: Color = (30, 90, 220, 255)
    real_color: Color = (220, 30, 30, 255)
    bg_color: Color = (250, 250, 245, 255)
    road_px: float = Field(4, ge=1)
    nav_px: float = Field(3, ge=1)
    real_px: float = Field(3, ge=1)
    marker_radius: float = Field(6, ge=0)


class DatasetSection(_Section):
    n_samples: int = Field(100, ge=1)
    class_mix: dict[str, float] = Field(default_factory=lambda: {lab: 0.2 for lab in LABELS})
    min_poi_distance: float = Field(500.0, ge=0)

    @field_validator("class_mix")
    @classmethod
    def _mix(cls, v: dict[str, float]):
        unknown = set(v) - set(LABELS)
        if unknown:
            raise ValueError(f"unknown labels {sorted(unknown)}")
        if any(r < 0 for r in v.values()):
            raise ValueError("ratios must be non-negative")
        if abs(sum(v.values()) - 1.0) > 1e-6:
            raise ValueError("ratios must sum to 1")
        return v


class CalibrationSection(_Section):
    families: list[str] = Field(default_factory=lambda: ["logistic", "stumps", "knn"])
    val_split: float = Field(0.2, gt=0, lt=1)
    threshold: float = Field(0.5, gt=0, lt=1)
    downsample_ratio: float = Field(2.0, ge=1)
    seed: int | None = None

    @field_validator("families")
    @classmethod
    def _families(cls, v: list[str]):
        allowed = {"logistic", "stumps", "knn"}
        bad = [f for f in v if f not in allowed]
        if bad or not v:
            raise ValueError(f"families must be a non-empty subset of {sorted(allowed)}")
        return v


class RetrievalSection(_Section):
    k: int = Field(4, ge=1)
    embedder: str = "hashing-256"


class CoaSection(_Section):
    max_turns: int = Field(8, ge=1)
    use_insight: bool = True
    backend: str = "oracle"
    adjudicator_prompt: str | None = None
    analyst_prompt: str | None = None
    refiner_prompt: str | None = None


class RewardSection(_Section):
    lambda_ans: float = Field(0.8, ge=0)
    lambda_fmt: float = Field(0.2, ge=0)
    beta: float = Field(0.5, gt=0, lt=1)

    @model_validator(mode="after")
    def _weights(self):
        if abs(self.lambda_ans + self.lambda_fmt - 1.0) > 1e-9:
            raise ValueError("lambda_ans + lambda_fmt must equal 1")
        return self


DEFAULT_VERDICTS = ["driver_not_liable", "driver_partially_liable", "driver_liable", "driver_malicious"]


class BenchSection(_Section):
    n_orders: int = Field(40, ge=4)
    history_fraction: float = Field(0.5, gt=0, lt=1)
    labels: list[str] = Field(default_factory=lambda: list(DEFAULT_VERDICTS))
    # fine label -> reporting group; deliberately without a default
    grouping: dict[str, str]
    verdict_of: dict[str, str] = Field(
        default_factory=lambda: {
            "compliant": "driver_not_liable",
            "drift_only": "driver_not_liable",
            "unintentional_deviation": "driver_partially_liable",
            "reverse_driving": "driver_liable",
            "arrival_then_leave": "driver_malicious",
        }
    )
    class_mix: dict[str, float] = Field(default_factory=lambda: {lab: 0.2 for lab in LABELS})
    no_refinement: bool = False
    no_insight: bool = False
    no_calibration: bool = False
    binary_reward: bool = False

    @model_validator(mode="after")
    def _consistent(self):
        unknown = set(self.grouping) - set(self.labels)
        if unknown:
            raise ValueError(f"grouping names labels outside the label space: {sorted(unknown)}")
        ungrouped = set(self.labels) - set(self.grouping)
        if ungrouped:
            raise ValueError(f"grouping lacks labels: {sorted(ungrouped)}")
        bad = {v for v in self.verdict_of.values()} - set(self.labels)
        if bad:
            raise ValueError(f"verdict_of maps to labels outside the label space: {sorted(bad)}")
        missing = set(self.class_mix) - set(self.verdict_of)
        if missing:
            raise ValueError(f"class_mix labels without a verdict mapping: {sorted(missing)}")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-6:
            raise ValueError("class_mix ratios must sum to 1")
        return self


class PipelineConfig(_Section):
    seed: int = 0
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    network: NetworkSection = Field(default_factory=NetworkSection)
    mutation: MutationSection = Field(default_factory=MutationSection)
    render: RenderSection = Field(default_factory=RenderSection)
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    calibration: CalibrationSection = Field(default_factory=CalibrationSection)
    retrieval: RetrievalSection = Field(default_factory=RetrievalSection)
    coa: CoaSection = Field(default_factory=CoaSection)
    reward: RewardSection = Field(default_factory=RewardSection)
    bench: BenchSection | None = None

    @model_validator(mode="after")
    def _seeds(self):
        # every random procedure gets an explicit seed, derived from the root when unset
        for name in ("network", "mutation", "calibration"):
            section = getattr(self, name)
            if section.seed is None:
                section.seed = derive_seed(self.seed, name)
        return self

    def mutation_config(self) -> MutationConfig:
        m = self.mutation
        return MutationConfig(
            sigma=m.sigma,
            lambda_range=(m.lambda_min, m.lambda_max),
            delta=m.delta,
            tau_thresh=m.tau_thresh,
            seed=m.seed,
            label_drift=m.label_drift,
            drift_mutations=m.drift_mutations,
            spacing=m.spacing,
        )

    def render_spec(self) -> RenderSpec:
        return RenderSpec(**self.render.model_dump())

    def reward_config(self) -> RewardConfig:
        return RewardConfig(**self.reward.model_dump())

    def effective(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(doc: dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path: str | Path) -> PipelineConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        doc = json.loads(text)
    elif p.suffix in (".yaml", ".yml"):
        import yaml

        doc = yaml.safe_load(text) or {}
    else:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    return parse_config(doc)


def write_effective(cfg: PipelineConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "effective_config.json"
    path.write_text(json.dumps(cfg.effective(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
