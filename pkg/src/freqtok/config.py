"""Experiment configuration: JSON with a published schema.

Configs validate against ``schemas/experiment.json`` (unknown keys are
rejected at every level) and fall back to defaults for anything omitted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .model import ModelConfig
from .reduction import ReductionSchedule, ReductionStep
from .synthetic import DEFAULT_GRATINGS, Grating, SyntheticRecipe


class ConfigError(ValueError):
    """Raised for schema violations and inconsistent settings."""


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    schedule: ReductionSchedule
    recipe: SyntheticRecipe
    seed: int = 0
    batch_size: int = 8
    output_dir: str | None = None


def default_config() -> ExperimentConfig:
    """Desk-scale default: small 12-layer model on a 14x14 grid, one
    pixel per patch, reduction at layers 4/7/10."""
    model = ModelConfig(depth=12, dim=64, heads=4, grid_side=14, patch_size=1, channels=3)
    schedule = ReductionSchedule(
        steps=(
            ReductionStep(4, 0.3, 2),
            ReductionStep(7, 0.3, 1),
            ReductionStep(10, 0.3, 1),
        )
    )
    return ExperimentConfig(model=model, schedule=schedule, recipe=SyntheticRecipe())


def _schema() -> dict:
    text = resources.files("freqtok").joinpath("schemas/experiment.json").read_text("utf-8")
    return json.loads(text)


def config_from_dict(payload: dict) -> ExperimentConfig:
    """Validate a raw dict against the schema and build the config."""
    try:
        jsonschema.validate(payload, _schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"configuration rejected: {exc.message}") from exc

    base = default_config()
    m = payload.get("model", {})
    model = ModelConfig(
        depth=m.get("depth", base.model.depth),
        dim=m.get("dim", base.model.dim),
        heads=m.get("heads", base.model.heads),
        mlp_ratio=m.get("mlp_ratio", base.model.mlp_ratio),
        grid_side=m.get("grid_side", base.model.grid_side),
        has_cls=m.get("has_cls", base.model.has_cls),
        patch_size=m.get("patch_size", base.model.patch_size),
        channels=m.get("channels", base.model.channels),
        num_classes=m.get("num_classes", base.model.num_classes),
        layernorm_eps=m.get("layernorm_eps", base.model.layernorm_eps),
    )
    s = payload.get("schedule")
    if s is None:
        schedule = base.schedule
    else:
        steps = tuple(
            ReductionStep(st["layer"], st["rho"], st["window"]) for st in s.get("steps", [])
        )
        try:
            schedule = ReductionSchedule(steps, s.get("omega1"), s.get("omega2"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    d = payload.get("data", {})
    gratings = tuple(
        Grating(g["u"], g["v"], g.get("amplitude", 1.0)) for g in d["gratings"]
    ) if "gratings" in d else DEFAULT_GRATINGS
    try:
        recipe = SyntheticRecipe(
            side=d.get("side", base.recipe.side),
            channels=d.get("channels", base.recipe.channels),
            gratings=gratings,
            n_spots=d.get("n_spots", base.recipe.n_spots),
            spot_amplitude=d.get("spot_amplitude", base.recipe.spot_amplitude),
            noise_sigma=d.get("noise_sigma", base.recipe.noise_sigma),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        model=model,
        schedule=schedule,
        recipe=recipe,
        seed=payload.get("seed", base.seed),
        batch_size=payload.get("batch_size", base.batch_size),
        output_dir=payload.get("output_dir"),
    )


def load_config(path) -> ExperimentConfig:
    """Load and validate a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(payload)
