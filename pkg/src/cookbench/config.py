"""Experiment configuration: INI-style ``key = value`` files with sections.

Every key has a default, so an empty file (or no file) is a valid
configuration. ``default_config_text()`` prints the full set.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cook import CraftConfig, Direction, Optimizer, TargetRule
from .data import SynthRecipe
from .errors import ParameterError
from .nn import LossForm
from .ssim import SsimConfig
from .trainer import TrainConfig

METHODS = ("antiadv", "adv", "noise")

# Default corpus for experiments: small jittered blobs whose brightness
# varies widely from sample to sample, so 30 epochs of SGD do not
# saturate the raw task. ``SynthRecipe()`` itself is an easier corpus.
EXPERIMENT_RECIPE = SynthRecipe(
    blob_sigma=1.0,
    amplitude=0.7,
    amplitude_jitter=0.5,
    background=0.2,
    center_jitter=1.5,
    separation=1.5,
    noise=0.08,
)


@dataclass(frozen=True)
class CraftSettings:
    target: str = "pseudo"
    loss: str = "logit"
    optimizer: str = "adam"
    lr: float = 5e-3
    max_iters: int = 200
    ssim_threshold: float = 0.8
    ssim_window: int = 7
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    ssim_range: float = 1.0
    maxp_running: bool = True
    chunk_size: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "antiadv"
    seed: int = 0
    out: str = "runs"
    arch: str = "small_cnn"
    train_path: str = ""  # empty -> synthetic recipe
    test_path: str = ""
    noise_sigma: float = 0.25
    perturbation_arm: bool = True
    epsilon: float = 5.0
    recipe: SynthRecipe = EXPERIMENT_RECIPE
    train: TrainConfig = field(default_factory=TrainConfig)
    craft: CraftSettings = field(default_factory=CraftSettings)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}, got {self.method!r}")
        if bool(self.train_path) != bool(self.test_path):
            raise ParameterError("train_path and test_path must be given together")
        for p in (self.train_path, self.test_path):
            if p and not Path(p).is_file():
                raise ParameterError(f"dataset file not found: {p}")

    def craft_config(self, direction: str | None = None, seed: int = 0, **overrides) -> CraftConfig:
        c = replace(self.craft, **overrides)
        direction = direction or ("adv" if self.method == "adv" else "antiadv")
        return CraftConfig(
            direction=Direction(direction),
            target_rule=TargetRule(c.target),
            loss_form=LossForm(c.loss),
            optimizer=Optimizer(c.optimizer),
            lr=c.lr,
            max_iters=c.max_iters,
            ssim_threshold=c.ssim_threshold,
            ssim_cfg=SsimConfig(window=c.ssim_window, k1=c.ssim_k1, k2=c.ssim_k2, dynamic_range=c.ssim_range),
            maxp_running=c.maxp_running,
            seed=seed,
            chunk_size=c.chunk_size,
        )


_SECTIONS = {"recipe": SynthRecipe, "train": TrainConfig, "craft": CraftSettings}
# Derived from the master seed by the pipeline, never configured directly.
_HIDDEN = {"shuffle_seed"}


def _coerce(raw: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw, 0)
        if isinstance(like, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ParameterError(f"bad value for {key}: {raw!r}")


def _apply(obj, items: dict[str, str], section: str):
    known = {f.name: getattr(obj, f.name) for f in fields(obj) if f.name not in _SECTIONS and f.name not in _HIDDEN}
    updates = {}
    for key, raw in items.items():
        if key not in known:
            raise ParameterError(f"unknown key [{section}] {key}")
        updates[key] = _coerce(raw, known[key], f"[{section}] {key}")
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"invalid [{section}] settings: {exc}") from exc


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse config text; ``overrides`` replace top-level keys (e.g. seed, out)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParameterError(f"cannot parse config: {exc}") from exc
    unknown = set(parser.sections()) - set(_SECTIONS) - {"experiment"}
    if unknown:
        raise ParameterError(f"unknown config sections: {sorted(unknown)}")
    top = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    defaults = ExperimentConfig()
    parts = {}
    for name in _SECTIONS:
        current = getattr(defaults, name)
        if parser.has_section(name):
            current = _apply(current, dict(parser[name]), name)
        parts[name] = current
    cfg = _apply(replace(defaults, **parts), top, "experiment")
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    if path is None:
        return parse_config("", **overrides)
    p = Path(path)
    if not p.is_file():
        raise ParameterError(f"config file not found: {p}")
    return parse_config(p.read_text(), **overrides)


def config_to_text(cfg: ExperimentConfig) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(v) if isinstance(v, float) else str(v)

    lines = ["[experiment]"]
    for f in fields(cfg):
        if f.name not in _SECTIONS:
            lines.append(f"{f.name} = {fmt(getattr(cfg, f.name))}")
    for name in _SECTIONS:
        lines.append("")
        lines.append(f"[{name}]")
        sub = getattr(cfg, name)
        for f in fields(sub):
            if f.name in _HIDDEN:
                continue
            lines.append(f"{f.name} = {fmt(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def default_config_text() -> str:
    return config_to_text(ExperimentConfig())
