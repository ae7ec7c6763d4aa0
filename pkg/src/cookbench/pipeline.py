"""End-to-end protocol: surrogate, cooking, protected model, four-cell report.

Stage order is fixed: (1) train the surrogate on raw train data, (2) cook
the train and test splits against that one frozen surrogate (or add the
noise baseline), (3) train the protected model from a fresh
initialisation on cooked train data, (4) evaluate on the test split, and
optionally (5) train a model on perturbations alone.

Every random stream is a child of the master seed, and every artifact
file carries the master seed in its name.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

from .config import ExperimentConfig, config_to_text
from .cook import (
    CraftConfig,
    craft_dataset,
    extract_perturbations,
    random_noise_dataset,
    write_traces_csv,
)
from .data import Dataset, load_dataset, save_dataset, synth_dataset
from .errors import ConstraintError, CookError
from .evalkit import EvalReport, build_report, format_table, write_report_csv
from .nn import ModelParams, ModelSpec, build_spec, init_params, params_fingerprint, save_params
from .ssim import ssim_batch_min
from .tensor import derive_seed
from .trainer import TrainConfig, TrainHistory, train

log = logging.getLogger(__name__)

# Child-stream indices under the master seed.
SEED_DATA, SEED_SURR_INIT, SEED_SURR_SHUFFLE = 1, 2, 3
SEED_PROT_INIT, SEED_PROT_SHUFFLE = 4, 5
SEED_NOISE_TRAIN, SEED_NOISE_TEST = 6, 7
SEED_PERT_INIT, SEED_PERT_SHUFFLE = 8, 9
SEED_CRAFT = 10


class StageError(CookError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class Context:
    """Shared state after the surrogate stage."""

    cfg: ExperimentConfig
    out: Path
    train: Dataset
    test: Dataset
    spec: ModelSpec
    surrogate: ModelParams
    surrogate_history: TrainHistory
    files: list[Path] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.cfg.seed

    def path(self, stem: str, ext: str) -> Path:
        p = self.out / f"{stem}_seed{self.seed}.{ext}"
        self.files.append(p)
        return p


@dataclass
class ExperimentResult:
    reports: list[EvalReport]
    files: list[Path]
    report_csv: Path
    report_txt: Path
    extras: dict = field(default_factory=dict)


def _train_cfg(cfg: ExperimentConfig, stream: int) -> TrainConfig:
    return replace(cfg.train, shuffle_seed=derive_seed(cfg.seed, stream))


def load_or_synth(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.train_path:
        return load_dataset(cfg.train_path), load_dataset(cfg.test_path)
    return synth_dataset(cfg.recipe, derive_seed(cfg.seed, SEED_DATA))


def prepare(cfg: ExperimentConfig) -> Context:
    """Load data and train the surrogate (stage 1)."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with _Stage("data"):
        train_ds, test_ds = load_or_synth(cfg)
        if train_ds.sample_shape != test_ds.sample_shape or train_ds.num_classes != test_ds.num_classes:
            raise ConstraintError("train and test splits disagree on sample shape or class count")
        spec = build_spec(cfg.arch, train_ds.sample_shape, train_ds.num_classes)
    ctx = Context(cfg, out, train_ds, test_ds, spec, None, None)  # type: ignore[arg-type]
    (out / f"config_seed{cfg.seed}.ini").write_text(config_to_text(cfg))
    with _Stage("surrogate"):
        init = init_params(spec, derive_seed(cfg.seed, SEED_SURR_INIT))
        ctx.surrogate, ctx.surrogate_history = train(spec, init, train_ds, _train_cfg(cfg, SEED_SURR_SHUFFLE))
        save_dataset(ctx.path("raw_train", "dcd"), train_ds)
        save_dataset(ctx.path("raw_test", "dcd"), test_ds)
        save_params(ctx.path("surrogate", "dcm"), spec, ctx.surrogate)
        ctx.surrogate_history.write_csv(ctx.path("surrogate_history", "csv"))
    return ctx


def _verify_reload(path: Path, raw: Dataset, threshold: float, ssim_cfg) -> None:
    reloaded = load_dataset(path)
    worst = ssim_batch_min(raw, reloaded, ssim_cfg)
    if worst < threshold:
        raise ConstraintError(f"{path.name}: min SSIM {worst:.4f} below {threshold}")
    lo, hi = float(reloaded.images.min()), float(reloaded.images.max())
    if lo < 0.0 or hi > 1.0:
        raise ConstraintError(f"{path.name}: pixels outside [0, 1]")


def write_manifest(path: Path, craft: CraftConfig, spec: ModelSpec, surrogate: ModelParams) -> None:
    manifest = {
        "craft_fingerprint": craft.fingerprint(),
        "surrogate_fingerprint": params_fingerprint(spec, surrogate),
        "craft_config": craft.to_dict(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def manifest_path(dataset_path: str | Path) -> Path:
    p = Path(dataset_path)
    return p.with_suffix(p.suffix + ".json")


def cook_splits(ctx: Context, craft: CraftConfig, tag: str) -> tuple[Dataset, Dataset]:
    """Stage 2 for crafted methods: cook both splits and persist them."""
    with _Stage(f"cook[{tag}]"):
        cooked = {}
        for split, ds in (("train", ctx.train), ("test", ctx.test)):
            protected, traces = craft_dataset(ctx.spec, ctx.surrogate, ds, craft)
            path = ctx.path(f"cooked_{split}_{tag}", "dcd")
            save_dataset(path, protected)
            write_manifest(manifest_path(path), craft, ctx.spec, ctx.surrogate)
            write_traces_csv(ctx.path(f"traces_{split}_{tag}", "csv"), traces)
            _verify_reload(path, ds, craft.ssim_threshold, craft.ssim_cfg)
            cooked[split] = protected
    return cooked["train"], cooked["test"]


def noise_splits(ctx: Context) -> tuple[Dataset, Dataset]:
    cfg = ctx.cfg
    craft = cfg.craft_config()
    with _Stage("noise"):
        out = {}
        for split, ds, stream in (("train", ctx.train, SEED_NOISE_TRAIN), ("test", ctx.test, SEED_NOISE_TEST)):
            noisy = random_noise_dataset(
                ds, cfg.noise_sigma, derive_seed(cfg.seed, stream), craft.ssim_threshold, craft.ssim_cfg
            )
            path = ctx.path(f"noise_{split}", "dcd")
            save_dataset(path, noisy)
            _verify_reload(path, ds, craft.ssim_threshold, craft.ssim_cfg)
            out[split] = noisy
    return out["train"], out["test"]


def train_protected(ctx: Context, protected_train: Dataset, tag: str, init_stream=SEED_PROT_INIT, shuffle_stream=SEED_PROT_SHUFFLE) -> ModelParams:
    """Stage 3: fresh initialisation, trained on protected data only."""
    with _Stage(f"protected[{tag}]"):
        init = init_params(ctx.spec, derive_seed(ctx.seed, init_stream))
        params, history = train(ctx.spec, init, protected_train, _train_cfg(ctx.cfg, shuffle_stream))
        save_params(ctx.path(f"protected_{tag}", "dcm"), ctx.spec, params)
        history.write_csv(ctx.path(f"protected_history_{tag}", "csv"))
    return params


def evaluate(ctx: Context, protected: ModelParams, protected_test: Dataset, method: str, craft: CraftConfig | None) -> EvalReport:
    """Stage 4: four-cell report on the test split."""
    meta = dict(method=method, seed=ctx.seed, epsilon=ctx.cfg.epsilon)
    if craft is not None:
        meta.update(
            direction=craft.direction.value,
            target=craft.target_rule.value,
            loss=craft.loss_form.value,
            optimizer=craft.optimizer.value,
        )
    with _Stage(f"eval[{method}]"):
        report = build_report((ctx.spec, ctx.surrogate), (ctx.spec, protected), ctx.test, protected_test, **meta)
        report.fingerprints = {"surrogate": f"{params_fingerprint(ctx.spec, ctx.surrogate):016x}"}
        if craft is not None:
            report.fingerprints["craft"] = f"{craft.fingerprint():016x}"
    return report


def run_method(ctx: Context, method: str, craft: CraftConfig | None = None, tag: str | None = None):
    """Stages 2-4 for one method. Returns the report and the protected splits."""
    if method == "noise":
        tag = tag or "noise"
        p_train, p_test = noise_splits(ctx)
        craft = None
    else:
        assert craft is not None
        tag = tag or craft.label().replace("/", "-")
        p_train, p_test = cook_splits(ctx, craft, tag)
    protected = train_protected(ctx, p_train, tag)
    report = evaluate(ctx, protected, p_test, method, craft)
    return report, p_train, p_test, protected


def perturbation_arm(ctx: Context, p_train: Dataset, p_test: Dataset, tag: str) -> EvalReport:
    """Stage 5: model trained on perturbation-only data.

    In the returned report the perturbation model plays the protected
    model and the perturbation test set plays the protected data.
    """
    with _Stage("perturbation"):
        pert_train = extract_perturbations(ctx.train, p_train)
        pert_test = extract_perturbations(ctx.test, p_test)
        save_dataset(ctx.path(f"perturbation_train_{tag}", "dcd"), pert_train)
        save_dataset(ctx.path(f"perturbation_test_{tag}", "dcd"), pert_test)
    model = train_protected(ctx, pert_train, f"perturbation_{tag}", SEED_PERT_INIT, SEED_PERT_SHUFFLE)
    report = evaluate(ctx, model, pert_test, "perturbation", None)
    return report


def _write_reports(ctx: Context, reports: list[EvalReport], stem: str) -> tuple[Path, Path]:
    csv_path = ctx.path(stem, "csv")
    txt_path = ctx.path(stem, "txt")
    write_report_csv(csv_path, reports)
    txt_path.write_text(format_table(reports))
    return csv_path, txt_path


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run the whole protocol for ``cfg.method`` and write all artifacts."""
    ctx = prepare(cfg)
    craft = None if cfg.method == "noise" else cfg.craft_config(seed=derive_seed(cfg.seed, SEED_CRAFT))
    report, p_train, p_test, _ = run_method(ctx, cfg.method, craft)
    reports = [report]
    extras = {"surrogate_train_acc": ctx.surrogate_history.acc[-1]}
    if cfg.perturbation_arm and cfg.method != "noise":
        reports.append(perturbation_arm(ctx, p_train, p_test, "main"))
    csv_path, txt_path = _write_reports(ctx, reports, "report")
    return ExperimentResult(reports, list(ctx.files), csv_path, txt_path, extras)


ABLATION_DIRECTIONS = ("adv", "antiadv")
ABLATION_TARGETS = ("oracle", "pseudo", "maxp")
ABLATION_LOSSES = ("logit", "logp")
ABLATION_OPTIMIZERS = ("adam", "sgdm")


def ablation_grid() -> list[tuple[str, str, str, str]]:
    return list(product(ABLATION_DIRECTIONS, ABLATION_TARGETS, ABLATION_LOSSES, ABLATION_OPTIMIZERS))


def ablate(cfg: ExperimentConfig, grid=None) -> ExperimentResult:
    """One report row per grid cell (default: the full 24-cell grid) plus noise."""
    ctx = prepare(cfg)
    reports = []
    for direction, target, loss, opt in grid or ablation_grid():
        craft = cfg.craft_config(direction=direction, seed=derive_seed(cfg.seed, SEED_CRAFT), target=target, loss=loss, optimizer=opt)
        report, *_ = run_method(ctx, direction, craft)
        reports.append(report)
    noise_report, *_ = run_method(ctx, "noise")
    reports.append(noise_report)
    csv_path, txt_path = _write_reports(ctx, reports, "ablation")
    return ExperimentResult(reports, list(ctx.files), csv_path, txt_path)
