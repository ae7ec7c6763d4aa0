"""Crafting engine: turn a raw dataset into a protected ("cooked") one.

Each sample is optimised independently in pixel space against a frozen
surrogate. Anti-adversarial crafting descends the target loss (raising the
surrogate's confidence in the target class); adversarial crafting ascends
it. After every step pixels are clamped to the valid range and the SSIM to
the raw sample is checked; the first step that would drop below the
threshold is undone and that sample stops.

Samples are processed in fixed-size chunks with per-sample optimiser
state, so a chunk is just many independent problems stepped in lockstep.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, Provenance
from .errors import ConstraintError, NumericError, ParameterError, ShapeError
from .nn import LossForm, ModelParams, ModelSpec, forward, input_gradient_batch, params_fingerprint
from .ssim import SsimConfig, ssim_batch_min, ssim_pairs
from .tensor import Rng, rng_gaussian

log = logging.getLogger(__name__)


class Direction(str, Enum):
    ADV = "adv"
    ANTI_ADV = "antiadv"


class TargetRule(str, Enum):
    ORACLE = "oracle"
    PSEUDO = "pseudo"
    MAX_P = "maxp"


class Optimizer(str, Enum):
    ADAM = "adam"
    SGD_M = "sgdm"


class Termination(str, Enum):
    SSIM_BOUNDARY = "ssim_boundary"
    MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class CraftConfig:
    """Knobs for per-sample pixel optimisation.

    ``maxp_running`` selects how the Max-P rule picks its class: True
    re-evaluates the argmax of the current logits at every iteration,
    False freezes the argmax of the raw sample.
    """

    direction: Direction = Direction.ANTI_ADV
    target_rule: TargetRule = TargetRule.PSEUDO
    loss_form: LossForm = LossForm.TARGET_LOGIT
    optimizer: Optimizer = Optimizer.ADAM
    lr: float = 5e-3
    max_iters: int = 200
    ssim_threshold: float = 0.8
    ssim_cfg: SsimConfig = field(default_factory=SsimConfig)
    clamp_range: tuple[float, float] = (0.0, 1.0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    maxp_running: bool = True
    seed: int = 0
    chunk_size: int = 500

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "target_rule", TargetRule(self.target_rule))
        object.__setattr__(self, "loss_form", LossForm(self.loss_form))
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        object.__setattr__(self, "clamp_range", tuple(float(v) for v in self.clamp_range))
        if self.loss_form is LossForm.CROSS_ENTROPY:
            raise ParameterError("crafting uses a target loss (logit or logp), not cross-entropy")
        if not 0.0 < self.ssim_threshold <= 1.0:
            raise ParameterError(f"ssim_threshold must be in (0, 1], got {self.ssim_threshold}")
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        lo, hi = self.clamp_range
        if lo >= hi:
            raise ParameterError(f"empty clamp range {self.clamp_range}")
        if self.chunk_size < 1:
            raise ParameterError("chunk_size must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("direction", "target_rule", "loss_form", "optimizer"):
            out[key] = getattr(self, key).value
        out["ssim_cfg"]["mode"] = self.ssim_cfg.mode.value
        out["clamp_range"] = list(self.clamp_range)
        out.pop("chunk_size")  # execution detail, does not change results
        return out

    def fingerprint(self) -> int:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")

    def label(self) -> str:
        return f"{self.direction.value}/{self.target_rule.value}/{self.loss_form.value}/{self.optimizer.value}"


@dataclass
class CraftTrace:
    iterations_run: int
    loss_history: list[float]
    final_ssim: float
    target_class: int
    terminated_by: Termination

    @property
    def first_loss(self) -> float:
        return self.loss_history[0] if self.loss_history else float("nan")

    @property
    def last_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")


@dataclass(frozen=True)
class PseudoLabels:
    labels: np.ndarray
    source_model_fingerprint: int


def _argmax_low(logits: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximum, i.e. the lowest class index.
    return np.argmax(logits, axis=-1)


def assign_pseudo_labels(spec: ModelSpec, params: ModelParams, dataset: Dataset | np.ndarray) -> PseudoLabels:
    """Surrogate argmax on each raw sample, ties to the lowest class index."""
    images = getattr(dataset, "images", dataset)
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] != spec.input_shape:
        raise ShapeError(f"images {images.shape[1:]} do not match model input {spec.input_shape}")
    labels = np.concatenate(
        [_argmax_low(forward(spec, params, images[i : i + 1024])) for i in range(0, len(images), 1024)]
    )
    return PseudoLabels(labels.astype(np.int64), params_fingerprint(spec, params))


def _craft_chunk(
    spec: ModelSpec,
    params: ModelParams,
    x_raw: np.ndarray,
    targets: np.ndarray,
    cfg: CraftConfig,
    running_argmax: bool,
) -> tuple[np.ndarray, list[CraftTrace]]:
    n = x_raw.shape[0]
    lo, hi = cfg.clamp_range
    sign = -1.0 if cfg.direction is Direction.ANTI_ADV else 1.0
    x = x_raw.copy()
    m = np.zeros_like(x)  # Adam first moment or SGD velocity
    v = np.zeros_like(x)
    targets = targets.astype(np.int64).copy()
    histories: list[list[float]] = [[] for _ in range(n)]
    iters = np.zeros(n, dtype=np.int64)
    stopped_by = [Termination.MAX_ITERS] * n
    active = np.arange(n)

    for t in range(1, cfg.max_iters + 1):
        if active.size == 0:
            break
        xa = x[active]
        if running_argmax:
            targets[active] = _argmax_low(forward(spec, params, xa))
        values, grad, _ = input_gradient_batch(spec, params, xa, cfg.loss_form, targets[active])
        if not np.all(np.isfinite(grad)):
            bad = active[~np.all(np.isfinite(grad.reshape(len(active), -1)), axis=1)]
            raise NumericError(f"non-finite input gradient for samples {bad[:5].tolist()} at iteration {t}")
        for j, i in enumerate(active):
            histories[i].append(float(values[j]))
        iters[active] += 1

        if cfg.optimizer is Optimizer.ADAM:
            m[active] = cfg.beta1 * m[active] + (1.0 - cfg.beta1) * grad
            v[active] = cfg.beta2 * v[active] + (1.0 - cfg.beta2) * grad * grad
            m_hat = m[active] / (1.0 - cfg.beta1**t)
            v_hat = v[active] / (1.0 - cfg.beta2**t)
            step = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        else:
            m[active] = cfg.momentum * m[active] + grad
            step = cfg.lr * m[active]

        candidate = np.clip(xa + sign * step, lo, hi)
        sims = ssim_pairs(x_raw[active], candidate, cfg.ssim_cfg)
        ok = sims >= cfg.ssim_threshold
        x[active[ok]] = candidate[ok]
        for i in active[~ok]:
            stopped_by[i] = Termination.SSIM_BOUNDARY
        active = active[ok]

    final = ssim_pairs(x_raw, x, cfg.ssim_cfg)
    traces = [
        CraftTrace(int(iters[i]), histories[i], float(final[i]), int(targets[i]), stopped_by[i]) for i in range(n)
    ]
    return x, traces


def _check_sample_range(x: np.ndarray, cfg: CraftConfig) -> None:
    lo, hi = cfg.clamp_range
    if x.size and (x.min() < lo or x.max() > hi):
        raise ParameterError(f"raw pixels must lie in [{lo}, {hi}]")


def craft_example(
    spec: ModelSpec,
    params: ModelParams,
    x_raw: np.ndarray,
    target: int,
    cfg: CraftConfig,
) -> tuple[np.ndarray, CraftTrace]:
    """Craft one protected sample towards (AntiAdv) or away from (Adv) ``target``.

    For the Max-P rule with ``maxp_running`` the given target is ignored
    and the current argmax is used at every iteration.
    """
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if x_raw.shape != spec.input_shape:
        raise ShapeError(f"sample shape {x_raw.shape} != model input {spec.input_shape}")
    _check_sample_range(x_raw, cfg)
    if not 0 <= int(target) < spec.num_classes:
        raise ParameterError(f"target {target} outside [0, {spec.num_classes})")
    running = cfg.target_rule is TargetRule.MAX_P and cfg.maxp_running
    x, traces = _craft_chunk(spec, params, x_raw[None], np.array([int(target)]), cfg, running)
    return x[0], traces[0]


def select_targets(spec: ModelSpec, params: ModelParams, dataset: Dataset, cfg: CraftConfig) -> np.ndarray:
    """Per-sample starting targets for the configured rule."""
    if cfg.target_rule is TargetRule.ORACLE:
        return dataset.labels.astype(np.int64).copy()
    # Pseudo labels, and the initial Max-P class, are the raw-sample argmax.
    return assign_pseudo_labels(spec, params, dataset).labels


def craft_dataset(
    spec: ModelSpec,
    params: ModelParams,
    dataset: Dataset,
    cfg: CraftConfig,
) -> tuple[Dataset, list[CraftTrace]]:
    """Craft every sample of ``dataset``. Labels are carried over unchanged."""
    images = dataset.images
    if images.shape[1:] != spec.input_shape:
        raise ShapeError(f"dataset samples {images.shape[1:]} do not match model input {spec.input_shape}")
    _check_sample_range(images, cfg)
    targets = select_targets(spec, params, dataset, cfg)
    running = cfg.target_rule is TargetRule.MAX_P and cfg.maxp_running
    out = np.empty_like(images)
    traces: list[CraftTrace] = []
    for start in range(0, len(images), cfg.chunk_size):
        sl = slice(start, start + cfg.chunk_size)
        x, tr = _craft_chunk(spec, params, images[sl], targets[sl], cfg, running)
        out[sl] = x
        traces.extend(tr)
        log.debug("crafted %d/%d samples", min(start + cfg.chunk_size, len(images)), len(images))
    prov = Provenance.cooked(cooked_fingerprint(cfg, spec, params))
    cooked = Dataset(out, dataset.labels.copy(), dataset.num_classes, dataset.split, prov)
    worst = ssim_batch_min(dataset, cooked, cfg.ssim_cfg)
    if worst < cfg.ssim_threshold:
        raise ConstraintError(f"crafted dataset violates SSIM >= {cfg.ssim_threshold} (min {worst})")
    return cooked, traces


def cooked_fingerprint(cfg: CraftConfig, spec: ModelSpec, params: ModelParams) -> int:
    """Fingerprint binding a cooked dataset to its craft config and surrogate."""
    return combine_fingerprints(cfg.fingerprint(), params_fingerprint(spec, params))


def combine_fingerprints(craft_fp: int, surrogate_fp: int) -> int:
    blob = craft_fp.to_bytes(8, "little") + surrogate_fp.to_bytes(8, "little")
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def random_noise_dataset(
    dataset: Dataset,
    sigma: float,
    seed: int,
    ssim_threshold: float = 0.8,
    ssim_cfg: SsimConfig | None = None,
    max_halvings: int = 10,
) -> Dataset:
    """Gaussian-noise baseline, SSIM-matched by halving ``sigma`` as needed.

    The same noise draw is rescaled on every attempt, so the result is a
    function of ``(dataset, sigma, seed)`` only.

    Raises:
        ConstraintError: if ``max_halvings`` halvings do not reach the threshold.
    """
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    unit = rng_gaussian(Rng(seed), dataset.images.shape, 1.0)
    s = float(sigma)
    for attempt in range(max_halvings + 1):
        noisy = np.clip(dataset.images + s * unit, 0.0, 1.0)
        worst = float(ssim_pairs(dataset.images, noisy, ssim_cfg).min())
        if worst >= ssim_threshold:
            if attempt:
                log.info("noise sigma reduced %g -> %g to reach SSIM %.3f", sigma, s, ssim_threshold)
            return Dataset(noisy, dataset.labels.copy(), dataset.num_classes, dataset.split, Provenance.noise(s))
        s /= 2.0
    raise ConstraintError(f"noise sigma {sigma} cannot reach SSIM {ssim_threshold} after {max_halvings} halvings")


def extract_perturbations(raw: Dataset, protected: Dataset) -> Dataset:
    """``(protected - raw) + 0.5`` per sample, labels kept."""
    if len(raw) != len(protected) or raw.images.shape != protected.images.shape:
        raise ParameterError("raw and protected datasets are not aligned")
    pert = (protected.images - raw.images) + 0.5
    return Dataset(pert, raw.labels.copy(), raw.num_classes, raw.split, Provenance.perturbation())


TRACE_FIELDS = ("sample_index", "target_class", "iterations_run", "final_ssim", "terminated_by", "first_loss", "last_loss")


def write_traces_csv(path: str | Path, traces: Sequence[CraftTrace]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for i, tr in enumerate(traces):
            w.writerow([i, tr.target_class, tr.iterations_run, repr(tr.final_ssim), tr.terminated_by.value, repr(tr.first_loss), repr(tr.last_loss)])


def read_traces_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
