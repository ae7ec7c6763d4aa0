"""Accuracy, AUC, the four-cell grid and the CP/PP protection metrics.

The grid crosses two models (the surrogate trained on raw data and the
protected model trained on cooked data) with two test sets (raw and
cooked). Copyright protection is how much the protected model loses on
raw data relative to the surrogate, and performance preservation is the
negated gap between the protected model on cooked data and the surrogate
on raw data. Both are reported in percentage points.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ParameterError, ShapeError, UndefinedMetricError
from .nn import ModelParams, ModelSpec
from .trainer import predict

AUC_SCHEME = "macro-ovr"
DEFAULT_EPSILON = 5.0


def accuracy(pred_labels, true_labels) -> float:
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ShapeError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ParameterError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(pred == true) / pred.size)


def auc_binary(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counted one half.

    Computed from mid-ranks; the pair count is a sum of halves, so the
    result equals exhaustive pair counting exactly.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError("scores and labels must be aligned 1-D arrays")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_multiclass(prob_rows, labels) -> float:
    """Macro one-vs-rest AUC over the classes present in ``labels``."""
    p = np.asarray(prob_rows, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2 or p.shape[0] != y.size:
        raise ShapeError("prob_rows must be [N, classes] aligned with labels")
    present = np.unique(y)
    if present.size < 2:
        raise UndefinedMetricError("AUC needs at least two classes present")
    return float(np.mean([auc_binary(p[:, c], (y == c).astype(int)) for c in present]))


def compute_cp_pp(e_fp_dr: float, e_fr_dr: float, e_fp_dp: float) -> tuple[float, float]:
    """``cp = e(fp, raw) - e(fr, raw)`` and ``pp = -|e(fp, cooked) - e(fr, raw)|``, x100."""
    for v in (e_fp_dr, e_fr_dr, e_fp_dp):
        if not 0.0 <= v <= 1.0:
            raise ParameterError(f"metric value {v} outside [0, 1]")
    cp = 100.0 * (e_fp_dr - e_fr_dr)
    pp = -100.0 * abs(e_fp_dp - e_fr_dr)
    return cp, pp


@dataclass
class Cell:
    acc: float
    auc: float


@dataclass
class EvalReport:
    """Four-cell grid keyed ``(model, data)`` with model in {fr, fp}, data in {dr, dp}."""

    cells: dict[tuple[str, str], Cell]
    cp_acc: float
    pp_acc: float
    cp_auc: float
    pp_auc: float
    method: str = "antiadv"
    direction: str = ""
    target: str = ""
    loss: str = ""
    optimizer: str = ""
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    auc_scheme: str = AUC_SCHEME
    fingerprints: dict[str, str] = field(default_factory=dict)

    @property
    def exceeds_epsilon(self) -> bool:
        """True when the accuracy gap breaks the reporting budget."""
        return abs(self.pp_acc) > self.epsilon

    def row(self) -> dict[str, object]:
        out: dict[str, object] = {
            "method": self.method,
            "direction": self.direction,
            "target": self.target,
            "loss": self.loss,
            "optimizer": self.optimizer,
            "seed": self.seed,
        }
        for metric in ("acc", "auc"):
            for m, d in (("fr", "dr"), ("fp", "dr"), ("fp", "dp"), ("fr", "dp")):
                out[f"{metric}_{m}_{d}"] = getattr(self.cells[(m, d)], metric)
        out.update(cp_acc=self.cp_acc, pp_acc=self.pp_acc, cp_auc=self.cp_auc, pp_auc=self.pp_auc)
        return out


REPORT_FIELDS = (
    "method", "direction", "target", "loss", "optimizer", "seed",
    "acc_fr_dr", "acc_fp_dr", "acc_fp_dp", "acc_fr_dp",
    "auc_fr_dr", "auc_fp_dr", "auc_fp_dp", "auc_fr_dp",
    "cp_acc", "pp_acc", "cp_auc", "pp_auc",
)  # fmt: skip


def _safe_auc(probs: np.ndarray, labels: np.ndarray) -> float:
    try:
        return auc_multiclass(probs, labels)
    except UndefinedMetricError:
        return float("nan")


def report_from_cells(cells: dict[tuple[str, str], Cell], **meta) -> EvalReport:
    cp_acc, pp_acc = compute_cp_pp(cells[("fp", "dr")].acc, cells[("fr", "dr")].acc, cells[("fp", "dp")].acc)
    aucs = (cells[("fp", "dr")].auc, cells[("fr", "dr")].auc, cells[("fp", "dp")].auc)
    if all(np.isfinite(aucs)):
        cp_auc, pp_auc = compute_cp_pp(*aucs)
    else:
        cp_auc = pp_auc = float("nan")
    return EvalReport(cells, cp_acc, pp_acc, cp_auc, pp_auc, **meta)


def build_report(
    surrogate: tuple[ModelSpec, ModelParams],
    protected_model: tuple[ModelSpec, ModelParams],
    raw_data,
    protected_data,
    **meta,
) -> EvalReport:
    """Evaluate both models on both test sets and derive CP/PP.

    ``surrogate`` and ``protected_model`` are ``(spec, params)`` pairs;
    the datasets must be aligned and carry the true labels. Remaining
    keyword arguments become report metadata (method, seed, ...).
    """
    if len(raw_data) != len(protected_data):
        raise ShapeError("raw and protected test sets are not aligned")
    models = {"fr": surrogate, "fp": protected_model}
    data = {"dr": raw_data, "dp": protected_data}
    cells = {}
    for m, (spec, params) in models.items():
        for d, ds in data.items():
            pred, probs = predict(spec, params, ds)
            cells[(m, d)] = Cell(accuracy(pred, ds.labels), _safe_auc(probs, ds.labels))
    return report_from_cells(cells, **meta)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_report_csv(path: str | Path | None, reports: Sequence[EvalReport]) -> str:
    """Write reports as CSV rows (schema :data:`REPORT_FIELDS`). Returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in reports:
        row = r.row()
        w.writerow([_fmt(row[k]) for k in REPORT_FIELDS])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_report_csv(path: str | Path) -> list[EvalReport]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
            raise ParameterError(f"unexpected report columns: {reader.fieldnames}")
        out = []
        for row in reader:
            cells = {
                (m, d): Cell(float(row[f"acc_{m}_{d}"]), float(row[f"auc_{m}_{d}"]))
                for m in ("fr", "fp")
                for d in ("dr", "dp")
            }
            out.append(
                EvalReport(
                    cells,
                    float(row["cp_acc"]), float(row["pp_acc"]), float(row["cp_auc"]), float(row["pp_auc"]),
                    method=row["method"], direction=row["direction"], target=row["target"],
                    loss=row["loss"], optimizer=row["optimizer"], seed=int(row["seed"]),
                )  # fmt: skip
            )
        return out


def format_table(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text summary, one line per report."""
    header = ["method", "dir", "target", "loss", "opt", "seed", "acc fr/dr", "fp/dr", "fp/dp", "fr/dp", "CP", "PP", "CP(auc)", "PP(auc)", "flag"]
    rows = []
    for r in reports:
        c = r.cells
        rows.append([
            r.method, r.direction or "-", r.target or "-", r.loss or "-", r.optimizer or "-", str(r.seed),
            f"{c[('fr', 'dr')].acc:.3f}", f"{c[('fp', 'dr')].acc:.3f}", f"{c[('fp', 'dp')].acc:.3f}", f"{c[('fr', 'dp')].acc:.3f}",
            f"{r.cp_acc:+.2f}", f"{r.pp_acc:+.2f}", f"{r.cp_auc:+.2f}", f"{r.pp_auc:+.2f}",
            "|PP|>eps" if r.exceeds_epsilon else "",
        ])  # fmt: skip
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in rows]
    lines.append(f"AUC scheme: {AUC_SCHEME}; CP/PP in percentage points")
    return "\n".join(lines) + "\n"
