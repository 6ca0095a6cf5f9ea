"""Detection quality metrics; attack is always the positive class.

Binary scoring works from a 2x2 confusion matrix with an explicit policy
for UNKNOWN predictions (count them as attack, the alarm-on-odd default, or
exclude them).  Zero-denominator metrics score 0 and are flagged instead of
raising.  Multi-class rulesets get a plain confusion table.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .rules import UNKNOWN

NORMAL = "normal"
ATTACK = "attack"


class MetricsError(Exception):
    """Evaluation inputs were unusable."""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    excluded: int = 0  # UNKNOWN rows dropped under the exclude policy

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    """Six headline fractions; ``degenerate`` names any zero-denominator ones."""

    sensitivity: float
    fpr: float
    specificity: float
    accuracy: float
    precision: float
    mcc: float
    degenerate: tuple[str, ...] = ()


@dataclass(frozen=True)
class MulticlassTable:
    truth_classes: tuple[str, ...]
    predicted_classes: tuple[str, ...]
    counts: np.ndarray  # (truth, predicted)


def binarize_truth(labels: Sequence[str | None], normal_token: str = "normal") -> list[str]:
    """Collapse raw labels to normal/attack; anything but the normal token is attack."""
    out = []
    for lab in labels:
        if lab is None:
            raise MetricsError("evaluation needs a label on every row")
        out.append(NORMAL if lab == normal_token else ATTACK)
    return out


def confusion(
    predicted: Sequence[str],
    truth: Sequence[str],
    unknown_policy: str = "as-attack",
) -> ConfusionMatrix:
    if len(predicted) != len(truth):
        raise MetricsError(f"{len(predicted)} predictions vs {len(truth)} truth labels")
    if unknown_policy not in ("as-attack", "exclude"):
        raise MetricsError(f"unknown_policy must be as-attack or exclude, got {unknown_policy!r}")
    tp = fp = tn = fn = excluded = 0
    for p, t in zip(predicted, truth):
        if t not in (NORMAL, ATTACK):
            raise MetricsError(f"truth token {t!r} is not binary; apply binarize_truth first")
        if p == UNKNOWN:
            if unknown_policy == "exclude":
                excluded += 1
                continue
            p = ATTACK
        elif p not in (NORMAL, ATTACK):
            raise MetricsError(f"predicted token {p!r} is not binary")
        if p == ATTACK:
            if t == ATTACK:
                tp += 1
            else:
                fp += 1
        else:
            if t == ATTACK:
                fn += 1
            else:
                tn += 1
    return ConfusionMatrix(tp, fp, tn, fn, excluded)


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    flags: list[str] = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            flags.append(name)
            return 0.0
        return num / den

    sens = ratio(cm.tp, cm.tp + cm.fn, "sensitivity")
    if cm.fp + cm.tn == 0:
        flags.extend(["fpr", "specificity"])
        fpr = spec = 0.0
    else:
        fpr = cm.fp / (cm.fp + cm.tn)
        spec = 1.0 - fpr  # exact complement by construction
    acc = ratio(cm.tp + cm.tn, cm.total, "accuracy")
    prec = ratio(cm.tp, cm.tp + cm.fp, "precision")
    denom = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if denom == 0:
        flags.append("mcc")
        mcc = 0.0
    else:
        mcc = (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denom)
    return MetricsReport(sens, fpr, spec, acc, prec, mcc, tuple(flags))


def multiclass_table(predicted: Sequence[str], truth: Sequence[str]) -> MulticlassTable:
    if len(predicted) != len(truth):
        raise MetricsError(f"{len(predicted)} predictions vs {len(truth)} truth labels")
    t_classes = tuple(sorted(set(truth)))
    p_sorted = sorted(set(predicted) - {UNKNOWN})
    if UNKNOWN in set(predicted):
        p_sorted.append(UNKNOWN)
    p_classes = tuple(p_sorted)
    ti = {c: i for i, c in enumerate(t_classes)}
    pi = {c: i for i, c in enumerate(p_classes)}
    counts = np.zeros((len(t_classes), len(p_classes)), dtype=np.int64)
    for p, t in zip(predicted, truth):
        counts[ti[t], pi[p]] += 1
    return MulticlassTable(t_classes, p_classes, counts)


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

_METRIC_ORDER = ("sensitivity", "fpr", "specificity", "accuracy", "precision", "mcc")


def format_confusion(cm: ConfusionMatrix) -> str:
    cells = [[cm.tp, cm.fn], [cm.fp, cm.tn]]
    width = max(6, *(len(str(v)) for row in cells for v in row))
    head = f"{'':>15}  {'pred attack':>{width + 5}}  {'pred normal':>{width + 5}}"
    r1 = f"{'actual attack':>15}  {cm.tp:>{width + 5}}  {cm.fn:>{width + 5}}"
    r2 = f"{'actual normal':>15}  {cm.fp:>{width + 5}}  {cm.tn:>{width + 5}}"
    lines = [head, r1, r2]
    if cm.excluded:
        lines.append(f"(excluded {cm.excluded} UNKNOWN row(s))")
    return "\n".join(lines)


def format_metrics(report: MetricsReport) -> str:
    lines = []
    for name in _METRIC_ORDER:
        v = getattr(report, name) * 100.0
        unit = "" if name == "mcc" else " %"
        mark = "  (degenerate)" if name in report.degenerate else ""
        lines.append(f"{name:<12} {v:>7.2f}{unit}{mark}")
    return "\n".join(lines)


def metrics_tsv(report: MetricsReport) -> str:
    lines = [f"{name}\t{getattr(report, name)!r}" for name in _METRIC_ORDER]
    if report.degenerate:
        lines.append("degenerate\t" + ",".join(report.degenerate))
    return "\n".join(lines)


def format_multiclass(table: MulticlassTable) -> str:
    width = max(
        8,
        *(len(c) for c in table.truth_classes + table.predicted_classes),
        *(len(str(int(v))) for v in table.counts.ravel()),
    )
    corner = "actual \\ pred"
    head = f"{corner:>{width + 6}}  " + "  ".join(
        f"{c:>{width}}" for c in table.predicted_classes
    )
    lines = [head]
    for i, t in enumerate(table.truth_classes):
        row = "  ".join(f"{int(v):>{width}}" for v in table.counts[i])
        lines.append(f"{t:>{width + 6}}  {row}")
    return "\n".join(lines)
