"""Per-class performance reports and the noise-gate detection audit.

Scoring is one-vs-rest over (sub-episode, true-label) pairs: a multi-label
truth row contributes one pair per label, mirroring the duplication used in
training. A prediction of "Unclassified" counts against the true class's
sensitivity but adds a false positive to no class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import LABEL_ORDER, UNCLASSIFIED, RhythmClass

SubRef = tuple[str, int]

_PRED_COLUMNS = [lab.value for lab in LABEL_ORDER] + [UNCLASSIFIED]


class ScoringError(ValueError):
    pass


@dataclass
class ClassMetrics:
    n: int
    f1: float
    sensitivity: float
    specificity: float
    precision: float


@dataclass
class ClassReport:
    per_class: dict[str, ClassMetrics]
    confusion: np.ndarray  # rows: true class (LABEL_ORDER); cols: predicted + Unclassified
    n_pairs: int

    @property
    def macro_f1(self) -> float:
        present = [m.f1 for m in self.per_class.values() if m.n > 0]
        return float(np.mean(present)) if present else 0.0

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "macro_f1": self.macro_f1,
            "per_class": {
                name: vars(m).copy() for name, m in self.per_class.items()
            },
            "confusion": {
                "rows": [lab.value for lab in LABEL_ORDER],
                "cols": _PRED_COLUMNS,
                "counts": self.confusion.tolist(),
            },
        }


def score(
    predictions: dict[SubRef, str] | list[tuple[SubRef, str]],
    truth: list[tuple[SubRef, RhythmClass]],
) -> ClassReport:
    """Score predicted labels against (sub-episode, label) truth pairs.

    predictions holds one label per sub-episode (a RhythmClass name or
    "Unclassified"); truth may repeat a sub-episode with different labels.
    Truth pairs whose sub-episode has no prediction are an error: the caller
    aligned the sets wrong.
    """
    if not truth:
        raise ScoringError("empty truth")
    pred_map = dict(predictions) if not isinstance(predictions, dict) else predictions

    row_index = {lab: i for i, lab in enumerate(LABEL_ORDER)}
    col_index = {name: i for i, name in enumerate(_PRED_COLUMNS)}
    confusion = np.zeros((len(LABEL_ORDER), len(_PRED_COLUMNS)), dtype=np.int64)

    for ref, true_label in truth:
        if ref not in pred_map:
            raise ScoringError(f"no prediction for sub-episode {ref}")
        pred = pred_map[ref]
        if pred not in col_index:
            raise ScoringError(f"unknown predicted label {pred!r}")
        confusion[row_index[true_label], col_index[pred]] += 1

    n_pairs = int(confusion.sum())
    per_class: dict[str, ClassMetrics] = {}
    for lab in LABEL_ORDER:
        r = row_index[lab]
        c = col_index[lab.value]
        tp = int(confusion[r, c])
        fn = int(confusion[r].sum() - tp)
        fp = int(confusion[:, c].sum() - tp)
        tn = n_pairs - tp - fn - fp
        n = tp + fn
        sens = tp / n if n else 0.0
        spec = tn / (tn + fp) if (tn + fp) else 0.0
        prec = tp / (tp + fp) if (tp + fp) else 0.0
        f1 = 2 * prec * sens / (prec + sens) if (prec + sens) else 0.0
        per_class[lab.value] = ClassMetrics(
            n=n, f1=f1, sensitivity=sens, specificity=spec, precision=prec
        )
    return ClassReport(per_class=per_class, confusion=confusion, n_pairs=n_pairs)


def noise_gate_audit(
    detected_refs: set[SubRef], truth: list[tuple[SubRef, RhythmClass]]
) -> dict[str, float]:
    """Fraction of each label's sub-episodes the gate flagged as noise."""
    totals: dict[str, int] = {lab.value: 0 for lab in LABEL_ORDER}
    hits: dict[str, int] = {lab.value: 0 for lab in LABEL_ORDER}
    for ref, lab in truth:
        totals[lab.value] += 1
        if ref in detected_refs:
            hits[lab.value] += 1
    return {
        name: (hits[name] / totals[name] if totals[name] else 0.0) for name in totals
    }


# ---------------------------------------------------------------------------
# rendering


def format_report(report: ClassReport, title: str = "results") -> str:
    return format_comparison({title: report})


def format_comparison(reports: dict[str, ClassReport]) -> str:
    """Fixed-width table: one row per class, one column per pipeline variant.

    Cells show F1 with (specificity/sensitivity) in brackets.
    """
    names = list(reports)
    widths = [13, 7] + [max(18, len(n) + 2) for n in names]
    header = ["Class".ljust(widths[0]), "n".rjust(widths[1])] + [
        n.center(w) for n, w in zip(names, widths[2:])
    ]
    lines = ["  ".join(header)]
    lines.append("-" * len(lines[0]))
    base = reports[names[0]]
    for lab in LABEL_ORDER:
        cells = [lab.value.ljust(widths[0]), str(base.per_class[lab.value].n).rjust(widths[1])]
        for name, w in zip(names, widths[2:]):
            m = reports[name].per_class[lab.value]
            cells.append(f"{m.f1:.2f} ({m.specificity:.2f}/{m.sensitivity:.2f})".center(w))
        lines.append("  ".join(cells))
    lines.append("-" * len(lines[0]))
    macro = ["macro F1".ljust(widths[0]), "".rjust(widths[1])] + [
        f"{reports[n].macro_f1:.3f}".center(w) for n, w in zip(names, widths[2:])
    ]
    lines.append("  ".join(macro))
    return "\n".join(lines)


def report_to_json(reports: dict[str, ClassReport]) -> str:
    return json.dumps({name: rep.to_dict() for name, rep in reports.items()}, indent=2)
