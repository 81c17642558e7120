"""Jaccard and ROC-AUC evaluation with Table-style and key-value reports."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
from scipy.stats import rankdata

from .classification import CLASSES, MELANOMA, SK, label_index
from .exceptions import ShapeError, UndefinedMetricError


def jaccard(a, b) -> float:
    """|a ∩ b| / |a ∪ b| of two boolean masks; two empty masks score 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def auc(scores, labels) -> float:
    """Mann-Whitney ROC-AUC; tied positive/negative pairs count one half.

    Computed from mid-ranks in O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores but {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def average_auc(mel: float, sk: float, percent: bool | None = None) -> float:
    """Arithmetic mean of the melanoma and SK AUCs.

    Both values must be in the same unit: fractions in [0, 1] or percents in
    [0, 100]. With ``percent=None`` the unit is inferred and mixing is an error.
    """
    vals = (float(mel), float(sk))
    if percent is None:
        small = [v <= 1.0 for v in vals]
        if small[0] != small[1]:
            raise ValueError(f"mixed unit forms: {vals} (fractions and percents)")
        percent = not small[0]
    upper = 100.0 if percent else 1.0
    if not all(0.0 <= v <= upper for v in vals):
        raise ValueError(f"AUC values out of range for the unit: {vals}")
    return (vals[0] + vals[1]) / 2


def format_percent(value: float, already_percent: bool = False) -> str:
    """Render with two decimals, rounding half-up (display only)."""
    v = value if already_percent else value * 100
    return str(Decimal(repr(v)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class AverageAudit:
    melanoma: float
    sk: float
    reported: float
    computed: float

    @property
    def consistent(self) -> bool:
        return format_percent(self.computed, True) == format_percent(self.reported, True)

    def note(self) -> str:
        c = format_percent(self.computed, True)
        r = format_percent(self.reported, True)
        if self.consistent:
            return f"average {r} matches ({format_percent(self.melanoma, True)} + {format_percent(self.sk, True)}) / 2"
        return (f"DISCREPANCY: reported average {r} but "
                f"({format_percent(self.melanoma, True)} + {format_percent(self.sk, True)}) / 2 = {c}")


def audit_average(mel: float, sk: float, reported: float) -> AverageAudit:
    """Check a published average AUC against its per-class values (percent)."""
    return AverageAudit(mel, sk, reported, average_auc(mel, sk, percent=True))


# ------------------------------------------------------------------- results


@dataclass
class SegResult:
    per_image: dict = field(default_factory=dict)

    @property
    def mean_jaccard(self) -> float:
        if not self.per_image:
            raise UndefinedMetricError("no images evaluated")
        return float(np.mean(list(self.per_image.values())))

    def to_dict(self) -> dict:
        return {"mean_jaccard": self.mean_jaccard, "n_images": len(self.per_image),
                "per_image": {k: float(v) for k, v in sorted(self.per_image.items())}}

    def render(self, method: str = "model", additional: str = "No") -> str:
        return render_table(
            ["%", "With additional Training Images", "Jaccard"],
            [[method, additional, format_percent(self.mean_jaccard)]])


@dataclass
class ClsResult:
    melanoma_auc: float
    sk_auc: float

    @property
    def average_auc(self) -> float:
        return average_auc(self.melanoma_auc, self.sk_auc, percent=False)

    def to_dict(self) -> dict:
        return {"melanoma_auc": self.melanoma_auc, "sk_auc": self.sk_auc,
                "average_auc": self.average_auc}

    def render(self, method: str = "model", additional: str = "No") -> str:
        return render_table(
            ["%", "With additional Training Images", "Melanoma AUC", "SK AUC", "Average AUC"],
            [[method, additional, format_percent(self.melanoma_auc),
              format_percent(self.sk_auc), format_percent(self.average_auc)]])


def render_table(header, rows) -> str:
    cols = list(zip(header, *rows))
    widths = [max(len(str(c)) for c in col) for col in cols]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(header), line(["-" * w for w in widths])]
    out += [line(r) for r in rows]
    return "\n".join(out)


def to_json(result) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=True)


def evaluate_seg(predictions: dict, ground_truth: dict) -> SegResult:
    """Per-image Jaccard over matching image ids."""
    missing = sorted(set(ground_truth) - set(predictions))
    extra = sorted(set(predictions) - set(ground_truth))
    if missing or extra:
        raise KeyError(f"image ids differ: missing predictions {missing}, unexpected {extra}")
    return SegResult({k: jaccard(predictions[k], ground_truth[k]) for k in sorted(ground_truth)})


def evaluate_cls(predictions, labels) -> ClsResult:
    """Melanoma-vs-rest and SK-vs-rest AUCs.

    ``predictions`` is an N×3 array (melanoma, SK, nevus) or a sequence of
    :class:`~lesionkit.classification.ClassScores`; ``labels`` holds class
    names or indices.
    """
    if len(predictions) and hasattr(predictions[0], "as_array"):
        scores = np.stack([p.as_array() for p in predictions])
    else:
        scores = np.asarray(predictions, dtype=np.float64)
    y = np.array([label_index(l) for l in labels])
    if scores.shape != (len(y), len(CLASSES)):
        raise ShapeError(f"expected {len(y)}x3 scores, got {scores.shape}")
    return ClsResult(auc(scores[:, MELANOMA], y == MELANOMA), auc(scores[:, SK], y == SK))
