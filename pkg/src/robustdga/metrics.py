"""Attack KPIs, bounded ROC curves, robustness matrices and per-family evaluation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, EmptyInput
from .tensor import sigmoid

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class AttackReport:
    attack_id: str
    fnr: float
    unique_fraction: float
    useable_fraction: float
    mean_confidence: float
    mean_l2_dist: float | None
    mean_linf_dist: float | None
    mean_levenshtein: float | None
    sample_count: int
    notes: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(values) -> float | None:
    if values is None:
        return None
    values = [float(v) for v in values]
    return math.fsum(values) / len(values)


def compute_report(attack_id: str, domains, logits, l2=None, linf=None, lev=None,
                   notes: str = "") -> AttackReport:
    """KPIs over one attack run on malicious-origin inputs.

    A sample fools the classifier when its logit is negative (probability < 0.5);
    it is useable when it fools and its string was not emitted earlier in the run.
    """
    domains = list(domains)
    logits = np.asarray(logits, dtype=np.float64)
    n = len(domains)
    if n == 0:
        raise EmptyInput("no attack outputs to report on")
    if len(logits) != n:
        raise DataError("domains and logits differ in length")
    fooled = logits < 0
    seen: set[str] = set()
    useable = 0
    for d, f in zip(domains, fooled):
        if f and d not in seen:
            useable += 1
        seen.add(d)
    return AttackReport(
        attack_id=attack_id,
        fnr=int(fooled.sum()) / n,
        unique_fraction=len(seen) / n,
        useable_fraction=useable / n,
        mean_confidence=_mean(sigmoid(logits)),
        mean_l2_dist=_mean(l2),
        mean_linf_dist=_mean(linf),
        mean_levenshtein=_mean(lev),
        sample_count=n,
        notes=notes,
    )


def report_from_samples(attack_id: str, samples, notes: str = "") -> AttackReport:
    """Report for a list of :class:`~robustdga.discretize.AdversarialSample`."""
    return compute_report(attack_id, [s.domain for s in samples], [s.logit for s in samples],
                          [s.l2 for s in samples], [s.linf for s in samples],
                          [s.levenshtein for s in samples], notes)


# -- ROC -----------------------------------------------------------------------

@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    bound: float = 0.01
    bounded_auc: float = field(init=False)

    def __post_init__(self):
        self.bounded_auc = bounded_auc(self.fpr, self.tpr, self.bound)

    def tpr_at(self, max_fpr: float) -> float:
        """Highest TPR among operating points whose FPR does not exceed ``max_fpr``."""
        ok = self.fpr <= max_fpr
        return float(self.tpr[ok].max()) if ok.any() else 0.0


def roc_points(scores_benign, scores_malicious) -> tuple[np.ndarray, np.ndarray]:
    """ROC by threshold sweep (predict malicious when score >= threshold)."""
    neg = np.asarray(scores_benign, dtype=np.float64)
    pos = np.asarray(scores_malicious, dtype=np.float64)
    if neg.size == 0 or pos.size == 0:
        raise EmptyInput("ROC needs scores for both classes")
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, is_pos = scores[order], is_pos[order]
    # one point per distinct threshold: the last index of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(scores) != 0), scores.size - 1]
    tp = np.cumsum(is_pos)[last]
    fp = (last + 1) - tp
    return np.r_[0.0, fp / neg.size], np.r_[0.0, tp / pos.size]


def bounded_auc(fpr, tpr, bound: float = 0.01) -> float:
    """Area under the piecewise-linear ROC for fpr in [0, bound], divided by bound."""
    fpr, tpr = np.asarray(fpr, dtype=np.float64), np.asarray(tpr, dtype=np.float64)
    area = 0.0
    for i in range(1, len(fpr)):
        x0, x1, y0, y1 = fpr[i - 1], fpr[i], tpr[i - 1], tpr[i]
        if x0 >= bound:
            break
        if x1 > bound:
            y1 = y0 + (y1 - y0) * (bound - x0) / (x1 - x0)
            x1 = bound
        area += (x1 - x0) * (y0 + y1) / 2
    return area / bound


def roc_bounded(scores_benign, scores_malicious, bound: float = 0.01) -> RocCurve:
    fpr, tpr = roc_points(scores_benign, scores_malicious)
    return RocCurve(fpr, tpr, bound)


def interpolate_tpr(curve: RocCurve, grid) -> np.ndarray:
    """TPR of a curve on a shared FPR grid (linear between points, upper envelope at jumps)."""
    fpr, tpr = curve.fpr, curve.tpr
    # np.interp needs increasing x; vertical segments keep their top point
    keep = np.r_[np.diff(fpr) > 0, True]
    return np.interp(grid, fpr[keep], tpr[keep])


def per_dga_eval(model, benign_idx, per_dga: dict, bound: float = 0.01,
                 fpr_points=(0.001, 0.01), grid_size: int = 101) -> dict:
    """One ROC per family against the full benign set plus mean/min/max curves."""
    benign_scores = model.logits_from_indices(benign_idx)
    grid = np.linspace(0.0, bound, grid_size)
    rows, curves = [], []
    for name in sorted(per_dga):
        idx = per_dga[name]
        if len(idx) == 0:
            log.warning("family %s has no samples; skipped", name)
            continue
        curve = roc_bounded(benign_scores, model.logits_from_indices(idx), bound)
        curves.append(interpolate_tpr(curve, grid))
        row = {"family": name, "count": len(idx), "bounded_auc": curve.bounded_auc}
        row.update({f"tpr@{f:g}": curve.tpr_at(f) for f in fpr_points})
        rows.append(row)
    if not curves:
        raise EmptyInput("no family had samples")
    stack = np.array(curves)
    return {
        "schema_version": SCHEMA_VERSION,
        "families": rows,
        "fpr_grid": grid.tolist(),
        "tpr_mean": stack.mean(axis=0).tolist(),
        "tpr_min": stack.min(axis=0).tolist(),
        "tpr_max": stack.max(axis=0).tolist(),
    }


# -- robustness matrix -----------------------------------------------------------

@dataclass
class RobustnessMatrix:
    attacks: list[str]
    models: list[str]
    fnr: np.ndarray
    held_out_rows: dict[str, list[str]] = field(default_factory=dict)

    def flagged(self, attack: str, model: str) -> bool:
        return attack in self.held_out_rows.get(model, [])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attack"] + self.models)
        for i, a in enumerate(self.attacks):
            w.writerow([a] + [f"{v:.6f}{'*' if self.flagged(a, m) else ''}"
                              for m, v in zip(self.models, self.fnr[i])])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "rows": self.attacks,
            "columns": self.models,
            "fnr": self.fnr.tolist(),
            "held_out": {m: self.held_out_rows.get(m, []) for m in self.models},
        }


def robustness_matrix(reports: dict[str, dict[str, AttackReport]],
                      held_out_rows: dict[str, list[str]] | None = None) -> RobustnessMatrix:
    """``reports[model][attack_id]`` -> FNR matrix with rows sorted by attack id.

    Columns keep the given model order; every model must cover the same attacks.
    """
    models = list(reports)
    if not models:
        raise EmptyInput("no models given")
    attacks = sorted(reports[models[0]])
    for m in models:
        if sorted(reports[m]) != attacks:
            raise DataError(f"model {m!r} was evaluated on a different attack set")
    fnr = np.array([[reports[m][a].fnr for m in models] for a in attacks], dtype=np.float64)
    return RobustnessMatrix(attacks, models, fnr, held_out_rows=dict(held_out_rows or {}))


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def reports_to_csv(reports: list[AttackReport]) -> str:
    buf = io.StringIO()
    fields = list(AttackReport.__dataclass_fields__)
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.to_dict())
    return buf.getvalue()
