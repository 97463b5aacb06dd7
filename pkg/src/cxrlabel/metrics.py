"""Per-label F1 / Cohen's kappa and their macro and prevalence-weighted averages.

"Weighted kappa" here means the prevalence-weighted mean of per-label binary kappas,
not the ordinal (linear/quadratic weights) kappa of the same name.
"""

import json
from dataclasses import asdict, dataclass
from typing import Callable, List, Sequence, Tuple

from .errors import DegenerateWeightsError, LengthMismatchError


@dataclass(frozen=True)
class BinaryCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return BinaryCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def count(gold: Sequence[bool], pred: Sequence[bool]) -> BinaryCounts:
    if len(gold) != len(pred):
        raise LengthMismatchError(f"gold has {len(gold)} items, pred has {len(pred)}")
    tp = fp = fn = tn = 0
    for g, p in zip(gold, pred):
        g, p = bool(g), bool(p)
        if g and p:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return BinaryCounts(tp, fp, fn, tn)


def precision(c: BinaryCounts) -> float:
    return c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0


def recall(c: BinaryCounts) -> float:
    return c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0


def f1(c: BinaryCounts) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    p, r = precision(c), recall(c)
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def kappa_from_counts(c: BinaryCounts) -> Tuple[float, bool]:
    """Cohen's kappa and a flag set when chance agreement is 1 (formula is 0/0)."""
    n = c.total
    if n == 0:
        raise LengthMismatchError("kappa needs at least one item")
    p_o = (c.tp + c.tn) / n
    gold_pos = (c.tp + c.fn) / n
    pred_pos = (c.tp + c.fp) / n
    p_e = gold_pos * pred_pos + (1 - gold_pos) * (1 - pred_pos)
    if p_e >= 1.0:
        return (1.0 if p_o == 1.0 else 0.0), True
    return (p_o - p_e) / (1 - p_e), False


def kappa(gold: Sequence[bool], pred: Sequence[bool]) -> float:
    if len(gold) != len(pred):
        raise LengthMismatchError(f"gold has {len(gold)} items, pred has {len(pred)}")
    return kappa_from_counts(count(gold, pred))[0]


@dataclass(frozen=True)
class LabelMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    kappa: float
    positives: int
    support: int
    kappa_degenerate: bool = False

    @property
    def prevalence(self) -> float:
        return self.positives / self.support if self.support else 0.0


@dataclass(frozen=True)
class AggregateMetrics:
    macro_f1: float
    weighted_f1: float
    macro_kappa: float
    weighted_kappa: float
    micro_f1: float = float("nan")


@dataclass(frozen=True)
class Evaluation:
    per_label: Tuple[LabelMetrics, ...]
    aggregate: AggregateMetrics


def label_metrics(label: str, gold, pred) -> LabelMetrics:
    c = count(gold, pred)
    k, degenerate = kappa_from_counts(c)
    return LabelMetrics(label, precision(c), recall(c), f1(c), k, c.tp + c.fn, c.total, degenerate)


def aggregate(per_label: Sequence[LabelMetrics], micro_f1: float = float("nan")) -> AggregateMetrics:
    if not per_label:
        raise LengthMismatchError("no per-label metrics to aggregate")
    total = sum(m.positives for m in per_label)
    if total == 0:
        raise DegenerateWeightsError("every label has zero positives; weighted averages undefined")
    n = len(per_label)
    w = [m.positives / total for m in per_label]
    return AggregateMetrics(
        macro_f1=sum(m.f1 for m in per_label) / n,
        weighted_f1=sum(wi * m.f1 for wi, m in zip(w, per_label)),
        macro_kappa=sum(m.kappa for m in per_label) / n,
        weighted_kappa=sum(wi * m.kappa for wi, m in zip(w, per_label)),
        micro_f1=micro_f1,
    )


def evaluate(gold_vectors, pred_vectors, label_names: Sequence[str]) -> Evaluation:
    """Column-wise metrics over aligned lists of label vectors."""
    if len(gold_vectors) != len(pred_vectors):
        raise LengthMismatchError(f"{len(gold_vectors)} gold rows vs {len(pred_vectors)} predicted rows")
    if not gold_vectors:
        raise LengthMismatchError("nothing to evaluate")
    per = []
    pooled = BinaryCounts()
    for j, name in enumerate(label_names):
        gold = [row[j] for row in gold_vectors]
        pred = [row[j] for row in pred_vectors]
        per.append(label_metrics(name, gold, pred))
        pooled = pooled + count(gold, pred)
    return Evaluation(tuple(per), aggregate(per, micro_f1=f1(pooled)))


def clinical_efficacy(generated_reports: Sequence[str], reference_labels, labeler: Callable,
                      label_names: Sequence[str]) -> Evaluation:
    """Label generated report texts and score them against reference label vectors."""
    if len(generated_reports) != len(reference_labels):
        raise LengthMismatchError(
            f"{len(generated_reports)} generated reports vs {len(reference_labels)} reference rows")
    if not generated_reports:
        raise LengthMismatchError("no reports to evaluate")
    predicted = [labeler(text) for text in generated_reports]
    return evaluate(list(reference_labels), predicted, label_names)


def format_table(ev: Evaluation, sep="\t") -> str:
    head = ["label", "positives", "precision", "recall", "f1", "kappa"]
    rows = [sep.join(head)]
    for m in ev.per_label:
        rows.append(sep.join([m.label, str(m.positives), f"{m.precision:.4f}", f"{m.recall:.4f}",
                              f"{m.f1:.4f}", f"{m.kappa:.4f}"]))
    a = ev.aggregate
    rows.append(sep.join(["macro", "", "", "", f"{a.macro_f1:.4f}", f"{a.macro_kappa:.4f}"]))
    rows.append(sep.join(["weighted", "", "", "", f"{a.weighted_f1:.4f}", f"{a.weighted_kappa:.4f}"]))
    rows.append(sep.join(["micro", "", "", "", f"{a.micro_f1:.4f}", ""]))
    return "\n".join(rows) + "\n"


def summary_dict(ev: Evaluation) -> dict:
    return {
        "aggregate": asdict(ev.aggregate),
        "per_label": [{**asdict(m), "prevalence": m.prevalence} for m in ev.per_label],
    }


def summary_json(ev: Evaluation) -> str:
    return json.dumps(summary_dict(ev), ensure_ascii=False, sort_keys=True, indent=2) + "\n"
