"""Sample assembly, exclusion filtering, 8:1:1 splitting, manifests and statistics."""

import json
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DatasetError, DuplicateIdError, TooFewSamplesError, UnassignedSplitError
from .normalizer import CleanReport
from .taxonomy import LabelSchema

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    pa_image: str
    report: CleanReport
    labels: Tuple[bool, ...]
    la_image: Optional[str] = None
    split: str = UNASSIGNED
    metadata: Dict[str, str] = field(default_factory=dict, compare=True)

    def __post_init__(self):
        if not self.pa_image:
            raise DatasetError(f"{self.sample_id}: a PA image is required")
        if self.split not in SPLITS + (UNASSIGNED,):
            raise DatasetError(f"{self.sample_id}: unknown split {self.split!r}")

    def __hash__(self):
        return hash(self.sample_id)


# ---------------------------------------------------------------- exclusions

@dataclass(frozen=True)
class ExclusionRules:
    enabled: Tuple[str, ...] = ("under-18", "overly-brief", "pneumoconiosis", "bedside",
                                "irregular", "rib-series")
    min_age: int = 18
    min_report_chars: int = 1

    @classmethod
    def from_file(cls, path) -> "ExclusionRules":
        try:
            cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DatasetError(f"exclusion config not found: {path}") from None
        unknown = set(cfg) - {"enabled", "min_age", "min_report_chars"}
        if unknown:
            raise DatasetError(f"unknown exclusion config keys: {sorted(unknown)}")
        if "enabled" in cfg:
            bad = set(cfg["enabled"]) - set(PREDICATES)
            if bad:
                raise DatasetError(f"unknown exclusion predicates: {sorted(bad)}")
            cfg["enabled"] = tuple(cfg["enabled"])
        return cls(**cfg)


_warned = set()


def _metadata_flag(key):
    def pred(rec: SampleRecord, rules: ExclusionRules) -> bool:
        if key not in rec.metadata:
            if key not in _warned:
                log.warning("metadata column %r absent; predicate passes records through", key)
                _warned.add(key)
            return False
        return rec.metadata[key].strip().lower() in ("1", "true", "yes", "y")
    return pred


PREDICATES = {
    "under-18": lambda rec, rules: rec.report.age_years < rules.min_age,
    "overly-brief": lambda rec, rules: len(rec.report.findings + rec.report.impression) < rules.min_report_chars,
    "pneumoconiosis": _metadata_flag("pneumoconiosis"),
    "bedside": _metadata_flag("bedside"),
    "irregular": _metadata_flag("irregular"),
    "rib-series": _metadata_flag("rib_series"),
}


def apply_exclusions(records: Sequence[SampleRecord], rules: ExclusionRules = ExclusionRules()):
    """Split records into (kept, [(record, predicate-name), ...]); first failing predicate wins."""
    kept, rejected = [], []
    for rec in records:
        reason = next((name for name in rules.enabled if PREDICATES[name](rec, rules)), None)
        if reason is None:
            kept.append(rec)
        else:
            rejected.append((rec, reason))
    return kept, rejected


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitSpec:
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise DatasetError("split needs three positive ratios")
        if sum(self.fractions) != 1:
            raise DatasetError(f"split ratios must sum to 1, got {sum(self.ratios)}")

    @property
    def fractions(self) -> Tuple[Fraction, ...]:
        return tuple(Fraction(str(r)) for r in self.ratios)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SplitSpec":
        try:
            parts = tuple(float(x) for x in text.split(","))
        except ValueError:
            raise DatasetError(f"bad split ratios {text!r}") from None
        return cls(parts, seed)


def split_sizes(n: int, spec: SplitSpec = SplitSpec()) -> Tuple[int, int, int]:
    """train = floor(r0*n), val = floor(r1*n), test = the rest (exact rational arithmetic)."""
    if n < 3:
        raise TooFewSamplesError(f"need at least 3 samples to split, got {n}")
    f_train, f_val, _ = spec.fractions
    n_train = int(f_train * n)
    n_val = int(f_val * n)
    return n_train, n_val, n - n_train - n_val


def split(records: Sequence[SampleRecord], spec: SplitSpec = SplitSpec()) -> List[SampleRecord]:
    """Seeded shuffle then contiguous slices; output keeps the input order."""
    sizes = split_sizes(len(records), spec)
    order = np.random.default_rng(spec.rng_seed).permutation(len(records))
    assign = [None] * len(records)
    start = 0
    for name, size in zip(SPLITS, sizes):
        for i in order[start:start + size]:
            assign[i] = name
        start += size
    return [replace(rec, split=s) for rec, s in zip(records, assign)]


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class DatasetStats:
    images: Dict[str, Dict[str, int]]  # split or "total" -> {"total", "PA", "LA"}
    label_counts: Dict[str, int]
    n_samples: int

    def ratio(self, label: str) -> float:
        return self.label_counts[label] / self.n_samples if self.n_samples else 0.0


def percent(count: int, total: int) -> str:
    return f"{100.0 * count / total:.2f}%" if total else "0.00%"


def compute_stats(records: Sequence[SampleRecord], schema: LabelSchema) -> DatasetStats:
    images = {s: {"total": 0, "PA": 0, "LA": 0} for s in SPLITS + ("total",)}
    counts = {name: 0 for name in schema.secondary_labels}
    for rec in records:
        pa, la = 1, int(bool(rec.la_image))
        for key in ({rec.split, "total"} & set(images)):
            images[key]["PA"] += pa
            images[key]["LA"] += la
            images[key]["total"] += pa + la
        for name, v in zip(schema.secondary_labels, rec.labels):
            counts[name] += int(bool(v))
    return DatasetStats(images, counts, len(records))


def image_table(stats: DatasetStats):
    header = ["dataset", "train", "val", "test", "total"]
    rows = []
    for kind, title in (("total", "images"), ("PA", "PA images"), ("LA", "LA images")):
        rows.append([title] + [str(stats.images[s][kind]) for s in SPLITS + ("total",)])
    return header, rows


def label_table(stats: DatasetStats):
    header = ["label", "positives", "ratio"]
    rows = [[name, str(c), percent(c, stats.n_samples)] for name, c in stats.label_counts.items()]
    return header, rows


# ---------------------------------------------------------------- manifest

MANIFEST_KEYS = ("ACC", "征象描述", "诊断结论", "临床诊断", "病人性别", "年龄", "临床描述", "疾病标签")


def record_to_json(rec: SampleRecord, schema: LabelSchema) -> dict:
    r = rec.report
    out = {
        "sample_id": rec.sample_id,
        "ACC": r.acc,
        "征象描述": r.findings,
        "诊断结论": r.impression,
        "临床诊断": r.clinical_dx,
        "病人性别": r.sex,
        "年龄": r.age_years,
        "age_raw": r.age_raw,
        "临床描述": r.clinical_desc,
        "疾病标签": {name: int(bool(v)) for name, v in zip(schema.secondary_labels, rec.labels)},
        "pa_image": rec.pa_image,
        "la_image": rec.la_image,
        "split": rec.split,
    }
    if rec.metadata:
        out["metadata"] = dict(rec.metadata)
    return out


def record_from_json(obj: dict, schema: LabelSchema) -> SampleRecord:
    labels = obj["疾病标签"]
    if list(labels) != list(schema.secondary_labels):
        raise DatasetError(f"{obj.get('ACC')}: label keys do not match schema order")
    report = CleanReport(acc=obj["ACC"], findings=obj["征象描述"], impression=obj["诊断结论"],
                         clinical_dx=obj["临床诊断"], sex=obj["病人性别"], age_raw=obj["age_raw"],
                         clinical_desc=obj["临床描述"], age_years=int(obj["年龄"]))
    return SampleRecord(sample_id=obj["sample_id"], pa_image=obj["pa_image"], report=report,
                        labels=tuple(bool(labels[n]) for n in schema.secondary_labels),
                        la_image=obj.get("la_image"), split=obj["split"],
                        metadata=dict(obj.get("metadata", {})))


def manifest_lines(records: Sequence[SampleRecord], schema: LabelSchema) -> List[str]:
    seen = set()
    lines = []
    for rec in records:
        if rec.split == UNASSIGNED:
            raise UnassignedSplitError(f"{rec.sample_id}: no split assigned")
        if rec.sample_id in seen:
            raise DuplicateIdError(f"duplicate sample id {rec.sample_id}")
        seen.add(rec.sample_id)
        lines.append(json.dumps(record_to_json(rec, schema), ensure_ascii=False))
    return lines


def emit_manifest(records: Sequence[SampleRecord], path, schema: LabelSchema) -> None:
    lines = manifest_lines(records, schema)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_manifest(path, schema: LabelSchema) -> List[SampleRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                out.append(record_from_json(json.loads(line), schema))
            except (KeyError, json.JSONDecodeError) as exc:
                raise DatasetError(f"{path}:{lineno}: bad manifest line ({exc})") from None
    return out
