"""Keyword/negation baseline labeler."""

import csv
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Tuple

from ..errors import SchemaError
from ..taxonomy import LabelSchema, enforce_exclusion

CLAUSE_SPLIT = re.compile(r"[，。；！？,.;!?\n]")
NEGATION_WINDOW = 8


@dataclass(frozen=True)
class LexiconEntry:
    triggers: Tuple[str, ...]
    negations: Tuple[str, ...]


Lexicon = Dict[str, LexiconEntry]


def parse_lexicon(text: str) -> Lexicon:
    rows = list(csv.reader(text.splitlines(), delimiter="\t"))
    if not rows or [c.strip() for c in rows[0][:3]] != ["label", "triggers", "negation_cues"]:
        raise SchemaError("lexicon header must be: label, triggers, negation_cues")
    lex = {}
    for row in rows[1:]:
        if not row or not row[0].strip():
            continue
        row = row + [""] * (3 - len(row))
        split = lambda cell: tuple(p.strip() for p in cell.split("|") if p.strip())
        lex[row[0].strip()] = LexiconEntry(split(row[1]), split(row[2]))
    return lex


def load_lexicon(path=None) -> Lexicon:
    if path is None:
        text = resources.files("cxrlabel.data").joinpath("lexicon.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_lexicon(text)


def dump_lexicon(lex: Lexicon) -> str:
    lines = ["label\ttriggers\tnegation_cues"]
    lines += [f"{k}\t{'|'.join(e.triggers)}\t{'|'.join(e.negations)}" for k, e in lex.items()]
    return "\n".join(lines) + "\n"


def mentions(text: str, entry: LexiconEntry) -> List[Tuple[str, bool]]:
    """Every trigger hit in ``text`` as (trigger, negated)."""
    hits = []
    for clause in CLAUSE_SPLIT.split(text):
        for trig in entry.triggers:
            start = clause.find(trig)
            while start != -1:
                window = clause[max(0, start - NEGATION_WINDOW):start]
                hits.append((trig, any(cue in window for cue in entry.negations)))
                start = clause.find(trig, start + 1)
    return hits


def rule_label_text(text: str, schema: LabelSchema, lexicon: Lexicon):
    positives = []
    for name in schema.secondary_labels:
        entry = lexicon.get(name)
        if entry and any(not neg for _, neg in mentions(text, entry)):
            positives.append(name)
    return enforce_exclusion(schema, schema.vector(positives))


def rule_label(report, schema: LabelSchema, lexicon: Lexicon):
    """A label is positive iff one of its triggers appears un-negated in findings or impression."""
    return rule_label_text(f"{report.findings}\n{report.impression}", schema, lexicon)
