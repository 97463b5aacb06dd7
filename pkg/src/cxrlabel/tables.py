"""Delimited UTF-8 tables (tab-separated, csv-quoted so multi-line cells survive)."""

import csv
import io
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from .errors import CxrError
from .normalizer import CleanReport, RawReport

# canonical field -> accepted header spellings
FIELD_ALIASES = {
    "acc": ("acc", "ACC"),
    "findings": ("findings", "征象描述"),
    "impression": ("impression", "诊断结论"),
    "clinical_dx": ("clinical_dx", "临床诊断"),
    "sex": ("sex", "病人性别", "患者性别"),
    "age_raw": ("age_raw", "年龄", "患者年龄"),
    "clinical_desc": ("clinical_desc", "临床描述"),
}
REPORT_FIELDS = tuple(FIELD_ALIASES)


class TableError(CxrError):
    module = "tables"


def read_table(path) -> Tuple[List[str], List[Dict[str, str]]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except FileNotFoundError:
        raise TableError(f"input not found: {path}") from None
    text = strip_comments(text)
    reader = csv.reader(io.StringIO(text, newline=""), delimiter="\t")
    rows = list(reader)
    if not rows:
        raise TableError(f"{path}: empty table (header required)")
    header = rows[0]
    out = []
    for i, row in enumerate(rows[1:], 2):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise TableError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
        out.append(dict(zip(header, row)))
    return header, out


def format_table(header: Sequence[str], rows) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([row.get(h, "") if isinstance(row, dict) else row[i] for i, h in enumerate(header)])
    return buf.getvalue()


def write_table(path, header, rows, preamble: Sequence[str] = ()) -> None:
    text = "".join(f"# {line}\n" for line in preamble) + format_table(header, rows)
    Path(path).write_text(text, encoding="utf-8")


def strip_comments(text: str) -> str:
    """Drop the leading ``# `` provenance lines written by the CLI."""
    lines = text.splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("# "):
        i += 1
    return "".join(lines[i:])


def resolve_columns(header: Sequence[str], required=REPORT_FIELDS) -> Dict[str, str]:
    """Map canonical report fields onto the table's actual column names."""
    found = {}
    for name, aliases in FIELD_ALIASES.items():
        for a in aliases:
            if a in header:
                found[name] = a
                break
    missing = [f for f in required if f not in found]
    if missing:
        raise TableError(f"missing report columns: {', '.join(missing)}")
    return found


def read_reports(path):
    """Rows of a report table as RawReport objects plus the untouched row dicts."""
    header, rows = read_table(path)
    cols = resolve_columns(header)
    reports = [RawReport(**{f: row[cols[f]] for f in REPORT_FIELDS}) for row in rows]
    return header, rows, cols, reports


def read_clean_reports(path):
    header, rows, cols, raws = read_reports(path)
    out = []
    for raw, row in zip(raws, rows):
        if "age_years" not in row:
            raise TableError(f"{path}: cleaned table needs an age_years column")
        out.append(CleanReport(**raw.__dict__, age_years=int(row["age_years"])))
    return header, rows, out


def read_label_table(path, label_names: Sequence[str]):
    """ACC plus one 0/1 column per label -> {acc: vector}."""
    header, rows = read_table(path)
    acc_col = next((a for a in FIELD_ALIASES["acc"] if a in header), None)
    if acc_col is None:
        raise TableError(f"{path}: label table needs an ACC column")
    missing = [n for n in label_names if n not in header]
    if missing:
        raise TableError(f"{path}: missing label columns {missing}")
    out = {}
    for row in rows:
        vec = []
        for n in label_names:
            cell = row[n].strip()
            if cell not in ("0", "1"):
                raise TableError(f"{path}: label {n} for {row[acc_col]} must be 0 or 1, got {cell!r}")
            vec.append(cell == "1")
        out[row[acc_col]] = tuple(vec)
    return out


def label_rows(accs, vectors, label_names):
    header = ["ACC", *label_names]
    rows = [[acc, *("1" if v else "0" for v in vec)] for acc, vec in zip(accs, vectors)]
    return header, rows
