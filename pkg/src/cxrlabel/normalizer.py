"""Report cleaning: comparison/opinion clause removal, punctuation, age and impression handling."""

import logging
import re
from dataclasses import dataclass, fields, replace
from typing import List, Tuple

from .errors import AgeOutOfRangeError, EmptyReportError, MalformedAgeError

log = logging.getLogger(__name__)

MAX_AGE = 150

# Row order matters: rules are applied in this order and looped to a fixpoint.
REMOVAL_PATTERNS: Tuple[str, ...] = (
    # 1: "same as before" remarks
    r"(，|。)*(余大致同前|大致同前|似大致同前|余所见大致同前|所见大致同前|范围大致同前)",
    # 2: comparison with a dated prior film
    r"(对比|与|结合)(上片|前片)?"
    r"\d{3,4}(-|.)\d{1,2}(-|.)\d{1,2}(日|\s)?"
    r"(\d{1,2}(：|:)\d{1,2})?"
    r"(片对比|片|胸片|床旁片|床旁平片|床旁胸片|CT)?"
    r"(：|:|。|，|；|;)?",
    # 3: "correlate with ..." advice
    r"(，|。)?(余|建议|请|清|位置)?结合.*?(。|，)",
    # 4: follow-up advice
    r"(，|。|、)?随诊.*?(。|，|、)",
    # 5: cardiac function reminder
    r"，请?注意心功能",
    # 6: change relative to the previous exam
    r"(，|、)?(范围|左肺|右肺|左侧|右侧|右肺野|左肺野)?"
    r"较前(明显|稍|略|有所)?(好转|吸收|减轻|进展|增大|减少|减小|缩小|增多|改善|复张|增多|加重|增加|好转|清晰)",
    # 7: clinical-description form boilerplate (ASCII or full-width punctuation)
    r"放射科号[:：]/身高[(（]cm[)）][:：]/体重[(（]kg[)）][:：]/是否肝肾功能不全[:：]/?是否碘剂过敏[:：]/*",
)

BOILERPLATE_RULE = 6  # index of the clinical-description rule

COMPILED = tuple(re.compile(p) for p in REMOVAL_PATTERNS)

PUNCT_MAP = {
    ",": "，", ".": "。", ";": "；", ":": "：",
    "?": "？", "!": "！", "(": "（", ")": "）",
}
_DELIMS = frozenset("，。、；")

_PUNCT_TABLE = str.maketrans(PUNCT_MAP)


def _remove_once(pattern: re.Pattern, text: str) -> str:
    """Delete every match of *pattern*.

    A match that both opens and closes with a clause delimiter and sits between two
    clauses keeps its opening delimiter, so the neighbouring clauses stay separated.
    """
    out = []
    pos = 0
    for m in pattern.finditer(text):
        start, end = m.span()
        if start == end:
            continue
        out.append(text[pos:start])
        span = m.group(0)
        if (len(span) > 1 and span[0] in _DELIMS and span[-1] in _DELIMS
                and start > 0 and end < len(text)):
            out.append(span[0])
        pos = end
    out.append(text[pos:])
    return "".join(out)


def _apply(patterns, text: str) -> str:
    while True:
        before = text
        for pat in patterns:
            text = _remove_once(pat, text)
        if text == before:
            return text


def apply_removal_rules(text: str) -> str:
    return _apply(COMPILED, text)


def remove_boilerplate(text: str) -> str:
    return _apply((COMPILED[BOILERPLATE_RULE],), text)


def has_match(text: str) -> bool:
    return any(p.search(text) for p in COMPILED)


def normalize_punctuation(text: str, mapping=None) -> str:
    if mapping is None:
        return text.translate(_PUNCT_TABLE)
    return text.translate(str.maketrans(mapping))


def parse_age(age_raw: str) -> int:
    """Years from an age field such as ``082Y00M20D`` (first three characters)."""
    head = age_raw[:3]
    if len(head) != 3 or not all(c in "0123456789" for c in head):
        raise MalformedAgeError(f"malformed age {age_raw!r}")
    years = int(head)
    if years > MAX_AGE:
        raise AgeOutOfRangeError(f"age {years} exceeds {MAX_AGE}")
    return years


def join_impression(impression: str) -> str:
    """Turn a line-per-diagnosis impression into one string of 。-terminated phrases."""
    phrases = [p.strip().rstrip("。.").strip() for p in impression.splitlines()]
    phrases = [p for p in phrases if p]
    if not phrases:
        return ""
    return "。".join(phrases) + "。"


@dataclass(frozen=True)
class RawReport:
    acc: str
    findings: str = ""
    impression: str = ""
    clinical_dx: str = ""
    sex: str = ""
    age_raw: str = ""
    clinical_desc: str = ""

    def __post_init__(self):
        if not self.acc:
            raise EmptyReportError("report has an empty ACC")


@dataclass(frozen=True)
class CleanReport(RawReport):
    age_years: int = 0

    @property
    def impression_phrases(self) -> List[str]:
        return [p for p in self.impression.split("。") if p]

    def as_raw(self) -> RawReport:
        return RawReport(**{f.name: getattr(self, f.name) for f in fields(RawReport)})


TEXT_FIELDS = ("findings", "impression", "clinical_dx", "sex", "clinical_desc")


def _clean_narrative(text: str) -> str:
    text = apply_removal_rules(normalize_punctuation(text))
    return text.strip()


def _clean_impression(text: str) -> str:
    text = normalize_punctuation(join_impression(text))
    # Removal can strip the closing 。 and re-adding it can expose a new match.
    while True:
        before = text
        text = join_impression(apply_removal_rules(text))
        if text == before:
            return text


def clean_report(raw: RawReport) -> CleanReport:
    findings = _clean_narrative(raw.findings)
    impression = _clean_impression(raw.impression)
    if not findings and not impression:
        raise EmptyReportError(f"{raw.acc}: empty findings and impression")
    return CleanReport(
        acc=raw.acc,
        findings=findings,
        impression=impression,
        clinical_dx=normalize_punctuation(raw.clinical_dx).strip(),
        sex=normalize_punctuation(raw.sex).strip(),
        age_raw=raw.age_raw,
        clinical_desc=remove_boilerplate(normalize_punctuation(raw.clinical_desc)).strip(),
        age_years=parse_age(raw.age_raw),
    )


def clean_many(raws):
    """Clean a batch, splitting into (kept, rejected) where rejected is (raw, reason, message)."""
    kept, rejected = [], []
    for raw in raws:
        try:
            kept.append(clean_report(raw))
        except (MalformedAgeError, AgeOutOfRangeError, EmptyReportError) as exc:
            log.info("rejecting %s: %s", raw.acc, exc)
            rejected.append((raw, exc.reason, str(exc)))
    return kept, rejected


def reclean(report: CleanReport) -> CleanReport:
    return clean_report(replace(report).as_raw())
