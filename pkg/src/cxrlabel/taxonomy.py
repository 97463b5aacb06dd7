"""Two-level label hierarchy: 14 finding labels rolled up into 7 body-part/status labels.

Label vectors are plain tuples of bools indexed in schema order.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Tuple

from .errors import SchemaError

N_SECONDARY = 14
N_PRIMARY = 7
N_BODY_PARTS = 5

SecondaryLabelVector = Tuple[bool, ...]
PrimaryLabelVector = Tuple[bool, ...]

_SECTIONS = ("secondary", "primary", "parent", "special")
_SPECIAL_KEYS = ("normal_secondary", "normal_primary", "device_primary", "device_secondary")


@dataclass(frozen=True)
class LabelSchema:
    secondary_labels: Tuple[str, ...]
    primary_labels: Tuple[str, ...]
    parent_of: Dict[str, str]
    normal_secondary: str
    normal_primary: str
    device_secondary: FrozenSet[str]
    device_primary: str

    def __post_init__(self):
        _validate(self)

    def __hash__(self):
        return hash((self.secondary_labels, self.primary_labels))

    @property
    def body_parts(self) -> Tuple[str, ...]:
        return tuple(p for p in self.primary_labels
                     if p not in (self.normal_primary, self.device_primary))

    @property
    def disease_labels(self) -> Tuple[str, ...]:
        """Secondary labels that exclude the normal label (everything but normal and devices)."""
        return tuple(s for s in self.secondary_labels
                     if s != self.normal_secondary and s not in self.device_secondary)

    def secondary_index(self, name: str) -> int:
        return self.secondary_labels.index(name)

    def vector(self, positives: Iterable[str] = ()) -> SecondaryLabelVector:
        """Build a secondary vector from a collection of positive label names."""
        pos = set(positives)
        unknown = pos - set(self.secondary_labels)
        if unknown:
            raise SchemaError(f"unknown secondary labels: {sorted(unknown)}")
        return tuple(name in pos for name in self.secondary_labels)

    def positives(self, vec) -> Tuple[str, ...]:
        return tuple(n for n, v in zip(self.secondary_labels, vec) if v)

    def primary_positives(self, vec) -> Tuple[str, ...]:
        return tuple(n for n, v in zip(self.primary_labels, vec) if v)


def _validate(s: LabelSchema) -> None:
    if len(s.secondary_labels) != N_SECONDARY:
        raise SchemaError(f"expected {N_SECONDARY} secondary labels, got {len(s.secondary_labels)}")
    if len(s.primary_labels) != N_PRIMARY:
        raise SchemaError(f"expected {N_PRIMARY} primary labels, got {len(s.primary_labels)}")
    for kind, labels in (("secondary", s.secondary_labels), ("primary", s.primary_labels)):
        seen = set()
        for name in labels:
            if not name or name != name.strip():
                raise SchemaError(f"blank or padded {kind} label {name!r}")
            if name in seen:
                raise SchemaError(f"duplicate {kind} label {name!r}")
            seen.add(name)
    if set(s.secondary_labels) & set(s.primary_labels):
        raise SchemaError("secondary and primary label names overlap")
    if s.normal_secondary not in s.secondary_labels:
        raise SchemaError(f"normal_secondary {s.normal_secondary!r} is not a secondary label")
    for key in ("normal_primary", "device_primary"):
        if getattr(s, key) not in s.primary_labels:
            raise SchemaError(f"{key} {getattr(s, key)!r} is not a primary label")
    if s.normal_primary == s.device_primary:
        raise SchemaError("normal_primary and device_primary must differ")
    if not s.device_secondary:
        raise SchemaError("device_secondary is empty")
    for dev in s.device_secondary:
        if dev not in s.secondary_labels:
            raise SchemaError(f"device_secondary {dev!r} is not a secondary label")
        if dev == s.normal_secondary:
            raise SchemaError("normal_secondary cannot be a device label")
    for child, parent in s.parent_of.items():
        if child not in s.secondary_labels:
            raise SchemaError(f"parent given for unknown secondary label {child!r}")
        if parent not in s.primary_labels:
            raise SchemaError(f"parent {parent!r} of {child!r} is not a primary label")
        if parent == s.normal_primary:
            raise SchemaError(f"{child!r} maps to normal_primary")
    if s.normal_secondary in s.parent_of:
        raise SchemaError("normal_secondary must not have a parent")
    for name in s.secondary_labels:
        if name != s.normal_secondary and name not in s.parent_of:
            raise SchemaError(f"missing parent for {name!r}")
        if name in s.device_secondary and s.parent_of[name] != s.device_primary:
            raise SchemaError(f"device label {name!r} must map to {s.device_primary!r}")
        if (name in s.parent_of and name not in s.device_secondary
                and s.parent_of[name] == s.device_primary):
            raise SchemaError(f"non-device label {name!r} maps to device_primary")
    if len(s.body_parts) != N_BODY_PARTS:
        raise SchemaError(f"expected {N_BODY_PARTS} body-part primaries, got {len(s.body_parts)}")


def parse_schema(text: str) -> LabelSchema:
    sections: Dict[str, list] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SECTIONS:
                raise SchemaError(f"line {lineno}: unknown section [{current}]")
            if current in sections:
                raise SchemaError(f"line {lineno}: section [{current}] repeated")
            sections[current] = []
            continue
        if current is None:
            raise SchemaError(f"line {lineno}: content before first section")
        sections[current].append((lineno, line))

    for name in _SECTIONS:
        if name not in sections:
            raise SchemaError(f"missing section [{name}]")

    def pairs(section):
        out = []
        for lineno, line in sections[section]:
            if "=" not in line:
                raise SchemaError(f"line {lineno}: expected 'key = value'")
            k, v = (part.strip() for part in line.split("=", 1))
            out.append((lineno, k, v))
        return out

    parent_of = {}
    for lineno, child, parent in pairs("parent"):
        if child in parent_of:
            raise SchemaError(f"line {lineno}: {child!r} has more than one parent")
        parent_of[child] = parent

    special = {}
    devices = []
    for lineno, key, value in pairs("special"):
        if key not in _SPECIAL_KEYS:
            raise SchemaError(f"line {lineno}: unknown special key {key!r}")
        if key == "device_secondary":
            devices.append(value)
        elif key in special:
            raise SchemaError(f"line {lineno}: {key} given twice")
        else:
            special[key] = value
    for key in _SPECIAL_KEYS[:3]:
        if key not in special:
            raise SchemaError(f"missing special key {key!r}")

    return LabelSchema(
        secondary_labels=tuple(line for _, line in sections["secondary"]),
        primary_labels=tuple(line for _, line in sections["primary"]),
        parent_of=parent_of,
        normal_secondary=special["normal_secondary"],
        normal_primary=special["normal_primary"],
        device_secondary=frozenset(devices),
        device_primary=special["device_primary"],
    )


def dump_schema(schema: LabelSchema) -> str:
    """Serialize to the canonical file layout; ``parse_schema(dump_schema(s)) == s``."""
    lines = ["[secondary]", *schema.secondary_labels, "", "[primary]", *schema.primary_labels,
             "", "[parent]"]
    lines += [f"{c} = {schema.parent_of[c]}" for c in schema.secondary_labels if c in schema.parent_of]
    lines += ["", "[special]",
              f"normal_secondary = {schema.normal_secondary}",
              f"normal_primary = {schema.normal_primary}",
              f"device_primary = {schema.device_primary}"]
    lines += [f"device_secondary = {d}" for d in schema.secondary_labels if d in schema.device_secondary]
    return "\n".join(lines) + "\n"


def load_schema(path=None) -> LabelSchema:
    """Load a schema file; with no path, the packaged default."""
    if path is None:
        text = resources.files("cxrlabel.data").joinpath("schema.txt").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise SchemaError(f"schema file not found: {path}") from None
        except UnicodeDecodeError as exc:
            raise SchemaError(f"schema file {path} is not valid UTF-8: {exc}") from None
    return parse_schema(text)


def default_schema_path() -> Path:
    return Path(str(resources.files("cxrlabel.data").joinpath("schema.txt")))


def _check_len(schema, vec, n=N_SECONDARY):
    if len(vec) != n:
        raise SchemaError(f"label vector has length {len(vec)}, expected {n}")


def enforce_exclusion(schema: LabelSchema, secondary) -> SecondaryLabelVector:
    """Make the normal label the exact complement of "any disease present".

    Device labels are not diseases, so a device alone leaves the normal label positive.
    """
    _check_len(schema, secondary)
    vec = [bool(v) for v in secondary]
    idx = {n: i for i, n in enumerate(schema.secondary_labels)}
    any_disease = any(vec[idx[d]] for d in schema.disease_labels)
    vec[idx[schema.normal_secondary]] = not any_disease
    return tuple(vec)


def propagate(schema: LabelSchema, secondary) -> PrimaryLabelVector:
    _check_len(schema, secondary)
    active = set()
    for name, on in zip(schema.secondary_labels, secondary):
        if on and name in schema.parent_of:
            active.add(schema.parent_of[name])
    if not any(bp in active for bp in schema.body_parts):
        active.add(schema.normal_primary)
    return tuple(p in active for p in schema.primary_labels)


def is_consistent(schema: LabelSchema, secondary) -> bool:
    return tuple(bool(v) for v in secondary) == enforce_exclusion(schema, secondary)
