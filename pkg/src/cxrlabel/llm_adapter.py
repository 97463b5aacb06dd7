"""Prompt-based labeling through a chat model: template filling, transport, response parsing."""

import hashlib
import json
import logging
import os
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import AuthError, NetworkError, RateLimitError, TemplateError, TransportError
from .taxonomy import LabelSchema, enforce_exclusion

log = logging.getLogger(__name__)

PLACEHOLDER = "{{{placeholder}}}"
ANSWER_SEPARATORS = ("，", ",", "；", ";")

ENV_ENDPOINT = "CXRLABEL_LLM_ENDPOINT"
ENV_API_KEY = "CXRLABEL_LLM_API_KEY"
ENV_MODEL = "CXRLABEL_LLM_MODEL"


@dataclass(frozen=True)
class PromptTemplate:
    text: str

    def __post_init__(self):
        n = self.text.count(PLACEHOLDER)
        if n != 1:
            raise TemplateError(f"template must contain {PLACEHOLDER} exactly once, found {n}")

    def missing_examples(self, schema: LabelSchema, min_mentions: int = 1) -> List[str]:
        """Labels mentioned fewer than ``min_mentions`` times in the example block."""
        examples = self.text.split("示例", 1)[-1].split(PLACEHOLDER)[0]
        answers = [line.split("：", 1)[1] for line in examples.splitlines() if line.startswith("答案：")]
        counts = {name: 0 for name in schema.secondary_labels}
        for ans in answers:
            for name in _split_answer(ans, schema)[0]:
                counts[name] += 1
        return [n for n, c in counts.items() if c < min_mentions]


def load_template(path=None) -> PromptTemplate:
    if path is None:
        text = resources.files("cxrlabel.data").joinpath("prompt_template.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    body = "".join(line for line in text.splitlines(keepends=True) if not line.startswith("# "))
    return PromptTemplate(body)


def serialize_report(report) -> str:
    return f"{report.findings}{report.impression}"


def build_prompt(tmpl: PromptTemplate, report) -> str:
    text = report if isinstance(report, str) else serialize_report(report)
    return tmpl.text.replace(PLACEHOLDER, text, 1)


# ---------------------------------------------------------------- parsing

@dataclass(frozen=True)
class AdapterResponse:
    raw: str
    parsed: Optional[Tuple[bool, ...]]
    unknown: Tuple[str, ...] = ()
    diagnosis: str = ""


def _split_answer(line: str, schema: LabelSchema):
    # Label names may themselves contain "、"; match whole names greedily before splitting.
    names = sorted(schema.secondary_labels, key=len, reverse=True)
    found, unknown = [], []
    rest = line.strip().strip("。.")
    for sep in ANSWER_SEPARATORS[1:]:
        rest = rest.replace(sep, "，")
    for token in (t.strip() for t in rest.split("，")):
        if not token:
            continue
        if token in schema.secondary_labels:
            found.append(token)
            continue
        # tolerate a comma written inside a two-part label name
        hit = next((n for n in names if token == n.replace("、", "")), None)
        (found if hit else unknown).append(hit or token)
    # rejoin two-part names split on the comma, e.g. "主动脉迂曲，硬化"
    joined = []
    i = 0
    while i < len(unknown):
        if i + 1 < len(unknown) and f"{unknown[i]}、{unknown[i + 1]}" in schema.secondary_labels:
            found.append(f"{unknown[i]}、{unknown[i + 1]}")
            i += 2
        else:
            joined.append(unknown[i])
            i += 1
    return found, joined


def format_answer(schema: LabelSchema, vector) -> str:
    """Inverse of parse_response for consistent vectors."""
    diseases = [n for n, v in zip(schema.secondary_labels, vector)
                if v and n != schema.normal_secondary]
    return "，".join(diseases) if diseases else schema.normal_secondary


def parse_response(text: str, schema: LabelSchema) -> AdapterResponse:
    """Read the last non-empty line as a comma-separated list of label names."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        return AdapterResponse(text, None, (), "empty response")
    line = lines[-1]
    if line.startswith("答案：") or line.startswith("答案:"):
        line = line[3:]
    found, unknown = _split_answer(line, schema)
    if not found:
        return AdapterResponse(text, None, tuple(unknown), "no known label names in answer line")
    vec = enforce_exclusion(schema, schema.vector(found))
    diag = f"unknown label names: {'，'.join(unknown)}" if unknown else ""
    return AdapterResponse(text, vec, tuple(unknown), diag)


# ---------------------------------------------------------------- transports

class Transport(ABC):
    model = "unknown"
    endpoint = ""

    @abstractmethod
    def _send_once(self, prompt: str) -> str:
        ...

    max_retries = 3
    backoff = 0.5

    def send(self, prompt: str) -> str:
        """Send with exponential backoff on network and rate-limit failures; auth fails fast."""
        attempt = 0
        while True:
            attempt += 1
            try:
                return self._send_once(prompt)
            except AuthError as exc:
                exc.attempts = attempt
                raise
            except (NetworkError, RateLimitError) as exc:
                if attempt > self.max_retries:
                    raise type(exc)(f"giving up after {attempt} attempts: {exc}", attempts=attempt) from exc
                delay = self.backoff * 2 ** (attempt - 1)
                log.warning("transport attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
                if delay > 0:
                    time.sleep(delay)


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockTransport(Transport):
    """Canned responses from a JSON file or dict.

    Keys are sample ids, prompt sha256 digests, or ``"*"`` for a default answer.
    Sample ids are matched through ``send_for``.
    """

    def __init__(self, responses: Dict[str, str], model="mock-model", failures: Sequence[Exception] = ()):
        self.responses = dict(responses)
        self.model = model
        self.endpoint = "mock://"
        self.failures = list(failures)
        self.calls = 0
        self.backoff = 0.0

    @classmethod
    def from_file(cls, path, **kw):
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), **kw)

    def _send_once(self, prompt: str) -> str:
        self.calls += 1
        if self.failures:
            raise self.failures.pop(0)
        key = prompt_key(prompt)
        if key in self.responses:
            return self.responses[key]
        for k, v in self.responses.items():
            if k != "*" and k in prompt:
                return v
        if "*" in self.responses:
            return self.responses["*"]
        raise NetworkError("mock transport has no response for this prompt")


class HttpTransport(Transport):
    """OpenAI-style chat-completions endpoint configured through the environment."""

    def __init__(self, endpoint=None, api_key=None, model=None, timeout=60.0):
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT, "")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.timeout = timeout
        if not self.endpoint or not self.model:
            raise AuthError(f"set {ENV_ENDPOINT} and {ENV_MODEL} (and {ENV_API_KEY}) for live requests")

    def _send_once(self, prompt: str) -> str:
        try:
            import httpx
        except ImportError:
            raise AuthError("live requests need httpx: pip install 'artifact[llm]'") from None

        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}], "temperature": 0}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise NetworkError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from {self.endpoint}")
        if resp.status_code == 429:
            raise RateLimitError("HTTP 429 rate limited")
        if resp.status_code >= 500:
            raise NetworkError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise TransportError(f"unexpected response body: {exc}") from exc


# ---------------------------------------------------------------- batch driver

@dataclass(frozen=True)
class LabeledResult:
    sample_id: str
    prompt: str
    response: AdapterResponse
    error: str = ""


def label_reports(items: Sequence[Tuple[str, object]], tmpl: PromptTemplate, schema: LabelSchema,
                  transport: Transport, max_in_flight: int = 4, audit_path=None) -> Dict[str, LabeledResult]:
    """Label (sample_id, report) pairs concurrently; results keyed by sample id."""
    def one(item):
        sid, report = item
        prompt = build_prompt(tmpl, report)
        try:
            raw = transport.send(prompt)
        except TransportError as exc:
            return LabeledResult(sid, prompt, AdapterResponse("", None, (), "transport failure"),
                                 f"{type(exc).__name__}: {exc}")
        return LabeledResult(sid, prompt, parse_response(raw, schema))

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(one, items))
    out = {r.sample_id: r for r in results}
    if audit_path is not None:
        write_audit(audit_path, results, transport)
    return out


def write_audit(path, results: Sequence[LabeledResult], transport: Transport) -> None:
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with open(path, "a", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps({
                "time": stamp,
                "endpoint": transport.endpoint,
                "model": transport.model,
                "sample_id": r.sample_id,
                "prompt_sha256": prompt_key(r.prompt),
                "response": r.response.raw,
                "parsed": None if r.response.parsed is None else [int(v) for v in r.response.parsed],
                "diagnosis": r.response.diagnosis,
                "error": r.error,
            }, ensure_ascii=False) + "\n")
