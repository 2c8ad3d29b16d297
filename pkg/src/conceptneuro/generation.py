"""Disorder prompts and LLM providers for raw concept generation.

Two providers ship: :class:`HTTPProvider` for any chat-completion style
endpoint, and :class:`FixtureProvider`, which replays the bundled concept
lists and needs no network.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import (AuthError, EmptyGeneration, HTTPStatusError, MissingCredential,
                     TransportError)
from .resources import disorder_table, generated_concepts

API_KEY_ENV = "CONCEPTNEURO_LLM_API_KEY"

PROMPT_TEMPLATE = (
    'You need to list the most important visual features of brain images for diagnosing a patient '
    'as "{disorder}". You should be specific in generating these features that are related to single '
    'regions. You should make each feature very concise and clear, and each feature should be '
    'separated by a new line. You should not include any other information or explanation, just the '
    'features.\n'
    'You should make sure the generated concepts are not fractional anisotropy (FA) measures.\n'
    'You should make sure the generated concepts are derived only to functional connectivity.\n'
    'The generated concepts are related to at least one of the following: {terms}'
)
CONSTRAINT_SENTENCES = (
    "You should make sure the generated concepts are not fractional anisotropy (FA) measures.",
    "You should make sure the generated concepts are derived only to functional connectivity.",
)


def load_disorder_terms(disorder: str, override: str | os.PathLike | None = None) -> list[str]:
    """Term list for a disorder key; ``override`` is a JSON list or a {disorder: [...]} file."""
    if override is not None:
        raw = json.loads(Path(override).read_text(encoding="utf-8"))
        if isinstance(raw, dict):
            entry = raw.get(disorder)
            if entry is None:
                raise KeyError(f"disorder {disorder!r} not in {override}")
            return list(entry["terms"] if isinstance(entry, dict) else entry)
        return list(raw)
    table = disorder_table()
    if disorder not in table:
        raise KeyError(f"unknown disorder {disorder!r}; bundled: {sorted(table)}")
    return list(table[disorder]["terms"])


@dataclass(frozen=True)
class PromptSpec:
    disorder: str
    terms: tuple[str, ...]
    template: str = PROMPT_TEMPLATE


def build_prompt(spec: PromptSpec) -> str:
    if not spec.terms:
        raise ValueError("prompt needs at least one disorder term")
    return spec.template.format(disorder=spec.disorder, terms=", ".join(spec.terms))


def prompt_for(disorder: str) -> str:
    return build_prompt(PromptSpec(disorder, tuple(load_disorder_terms(disorder))))


_DISORDER_IN_PROMPT = re.compile(r'diagnosing a patient as "([^"]+)"')


@dataclass
class GenerationRecord:
    record_id: str
    disorder: str
    rendered_prompt: str
    raw_response_lines: list[str]
    provider_name: str
    timestamp: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "GenerationRecord":
        return cls(**json.loads(line))


class RecordStore:
    """Append-only JSON Lines store; writes are serialised by a lock."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: GenerationRecord) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")

    def read(self) -> list[GenerationRecord]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [GenerationRecord.from_json(ln) for ln in fh if ln.strip()]


class Provider:
    name = "abstract"

    def complete(self, prompt: str) -> str:
        raise NotImplementedError


class FixtureProvider(Provider):
    """Answers with the bundled concept list for the disorder named in the prompt."""

    name = "fixture"

    def __init__(self, table: dict[str, list[str]] | None = None):
        self.table = table if table is not None else generated_concepts()

    def complete(self, prompt: str) -> str:
        m = _DISORDER_IN_PROMPT.search(prompt)
        disorder = m.group(1) if m else ""
        return "\n".join(self.table.get(disorder, []))


@dataclass
class HTTPProvider(Provider):
    """Chat-completion client: POST {model, messages[, temperature]} with a bearer token."""

    endpoint: str
    model: str | None = None
    temperature: float | None = None
    timeout: float = 60.0
    api_key: str | None = field(default=None, repr=False)
    name: str = "http"

    def complete(self, prompt: str) -> str:
        key = self.api_key or os.environ.get(API_KEY_ENV)
        if not key:
            raise MissingCredential(f"set {API_KEY_ENV} to use the HTTP provider")
        body = {"messages": [{"role": "user", "content": prompt}]}
        if self.model:
            body["model"] = self.model
        if self.temperature is not None:
            body["temperature"] = self.temperature
        req = urllib.request.Request(
            self.endpoint, data=json.dumps(body).encode("utf-8"), method="POST",
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {key}"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code in (401, 403):
                raise AuthError(f"provider rejected credential (HTTP {exc.code})") from None
            raise HTTPStatusError(f"provider returned HTTP {exc.code}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"network failure: {exc}") from None
        except json.JSONDecodeError:
            raise TransportError("provider response is not JSON") from None
        try:
            return payload["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise TransportError("unexpected response shape from provider") from None


def provider_from_config(cfg: dict | str | os.PathLike) -> Provider:
    if not isinstance(cfg, dict):
        cfg = json.loads(Path(cfg).read_text(encoding="utf-8"))
    kind = cfg.get("kind")
    if kind == "fixture":
        return FixtureProvider()
    if kind == "http":
        if not cfg.get("endpoint"):
            raise ValueError("http provider needs an 'endpoint'")
        return HTTPProvider(cfg["endpoint"], cfg.get("model"), cfg.get("temperature"))
    raise ValueError(f"unknown provider kind {kind!r}")


def split_response(text: str) -> list[str]:
    lines = []
    for ln in text.splitlines():
        ln = ln.strip()
        if ln:
            lines.append(ln)
    return lines


def generate_concepts(provider: Provider, prompt: str, store: RecordStore | None = None,
                      disorder: str | None = None) -> list[str]:
    """Ask the provider for concepts; one record is persisted per successful call."""
    if disorder is None:
        m = _DISORDER_IN_PROMPT.search(prompt)
        disorder = m.group(1) if m else ""
    text = provider.complete(prompt)
    lines = split_response(text)
    ts = time.time()
    rid = hashlib.sha256(f"{provider.name}\0{disorder}\0{prompt}\0{ts!r}".encode()).hexdigest()[:16]
    record = GenerationRecord(rid, disorder, prompt, lines, provider.name, ts)
    if store is not None:
        store.append(record)
    if not lines:
        raise EmptyGeneration(f"provider {provider.name} returned no concept lines (record {rid})")
    return lines
