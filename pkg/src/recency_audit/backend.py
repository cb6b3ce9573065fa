"""Reranker backends: an HTTP chat-completion client and deterministic mocks."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import httpx

from .protocol import (
    REPAIR,
    STRICT,
    ListwisePrompt,
    PairwisePrompt,
    ParseError,
    parse_preference,
    parse_ranking,
    passage_year,
    plain_passage,
    render_ranking,
)

logger = logging.getLogger(__name__)

MOCK_KINDS = (
    "identity",
    "reverse",
    "lexical_overlap",
    "recency_greedy",
    "date_blind",
    "fresh_preferring",
    "random",
)


class BackendError(RuntimeError):
    """The backend could not produce a usable response."""


class BackendTimeout(BackendError):
    pass


class RateLimited(BackendError):
    pass


class AuthFailure(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


def stable_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-3.5-turbo-1106"
    top_p: float = 1.0
    temperature: float = 0.0
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrency: int = 4
    api_key_env: str = "OPENAI_API_KEY"
    backoff_base: float = 1.0
    requests_per_minute: float | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def identity(self) -> dict:
        """Fields that can change model output; transport knobs are excluded."""
        return {
            "kind": "remote",
            "endpoint": self.endpoint,
            "model": self.model,
            "top_p": self.top_p,
            "temperature": self.temperature,
            "frequency_penalty": self.frequency_penalty,
            "presence_penalty": self.presence_penalty,
        }


class Transcript:
    """Append-only JSONL log, safe to share between worker threads."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        record = {"timestamp": datetime.now(timezone.utc).isoformat(), **record}
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()

    def records(self):
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    logger.warning("%s:%d: corrupt transcript record skipped", self.path, lineno)


def _payload(config: BackendConfig, messages: Sequence[tuple[str, str]]) -> dict:
    return {
        "model": config.model,
        "messages": [{"role": r, "content": c} for r, c in messages],
        "temperature": config.temperature,
        "top_p": config.top_p,
        "frequency_penalty": config.frequency_penalty,
        "presence_penalty": config.presence_penalty,
    }


def resolve_api_key(config: BackendConfig) -> str:
    key = os.environ.get(config.api_key_env, "")
    if not key:
        raise AuthFailure(f"environment variable {config.api_key_env} is not set")
    return key


def chat_complete(
    config: BackendConfig,
    messages: Sequence[tuple[str, str]],
    *,
    client: httpx.Client | None = None,
    api_key: str | None = None,
    transcript: Transcript | None = None,
    sleep=time.sleep,
) -> str:
    """POST one chat-completion request, retrying 429/5xx/timeouts with exponential backoff."""
    key = api_key if api_key is not None else resolve_api_key(config)
    payload = _payload(config, messages)
    prompt_hash = stable_hash(payload["messages"])
    config_hash = stable_hash(config.identity())
    headers = {"Authorization": f"Bearer {key}"}
    own_client = client is None
    client = client or httpx.Client()
    last_exc: BackendError | None = None
    try:
        for attempt in range(config.max_retries + 1):
            if attempt:
                delay = config.backoff_base * 2 ** (attempt - 1)
                logger.warning("retry %d/%d after %s (sleep %.1fs)", attempt, config.max_retries, last_exc, delay)
                sleep(delay)
            try:
                resp = client.post(config.endpoint, json=payload, headers=headers, timeout=config.timeout)
            except httpx.TimeoutException as exc:
                last_exc = BackendTimeout(f"request timed out: {exc}")
                _log(transcript, config_hash, prompt_hash, attempt, error=str(last_exc))
                continue
            except httpx.TransportError as exc:
                last_exc = BackendError(f"transport failure: {exc}")
                _log(transcript, config_hash, prompt_hash, attempt, error=str(last_exc))
                continue
            _log(transcript, config_hash, prompt_hash, attempt, status=resp.status_code, raw=resp.text)
            if resp.status_code in (401, 403):
                raise AuthFailure(f"HTTP {resp.status_code} from {config.endpoint}")
            if resp.status_code == 429:
                last_exc = RateLimited("HTTP 429")
                continue
            if resp.status_code >= 500:
                last_exc = BackendError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise MalformedResponse(f"unexpected response body: {resp.text[:200]!r}") from exc
            if not isinstance(content, str):
                raise MalformedResponse("message content is not a string")
            return content
    finally:
        if own_client:
            client.close()
    assert last_exc is not None
    raise last_exc


def _log(transcript, config_hash, prompt_hash, attempt, **fields):
    if transcript is not None:
        transcript.append(
            {"type": "http", "config_hash": config_hash, "prompt_hash": prompt_hash, "attempt": attempt, **fields}
        )


class _RateLimiter:
    def __init__(self, per_minute: float | None):
        self.interval = 60.0 / per_minute if per_minute else 0.0
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self):
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            time.sleep(start - now)


class RemoteBackend:
    """Chat-completion backend with an in-flight cap and optional rate limit."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None,
                 transcript: Transcript | None = None, sleep=time.sleep):
        self.config = config
        self.client = client
        self.transcript = transcript
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self._limiter = _RateLimiter(config.requests_per_minute)
        self._api_key: str | None = None

    def identity(self) -> dict:
        return self.config.identity()

    def check_credentials(self) -> None:
        self._api_key = resolve_api_key(self.config)

    def _complete(self, messages) -> str:
        if self._api_key is None:
            self.check_credentials()
        with self._slots:
            self._limiter.wait()
            return chat_complete(self.config, messages, client=self.client, api_key=self._api_key,
                                 transcript=self.transcript, sleep=self.sleep)

    def respond_listwise(self, prompt: ListwisePrompt, attempt: int = 0) -> str:
        return self._complete(prompt.messages())

    def respond_pairwise(self, prompt: PairwisePrompt, attempt: int = 0) -> str:
        return self._complete(prompt.messages())


@dataclass(frozen=True)
class MockSpec:
    kind: str
    lam: float | None = None
    seed: int = 0
    # recency_greedy only: jitter on the perceived (normalized) year of dated passages
    noise: float = 0.0

    def __post_init__(self):
        if self.kind not in MOCK_KINDS:
            raise ValueError(f"unknown mock kind {self.kind!r}")
        if (self.lam is not None) != (self.kind == "recency_greedy"):
            raise ValueError("lam must be given exactly when kind is recency_greedy")
        if self.lam is not None and not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


_WORD = re.compile(r"\w+")


def _terms(text: str) -> set[str]:
    return {w.lower() for w in _WORD.findall(text)}


def _unit(*parts) -> float:
    """Deterministic uniform value in [0, 1) keyed on `parts`."""
    digest = hashlib.sha256(":".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def mock_score(spec: MockSpec, item, position: int, window: Sequence, query: str = "") -> float:
    """Score of one window item; higher ranks first. `position` is 1-based."""
    n = len(window)
    if spec.kind == "identity":
        return -position
    if spec.kind == "reverse":
        return position
    if spec.kind == "lexical_overlap":
        return len(_terms(query) & _terms(plain_passage(item).text))
    if spec.kind == "fresh_preferring":
        year = passage_year(item)
        return float("-inf") if year is None else year
    if spec.kind in ("date_blind", "random"):
        # date_blind keys on undated content only; random keys on everything shown
        key = plain_passage(item).text if spec.kind == "date_blind" else _shown(item)
        return _unit(spec.seed, spec.kind, query, key)
    # recency_greedy
    base = 1.0 if n == 1 else 1 - (position - 1) / (n - 1)
    years = [passage_year(p) for p in window]
    dated = [y for y in years if y is not None]
    year = passage_year(item)
    if year is None or not dated or max(dated) == min(dated):
        year_norm = 0.0
    else:
        year_norm = (year - min(dated)) / (max(dated) - min(dated))
    if year is not None and spec.noise:
        year_norm += spec.noise * (_unit(spec.seed, plain_passage(item).id, year) - 0.5)
    return (1 - spec.lam) * base + spec.lam * year_norm


def _shown(item) -> str:
    return getattr(item, "rendered_text", None) or plain_passage(item).text


class MockBackend:
    """Offline backend; responds in the same text format a real model would."""

    def __init__(self, spec: MockSpec):
        self.spec = spec

    def identity(self) -> dict:
        return {"kind": "mock", **asdict(self.spec)}

    def check_credentials(self) -> None:
        pass

    def permutation(self, prompt: ListwisePrompt) -> tuple[int, ...]:
        items = prompt.items
        scores = [mock_score(self.spec, it, i, items, prompt.query) for i, it in enumerate(items, start=1)]
        # stable: ties keep window order
        return tuple(sorted(range(1, len(items) + 1), key=lambda i: -scores[i - 1]))

    def preference(self, prompt: PairwisePrompt) -> str:
        window = [prompt.a, prompt.b]
        sa, sb = (mock_score(self.spec, it, i, window, prompt.query) for i, it in enumerate(window, start=1))
        if self.spec.kind == "random":
            return "A" if _unit(self.spec.seed, "pair", prompt.user) < 0.5 else "B"
        return "B" if sb > sa else "A"

    def respond_listwise(self, prompt: ListwisePrompt, attempt: int = 0) -> str:
        return render_ranking(self.permutation(prompt))

    def respond_pairwise(self, prompt: PairwisePrompt, attempt: int = 0) -> str:
        return self.preference(prompt)


@dataclass
class ParseStats:
    calls: int = 0
    repaired: int = 0
    strict_failures: int = 0
    retries: int = 0
    unparseable: int = 0

    def merge(self, other: "ParseStats") -> None:
        for k in asdict(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    def to_dict(self) -> dict:
        return asdict(self)


def _respond(backend, kind: str, prompt, attempt: int) -> str:
    return getattr(backend, f"respond_{kind}")(prompt, attempt=attempt)


def _resolve(backend, kind, prompt, parse, mode, stats: ParseStats):
    stats.calls += 1
    raw = _respond(backend, kind, prompt, 0)
    if mode == STRICT:
        try:
            return parse(raw, STRICT)
        except ParseError as exc:
            stats.strict_failures += 1
            stats.retries += 1
            logger.info("strict parse failed (%s); retrying once", exc)
            raw = _respond(backend, kind, prompt, 1)
            try:
                return parse(raw, STRICT)
            except ParseError:
                pass
    try:
        strict_ok = True
        try:
            result = parse(raw, STRICT)
        except ParseError:
            strict_ok = False
            result = parse(raw, REPAIR)
    except ParseError:
        stats.unparseable += 1
        logger.warning("unparseable %s response: %r", kind, raw[:200])
        raise
    if not strict_ok:
        stats.repaired += 1
        logger.info("repaired %s response %r -> %r", kind, raw[:200], result)
    return result


def rank_window(backend, prompt: ListwisePrompt, mode: str = REPAIR, stats: ParseStats | None = None) -> tuple[int, ...]:
    """Complete permutation of the window (1-based window positions, best first)."""
    stats = stats if stats is not None else ParseStats()
    return _resolve(backend, "listwise", prompt, lambda t, m: parse_ranking(t, prompt.n, m), mode, stats)


def prefer(backend, prompt: PairwisePrompt, mode: str = REPAIR, stats: ParseStats | None = None) -> str:
    stats = stats if stats is not None else ParseStats()
    return _resolve(backend, "pairwise", prompt, parse_preference, mode, stats)


def parse_backend_name(name: str) -> MockSpec | None:
    """``recency_greedy:0.5`` style names; returns None for ``remote``."""
    if name == "remote":
        return None
    kind, _, arg = name.partition(":")
    if kind == "recency_greedy":
        return MockSpec(kind, lam=float(arg) if arg else 1.0)
    if arg:
        return MockSpec(kind, seed=int(arg))
    return MockSpec(kind)
