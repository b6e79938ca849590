"""Model providers: chat (describe/generate/judge), embedding, sentiment, transcription.

Every provider kind has an HTTP backend and a deterministic offline mock. The
wire format is documented in ``docs/providers.md``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence, TypeVar

import httpx
import numpy as np

from .errors import ProviderError
from .platforms import RateLimiter
from .textutil import count_length, fingerprint, read_json, tokenize

T = TypeVar("T")

STYLE_MARKER_RE = re.compile(r"\[STYLE:([a-z_]+)\]")


@dataclass
class ProviderBinding:
    kind: str = "mock"
    endpoint: str = ""
    model: str = ""
    api_key_env: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 2
    rate_per_s: float | None = None
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError(f"unknown provider kind: {self.kind}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http provider needs an endpoint")


@dataclass
class ProviderConfig:
    describe: ProviderBinding = field(default_factory=ProviderBinding)
    embed: ProviderBinding = field(default_factory=ProviderBinding)
    generate: ProviderBinding = field(default_factory=ProviderBinding)
    sentiment: ProviderBinding = field(default_factory=ProviderBinding)
    transcribe: ProviderBinding = field(default_factory=ProviderBinding)
    judge: ProviderBinding = field(default_factory=ProviderBinding)
    decoder: str = "auto"
    fixtures_dir: str | None = None
    max_in_flight: int = 4

    ROLES = ("describe", "embed", "generate", "sentiment", "transcribe", "judge")

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderConfig":
        kwargs: dict[str, Any] = {}
        for role in cls.ROLES:
            if role in d:
                kwargs[role] = ProviderBinding(**d[role])
        for key in ("decoder", "fixtures_dir", "max_in_flight"):
            if key in d:
                kwargs[key] = d[key]
        return cls(**kwargs)


class ChatProvider(Protocol):
    provider_id: str

    def complete(self, payload: dict) -> str: ...


class EmbedProvider(Protocol):
    provider_id: str

    def embed(self, text: str) -> np.ndarray: ...


class SentimentProvider(Protocol):
    provider_id: str

    def classify(self, text: str, language: str) -> str: ...


class TranscribeProvider(Protocol):
    provider_id: str

    def transcribe(self, media_path: str | Path) -> list[dict]: ...


def call_with_retries(fn: Callable[[], T], max_retries: int) -> tuple[T, int]:
    """Run ``fn``, retrying retryable :class:`ProviderError`; returns (result, retries used)."""
    retries = 0
    while True:
        try:
            return fn(), retries
        except ProviderError as exc:
            if not exc.retryable or retries >= max_retries:
                raise
            retries += 1


# ---------------------------------------------------------------------------
# HTTP backends


class _HttpProvider:
    def __init__(self, binding: ProviderBinding, transport: httpx.BaseTransport | None = None,
                 in_flight: threading.Semaphore | None = None):
        self.binding = binding
        self.provider_id = f"http:{binding.model or binding.endpoint}"
        headers = {}
        if binding.api_key_env:
            key = os.environ.get(binding.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        self.http = httpx.Client(timeout=binding.timeout_s, headers=headers, transport=transport)
        self.limiter = RateLimiter(binding.rate_per_s)
        self.in_flight = in_flight or threading.Semaphore(64)

    def _post(self, **kwargs) -> dict:
        self.limiter.wait()
        with self.in_flight:
            try:
                resp = self.http.post(self.binding.endpoint, **kwargs)
            except httpx.TimeoutException as exc:
                raise ProviderError(f"provider timeout: {self.binding.endpoint}", retryable=True) from exc
            except httpx.HTTPError as exc:
                raise ProviderError(f"provider unreachable: {exc}", retryable=True) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ProviderError(f"provider returned {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise ProviderError(f"provider returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderError("provider returned non-JSON body", retryable=True) from exc


class HttpChatProvider(_HttpProvider):
    """Chat completion over HTTP. ``image_ref`` parts are inlined as base64 JPEG.

    Relative image paths resolve against ``media_root`` (the pipeline workdir).
    """

    media_root: Path | None = None

    def _inline(self, part: dict) -> dict:
        if part.get("type") != "image_ref":
            return part
        path = Path(part["path"])
        if self.media_root is not None and not path.is_absolute():
            path = self.media_root / path
        data = base64.b64encode(path.read_bytes()).decode("ascii")
        return {"type": "image", "media_type": "image/jpeg", "data": data}

    def complete(self, payload: dict) -> str:
        body = dict(payload)
        body["messages"] = [
            {**m, "content": [self._inline(p) for p in m["content"]]} if isinstance(m.get("content"), list) else m
            for m in payload.get("messages", [])
        ]
        if self.binding.model:
            body["model"] = self.binding.model
        doc = self._post(json=body)
        text = doc.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ProviderError(f"provider refused or returned no text: {doc.get('refusal', '')}",
                                retryable=True)
        return text


class HttpEmbedProvider(_HttpProvider):
    def embed(self, text: str) -> np.ndarray:
        doc = self._post(json={"model": self.binding.model, "input": text})
        vec = np.asarray(doc.get("embedding") or [], dtype=float)
        if vec.ndim != 1 or vec.size == 0 or not np.all(np.isfinite(vec)):
            raise ProviderError("provider returned an invalid embedding", retryable=True)
        return vec


class HttpSentimentProvider(_HttpProvider):
    _LABELS = {"positive": "positive", "pos": "positive", "label_1": "positive",
               "negative": "negative", "neg": "negative", "label_0": "negative"}

    def classify(self, text: str, language: str) -> str:
        doc = self._post(json={"model": self.binding.model, "text": text, "language": language})
        label = self._LABELS.get(str(doc.get("label", "")).lower())
        if label is None:
            raise ProviderError(f"unknown sentiment label: {doc.get('label')!r}", retryable=True)
        return label


class HttpTranscribeProvider(_HttpProvider):
    def transcribe(self, media_path: str | Path) -> list[dict]:
        with open(media_path, "rb") as fh:
            doc = self._post(files={"file": (Path(media_path).name, fh, "video/mp4")},
                             data={"model": self.binding.model})
        return list(doc.get("segments") or [])


# ---------------------------------------------------------------------------
# Mocks


def _user_text(payload: dict) -> str:
    parts = []
    for msg in payload.get("messages", []):
        if msg.get("role") != "user":
            continue
        content = msg.get("content")
        if isinstance(content, str):
            parts.append(content)
        else:
            parts.extend(p.get("text", "") for p in content if p.get("type") == "text")
    return "\n".join(parts)


def _image_count(payload: dict) -> int:
    return sum(1 for msg in payload.get("messages", []) if isinstance(msg.get("content"), list)
               for p in msg["content"] if p.get("type") == "image_ref")


def _section(text: str, name: str) -> str:
    """Body between ``<<<`` and ``>>>`` following a ``name:`` header line."""
    m = re.search(rf"^{re.escape(name)}:.*?\n<<<\n(.*?)\n>>>", text, re.S | re.M)
    return m.group(1) if m else ""


class _ScriptedMixin:
    """Pops scripted responses first; an Exception instance in the script is raised."""

    def _init_script(self, script: Sequence[str | Exception] | None, responses_dir: str | Path | None):
        self.script = list(script or [])
        self.responses_dir = Path(responses_dir) if responses_dir else None
        self.calls: list[dict] = []

    def _scripted(self, payload: dict) -> str | None:
        self.calls.append(payload)
        if self.script:
            item = self.script.pop(0)
            if isinstance(item, Exception):
                raise item
            return item
        if self.responses_dir:
            path = self.responses_dir / f"{fingerprint(payload)}.json"
            if path.exists():
                return read_json(path)["text"]
        return None


class MockDescribeProvider(_ScriptedMixin):
    """Canonical description built from the request's metadata and transcript.

    Template: ``"{title}. Opening: {first}. Closing: {last}. Frames: {n}.
    Duration: {d}s."`` where first/last are the first and last transcript lines
    (``(no speech)`` when the transcript is empty).
    """

    provider_id = "mock-describe-v1"

    def __init__(self, script=None, responses_dir=None):
        self._init_script(script, responses_dir)

    def complete(self, payload: dict) -> str:
        scripted = self._scripted(payload)
        if scripted is not None:
            return scripted
        text = _user_text(payload)
        title = re.search(r"^Title: (.*)$", text, re.M)
        duration = re.search(r"^Duration: (.*?)s$", text, re.M)
        lines = [m.group(1) for m in re.finditer(r"^\[\d+\.\d+-\d+\.\d+\] (.*)$", text, re.M)]
        first = lines[0] if lines else "(no speech)"
        last = lines[-1] if lines else "(no speech)"
        return (f"{title.group(1) if title else ''}. Opening: {first}. Closing: {last}. "
                f"Frames: {_image_count(payload)}. Duration: {duration.group(1) if duration else '0'}s.")


_OPENERS = {
    "en": {
        "puns_homophones": "Pun intended:",
        "rhyming": "Rhyme time:",
        "meme_application": "Nobody: / This video:",
        "sarcasm_irony": "Oh sure, totally normal:",
        "plain_humor": "Honestly,",
        "content_extraction": "Key moment:",
    },
    "zh": {
        "puns_homophones": "谐音梗来了：",
        "rhyming": "押韵一下：",
        "meme_application": "梗图警告：",
        "sarcasm_irony": "真是好极了，",
        "plain_humor": "说真的，",
        "content_extraction": "重点来了：",
    },
}


# Labels of the mock description template, never content.
_SCAFFOLD = {"opening", "closing", "frames", "duration", "s", "no", "speech"}
_FILLER = {
    "en": ("and", "honestly", "this", "is", "the", "best", "part", "of", "my", "day", "right", "now"),
    "zh": tuple("我笑到停不下来今天的快乐都在这里了"),
}


def longest_shared_run(a: str, b: str, n: int = 10) -> bool:
    """True if ``a`` and ``b`` share a substring of ``n`` or more characters."""
    if len(a) < n or len(b) < n:
        return False
    grams = {b[i:i + n] for i in range(len(b) - n + 1)}
    return any(a[i:i + n] in grams for i in range(len(a) - n + 1))


class MockGenerateProvider(_ScriptedMixin):
    """Composes a comment from the style opener and description tokens.

    The output aims at the middle of the requested length band and never
    shares a run of 10+ characters with the style reference, mirroring the
    instruction to copy structure but not content.
    """

    provider_id = "mock-generate-v1"

    def __init__(self, script=None, responses_dir=None):
        self._init_script(script, responses_dir)

    def complete(self, payload: dict) -> str:
        scripted = self._scripted(payload)
        if scripted is not None:
            return scripted
        text = _user_text(payload)
        style_m = STYLE_MARKER_RE.search(text)
        style = style_m.group(1) if style_m else "plain_humor"
        lang_m = re.search(r"^Language: (zh|en)", text, re.M)
        language = lang_m.group(1) if lang_m else "en"
        band = re.search(r"^Target length: (\d+)-(\d+)", text, re.M)
        target = (int(band.group(1)) + int(band.group(2))) // 2 if band else 30
        description = _section(text, "Video description")
        reference = _section(text, "Style reference")

        words = [t for t in tokenize(description)
                 if not any(ch.isdigit() for ch in t) and t not in _SCAFFOLD]
        tokens = list(dict.fromkeys(words)) + list(_FILLER[language])
        joiner = " " if language == "en" else ""
        out = _OPENERS[language].get(style, _OPENERS[language]["plain_humor"])
        if longest_shared_run(out, reference):
            out = ""
        i, skipped = 0, 0
        while count_length(out, language) < target and skipped < len(tokens):
            candidate = out + joiner + tokens[i % len(tokens)] if out else tokens[i % len(tokens)]
            i += 1
            if longest_shared_run(candidate, reference):
                skipped += 1
                continue
            skipped = 0
            out = candidate
        return out + ("!" if language == "en" else "！")


class MockJudgeProvider(_ScriptedMixin):
    """Returns ``{"structure", "tone", "length"}`` JSON; values derive from the payload hash."""

    provider_id = "mock-judge-v1"

    def __init__(self, script=None, responses_dir=None):
        self._init_script(script, responses_dir)

    def complete(self, payload: dict) -> str:
        scripted = self._scripted(payload)
        if scripted is not None:
            return scripted
        digest = hashlib.sha256(fingerprint(payload).encode()).digest()
        vals = [round(digest[i] / 255.0, 4) for i in range(3)]
        return json.dumps({"structure": vals[0], "tone": vals[1], "length": vals[2]})


class MockEmbedProvider:
    """Hashed bag-of-tokens: token counts folded into ``dim`` buckets by BLAKE2b."""

    def __init__(self, dim: int = 256, fail_on: Callable[[str], bool] | None = None):
        self.dim = dim
        self.provider_id = f"mock-embed-v1-{dim}"
        self.fail_on = fail_on
        self.calls = 0

    def embed(self, text: str) -> np.ndarray:
        self.calls += 1
        if self.fail_on and self.fail_on(text):
            raise ProviderError("mock embed failure")
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            h = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
            vec[int.from_bytes(h, "little") % self.dim] += 1.0
        return vec


_POSITIVE = {
    "en": ("love", "great", "funny", "lol", "haha", "best", "amazing", "cute", "happy", "good",
           "hilarious", "awesome", "laugh", "nice", "enjoy", "wholesome", "adorable", "fun", "perfect",
           "win", "smile", "cool", "glad", "wonderful", "joy"),
    "zh": ("哈哈", "好笑", "可爱", "喜欢", "开心", "棒", "笑死", "厉害", "爱", "牛", "有趣", "快乐",
           "幸福", "好看", "赞"),
}
_NEGATIVE = {
    "en": ("hate", "bad", "worst", "sad", "angry", "terrible", "awful", "boring", "annoying", "cringe",
           "fail", "ugly", "cry", "scary", "wrong", "disappointing", "poor", "pain", "mess", "worse"),
    "zh": ("难过", "讨厌", "生气", "无聊", "差", "烦", "哭", "可怕", "失望", "尴尬", "惨", "难受", "糟糕"),
}


class MockSentimentProvider:
    """Keyword lexicon; ties (including no hits) count as positive."""

    provider_id = "mock-sentiment-v1"

    def classify(self, text: str, language: str) -> str:
        lowered = text.lower()
        if language == "zh":
            pos = sum(lowered.count(w) for w in _POSITIVE["zh"])
            neg = sum(lowered.count(w) for w in _NEGATIVE["zh"])
        else:
            toks = tokenize(lowered)
            pos = sum(t in _POSITIVE["en"] for t in toks)
            neg = sum(t in _NEGATIVE["en"] for t in toks)
        return "positive" if pos >= neg else "negative"


class MockTranscribeProvider:
    """Canned segments from ``<fixtures_dir>/<video_id>/transcript.json``.

    The video id is the media file's parent directory name (the workdir
    layout). Videos without a transcript fixture are treated as silent.
    """

    provider_id = "mock-transcribe-v1"

    def __init__(self, fixtures_dir: str | Path | None = None, canned: dict[str, list[dict]] | None = None):
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self.canned = dict(canned or {})

    def transcribe(self, media_path: str | Path) -> list[dict]:
        video_id = Path(media_path).parent.name
        if video_id in self.canned:
            return [dict(s) for s in self.canned[video_id]]
        if self.fixtures_dir:
            path = self.fixtures_dir / video_id / "transcript.json"
            if path.exists():
                return list(read_json(path))
        return []


@dataclass
class Providers:
    describe: ChatProvider
    embed: EmbedProvider
    generate: ChatProvider
    sentiment: SentimentProvider
    transcribe: TranscribeProvider
    judge: ChatProvider
    config: ProviderConfig


def build_providers(config: ProviderConfig) -> Providers:
    sem = threading.BoundedSemaphore(max(1, config.max_in_flight))
    fixtures = config.fixtures_dir

    def chat(binding: ProviderBinding, mock_cls):
        if binding.kind == "http":
            return HttpChatProvider(binding, in_flight=sem)
        return mock_cls(responses_dir=binding.options.get("responses_dir"))

    return Providers(
        describe=chat(config.describe, MockDescribeProvider),
        embed=(HttpEmbedProvider(config.embed, in_flight=sem) if config.embed.kind == "http"
               else MockEmbedProvider(int(config.embed.options.get("dim", 256)))),
        generate=chat(config.generate, MockGenerateProvider),
        sentiment=(HttpSentimentProvider(config.sentiment, in_flight=sem) if config.sentiment.kind == "http"
                   else MockSentimentProvider()),
        transcribe=(HttpTranscribeProvider(config.transcribe, in_flight=sem)
                    if config.transcribe.kind == "http" else MockTranscribeProvider(fixtures)),
        judge=chat(config.judge, MockJudgeProvider),
        config=config,
    )
