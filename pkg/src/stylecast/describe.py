"""Transcription with frame linkage, and multimodal video description."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Sequence

from .errors import ProviderError
from .ingestion import TranscriptSegment
from .providers import ChatProvider, TranscribeProvider, call_with_retries
from .textutil import fingerprint, load_prompt

DESCRIBE_TEMPLATE = "describe-v1"
LANGUAGE_NAMES = {"zh": "Chinese", "en": "English"}


def normalize_segments(raw: Sequence[dict]) -> list[tuple[float, float, str]]:
    """Sort by start and truncate each segment at the next one's start."""
    segs = sorted(
        ((float(s.get("start_s", s.get("start", 0.0))), float(s.get("end_s", s.get("end", 0.0))),
          str(s.get("text", "")).strip()) for s in raw),
        key=lambda s: (s[0], s[1]),
    )
    out = []
    for i, (start, end, text) in enumerate(segs):
        if i + 1 < len(segs):
            end = min(end, segs[i + 1][0])
        if end > start and text:
            out.append((start, end, text))
    return out


def link_frames(start_s: float, end_s: float, frame_times: Sequence[float]) -> tuple[int, ...]:
    """Indices of frames sampled in ``[start_s, end_s)``; ``frame_times`` must be sorted."""
    lo = bisect.bisect_left(frame_times, start_s - 1e-9)
    hi = bisect.bisect_left(frame_times, end_s - 1e-9)
    return tuple(range(lo, hi))


def transcribe_audio(media_path: str | Path, provider: TranscribeProvider,
                     frame_times: Sequence[float] = ()) -> list[TranscriptSegment]:
    try:
        raw = provider.transcribe(media_path)
    except ProviderError:
        raise
    except Exception as exc:  # noqa: BLE001 - any backend failure is a provider failure
        raise ProviderError(f"transcription failed for {media_path}: {exc}") from exc
    times = list(frame_times)
    return [TranscriptSegment(s, e, text, link_frames(s, e, times))
            for s, e, text in normalize_segments(raw)]


def subsample_frames(frame_paths: Sequence[str], max_frames: int) -> list[str]:
    """Uniform-stride subset that keeps the first and last frame."""
    n = len(frame_paths)
    if max_frames < 1:
        raise ValueError("max_frames must be at least 1")
    if n <= max_frames:
        return list(frame_paths)
    if max_frames == 1:
        return [frame_paths[0]]
    # round-half-up of i*(n-1)/(m-1) in integer arithmetic
    m = max_frames
    return [frame_paths[(2 * i * (n - 1) + (m - 1)) // (2 * (m - 1))] for i in range(m)]


@dataclass(frozen=True)
class DescribeRequest:
    transcript: tuple[TranscriptSegment, ...]
    frame_paths: tuple[str, ...]
    title: str = ""
    description: str = ""
    duration_s: float = 0.0
    language: str = "en"
    max_frames: int = 32
    extra_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.frame_paths and not self.transcript:
            raise ValueError("describe request needs frames or a transcript")
        if self.max_frames < 1:
            raise ValueError("max_frames must be at least 1")
        if self.language not in LANGUAGE_NAMES:
            raise ValueError(f"unknown language: {self.language}")


@dataclass(frozen=True)
class SemanticDescription:
    text: str
    provider_id: str
    prompt_fingerprint: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("semantic description must be non-empty")


def build_describe_payload(request: DescribeRequest, model: str = "",
                           template: str = DESCRIBE_TEMPLATE) -> tuple[dict, str]:
    """Wire payload and its fingerprint (which covers the template version)."""
    system, user = load_prompt(template)
    lines = [f"[{s.start_s:.2f}-{s.end_s:.2f}] {s.text}" for s in request.transcript] or ["(no speech)"]
    frames = subsample_frames(request.frame_paths, request.max_frames)
    text = Template(user).substitute(
        title=request.title,
        description=request.description or "(none)",
        duration=f"{request.duration_s:.1f}",
        transcript="\n".join(lines),
        frame_count=len(frames),
        language_name=LANGUAGE_NAMES[request.language],
    )
    payload = {
        "model": model,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": [{"type": "text", "text": text}]
             + [{"type": "image_ref", "path": p} for p in frames]},
        ],
    }
    return payload, fingerprint({"template": template, "payload": payload})


def describe_video(request: DescribeRequest, provider: ChatProvider, max_retries: int = 2,
                   model: str = "") -> SemanticDescription:
    payload, fp = build_describe_payload(request, model)

    def once() -> str:
        text = provider.complete(payload)
        if not text or not text.strip():
            raise ProviderError("describe provider returned empty text", retryable=True)
        return text.strip()

    try:
        text, _ = call_with_retries(once, max_retries)
    except ProviderError as exc:
        raise ProviderError(f"describe failed after retries: {exc}", fingerprint=fp) from exc
    return SemanticDescription(text, provider.provider_id, fp)
