"""Style-conditioned prompt construction and comment generation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Mapping, Sequence

from .classify import CategoryDecision, ClassifyParams, DatasetEmbeddingIndex, classify_video
from .errors import ProviderError, StageError, StylecastError
from .ingestion import CommentRecord, DatasetBundle, StyleLabel, VideoCategory, VideoManifestEntry
from .providers import ChatProvider, EmbedProvider, SentimentProvider, call_with_retries
from .selection import SelectionParams, TournamentResult, make_scorer, make_video_context, run_tournament
from .textutil import LENGTH_BANDS, LENGTH_UNITS, fingerprint, load_prompt

log = logging.getLogger(__name__)

GENERATE_TEMPLATE = "generate-v1"
DEFAULT_FEW_SHOT = 3
# zh follows the 200-character default; en must fit a 63-72 word band.
DEFAULT_CEILINGS = {"zh": 200, "en": 600}
SHORTER_ADDENDUM = "Your comment is too long. Rewrite it in at most {limit} characters, same style."

STYLE_GUIDE = {
    StyleLabel.PUNS_HOMOPHONES: ("Puns (homophones)", "Play on words that sound alike."),
    StyleLabel.RHYMING: ("Rhyming", "Give the lines a rhyme and a beat."),
    StyleLabel.MEME_APPLICATION: ("Meme application", "Borrow a well-known internet phrase or meme format."),
    StyleLabel.SARCASM_IRONY: ("Sarcasm (irony)", "Say the opposite of what you mean, playfully."),
    StyleLabel.PLAIN_HUMOR: ("Plain humor", "Be directly funny without relying on wordplay."),
    StyleLabel.CONTENT_EXTRACTION: ("Content extraction", "Pick a concrete detail from the video and riff on it."),
}

_QUOTES = "\"'“”‘’「」『』"
_SENTENCE_END = ".!?。！？…"


@dataclass(frozen=True)
class GenerationRequest:
    video_description: str
    style_template: CommentRecord
    style: StyleLabel
    language: str
    few_shot: tuple[tuple[str, CommentRecord], ...] = ()
    instruction_version: str = GENERATE_TEMPLATE

    def __post_init__(self):
        object.__setattr__(self, "style", StyleLabel(self.style))
        if self.language not in LENGTH_BANDS:
            raise ValueError(f"unknown language: {self.language}")
        for _, c in self.few_shot:
            if c.style_label != self.style or c.language != self.language:
                raise ValueError(f"few-shot example {c.comment_id} does not match {self.style.value}/{self.language}")
        load_prompt(self.instruction_version)


@dataclass(frozen=True)
class PromptDocument:
    version: str
    system: str
    user: str
    fingerprint: str
    warnings: tuple[str, ...] = ()

    def payload(self, model: str = "", addendum: str | None = None) -> dict:
        messages = [{"role": "system", "content": self.system},
                    {"role": "user", "content": [{"type": "text", "text": self.user}]}]
        if addendum:
            messages.append({"role": "user", "content": [{"type": "text", "text": addendum}]})
        return {"model": model, "messages": messages}

    def render(self) -> str:
        return f"{self.system}\n\n{self.user}\n"


def select_few_shot(bundle: DatasetBundle, style: StyleLabel, language: str, k: int = DEFAULT_FEW_SHOT,
                    exclude_ids: Sequence[str] = ()) -> tuple[tuple[str, CommentRecord], ...]:
    """Most-liked dataset comments with the requested label, paired with their video description."""
    style = StyleLabel(style)
    excluded = set(exclude_ids)
    pairs = [(item.semantic_description, c) for item in bundle.items for c in item.comments
             if c.style_label == style and c.language == language and c.comment_id not in excluded]
    pairs.sort(key=lambda p: (-p[1].like_count, p[1].comment_id))
    return tuple(pairs[:k])


def build_prompt(request: GenerationRequest) -> PromptDocument:
    system, user = load_prompt(request.instruction_version)
    name, hint = STYLE_GUIDE[request.style]
    lo, hi = LENGTH_BANDS[request.language]
    warnings: list[str] = []
    if request.few_shot:
        blocks = ["Examples of this style:"]
        for i, (desc, c) in enumerate(request.few_shot, 1):
            blocks.append(f"Example {i}\nVideo: {desc}\nComment: {c.text}")
        examples = "\n".join(blocks) + "\n"
    else:
        warnings.append(f"zero-shot: no {request.style.value} examples for {request.language}")
        examples = "No examples are available for this style; follow the style description.\n"
    text = Template(user).substitute(
        style=request.style.value, style_name=name, style_hint=hint, language=request.language,
        band=f"{lo}-{hi} {LENGTH_UNITS[request.language]}", examples=examples,
        template=request.style_template.text, description=request.video_description,
    )
    fp = fingerprint({"template": request.instruction_version, "system": system, "user": text})
    return PromptDocument(request.instruction_version, system, text, fp, tuple(warnings))


@dataclass(frozen=True)
class GeneratedComment:
    text: str
    style: StyleLabel
    language: str
    request_fingerprint: str
    provider_id: str
    reasked: bool = False
    truncated: bool = False
    retries: int = 0

    def to_dict(self) -> dict:
        return {"text": self.text, "style": self.style.value, "language": self.language,
                "request_fingerprint": self.request_fingerprint, "provider_id": self.provider_id,
                "reasked": self.reasked, "truncated": self.truncated, "retries": self.retries}


def clean_output(text: str) -> str:
    text = (text or "").strip()
    while len(text) >= 2 and text[0] in _QUOTES and text[-1] in _QUOTES:
        text = text[1:-1].strip()
    return text


def truncate_at_sentence(text: str, limit: int) -> str:
    """Longest prefix within ``limit`` ending at a sentence end, else at a space, else a hard cut."""
    if len(text) <= limit:
        return text
    head = text[:limit]
    cut = max(head.rfind(ch) for ch in _SENTENCE_END)
    if cut > 0:
        return head[:cut + 1].strip()
    space = head.rfind(" ")
    if space > 0:
        return head[:space].rstrip()
    return head


def generate_comment(request: GenerationRequest, provider: ChatProvider, ceiling: int | None = None,
                     max_retries: int = 2, model: str = "") -> GeneratedComment:
    doc = build_prompt(request)
    limit = ceiling if ceiling is not None else DEFAULT_CEILINGS[request.language]

    def ask(payload: dict) -> str:
        text = clean_output(provider.complete(payload))
        if not text:
            raise ProviderError("generate provider returned empty text", retryable=True)
        return text

    try:
        text, retries = call_with_retries(lambda: ask(doc.payload(model)), max_retries)
    except ProviderError as exc:
        raise ProviderError(f"generation failed (prompt {doc.fingerprint[:12]}): {exc}",
                            fingerprint=doc.fingerprint) from exc

    reasked = truncated = False
    if len(text) > limit:
        reasked = True
        try:
            text = ask(doc.payload(model, SHORTER_ADDENDUM.format(limit=limit)))
        except ProviderError as exc:
            log.warning("re-ask failed, truncating first answer: %s", exc)
        if len(text) > limit:
            text = truncate_at_sentence(text, limit)
            truncated = True
    return GeneratedComment(text, request.style, request.language, doc.fingerprint,
                            provider.provider_id, reasked, truncated, retries)


# ---------------------------------------------------------------------------
# End-to-end


@dataclass
class GenerationDeps:
    bundle: DatasetBundle
    index: DatasetEmbeddingIndex
    profiles: Mapping[tuple[str, str], object]
    embed: EmbedProvider
    sentiment: SentimentProvider
    generate: ChatProvider
    judge: ChatProvider | None = None
    selection: SelectionParams = field(default_factory=SelectionParams)
    classify: ClassifyParams = field(default_factory=ClassifyParams)
    few_shot_k: int = DEFAULT_FEW_SHOT
    ceilings: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_CEILINGS))
    max_retries: int = 2
    cache_dir: str | Path | None = None
    jobs: int = 1


@dataclass
class TemplateSelection:
    decision: CategoryDecision
    tournament: TournamentResult
    pool_fallback: bool


@dataclass
class GenerationOutcome:
    comment: GeneratedComment
    selection: TemplateSelection
    prompt: PromptDocument
    style_source: str

    def record(self, video_id: str) -> dict:
        return {
            "video_id": video_id,
            **self.comment.to_dict(),
            "style_source": self.style_source,
            "template_comment_id": self.selection.tournament.template.comment_id,
            "category": self.selection.decision.category.value,
            "prompt_version": self.prompt.version,
            "prompt_warnings": list(self.prompt.warnings),
        }


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ProviderError as exc:
        raise ProviderError(f"[{stage}] {exc}", exc.retryable, exc.fingerprint) from exc
    except StylecastError as exc:
        raise StageError(f"[{stage}] {exc}", stage) from exc


def select_template(video: VideoManifestEntry, deps: GenerationDeps) -> TemplateSelection:
    if not video.semantic_description:
        raise StageError("run describe first", "generate")
    decision = _staged("classify", classify_video, video.semantic_description, deps.index, deps.embed,
                       deps.classify, deps.cache_dir)
    fallback = decision.category is VideoCategory.OTHER
    pool = deps.bundle.comments(language=video.language,
                                category=None if fallback else decision.category)
    context = make_video_context(video.semantic_description, video.language, decision.category,
                                 deps.profiles, deps.sentiment)
    scorer = make_scorer(deps.selection, deps.sentiment, deps.judge)
    tournament = _staged("select", run_tournament, pool, context, deps.selection, scorer, deps.jobs)
    tournament.trace["pool_fallback_all_categories"] = fallback
    return TemplateSelection(decision, tournament, fallback)


def generate_styled(video: VideoManifestEntry, selection: TemplateSelection, style: StyleLabel | str,
                    deps: GenerationDeps) -> GenerationOutcome:
    template = selection.tournament.template
    if style == "auto":
        if template.style_label is not None:
            chosen, source = template.style_label, "template"
        else:
            chosen, source = StyleLabel.PLAIN_HUMOR, "default_unlabeled_template"
    else:
        chosen, source = StyleLabel(style), "explicit"
    few_shot = select_few_shot(deps.bundle, chosen, video.language, deps.few_shot_k,
                               exclude_ids=[template.comment_id])
    request = GenerationRequest(video.semantic_description, template, chosen, video.language, few_shot)
    prompt = build_prompt(request)
    for w in prompt.warnings:
        log.warning("%s: %s", video.video_id, w)
    comment = _staged("generate", generate_comment, request, deps.generate,
                      deps.ceilings.get(video.language), deps.max_retries)
    return GenerationOutcome(comment, selection, prompt, source)


def generate_for_video(video: VideoManifestEntry, style: StyleLabel | str,
                       deps: GenerationDeps) -> GenerationOutcome:
    """Classify, pick a style template, build the prompt and generate one comment.

    ``style="auto"`` inherits the template's style label.
    """
    return generate_styled(video, select_template(video, deps), style, deps)
