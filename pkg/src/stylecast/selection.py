"""Style-template selection by a two-round grouped tournament.

Each pool comment gets a style-match score against the target video; the
best comment of each contiguous group advances, and the best advancer becomes
the style template.
"""

from __future__ import annotations

import json
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from string import Template
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ProviderError, SelectionError
from .ingestion import CommentRecord, DatasetBundle, VideoCategory
from .providers import ChatProvider, SentimentProvider
from .textutil import LENGTH_BANDS, LENGTH_UNITS, count_length, load_prompt

JUDGE_TEMPLATE = "judge-v1"

_TERMINAL = set(".!?。！？")
_PAUSE = set(",，、;；:：")
_QUOTE = set("\"'“”‘’()（）《》「」[]【】")
_TRAIL = set("…~～\u2014-")
_EMOJI_RE = re.compile("[\U0001F300-\U0001FAFF☀-➿]|\\[[^\\[\\]\\s]{1,4}\\]")
_SENTENCE_SPLIT = re.compile(r"[.!?。！？]+")
_INTERJECTIONS_EN = {"haha", "hahaha", "lol", "lmao", "wow", "omg", "oh", "ah", "hey", "ugh", "yay",
                     "oops", "hmm", "bruh", "damn", "whoa"}
_INTERJECTIONS_ZH = ("哈哈", "啊", "哇", "呀", "哎", "嘿", "呵", "嘛", "吧", "呢", "哦", "噢", "嗯", "唉")

FEATURE_NAMES = ("sentences", "terminal_punct", "pause_punct", "quote_punct", "trail_punct",
                 "emoji", "interjections")


def style_features(text: str, language: str) -> np.ndarray:
    """Handcrafted structure vector, in the order of ``FEATURE_NAMES``."""
    sentences = max(1, sum(1 for piece in _SENTENCE_SPLIT.split(text) if piece.strip()))
    emoji = len(_EMOJI_RE.findall(text))
    if language == "zh":
        inter = sum(text.count(w) for w in _INTERJECTIONS_ZH)
    else:
        inter = sum(1 for w in re.findall(r"[a-z]+", text.lower()) if w in _INTERJECTIONS_EN)
    return np.array([
        sentences,
        sum(ch in _TERMINAL for ch in text),
        sum(ch in _PAUSE for ch in text),
        sum(ch in _QUOTE for ch in text),
        sum(ch in _TRAIL for ch in text),
        emoji,
        inter,
    ], dtype=float)


def category_profiles(bundle: DatasetBundle) -> dict[tuple[str, str], np.ndarray]:
    """Mean feature vector per (language, category); ``other`` pools the language."""
    grouped: dict[tuple[str, str], list[np.ndarray]] = {}
    for item in bundle.items:
        for c in item.comments:
            f = style_features(c.text, c.language)
            grouped.setdefault((c.language, item.category.value), []).append(f)
            grouped.setdefault((c.language, VideoCategory.OTHER.value), []).append(f)
    return {k: np.mean(v, axis=0) for k, v in grouped.items()}


@dataclass(frozen=True)
class SelectionParams:
    pool_size: int = 100
    group_count: int = 10
    alpha: float = 0.4
    beta: float = 0.3
    gamma: float = 0.3
    scorer_kind: str = "heuristic"
    seed: int = 0
    sigma_sel: Mapping[str, float] = field(default_factory=lambda: {"zh": 4.0, "en": 5.0})
    judge_retries: int = 2

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ValueError("alpha + beta + gamma must equal 1")
        if self.group_count < 1 or self.pool_size < 1:
            raise ValueError("pool_size and group_count must be at least 1")
        if self.scorer_kind not in ("heuristic", "llm_judge"):
            raise ValueError(f"unknown scorer kind: {self.scorer_kind}")

    @property
    def group_size(self) -> int:
        return math.ceil(self.pool_size / self.group_count)


@dataclass(frozen=True)
class StyleScore:
    total: float
    s_struct: float
    s_tone: float
    s_length: float
    retries: int = 0
    fallback: bool = False

    @classmethod
    def combine(cls, s_struct: float, s_tone: float, s_length: float, params: SelectionParams,
                **kw) -> "StyleScore":
        total = params.alpha * s_struct + params.beta * s_tone + params.gamma * s_length
        return cls(total, s_struct, s_tone, s_length, **kw)

    def to_dict(self) -> dict:
        return {"total": self.total, "s_struct": self.s_struct, "s_tone": self.s_tone,
                "s_length": self.s_length, "retries": self.retries, "fallback": self.fallback}


@dataclass(frozen=True)
class VideoContext:
    description: str
    language: str
    sentiment: str
    category: VideoCategory
    profile: np.ndarray

    @property
    def band(self) -> tuple[int, int]:
        return LENGTH_BANDS[self.language]

    @property
    def length_mid(self) -> float:
        lo, hi = self.band
        return (lo + hi) / 2.0


def make_video_context(description: str, language: str, category: VideoCategory,
                       profiles: Mapping[tuple[str, str], np.ndarray],
                       sentiment: SentimentProvider) -> VideoContext:
    profile = profiles.get((language, category.value))
    if profile is None:
        profile = profiles.get((language, VideoCategory.OTHER.value), np.zeros(len(FEATURE_NAMES)))
    return VideoContext(description, language, sentiment.classify(description, language), category,
                        np.asarray(profile, dtype=float))


def _feature_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(0.0, float(np.dot(a, b)) / (na * nb)))


def selection_length_score(length: float, mid: float, sigma: float) -> float:
    return math.exp(-((length - mid) ** 2) / (2.0 * sigma ** 2))


def style_score_heuristic(comment: CommentRecord, video: VideoContext, params: SelectionParams,
                          sentiment: SentimentProvider) -> StyleScore:
    s_struct = _feature_cosine(style_features(comment.text, comment.language), video.profile)
    s_tone = 1.0 if sentiment.classify(comment.text, comment.language) == video.sentiment else 0.0
    s_length = selection_length_score(count_length(comment.text, comment.language), video.length_mid,
                                      params.sigma_sel[comment.language])
    return StyleScore.combine(s_struct, s_tone, s_length, params)


def build_judge_payload(comment: CommentRecord, video: VideoContext, model: str = "") -> dict:
    system, user = load_prompt(JUDGE_TEMPLATE)
    lo, hi = video.band
    text = Template(user).substitute(description=video.description, sentiment=video.sentiment,
                                     band=f"{lo}-{hi} {LENGTH_UNITS[video.language]}", comment=comment.text)
    return {"model": model, "messages": [{"role": "system", "content": system},
                                         {"role": "user", "content": [{"type": "text", "text": text}]}]}


def parse_judge_output(text: str) -> tuple[float, float, float] | None:
    m = re.search(r"\{.*?\}", text or "", re.S)
    if not m:
        return None
    try:
        doc = json.loads(m.group(0))
        vals = tuple(float(doc[k]) for k in ("structure", "tone", "length"))
    except (ValueError, KeyError, TypeError):
        return None
    if not all(0.0 <= v <= 1.0 for v in vals):
        return None
    return vals  # type: ignore[return-value]


def style_score_llm_judge(comment: CommentRecord, video: VideoContext, params: SelectionParams,
                          provider: ChatProvider, sentiment: SentimentProvider) -> StyleScore:
    """Judge-provided components; the total is always recomputed locally.

    Malformed output is retried ``params.judge_retries`` times; after that, or
    if the provider is down, the heuristic score is used and flagged.
    """
    payload = build_judge_payload(comment, video)
    retries = 0
    while True:
        try:
            parsed = parse_judge_output(provider.complete(payload))
        except ProviderError:
            break
        if parsed is not None:
            return StyleScore.combine(*parsed, params, retries=retries)
        if retries >= params.judge_retries:
            break
        retries += 1
    fb = style_score_heuristic(comment, video, params, sentiment)
    return StyleScore(fb.total, fb.s_struct, fb.s_tone, fb.s_length, retries=retries, fallback=True)


Scorer = Callable[[CommentRecord, VideoContext, SelectionParams], StyleScore]


def make_scorer(params: SelectionParams, sentiment: SentimentProvider,
                judge: ChatProvider | None = None) -> Scorer:
    if params.scorer_kind == "llm_judge":
        if judge is None:
            raise ValueError("llm_judge scorer needs a judge provider")
        return lambda c, v, p: style_score_llm_judge(c, v, p, judge, sentiment)
    return lambda c, v, p: style_score_heuristic(c, v, p, sentiment)


@dataclass
class TournamentResult:
    template: CommentRecord
    template_index: int
    group_winners: list[CommentRecord]
    winner_indices: list[int]
    score_table: list[StyleScore]
    pool: list[CommentRecord]
    trace: dict

    def to_dict(self) -> dict:
        return {
            "template": self.template.to_dict(),
            "template_index": self.template_index,
            "group_winners": [c.comment_id for c in self.group_winners],
            "winner_indices": self.winner_indices,
            "score_table": [dict(comment_id=c.comment_id, **s.to_dict())
                            for c, s in zip(self.pool, self.score_table)],
            "trace": self.trace,
        }


def subsample_pool(pool: Sequence[CommentRecord], pool_size: int, seed: int) -> list[int]:
    """Indices of the ``pool_size`` most-liked comments, ties shuffled by ``seed``, in pool order."""
    if len(pool) <= pool_size:
        return list(range(len(pool)))
    rng = random.Random(seed)
    keys = [(-c.like_count, rng.random()) for c in pool]
    chosen = sorted(range(len(pool)), key=lambda i: keys[i])[:pool_size]
    return sorted(chosen)


def partition(n: int, params: SelectionParams) -> list[list[int]]:
    """Contiguous groups of ``params.group_size``; the last one may be short."""
    size = params.group_size
    return [list(range(s, min(n, s + size))) for s in range(0, n, size)]


def _argmax(indices: Sequence[int], totals: Sequence[float]) -> int:
    best = indices[0]
    for i in indices[1:]:
        if totals[i] > totals[best]:
            best = i
    return best


def run_tournament(pool: Sequence[CommentRecord], video: VideoContext, params: SelectionParams,
                   scorer: Scorer, jobs: int = 1) -> TournamentResult:
    if not pool:
        raise SelectionError("empty comment pool")
    kept = subsample_pool(pool, params.pool_size, params.seed)
    members = [pool[i] for i in kept]
    groups = partition(len(members), params)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            scores = list(ex.map(lambda c: scorer(c, video, params), members))
    else:
        scores = [scorer(c, video, params) for c in members]
    totals = [s.total for s in scores]

    winners = [_argmax(g, totals) for g in groups]
    champion = _argmax(winners, totals)
    trace = {
        "pool_size_in": len(pool),
        "subsampled": len(kept) < len(pool),
        "kept_pool_indices": kept,
        "groups": groups,
        "group_winners": winners,
        "template_index": champion,
        "scorer": params.scorer_kind,
        "judge_retries": sum(s.retries for s in scores),
        "fallbacks": [i for i, s in enumerate(scores) if s.fallback],
    }
    return TournamentResult(members[champion], champion, [members[i] for i in winners], winners,
                            scores, members, trace)
