"""Automatic comment scoring (originality, relevance, style conformity) and questionnaires.

Every dimension lies in [0, 10] and the total is their plain mean.
"""

from __future__ import annotations

import csv
import math
import random
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .classify import EmbeddingCache, EmbeddingVector, cosine_similarity, embed_many, embed_text
from .errors import ScoringError
from .ingestion import DatasetBundle
from .providers import EmbedProvider, SentimentProvider
from .textutil import LENGTH_BANDS, count_length, write_json

SIGMA_FLOOR = 0.05
DEFAULT_SIGMA_L = {"en": 5.0, "zh": 4.0}


# ---------------------------------------------------------------------------
# Scalar parts


def originality_from_sim(sim_max: float) -> float:
    """``10 * (1 - sim_max)`` clamped to [0, 10]; cosine may be negative."""
    return min(10.0, max(0.0, 10.0 * (1.0 - sim_max)))


def relevance_from_sim(sim: float, baseline: float, sigma: float) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return 10.0 * math.exp(-((sim - baseline) ** 2) / (2.0 * sigma ** 2))


def length_part(length: float, band: tuple[int, int], sigma_l: float) -> float:
    lo, hi = band
    if lo <= length <= hi:
        return 5.0
    nearest = lo if length < lo else hi
    return 5.0 * math.exp(-((length - nearest) ** 2) / (2.0 * sigma_l ** 2))


def sentiment_part(comment_label: str, video_label: str) -> float:
    return 5.0 if comment_label == video_label else 0.0


def total_score(s_originality: float, s_relevance: float, s_style: float) -> float:
    return (s_originality + s_relevance + s_style) / 3.0


# ---------------------------------------------------------------------------
# Context


@dataclass
class ScoringContext:
    """Embedded reference corpora plus the scoring constants.

    ``references`` is a row-normalized matrix of every bench and train
    comment; ``sim_baseline`` and ``sigma`` come from the bench pairs.
    """

    embed: EmbedProvider
    sentiment: SentimentProvider
    references: np.ndarray
    sim_baseline: float
    sigma: float
    bands: Mapping[str, tuple[int, int]] = field(default_factory=lambda: dict(LENGTH_BANDS))
    sigma_l: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SIGMA_L))
    cache: EmbeddingCache | None = None
    bench_pair_count: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        for lang, s in self.sigma_l.items():
            if s <= 0:
                raise ValueError(f"sigma_L for {lang} must be positive")
        for lang, (lo, hi) in self.bands.items():
            if lo > hi:
                raise ValueError(f"length band for {lang} is not ordered")

    def vector(self, text: str) -> EmbeddingVector:
        return embed_text(text, self.embed, self.cache)


def _unit_rows(vectors: Sequence[EmbeddingVector]) -> np.ndarray:
    if not vectors:
        return np.zeros((0, 0))
    mat = np.vstack([v.values for v in vectors])
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ScoringError("degenerate embedding in reference corpus")
    return mat / norms


def build_scoring_context(bench: DatasetBundle, train: DatasetBundle, embed: EmbedProvider,
                          sentiment: SentimentProvider, sigma: float | None = None,
                          sigma_l: Mapping[str, float] | None = None,
                          bands: Mapping[str, tuple[int, int]] | None = None,
                          cache_dir: str | Path | None = None, jobs: int = 1) -> ScoringContext:
    cache = EmbeddingCache(cache_dir) if cache_dir else None
    corpus = [c.text for b in (bench, train) for c in b.comments()]
    refs = _unit_rows(embed_many(corpus, embed, cache, jobs))

    pairs = [(c.text, item.semantic_description) for item in bench.items for c in item.comments]
    if not pairs:
        raise ScoringError("benchmark has no comment-video pairs for the relevance baseline")
    vecs = embed_many([t for p in pairs for t in p], embed, cache, jobs)
    sims = [cosine_similarity(vecs[2 * i], vecs[2 * i + 1]) for i in range(len(pairs))]
    baseline = math.fsum(sims) / len(sims)
    if sigma is None:
        sigma = max(SIGMA_FLOOR, statistics.pstdev(sims))
    return ScoringContext(embed, sentiment, refs, baseline, sigma,
                          dict(bands or LENGTH_BANDS), dict(sigma_l or DEFAULT_SIGMA_L), cache, len(pairs))


# ---------------------------------------------------------------------------
# Dimensions


def _video_text(video) -> str:
    text = getattr(video, "semantic_description", video)
    if not isinstance(text, str) or not text.strip():
        raise ScoringError("video has no description text to score against")
    return text


def score_originality(comment: str, context: ScoringContext, video) -> tuple[float, float]:
    if context.references.shape[0] == 0:
        raise ScoringError("no reference corpus")
    c = context.vector(comment)
    u = c.values / np.linalg.norm(c.values)
    corpus_max = float(np.max(context.references @ u))
    sim_max = max(min(1.0, corpus_max), cosine_similarity(c, context.vector(_video_text(video))))
    return originality_from_sim(sim_max), sim_max


def score_relevance(comment: str, video, context: ScoringContext) -> tuple[float, float, float]:
    sim = cosine_similarity(context.vector(comment), context.vector(_video_text(video)))
    return relevance_from_sim(sim, context.sim_baseline, context.sigma), sim, context.sim_baseline


def score_style(comment: str, video, context: ScoringContext, language: str) -> tuple[float, float, float]:
    """(s_style, length part, sentiment part)."""
    if language not in context.bands:
        raise ScoringError(f"unknown language: {language}")
    s_len = length_part(count_length(comment, language), context.bands[language], context.sigma_l[language])
    s_sent = sentiment_part(context.sentiment.classify(comment, language),
                            context.sentiment.classify(_video_text(video), language))
    return s_len + s_sent, s_len, s_sent


@dataclass(frozen=True)
class ScoreReport:
    s_originality: float
    s_relevance: float
    s_style: float
    s_total: float
    s_length_part: float
    s_sentiment_part: float
    sim_max: float
    sim_to_video: float
    sim_baseline: float

    def __post_init__(self):
        for name in ("s_originality", "s_relevance", "s_style", "s_total"):
            if not 0.0 <= getattr(self, name) <= 10.0:
                raise ScoringError(f"{name} out of range: {getattr(self, name)}")
        for name in ("s_length_part", "s_sentiment_part"):
            if not 0.0 <= getattr(self, name) <= 5.0:
                raise ScoringError(f"{name} out of range: {getattr(self, name)}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def score_comment(comment: str, video, context: ScoringContext, language: str | None = None) -> ScoreReport:
    language = language or getattr(video, "language", None)
    if language is None:
        raise ScoringError("comment language unknown")
    s_orig, sim_max = score_originality(comment, context, video)
    s_rel, sim_v, baseline = score_relevance(comment, video, context)
    s_style, s_len, s_sent = score_style(comment, video, context, language)
    return ScoreReport(s_orig, s_rel, s_style, total_score(s_orig, s_rel, s_style), s_len, s_sent,
                       sim_max, sim_v, baseline)


# ---------------------------------------------------------------------------
# Aggregation


def aggregate(rows: Iterable[tuple[str, str, ScoreReport]]) -> dict[tuple[str, str], dict[str, float]]:
    """Mean of each dimension per (platform, system), in first-seen order."""
    acc: dict[tuple[str, str], list[ScoreReport]] = {}
    for platform, system, report in rows:
        acc.setdefault((platform, system), []).append(report)
    out = {}
    for key, reports in acc.items():
        n = len(reports)
        out[key] = {
            "orig": math.fsum(r.s_originality for r in reports) / n,
            "rel": math.fsum(r.s_relevance for r in reports) / n,
            "style": math.fsum(r.s_style for r in reports) / n,
            "total": math.fsum(r.s_total for r in reports) / n,
            "n": n,
        }
    return out


def format_table(agg: Mapping[tuple[str, str], Mapping[str, float]]) -> str:
    """One Markdown table per platform: Model | Orig. | Rel. | Style | Total."""
    blocks = []
    for platform in dict.fromkeys(p for p, _ in agg):
        lines = [f"### {platform}", "", "| Model | Orig. | Rel. | Style | Total |", "|---|---|---|---|---|"]
        for (p, system), m in agg.items():
            if p == platform:
                lines.append(f"| {system} | {m['orig']:.2f} | {m['rel']:.2f} | {m['style']:.2f} | {m['total']:.2f} |")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# Questionnaire


LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class QuestionnairePacket:
    packet: dict
    answer_key: dict

    def write(self, packet_path: str | Path, key_path: str | Path) -> None:
        write_json(packet_path, self.packet)
        write_json(key_path, self.answer_key)


def export_questionnaire(videos: Sequence, per_system_comments: Mapping[str, Mapping[str, str]],
                         seed: int) -> QuestionnairePacket:
    """Blind and shuffle one comment per system for each video.

    ``videos`` holds entries with ``video_id`` (and optionally ``url`` and
    ``title``); ``per_system_comments`` maps system -> video_id -> text.
    """
    systems = sorted(per_system_comments)
    if not systems:
        raise ScoringError("no systems to compare")
    if len(systems) > len(LETTERS):
        raise ScoringError("too many systems for letter blinding")
    rng = random.Random(seed)
    items, keys = [], []
    for n, video in enumerate(videos, 1):
        plain = isinstance(video, str)
        vid = video if plain else video.video_id
        missing = [s for s in systems if vid not in per_system_comments[s]]
        if missing:
            raise ScoringError(f"missing output for video {vid} from system(s): {', '.join(missing)}")
        order = list(systems)
        rng.shuffle(order)
        letters = LETTERS[:len(order)]
        items.append({
            "item": n,
            "video_id": vid,
            "url": "" if plain else getattr(video, "url", ""),
            "title": "" if plain else (getattr(video, "title", "") or ""),
            "options": [{"letter": ltr, "text": per_system_comments[s][vid]} for ltr, s in zip(letters, order)],
        })
        keys.append({"item": n, "video_id": vid, "letters": dict(zip(letters, order))})
    return QuestionnairePacket({"seed": seed, "items": items}, {"seed": seed, "items": keys})


def tally(answer_key: Mapping, responses_csv: str | Path) -> dict[str, float]:
    """Preference percentage per system from a CSV with ``item`` and ``choice`` columns."""
    lookup = {int(it["item"]): it["letters"] for it in answer_key["items"]}
    counts: Counter[str] = Counter()
    with open(responses_csv, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                letters = lookup[int(row["item"])]
                system = letters[row["choice"].strip().upper()]
            except (KeyError, ValueError) as exc:
                raise ScoringError(f"bad response on line {lineno}: {dict(row)}") from exc
            counts[system] += 1
    total = sum(counts.values())
    if total == 0:
        raise ScoringError("no responses to tally")
    systems = sorted({s for letters in lookup.values() for s in letters.values()})
    return {s: 100.0 * counts[s] / total for s in systems}
