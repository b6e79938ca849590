"""Video manifest lifecycle, comment selection and balanced dataset assembly."""

from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence
from urllib.parse import urlparse

from .errors import DatasetError, ManifestError
from .media import FrameSchedule, HighlightWindow
from .textutil import read_json, write_json

log = logging.getLogger(__name__)


class StyleLabel(str, Enum):
    PUNS_HOMOPHONES = "puns_homophones"
    RHYMING = "rhyming"
    MEME_APPLICATION = "meme_application"
    SARCASM_IRONY = "sarcasm_irony"
    PLAIN_HUMOR = "plain_humor"
    CONTENT_EXTRACTION = "content_extraction"


class VideoCategory(str, Enum):
    TALK_SHOW = "talk_show"
    HUMOROUS_COMMENTARY = "humorous_commentary"
    FUNNY_ANIMAL = "funny_animal"
    DAILY_LIFE_JOKES = "daily_life_jokes"
    COMEDY_SKITS = "comedy_skits"
    OTHER = "other"


# Fixed order also used to break classification ties.
CURATED_CATEGORIES: tuple[VideoCategory, ...] = tuple(c for c in VideoCategory if c is not VideoCategory.OTHER)

PLATFORM_LANGUAGE = {"douyin": "zh", "youtube": "en"}
PLATFORM_HOSTS = {
    "douyin": ("douyin.com", "iesdouyin.com"),
    "youtube": ("youtube.com", "youtu.be"),
}


class ShortPoolWarning(UserWarning):
    """Fewer comments were available than requested."""


@dataclass(frozen=True)
class TranscriptSegment:
    start_s: float
    end_s: float
    text: str
    linked_frame_indices: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError(f"transcript segment must have start < end: {self.start_s}, {self.end_s}")

    def to_dict(self) -> dict:
        return {"start_s": self.start_s, "end_s": self.end_s, "text": self.text,
                "linked_frame_indices": list(self.linked_frame_indices)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TranscriptSegment":
        return cls(float(d["start_s"]), float(d["end_s"]), str(d["text"]),
                   tuple(int(i) for i in d.get("linked_frame_indices", ())))


@dataclass(frozen=True)
class VideoManifestEntry:
    video_id: str
    platform: str
    url: str
    title: str = ""
    description_text: str = ""
    duration_s: float = 0.0
    language: str = ""
    media_path: str = ""
    transcript: tuple[TranscriptSegment, ...] = ()
    frame_paths: tuple[str, ...] = ()
    category: VideoCategory | None = None
    semantic_description: str = ""
    highlights: tuple[HighlightWindow, ...] = ()
    frame_schedule: FrameSchedule | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.platform not in PLATFORM_LANGUAGE:
            raise ManifestError(f"unknown platform: {self.platform}")
        expected = PLATFORM_LANGUAGE[self.platform]
        if not self.language:
            object.__setattr__(self, "language", expected)
        elif self.language != expected:
            raise ManifestError(f"video {self.video_id}: platform {self.platform} implies language {expected}")
        for seg in self.transcript:
            bad = [i for i in seg.linked_frame_indices if not 0 <= i < len(self.frame_paths)]
            if bad:
                raise ManifestError(f"video {self.video_id}: transcript links unknown frames {bad}")

    def replace(self, **changes) -> "VideoManifestEntry":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "video_id": self.video_id,
            "platform": self.platform,
            "url": self.url,
            "title": self.title,
            "description_text": self.description_text,
            "duration_s": self.duration_s,
            "language": self.language,
            "media_path": self.media_path,
            "transcript": [s.to_dict() for s in self.transcript],
            "frame_paths": list(self.frame_paths),
            "category": self.category.value if self.category else None,
            "semantic_description": self.semantic_description,
            "highlights": [w.to_dict() for w in self.highlights],
            "frame_schedule": self.frame_schedule.to_dict() if self.frame_schedule else None,
        }
        for k, v in self.extra.items():
            d.setdefault(k, v)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "VideoManifestEntry":
        known = {f.name for f in dataclasses.fields(cls)} - {"extra"}
        missing = [k for k in ("video_id", "platform", "url") if not d.get(k)]
        if missing:
            raise ManifestError(f"manifest entry missing {', '.join(missing)}: {dict(d)!r:.120}")
        category = d.get("category")
        schedule = d.get("frame_schedule")
        return cls(
            video_id=str(d["video_id"]),
            platform=str(d["platform"]),
            url=str(d["url"]),
            title=str(d.get("title") or ""),
            description_text=str(d.get("description_text") or ""),
            duration_s=float(d.get("duration_s") or 0.0),
            language=str(d.get("language") or ""),
            media_path=str(d.get("media_path") or ""),
            transcript=tuple(TranscriptSegment.from_dict(s) for s in d.get("transcript") or ()),
            frame_paths=tuple(str(p) for p in d.get("frame_paths") or ()),
            category=VideoCategory(category) if category else None,
            semantic_description=str(d.get("semantic_description") or ""),
            highlights=tuple(HighlightWindow.from_dict(w) for w in d.get("highlights") or ()),
            frame_schedule=FrameSchedule.from_dict(schedule) if schedule else None,
            extra={k: v for k, v in d.items() if k not in known},
        )


def validate_url(platform: str, url: str) -> None:
    parsed = urlparse(url)
    host = (parsed.hostname or "").lower()
    hosts = PLATFORM_HOSTS[platform]
    if parsed.scheme not in ("http", "https") or not any(host == h or host.endswith("." + h) for h in hosts):
        raise ManifestError(f"invalid {platform} url: {url}")


@dataclass
class Manifest:
    videos: list[VideoManifestEntry] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def get(self, video_id: str) -> VideoManifestEntry:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def put(self, entry: VideoManifestEntry) -> None:
        for i, v in enumerate(self.videos):
            if v.video_id == entry.video_id:
                self.videos[i] = entry
                return
        self.videos.append(entry)

    def to_dict(self) -> dict:
        d = {"videos": [v.to_dict() for v in self.videos]}
        for k, v in self.extra.items():
            d.setdefault(k, v)
        return d


def parse_manifest(text: str, source: str = "<manifest>") -> Manifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {source}: {exc.msg}", exc.lineno, exc.colno) from None
    if isinstance(doc, list):
        doc = {"videos": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("videos", []), list):
        raise ManifestError(f"malformed manifest {source}: expected {{\"videos\": [...]}}")
    entries: list[VideoManifestEntry] = []
    seen: set[str] = set()
    for i, raw in enumerate(doc.get("videos", [])):
        if not isinstance(raw, dict):
            raise ManifestError(f"manifest entry {i} is not an object")
        platform = raw.get("platform")
        if platform not in PLATFORM_LANGUAGE:
            raise ManifestError(f"unknown platform: {platform} (entry {raw.get('video_id', i)})")
        entry = VideoManifestEntry.from_dict(raw)
        validate_url(entry.platform, entry.url)
        if entry.video_id in seen:
            raise ManifestError(f"duplicate video_id: {entry.video_id}")
        seen.add(entry.video_id)
        entries.append(entry)
    return Manifest(entries, {k: v for k, v in doc.items() if k != "videos"})


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), str(path))


def load_seed_manifest(path: str | Path) -> list[VideoManifestEntry]:
    return load_manifest(path).videos


def save_manifest(path: str | Path, manifest: Manifest) -> None:
    write_json(path, manifest.to_dict())


# ---------------------------------------------------------------------------
# Comments


@dataclass(frozen=True)
class CommentRecord:
    comment_id: str
    video_id: str
    text: str
    like_count: int = 0
    language: str = "en"
    style_label: StyleLabel | None = None
    source: str = "platform_api"
    annotations: tuple[Mapping[str, Any], ...] = ()

    def __post_init__(self):
        if self.like_count < 0:
            raise ValueError(f"like_count must be non-negative: {self.like_count}")
        if self.language not in ("zh", "en"):
            raise ValueError(f"unknown language: {self.language}")
        if self.source not in ("platform_api", "generated"):
            raise ValueError(f"unknown comment source: {self.source}")
        if self.style_label is not None and not isinstance(self.style_label, StyleLabel):
            object.__setattr__(self, "style_label", StyleLabel(self.style_label))

    def to_dict(self) -> dict:
        return {
            "comment_id": self.comment_id,
            "video_id": self.video_id,
            "text": self.text,
            "like_count": self.like_count,
            "language": self.language,
            "style_label": self.style_label.value if self.style_label else None,
            "source": self.source,
            "annotations": [dict(a) for a in self.annotations],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CommentRecord":
        label = d.get("style_label")
        return cls(
            comment_id=str(d["comment_id"]),
            video_id=str(d["video_id"]),
            text=str(d["text"]),
            like_count=int(d.get("like_count", 0)),
            language=str(d.get("language", "en")),
            style_label=StyleLabel(label) if label else None,
            source=str(d.get("source", "platform_api")),
            annotations=tuple(d.get("annotations") or ()),
        )


def top_k_comments(comments: Sequence[CommentRecord], k: int = 5) -> list[CommentRecord]:
    """The ``k`` most-liked comments; equal counts keep their platform order."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    ranked = sorted(range(len(comments)), key=lambda i: -comments[i].like_count)
    return [comments[i] for i in ranked[:k]]


def fetch_top_comments(entry: VideoManifestEntry, client, k: int = 5) -> list[CommentRecord]:
    """Top ``k`` comments by likes, ties kept in platform order.

    Comments with missing or blank text (deleted content) are dropped before
    ranking; a deleted author does not matter since authors are not stored.
    """
    raw = [c for c in client.list_comments(entry) if str(c.get("text") or "").strip()]
    pool = [
        CommentRecord(
            comment_id=str(c.get("comment_id") or f"{entry.video_id}-c{i:04d}"),
            video_id=entry.video_id,
            text=str(c["text"]),
            like_count=int(c.get("like_count", 0)),
            language=entry.language,
        )
        for i, c in enumerate(raw)
    ]
    if len(pool) < k:
        warnings.warn(f"short_pool: {entry.video_id} has {len(pool)} comments, wanted {k}",
                      ShortPoolWarning, stacklevel=2)
        log.warning("short_pool video=%s available=%d k=%d", entry.video_id, len(pool), k)
    return top_k_comments(pool, k)


def fetch_video(entry: VideoManifestEntry, client, workdir: str | Path) -> VideoManifestEntry:
    """Download media and metadata into ``<workdir>/<video_id>/``.

    Returns an updated copy; the input entry is never mutated, so a failure
    leaves the caller's manifest unchanged. Existing media is not re-downloaded.
    """
    vdir = Path(workdir) / entry.video_id
    media = vdir / "video.mp4"
    meta = client.get_metadata(entry)
    if not media.exists():
        vdir.mkdir(parents=True, exist_ok=True)
        tmp = media.with_suffix(".part")
        try:
            client.download_media(entry, tmp)
            tmp.replace(media)
        finally:
            if tmp.exists():
                tmp.unlink()
    updated = entry.replace(
        title=meta.get("title") or entry.title,
        description_text=meta.get("description") or entry.description_text,
        duration_s=float(meta.get("duration_s") or entry.duration_s),
        media_path=media.relative_to(workdir).as_posix(),
    )
    write_json(vdir / "entry.json", updated.to_dict())
    return updated


# ---------------------------------------------------------------------------
# Annotation


def annotate_style(comment: CommentRecord, label: StyleLabel | str,
                   annotator_id: str) -> CommentRecord:
    """Label a comment. Every call, including relabels, appends an audit entry."""
    label = StyleLabel(label)
    audit = {
        "label": label.value,
        "previous": comment.style_label.value if comment.style_label else None,
        "annotator_id": annotator_id,
    }
    return dataclasses.replace(comment, style_label=label,
                               annotations=tuple(comment.annotations) + (audit,))


def annotate_many(comments: Iterable[CommentRecord], labels: Mapping[str, StyleLabel | str],
                  annotator_id: str) -> list[CommentRecord]:
    return [annotate_style(c, labels[c.comment_id], annotator_id) if c.comment_id in labels else c
            for c in comments]


def label_histogram(comments: Iterable[CommentRecord]) -> dict[str, int]:
    counts = Counter(c.style_label.value for c in comments if c.style_label)
    return {s.value: counts.get(s.value, 0) for s in StyleLabel}


# ---------------------------------------------------------------------------
# Dataset


@dataclass(frozen=True)
class DatasetItem:
    video_id: str
    platform: str
    language: str
    category: VideoCategory
    semantic_description: str
    comments: tuple[CommentRecord, ...]

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "platform": self.platform,
            "language": self.language,
            "category": self.category.value,
            "semantic_description": self.semantic_description,
            "comments": [c.to_dict() for c in self.comments],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetItem":
        platform = str(d["platform"])
        return cls(
            video_id=str(d["video_id"]),
            platform=platform,
            language=str(d.get("language") or PLATFORM_LANGUAGE[platform]),
            category=VideoCategory(d["category"]),
            semantic_description=str(d["semantic_description"]),
            comments=tuple(CommentRecord.from_dict(c) for c in d.get("comments", ())),
        )


@dataclass(frozen=True)
class DatasetBundle:
    items: tuple[DatasetItem, ...]

    def comments(self, language: str | None = None,
                 category: VideoCategory | None = None) -> list[CommentRecord]:
        return [c for it in self.items
                if (language is None or it.language == language)
                and (category is None or it.category == category)
                for c in it.comments]

    def to_dict(self) -> dict:
        return {"items": [it.to_dict() for it in self.items]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetBundle":
        return cls(tuple(DatasetItem.from_dict(it) for it in d["items"]))

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetBundle":
        return cls.from_dict(read_json(path))


def balance_violations(entries: Sequence[VideoManifestEntry],
                       per_cell: int | None = 20) -> list[tuple[str, str, int]]:
    """Cells whose video count differs from the target.

    With ``per_cell=None`` the target for platform p is ``N_p / 5``.
    """
    counts = Counter((e.platform, e.category) for e in entries)
    platforms = sorted({e.platform for e in entries})
    bad = []
    for p in platforms:
        n_p = sum(counts[(p, c)] for c in CURATED_CATEGORIES)
        target = per_cell if per_cell is not None else n_p / len(CURATED_CATEGORIES)
        for c in CURATED_CATEGORIES:
            if counts[(p, c)] != target:
                bad.append((p, c.value, counts[(p, c)]))
    return bad


def assemble_dataset(entries: Sequence[VideoManifestEntry], comments: Sequence[CommentRecord],
                     per_cell: int | None = 20, check_balance: bool = True) -> DatasetBundle:
    if not entries:
        raise DatasetError("empty dataset")
    uncurated = [e.video_id for e in entries
                 if e.category is None or e.category is VideoCategory.OTHER]
    if uncurated:
        raise DatasetError(f"videos without a curated category: {', '.join(uncurated)}")
    ids = {e.video_id for e in entries}
    orphans = sorted({c.video_id for c in comments} - ids)
    if orphans:
        raise DatasetError(f"comments reference unknown videos: {', '.join(orphans)}")
    if check_balance:
        bad = balance_violations(entries, per_cell)
        if bad:
            listed = ", ".join(f"({p}, {c}, {n})" for p, c, n in bad)
            raise DatasetError(f"unbalanced dataset cells: {listed}", bad)
    by_video: dict[str, list[CommentRecord]] = {}
    for c in comments:
        by_video.setdefault(c.video_id, []).append(c)
    items = tuple(
        DatasetItem(e.video_id, e.platform, e.language, e.category, e.semantic_description,
                    tuple(by_video.get(e.video_id, ())))
        for e in entries
    )
    return DatasetBundle(items)


def expected_comment_total(n_videos: int, k: int = 5) -> int:
    return n_videos * k

