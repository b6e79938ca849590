"""Workdir-backed pipeline stages.

Layout::

    <workdir>/manifest.json              working manifest (all stage state)
    <workdir>/<video_id>/video.mp4
    <workdir>/<video_id>/entry.json      metadata snapshot from ingest
    <workdir>/<video_id>/comments.json   top-K comments
    <workdir>/<video_id>/preprocess.json highlights, schedule, fingerprint
    <workdir>/<video_id>/frames/frame_NNNNNN.jpg
    <workdir>/<video_id>/description.json
    <workdir>/<video_id>/classification.json
    <workdir>/<video_id>/selection.json
    <workdir>/<video_id>/generated.jsonl
    <workdir>/cache/embeddings/
    <workdir>/logs/run-*.jsonl

Stages skip work whose recorded fingerprint matches the current inputs, so
re-running a completed stage leaves every output byte-identical.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

from .classify import build_embedding_index, classify_video
from .config import PipelineConfig
from .describe import DescribeRequest, build_describe_payload, describe_video, transcribe_audio
from .errors import ProviderError, StageError, StylecastError
from .generation import GenerationDeps, generate_styled, select_template
from .ingestion import (
    CommentRecord,
    DatasetBundle,
    Manifest,
    StyleLabel,
    VideoManifestEntry,
    annotate_style,
    assemble_dataset,
    fetch_top_comments,
    fetch_video,
    load_manifest,
    save_manifest,
)
from .media import build_frame_schedule, detect_highlights, extract_frames, extract_media_series, highlight_score
from .platforms import DouyinClient, MockPlatformClient, YouTubeClient
from .providers import HttpChatProvider, Providers, build_providers
from .scoring import aggregate, build_scoring_context, export_questionnaire, format_table, score_comment
from .selection import category_profiles
from .textutil import canonical_json, fingerprint, read_json, write_json, write_text


@dataclass(frozen=True)
class RunOptions:
    jobs: int = 1
    force: bool = False
    dry_run: bool = False


class RunLog:
    """Structured JSONL events for one CLI run; nothing is written in dry-run mode."""

    def __init__(self, workdir: Path, command: str, enabled: bool = True):
        self.path = None
        if enabled:
            stamp = dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
            self.path = workdir / "logs" / f"run-{stamp}-{os.getpid()}-{command}.jsonl"
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def event(self, stage: str, status: str, video_id: str | None = None, **fields) -> None:
        if self.path is None:
            return
        rec = {"ts": dt.datetime.now(dt.timezone.utc).isoformat(), "stage": stage, "status": status,
               "video_id": video_id, **fields}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, ensure_ascii=False, default=str) + "\n")


class Pipeline:
    def __init__(self, config: PipelineConfig, options: RunOptions = RunOptions(), command: str = "run",
                 providers: Providers | None = None, clients: dict | None = None, out: TextIO | None = None):
        self.config = config
        self.opts = options
        self.workdir = config.workdir_path
        self.out = out or sys.stdout
        self._providers = providers
        self._clients = clients
        self.log = RunLog(self.workdir, command, enabled=not options.dry_run)
        self._partial: list[VideoManifestEntry] = []

    # -- shared plumbing ----------------------------------------------------

    @property
    def providers(self) -> Providers:
        if self._providers is None:
            pc = self.config.providers
            fixtures = self.config.resolve(pc.fixtures_dir)
            self._providers = build_providers(
                dataclasses.replace(pc, fixtures_dir=str(fixtures) if fixtures else None))
            for p in (self._providers.describe, self._providers.generate, self._providers.judge):
                if isinstance(p, HttpChatProvider):
                    p.media_root = self.workdir
        return self._providers

    def client_for(self, platform: str):
        if self._clients is None:
            self._clients = {}
        if platform not in self._clients:
            ps = self.config.platform
            if ps.kind == "mock":
                fixtures = self.config.resolve(ps.fixtures_dir)
                if fixtures is None:
                    raise StageError("mock platform needs platform.fixtures_dir", "ingest")
                self._clients[platform] = MockPlatformClient(fixtures / platform, platform)
            elif platform == "youtube":
                self._clients[platform] = YouTubeClient(rate_per_s=ps.rate_per_s)
            else:
                self._clients[platform] = DouyinClient(rate_per_s=ps.rate_per_s)
        return self._clients[platform]

    @property
    def manifest_path(self) -> Path:
        return self.workdir / "manifest.json"

    def load_working_manifest(self) -> Manifest:
        if not self.manifest_path.exists():
            raise StageError("no working manifest; run ingest first", "ingest")
        return load_manifest(self.manifest_path)

    def vdir(self, video_id: str) -> Path:
        return self.workdir / video_id

    def say(self, text: str) -> None:
        print(text, file=self.out)

    def select(self, manifest: Manifest, ids: Sequence[str] | None) -> list[VideoManifestEntry]:
        if not ids:
            return list(manifest.videos)
        try:
            return [manifest.get(i) for i in ids]
        except KeyError as exc:
            raise StageError(f"unknown video id: {exc.args[0]}") from None

    def _run_each(self, stage: str, entries: Sequence[VideoManifestEntry],
                  fn: Callable[[VideoManifestEntry], VideoManifestEntry]) -> list[VideoManifestEntry]:
        """Apply ``fn`` per video (in parallel with ``--jobs``), then raise the first failure.

        Every video is attempted. Results, with failed videos left as they
        were, stay in ``self._partial`` so callers can persist them.
        """
        def guarded(e):
            try:
                return fn(e), None
            except StylecastError as exc:
                return e, exc

        if self.opts.jobs > 1 and len(entries) > 1:
            with ThreadPoolExecutor(self.opts.jobs) as ex:
                results = list(ex.map(guarded, entries))
        else:
            results = [guarded(e) for e in entries]
        self._partial = [r for r, _ in results]
        errors = [(e.video_id, exc) for (e, exc) in results if exc is not None]
        for vid, exc in errors:
            self.log.event(stage, "error", vid, error=str(exc))
        if errors:
            provider = [x for x in errors if isinstance(x[1], ProviderError)]
            vid, exc = (provider or errors)[0]
            if isinstance(exc, (ProviderError, StageError)):
                raise exc
            raise StageError(f"{stage} failed for {vid}: {exc}", stage) from exc
        return self._partial

    def _plan(self, stage: str, items: Iterable[tuple[str, bool]]) -> bool:
        """Print the dry-run plan; returns True when the caller should stop."""
        if not self.opts.dry_run:
            return False
        for vid, todo in items:
            self.say(f"[dry-run] {stage} {vid}: {'run' if todo else 'skip (up to date)'}")
        return True

    def _persist(self, manifest: Manifest, updated: Iterable[VideoManifestEntry]) -> None:
        for e in updated:
            manifest.put(e)
        save_manifest(self.manifest_path, manifest)

    # -- ingest -------------------------------------------------------------

    def ingest(self, manifest_path: str | Path) -> list[VideoManifestEntry]:
        source = load_manifest(manifest_path)
        working = load_manifest(self.manifest_path) if self.manifest_path.exists() else Manifest()

        def done(e: VideoManifestEntry) -> bool:
            d = self.vdir(e.video_id)
            return all((d / f).exists() for f in ("video.mp4", "entry.json", "comments.json"))

        todo = {e.video_id: self.opts.force or not done(e) for e in source.videos}
        if self._plan("ingest", todo.items()):
            return []

        def one(e: VideoManifestEntry) -> VideoManifestEntry:
            if not todo[e.video_id]:
                self.log.event("ingest", "skip", e.video_id)
                try:
                    return working.get(e.video_id)
                except KeyError:
                    return VideoManifestEntry.from_dict(read_json(self.vdir(e.video_id) / "entry.json"))
            client = self.client_for(e.platform)
            if self.opts.force:
                (self.vdir(e.video_id) / "video.mp4").unlink(missing_ok=True)
            updated = fetch_video(e, client, self.workdir)
            comments = fetch_top_comments(updated, client, self.config.platform.top_k)
            write_json(self.vdir(e.video_id) / "comments.json", [c.to_dict() for c in comments])
            self.log.event("ingest", "ok", e.video_id, comments=len(comments))
            return updated

        try:
            results = self._run_each("ingest", source.videos, one)
        finally:
            self._persist(working, [r for r in self._partial if done(r)])
        return results

    # -- preprocess ---------------------------------------------------------

    def _preprocess_key(self, e: VideoManifestEntry) -> str:
        cfg = self.config
        return fingerprint({
            "media": e.media_path,
            "highlight": dataclasses.asdict(cfg.highlight),
            "frames": dataclasses.asdict(cfg.frames),
            "transcribe": self.config.providers.transcribe.kind,
        })

    def _stage_current(self, path: Path, key: str) -> bool:
        if self.opts.force or not path.exists():
            return False
        try:
            return read_json(path).get("fingerprint") == key
        except (OSError, ValueError, AttributeError):
            return False

    def preprocess(self, ids: Sequence[str] | None = None) -> list[VideoManifestEntry]:
        manifest = self.load_working_manifest()
        entries = self.select(manifest, ids)
        for e in entries:
            if not e.media_path:
                raise StageError(f"{e.video_id} has no media; run ingest first", "preprocess")
        todo = {e.video_id: not self._stage_current(self.vdir(e.video_id) / "preprocess.json",
                                                    self._preprocess_key(e)) for e in entries}
        if self._plan("preprocess", todo.items()):
            return []
        cfg = self.config
        decoder = cfg.providers.decoder

        def one(e: VideoManifestEntry) -> VideoManifestEntry:
            if not todo[e.video_id]:
                self.log.event("preprocess", "skip", e.video_id)
                return e
            media = self.workdir / e.media_path
            audio, light, duration = extract_media_series(media, decoder, cfg.highlight.grid_hz)
            score = highlight_score(audio, light, cfg.highlight)
            windows = detect_highlights(score, cfg.highlight)
            schedule = build_frame_schedule(duration, windows, cfg.frames.highlight_fps, cfg.frames.normal_fps)
            frames_dir = self.vdir(e.video_id) / "frames"
            if frames_dir.exists():
                shutil.rmtree(frames_dir)
            paths = extract_frames(media, schedule.timestamps(), frames_dir, decoder,
                                   cfg.frames.max_width, cfg.frames.jpeg_quality)
            transcript = transcribe_audio(media, self.providers.transcribe, schedule.timestamps())
            updated = e.replace(
                duration_s=round(duration, 6),
                highlights=tuple(windows),
                frame_schedule=schedule,
                frame_paths=tuple(p.relative_to(self.workdir).as_posix() for p in paths),
                transcript=tuple(transcript),
            )
            write_json(self.vdir(e.video_id) / "preprocess.json", {
                "fingerprint": self._preprocess_key(e),
                "duration_s": updated.duration_s,
                "threshold": cfg.highlight.resolve_threshold(score.values),
                "highlights": [w.to_dict() for w in windows],
                "frame_schedule": schedule.to_dict(),
                "frame_count": len(paths),
                "transcript_segments": len(transcript),
            })
            self.log.event("preprocess", "ok", e.video_id, frames=len(paths), highlights=len(windows))
            return updated

        try:
            return self._run_each("preprocess", entries, one)
        finally:
            self._persist(manifest, self._partial)

    # -- describe -----------------------------------------------------------

    def _describe_request(self, e: VideoManifestEntry) -> DescribeRequest:
        if e.frame_schedule is None:
            raise StageError(f"{e.video_id} is not preprocessed; run preprocess first", "describe")
        return DescribeRequest(e.transcript, e.frame_paths, e.title, e.description_text, e.duration_s,
                               e.language, self.config.describe.max_frames)

    def describe(self, ids: Sequence[str] | None = None) -> list[VideoManifestEntry]:
        manifest = self.load_working_manifest()
        entries = self.select(manifest, ids)
        requests = {e.video_id: self._describe_request(e) for e in entries}
        model = self.config.providers.describe.model
        keys = {vid: build_describe_payload(r, model, self.config.describe.prompt)[1]
                for vid, r in requests.items()}
        todo = {vid: not self._stage_current(self.vdir(vid) / "description.json", keys[vid]) for vid in keys}
        if self._plan("describe", todo.items()):
            return []
        retries = self.config.providers.describe.max_retries

        def one(e: VideoManifestEntry) -> VideoManifestEntry:
            if not todo[e.video_id]:
                self.log.event("describe", "skip", e.video_id)
                return e
            desc = describe_video(requests[e.video_id], self.providers.describe, retries, model)
            write_json(self.vdir(e.video_id) / "description.json", {
                "fingerprint": keys[e.video_id], "text": desc.text, "provider_id": desc.provider_id,
                "prompt_fingerprint": desc.prompt_fingerprint,
            })
            self.log.event("describe", "ok", e.video_id, provider=desc.provider_id)
            return e.replace(semantic_description=desc.text)

        try:
            return self._run_each("describe", entries, one)
        finally:
            self._persist(manifest, self._partial)

    # -- dataset ------------------------------------------------------------

    @property
    def dataset_path(self) -> Path:
        configured = self.config.resolve(self.config.dataset.path)
        return configured if configured else self.workdir / "dataset.json"

    def load_comments(self, video_id: str) -> list[CommentRecord]:
        path = self.vdir(video_id) / "comments.json"
        if not path.exists():
            raise StageError(f"{video_id} has no comments; run ingest first", "dataset")
        return [CommentRecord.from_dict(c) for c in read_json(path)]

    def dataset_build(self, check_balance: bool = True, out: str | Path | None = None) -> DatasetBundle | None:
        manifest = self.load_working_manifest()
        entries = [e for e in manifest.videos if e.category is not None]
        missing = [e.video_id for e in entries if not e.semantic_description]
        if missing:
            raise StageError(f"run describe first for: {', '.join(missing)}", "dataset")
        target = Path(out) if out else self.workdir / "dataset.json"
        if self.opts.dry_run:
            self.say(f"[dry-run] dataset-build: {len(entries)} curated videos -> {target}")
            return None
        comments = [c for e in entries for c in self.load_comments(e.video_id)]
        bundle = assemble_dataset(entries, comments, self.config.dataset.per_cell, check_balance)
        bundle.save(target)
        self.log.event("dataset", "ok", None, items=len(bundle.items), comments=len(comments))
        return bundle

    def annotate(self, video_id: str, labels: dict[str, str], annotator: str) -> list[CommentRecord]:
        comments = self.load_comments(video_id)
        unknown = sorted(set(labels) - {c.comment_id for c in comments})
        if unknown:
            raise StageError(f"unknown comment id(s) for {video_id}: {', '.join(unknown)}", "annotate")
        updated = [annotate_style(c, labels[c.comment_id], annotator) if c.comment_id in labels else c
                   for c in comments]
        if self.opts.dry_run:
            for cid, label in labels.items():
                self.say(f"[dry-run] annotate {video_id}/{cid} -> {label}")
            return updated
        write_json(self.vdir(video_id) / "comments.json", [c.to_dict() for c in updated])
        self.log.event("annotate", "ok", video_id, labels=labels, annotator=annotator)
        return updated

    # -- classification and generation ---------------------------------------

    def load_dataset(self) -> DatasetBundle:
        path = self.dataset_path
        if not path.exists():
            raise StageError(f"dataset not found at {path}; run dataset-build or set dataset.path",
                             "classify")
        return DatasetBundle.load(path)

    def generation_deps(self) -> GenerationDeps:
        bundle = self.load_dataset()
        p = self.providers
        cache = self.workdir / "cache" / "embeddings"
        index = build_embedding_index(bundle, p.embed, cache, self.opts.jobs)
        return GenerationDeps(
            bundle=bundle, index=index, profiles=category_profiles(bundle),
            embed=p.embed, sentiment=p.sentiment, generate=p.generate, judge=p.judge,
            selection=self.config.selection, classify=self.config.classify,
            few_shot_k=self.config.generation.few_shot_k, ceilings=dict(self.config.generation.ceilings),
            max_retries=self.config.providers.generate.max_retries, cache_dir=cache, jobs=1,
        )

    def _require_description(self, entries: Sequence[VideoManifestEntry], stage: str) -> None:
        for e in entries:
            if not e.semantic_description:
                raise StageError(f"{e.video_id}: run describe first", stage)

    def classify(self, ids: Sequence[str] | None = None) -> dict[str, dict]:
        manifest = self.load_working_manifest()
        entries = self.select(manifest, ids)
        self._require_description(entries, "classify")
        if self.opts.dry_run:
            self._plan("classify", ((e.video_id, True) for e in entries))
            return {}
        deps = self.generation_deps()
        out = {}
        for e in entries:
            try:
                decision = classify_video(e.semantic_description, deps.index, deps.embed, deps.classify,
                                          deps.cache_dir)
            except ProviderError:
                raise
            except StylecastError as exc:
                raise StageError(f"[classify] {exc}", "classify") from exc
            out[e.video_id] = decision.to_dict()
            write_json(self.vdir(e.video_id) / "classification.json", out[e.video_id])
            self.log.event("classify", "ok", e.video_id, category=decision.category.value)
        return out

    def _generation_key(self, e: VideoManifestEntry, style: str, dataset_fp: str) -> str:
        return fingerprint({
            "description": e.semantic_description, "style": style, "dataset": dataset_fp,
            "selection": dataclasses.asdict(self.config.selection),
            "classify": dataclasses.asdict(self.config.classify),
            "generation": {k: v for k, v in dataclasses.asdict(self.config.generation).items()},
        })

    def generate(self, ids: Sequence[str] | None = None, style: str | None = None,
                 per_style: bool = False) -> list[dict]:
        """One comment per video; with ``per_style`` and no ``style``, one per style label."""
        if style not in (None, "auto"):
            style = StyleLabel(style).value
        styles = [s.value for s in StyleLabel] if per_style and style is None else [style or "auto"]
        manifest = self.load_working_manifest()
        entries = self.select(manifest, ids)
        self._require_description(entries, "generate")
        dataset_fp = fingerprint(read_json(self.dataset_path)) if self.dataset_path.exists() else ""
        plan = {}
        for e in entries:
            existing = self._read_generated(e.video_id)
            for s in styles:
                key = self._generation_key(e, s, dataset_fp)
                plan[(e.video_id, s, key)] = self.opts.force or key not in existing
        if self._plan("generate", ((f"{v} [{s}]", todo) for (v, s, _), todo in plan.items())):
            return []
        if not any(plan.values()):
            for (vid, s, _) in plan:
                self.log.event("generate", "skip", vid, style=s)
            return []
        deps = self.generation_deps()
        records = []
        for e in entries:
            wanted = [(s, k) for (v, s, k), todo in plan.items() if v == e.video_id and todo]
            if not wanted:
                continue
            selection = select_template(e, deps)
            write_json(self.vdir(e.video_id) / "selection.json", {
                "classification": selection.decision.to_dict(),
                "pool_fallback_all_categories": selection.pool_fallback,
                "tournament": selection.tournament.to_dict(),
            })
            for s, key in wanted:
                outcome = generate_styled(e, selection, s, deps)
                rec = {"request_key": key, "style_arg": s, **outcome.record(e.video_id)}
                self._upsert_generated(e.video_id, rec)
                records.append(rec)
                self.log.event("generate", "ok", e.video_id, style=rec["style"],
                               fingerprint=rec["request_fingerprint"])
        return records

    def _read_generated(self, video_id: str) -> dict[str, dict]:
        path = self.vdir(video_id) / "generated.jsonl"
        if not path.exists():
            return {}
        recs = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        return {r.get("request_key"): r for r in recs}

    def _upsert_generated(self, video_id: str, rec: dict) -> None:
        path = self.vdir(video_id) / "generated.jsonl"
        lines = path.read_text(encoding="utf-8").splitlines() if path.exists() else []
        kept = [ln for ln in lines if ln.strip() and json.loads(ln).get("request_key") != rec["request_key"]]
        kept.append(canonical_json(rec))
        write_text(path, "\n".join(kept) + "\n")

    # -- scoring ------------------------------------------------------------

    def collect_generated(self) -> list[dict]:
        manifest = self.load_working_manifest()
        rows = []
        for e in manifest.videos:
            for rec in self._read_generated(e.video_id).values():
                rows.append({"video_id": e.video_id, "system": "stylecast", "text": rec["text"],
                             "language": rec["language"], "style": rec["style"]})
        return rows

    def score(self, candidates: str | Path | None = None, bench: str | Path | None = None,
              train: str | Path | None = None) -> str:
        bench_path = Path(bench) if bench else self.config.resolve(self.config.scoring.bench)
        train_path = Path(train) if train else self.config.resolve(self.config.scoring.train)
        if bench_path is None:
            raise StageError("score needs --bench (or scoring.bench in the config)", "score")
        rows = read_candidates(candidates) if candidates else self.collect_generated()
        if not rows:
            raise StageError("nothing to score; run generate first or pass a candidates file", "score")
        if self.opts.dry_run:
            self.say(f"[dry-run] score {len(rows)} candidates against {bench_path}")
            return ""
        bench_b = DatasetBundle.load(bench_path)
        train_b = DatasetBundle.load(train_path) if train_path else (
            self.load_dataset() if self.dataset_path.exists() else DatasetBundle(()))
        p = self.providers
        sc = self.config.scoring
        ctx = build_scoring_context(bench_b, train_b, p.embed, p.sentiment, sc.sigma, sc.sigma_l,
                                    {lang: tuple(b) for lang, b in sc.bands.items()},
                                    cache_dir=self.workdir / "cache" / "embeddings",
                                    jobs=self.opts.jobs)
        manifest = load_manifest(self.manifest_path) if self.manifest_path.exists() else Manifest()
        known = {e.video_id: e for e in manifest.videos}
        bench_videos = {it.video_id: it for it in bench_b.items}
        scored, table_rows = [], []
        for row in rows:
            video = known.get(row["video_id"]) or bench_videos.get(row["video_id"])
            if video is None and not row.get("description"):
                raise StageError(f"unknown video {row['video_id']} in candidates", "score")
            target = row.get("description") or video
            language = row.get("language") or getattr(video, "language", None)
            platform = row.get("platform") or getattr(video, "platform", "unknown")
            report = score_comment(row["text"], target, ctx, language)
            scored.append({**row, "platform": platform, **report.to_dict()})
            table_rows.append((platform, row.get("system", "stylecast"), report))
        table = format_table(aggregate(table_rows))
        out_dir = self.workdir / "scores"
        write_text(out_dir / "scores.jsonl", "".join(canonical_json(r) + "\n" for r in scored))
        write_text(out_dir / "table.md", table)
        self.log.event("score", "ok", None, rows=len(scored), sim_baseline=ctx.sim_baseline, sigma=ctx.sigma)
        return table

    def questionnaire(self, candidates: str | Path, seed: int) -> Path | None:
        rows = read_candidates(candidates)
        per_system: dict[str, dict[str, str]] = {}
        order: list[str] = []
        for r in rows:
            per_system.setdefault(r["system"], {})[r["video_id"]] = r["text"]
            if r["video_id"] not in order:
                order.append(r["video_id"])
        manifest = load_manifest(self.manifest_path) if self.manifest_path.exists() else Manifest()
        known = {e.video_id: e for e in manifest.videos}
        videos = [known.get(v, v) for v in order]
        packet = export_questionnaire(videos, per_system, seed)
        out_dir = self.workdir / "questionnaire"
        if self.opts.dry_run:
            self.say(f"[dry-run] questionnaire: {len(videos)} items x {len(per_system)} systems -> {out_dir}")
            return None
        packet.write(out_dir / "packet.json", out_dir / "answer_key.json")
        self.log.event("questionnaire", "ok", None, items=len(videos), seed=seed)
        return out_dir


def read_candidates(path: str | Path) -> list[dict]:
    """JSONL rows with at least ``video_id`` and ``text`` (``system`` defaults to ``stylecast``)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                row["video_id"], row["text"]
            except (ValueError, KeyError, TypeError) as exc:
                raise StageError(f"bad candidates line {n} in {path}: {exc}", "score") from None
            row.setdefault("system", "stylecast")
            rows.append(row)
    return rows
