"""Platform API clients: Douyin, YouTube and an offline fixture-backed mock."""

from __future__ import annotations

import os
import shutil
import threading
import time
from pathlib import Path
from typing import Protocol

import httpx

from .errors import PlatformAuthError, PlatformError
from .ingestion import VideoManifestEntry
from .textutil import read_json


class RateLimiter:
    """Thread-safe minimum-interval limiter (``rate_per_s`` calls per second)."""

    def __init__(self, rate_per_s: float | None, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rate_per_s if rate_per_s else 0.0
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            if now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


class PlatformClient(Protocol):
    platform: str

    def get_metadata(self, entry: VideoManifestEntry) -> dict: ...

    def download_media(self, entry: VideoManifestEntry, dest: Path) -> None: ...

    def list_comments(self, entry: VideoManifestEntry) -> list[dict]: ...


def check_status(resp: httpx.Response, platform: str) -> None:
    if resp.status_code in (401, 403):
        raise PlatformAuthError(f"platform auth: {platform} returned {resp.status_code}",
                                resp.status_code, platform)
    if resp.status_code >= 400:
        raise PlatformError(f"platform error: {platform} returned {resp.status_code}: {resp.text[:200]}",
                            resp.status_code, platform)


def platform_video_id(entry: VideoManifestEntry) -> str:
    """Platform-native id: ``extra['platform_id']`` if set, else the last URL path part."""
    pid = entry.extra.get("platform_id")
    if pid:
        return str(pid)
    from urllib.parse import parse_qs, urlparse

    parsed = urlparse(entry.url)
    if "v" in parse_qs(parsed.query):
        return parse_qs(parsed.query)["v"][0]
    return parsed.path.rstrip("/").rsplit("/", 1)[-1]


class MockPlatformClient:
    """Serves ``<fixture_dir>/<video_id>/{metadata.json, video.mp4, comments.json}``.

    ``fail_with`` maps a video id to an HTTP-like status to simulate failures.
    Call counters make idempotence observable in tests.
    """

    def __init__(self, fixture_dir: str | Path, platform: str = "mock",
                 fail_with: dict[str, int] | None = None):
        self.fixture_dir = Path(fixture_dir)
        self.platform = platform
        self.fail_with = dict(fail_with or {})
        self.downloads = 0
        self.metadata_calls = 0
        self.comment_calls = 0

    def _check(self, entry: VideoManifestEntry) -> Path:
        status = self.fail_with.get(entry.video_id)
        if status in (401, 403):
            raise PlatformAuthError(f"platform auth: {entry.platform} returned {status}", status, entry.platform)
        if status:
            raise PlatformError(f"platform error: {entry.platform} returned {status}", status, entry.platform)
        vdir = self.fixture_dir / entry.video_id
        if not vdir.is_dir():
            raise PlatformError(f"platform error: no fixture for {entry.video_id}", 404, entry.platform)
        return vdir

    def get_metadata(self, entry: VideoManifestEntry) -> dict:
        self.metadata_calls += 1
        path = self._check(entry) / "metadata.json"
        return read_json(path) if path.exists() else {}

    def download_media(self, entry: VideoManifestEntry, dest: Path) -> None:
        src = self._check(entry) / "video.mp4"
        if not src.exists():
            raise PlatformError(f"platform error: no media for {entry.video_id}", 404, entry.platform)
        self.downloads += 1
        shutil.copyfile(src, dest)

    def list_comments(self, entry: VideoManifestEntry) -> list[dict]:
        self.comment_calls += 1
        path = self._check(entry) / "comments.json"
        return list(read_json(path)) if path.exists() else []


class _HttpClient:
    platform = ""

    def __init__(self, base_url: str, rate_per_s: float | None = None, timeout: float = 30.0,
                 transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self.limiter = RateLimiter(rate_per_s)
        self.http = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def _get(self, path: str, **kwargs) -> httpx.Response:
        self.limiter.wait()
        try:
            resp = self.http.get(path, **kwargs)
        except httpx.HTTPError as exc:
            raise PlatformError(f"platform error: {self.platform} request failed: {exc}", None,
                                self.platform) from exc
        check_status(resp, self.platform)
        return resp

    def _stream_to(self, url: str, dest: Path, **kwargs) -> None:
        self.limiter.wait()
        try:
            with self.http.stream("GET", url, **kwargs) as resp:
                check_status(resp, self.platform)
                with open(dest, "wb") as fh:
                    for chunk in resp.iter_bytes():
                        fh.write(chunk)
        except httpx.HTTPError as exc:
            raise PlatformError(f"platform error: {self.platform} download failed: {exc}", None,
                                self.platform) from exc


class YouTubeClient(_HttpClient):
    """YouTube Data API v3 (``videos.list`` and ``commentThreads.list``).

    The Data API does not serve media bytes, so downloads go through
    ``media_base_url`` (``GET {media_base_url}/{id}.mp4``) when configured.
    """

    platform = "youtube"

    def __init__(self, api_key: str | None = None, base_url: str = "https://www.googleapis.com/youtube/v3",
                 media_base_url: str | None = None, **kwargs):
        super().__init__(base_url, **kwargs)
        self.api_key = api_key or os.environ.get("YOUTUBE_API_KEY")
        if not self.api_key:
            raise PlatformAuthError("platform auth: YOUTUBE_API_KEY is not set", None, self.platform)
        self.media_base_url = media_base_url

    def get_metadata(self, entry: VideoManifestEntry) -> dict:
        resp = self._get("/videos", params={"part": "snippet,contentDetails",
                                            "id": platform_video_id(entry), "key": self.api_key})
        items = resp.json().get("items") or []
        if not items:
            raise PlatformError(f"platform error: youtube video not found: {entry.url}", 404, self.platform)
        snippet = items[0].get("snippet", {})
        return {"title": snippet.get("title", ""), "description": snippet.get("description", ""),
                "duration_s": parse_iso_duration(items[0].get("contentDetails", {}).get("duration", ""))}

    def download_media(self, entry: VideoManifestEntry, dest: Path) -> None:
        if not self.media_base_url:
            raise PlatformError("platform error: youtube media download needs media_base_url", "unsupported",
                                self.platform)
        self._stream_to(f"{self.media_base_url.rstrip('/')}/{platform_video_id(entry)}.mp4", dest)

    def list_comments(self, entry: VideoManifestEntry, max_pages: int = 5) -> list[dict]:
        out: list[dict] = []
        token = None
        for _ in range(max_pages):
            params = {"part": "snippet", "videoId": platform_video_id(entry), "maxResults": 100,
                      "order": "relevance", "textFormat": "plainText", "key": self.api_key}
            if token:
                params["pageToken"] = token
            doc = self._get("/commentThreads", params=params).json()
            for item in doc.get("items", []):
                top = item["snippet"]["topLevelComment"]
                sn = top["snippet"]
                out.append({"comment_id": top.get("id") or item.get("id"),
                            "text": sn.get("textDisplay") or sn.get("textOriginal", ""),
                            "like_count": int(sn.get("likeCount", 0))})
            token = doc.get("nextPageToken")
            if not token:
                break
        return out


class DouyinClient(_HttpClient):
    """Douyin open-platform client authenticated with ``DOUYIN_API_TOKEN``."""

    platform = "douyin"

    def __init__(self, token: str | None = None, base_url: str = "https://open.douyin.com", **kwargs):
        super().__init__(base_url, **kwargs)
        self.token = token or os.environ.get("DOUYIN_API_TOKEN")
        if not self.token:
            raise PlatformAuthError("platform auth: DOUYIN_API_TOKEN is not set", None, self.platform)

    def _headers(self) -> dict:
        return {"access-token": self.token}

    def _data(self, resp: httpx.Response) -> dict:
        doc = resp.json()
        data = doc.get("data", doc)
        code = data.get("error_code", 0)
        if code:
            raise PlatformError(f"platform error: douyin error_code {code}: {data.get('description', '')}",
                                code, self.platform)
        return data

    def get_metadata(self, entry: VideoManifestEntry) -> dict:
        data = self._data(self._get("/api/douyin/v1/video/video_data/", headers=self._headers(),
                                    params={"item_ids": platform_video_id(entry)}))
        items = data.get("list") or []
        if not items:
            raise PlatformError(f"platform error: douyin video not found: {entry.url}", 404, self.platform)
        item = items[0]
        return {"title": item.get("title", ""), "description": item.get("title", ""),
                "duration_s": float(item.get("duration", 0)) / 1000.0,
                "media_url": item.get("play_url") or item.get("download_url")}

    def download_media(self, entry: VideoManifestEntry, dest: Path) -> None:
        url = self.get_metadata(entry).get("media_url")
        if not url:
            raise PlatformError("platform error: douyin returned no media url", "no_media", self.platform)
        self._stream_to(url, dest, headers=self._headers())

    def list_comments(self, entry: VideoManifestEntry, max_pages: int = 5) -> list[dict]:
        out: list[dict] = []
        cursor = 0
        for _ in range(max_pages):
            data = self._data(self._get("/item/comment/list/", headers=self._headers(),
                                        params={"item_id": platform_video_id(entry), "cursor": cursor,
                                                "count": 50, "sort_type": 0}))
            for c in data.get("list", []):
                out.append({"comment_id": c.get("comment_id"), "text": c.get("content", ""),
                            "like_count": int(c.get("digg_count", 0))})
            if not data.get("has_more"):
                break
            cursor = data.get("cursor", cursor + 50)
        return out


def parse_iso_duration(text: str) -> float:
    """``PT1M5.5S`` -> 65.5. Unparseable input gives 0."""
    import re

    m = re.fullmatch(r"P(?:(\d+)D)?T?(?:(\d+)H)?(?:(\d+)M)?(?:(\d+(?:\.\d+)?)S)?", text or "")
    if not m:
        return 0.0
    d, h, mi, s = (float(g) if g else 0.0 for g in m.groups())
    return d * 86400 + h * 3600 + mi * 60 + s
