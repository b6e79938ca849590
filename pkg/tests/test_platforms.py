import httpx
import pytest

from stylecast.errors import PlatformAuthError, PlatformError
from stylecast.ingestion import VideoManifestEntry
from stylecast.platforms import DouyinClient, RateLimiter, YouTubeClient, parse_iso_duration, platform_video_id

YT = VideoManifestEntry("yt", "youtube", "https://www.youtube.com/watch?v=abc123")
DY = VideoManifestEntry("dy", "douyin", "https://www.douyin.com/video/7000")


def transport(handler):
    calls = []

    def wrapped(request):
        calls.append(request)
        return handler(request)

    return httpx.MockTransport(wrapped), calls


def test_platform_video_id():
    assert platform_video_id(YT) == "abc123"
    assert platform_video_id(DY) == "7000"
    assert platform_video_id(DY.replace(extra={"platform_id": "x9"})) == "x9"


def test_iso_duration():
    assert parse_iso_duration("PT1M5.5S") == 65.5
    assert parse_iso_duration("PT2H") == 7200
    assert parse_iso_duration("garbage") == 0.0


def test_youtube_metadata_and_comment_paging():
    def handler(req):
        if req.url.path.endswith("/videos"):
            assert req.url.params["id"] == "abc123"
            return httpx.Response(200, json={"items": [{"snippet": {"title": "T", "description": "D"},
                                                        "contentDetails": {"duration": "PT30S"}}]})
        page = req.url.params.get("pageToken")
        item = lambda cid, n: {"id": cid, "snippet": {"topLevelComment": {  # noqa: E731
            "id": cid, "snippet": {"textDisplay": f"text {cid}", "likeCount": n}}}}
        if page is None:
            return httpx.Response(200, json={"items": [item("a", 3)], "nextPageToken": "p2"})
        return httpx.Response(200, json={"items": [item("b", 9)]})

    tr, calls = transport(handler)
    client = YouTubeClient(api_key="k", transport=tr)
    assert client.get_metadata(YT) == {"title": "T", "description": "D", "duration_s": 30.0}
    assert client.list_comments(YT) == [{"comment_id": "a", "text": "text a", "like_count": 3},
                                        {"comment_id": "b", "text": "text b", "like_count": 9}]
    assert all(c.url.params["key"] == "k" for c in calls)


def test_youtube_auth_error_carries_code():
    tr, _ = transport(lambda req: httpx.Response(403, json={"error": "forbidden"}))
    with pytest.raises(PlatformAuthError, match="platform auth") as info:
        YouTubeClient(api_key="k", transport=tr).get_metadata(YT)
    assert info.value.code == 403 and info.value.platform == "youtube"


def test_missing_credentials(monkeypatch):
    monkeypatch.delenv("YOUTUBE_API_KEY", raising=False)
    monkeypatch.delenv("DOUYIN_API_TOKEN", raising=False)
    with pytest.raises(PlatformAuthError, match="YOUTUBE_API_KEY"):
        YouTubeClient()
    with pytest.raises(PlatformAuthError, match="DOUYIN_API_TOKEN"):
        DouyinClient()
    monkeypatch.setenv("DOUYIN_API_TOKEN", "tok")
    assert DouyinClient().token == "tok"


def test_douyin_flow(tmp_path):
    def handler(req):
        assert req.headers["access-token"] == "tok"
        if "video_data" in req.url.path:
            return httpx.Response(200, json={"data": {"error_code": 0, "list": [
                {"title": "猫", "duration": 8000, "play_url": "https://cdn.example/v.mp4"}]}})
        if req.url.host == "cdn.example":
            return httpx.Response(200, content=b"MP4DATA")
        cursor = int(req.url.params["cursor"])
        if cursor == 0:
            return httpx.Response(200, json={"data": {"list": [{"comment_id": "1", "content": "好", "digg_count": 4}],
                                                      "has_more": True, "cursor": 50}})
        return httpx.Response(200, json={"data": {"list": [{"comment_id": "2", "content": "哈", "digg_count": 1}],
                                                  "has_more": False}})

    tr, _ = transport(handler)
    client = DouyinClient(token="tok", transport=tr)
    meta = client.get_metadata(DY)
    assert meta["duration_s"] == 8.0 and meta["title"] == "猫"
    client.download_media(DY, tmp_path / "v.mp4")
    assert (tmp_path / "v.mp4").read_bytes() == b"MP4DATA"
    assert [c["comment_id"] for c in client.list_comments(DY)] == ["1", "2"]


def test_douyin_error_code_surfaced():
    tr, _ = transport(lambda req: httpx.Response(200, json={"data": {"error_code": 2190008,
                                                                      "description": "token expired"}}))
    with pytest.raises(PlatformError, match="2190008") as info:
        DouyinClient(token="tok", transport=tr).get_metadata(DY)
    assert info.value.code == 2190008


def test_network_failure_is_platform_error():
    def boom(req):
        raise httpx.ConnectError("refused", request=req)

    tr, _ = transport(boom)
    with pytest.raises(PlatformError, match="request failed"):
        DouyinClient(token="tok", transport=tr).list_comments(DY)


def test_rate_limiter_spaces_calls():
    now = [0.0]
    slept = []

    def sleep(dt):
        slept.append(dt)
        now[0] += dt

    limiter = RateLimiter(2.0, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        limiter.wait()
    assert slept == [0.5, 0.5]
    RateLimiter(None, clock=lambda: 0.0, sleep=sleep).wait()
    assert len(slept) == 2
