import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import check_golden
from stylecast.describe import (
    DescribeRequest,
    build_describe_payload,
    describe_video,
    link_frames,
    normalize_segments,
    subsample_frames,
    transcribe_audio,
)
from stylecast.errors import ProviderError
from stylecast.ingestion import TranscriptSegment
from stylecast.media import HighlightWindow, build_frame_schedule
from stylecast.providers import MockDescribeProvider, MockTranscribeProvider

TRANSCRIPT = (TranscriptSegment(0.5, 2.0, "look at this cat"), TranscriptSegment(3.0, 4.5, "it jumped"))


def request(**kw):
    base = dict(transcript=TRANSCRIPT, frame_paths=tuple(f"v/frames/frame_{i:06}.jpg" for i in range(3)),
                title="Cat vs box", description="my cat", duration_s=8.0, language="en")
    base.update(kw)
    return DescribeRequest(**base)


# --- transcription ---------------------------------------------------------


def test_silent_clip_gives_empty_transcript(tmp_path):
    assert transcribe_audio(tmp_path / "v" / "video.mp4", MockTranscribeProvider()) == []


def test_linkage_from_schedule():
    # 10 s clip, highlight [2, 4): sparse frame at 0, dense frames 2.0..3.9, sparse at 4, 6, 8.
    times = build_frame_schedule(10.0, [HighlightWindow(2.0, 4.0, 1.0)]).timestamps()
    provider = MockTranscribeProvider(canned={"v": [{"start_s": 2.0, "end_s": 4.0, "text": "boom"}]})
    (seg,) = transcribe_audio("w/v/video.mp4", provider, times)
    assert seg.linked_frame_indices == tuple(range(1, 21))
    assert [times[i] for i in (1, 20)] == pytest.approx([2.0, 3.9])


def test_overlapping_segments_truncated():
    raw = [{"start_s": 1.0, "end_s": 3.5, "text": "b"}, {"start_s": 0.0, "end_s": 2.0, "text": "a"},
           {"start_s": 3.0, "end_s": 5.0, "text": "c"}]
    assert normalize_segments(raw) == [(0.0, 1.0, "a"), (1.0, 3.0, "b"), (3.0, 5.0, "c")]


def test_segments_swallowed_by_next_start_are_dropped():
    raw = [{"start": 1.0, "end": 2.0, "text": "x"}, {"start": 1.0, "end": 3.0, "text": "y"}]
    assert normalize_segments(raw) == [(1.0, 3.0, "y")]


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0.01, 20)), max_size=30))
def test_normalized_segments_disjoint_and_sorted(spans):
    raw = [{"start_s": s, "end_s": s + d, "text": "t"} for s, d in spans]
    out = normalize_segments(raw)
    for (s0, e0, _), (s1, e1, _) in zip(out, out[1:]):
        assert s0 <= s1 and e0 <= s1
    assert all(s < e for s, e, _ in out)


def test_transcriber_crash_is_provider_error():
    class Broken:
        provider_id = "broken"

        def transcribe(self, path):
            raise RuntimeError("backend gone")

    with pytest.raises(ProviderError, match="backend gone"):
        transcribe_audio("a/video.mp4", Broken())


def test_link_frames_half_open():
    assert link_frames(1.0, 2.0, [0.0, 1.0, 1.5, 2.0]) == (1, 2)


# --- frame subsampling -----------------------------------------------------


def test_500_frames_capped_to_32():
    frames = [f"f{i}" for i in range(500)]
    got = subsample_frames(frames, 32)
    assert len(got) == 32
    # Uniform stride (n-1)/(m-1) = 499/31, rounded half up.
    expected = [frames[int(i * 499 / 31 + 0.5)] for i in range(32)]
    assert got == expected


@given(st.integers(1, 600), st.integers(1, 64))
def test_subsampling_keeps_ends_and_order(n, m):
    frames = list(range(n))
    got = subsample_frames(frames, m)
    assert len(got) == min(n, m)
    assert got[0] == 0
    if m > 1:
        assert got[-1] == n - 1
    assert got == sorted(set(got))


# --- describe --------------------------------------------------------------


def test_mock_description_is_canonical():
    desc = describe_video(request(), MockDescribeProvider())
    assert desc.text == "Cat vs box. Opening: look at this cat. Closing: it jumped. Frames: 3. Duration: 8.0s."
    assert desc.provider_id == "mock-describe-v1"


def test_describe_prompt_golden():
    payload, fp = build_describe_payload(request())
    check_golden("describe_prompt.txt", payload["messages"][0]["content"] + "\n---\n"
                 + payload["messages"][1]["content"][0]["text"] + "\n---\n" + fp + "\n")


def test_frames_only_request():
    desc = describe_video(request(transcript=()), MockDescribeProvider())
    assert "Opening: (no speech)" in desc.text and "Frames: 3" in desc.text


def test_request_needs_some_input():
    with pytest.raises(ValueError):
        request(transcript=(), frame_paths=())
    with pytest.raises(ValueError):
        request(max_frames=0)


def test_payload_caps_frames():
    payload, _ = build_describe_payload(request(frame_paths=tuple(f"f{i}" for i in range(500))))
    images = [p for p in payload["messages"][1]["content"] if p["type"] == "image_ref"]
    assert len(images) == 32 and images[0]["path"] == "f0" and images[-1]["path"] == "f499"


def test_describe_is_deterministic():
    a = describe_video(request(), MockDescribeProvider())
    b = describe_video(request(), MockDescribeProvider())
    assert a == b
    c = describe_video(request(title="Other"), MockDescribeProvider())
    assert c.prompt_fingerprint != a.prompt_fingerprint


def test_retries_then_succeeds():
    provider = MockDescribeProvider(script=[ProviderError("timeout", retryable=True), "  fine  "])
    assert describe_video(request(), provider, max_retries=2).text == "fine"
    assert len(provider.calls) == 2


def test_retries_exhausted_carries_fingerprint():
    provider = MockDescribeProvider(script=[ProviderError("refused", retryable=True)] * 3)
    with pytest.raises(ProviderError, match="describe failed") as info:
        describe_video(request(), provider, max_retries=2)
    _, fp = build_describe_payload(request())
    assert info.value.fingerprint == fp
    assert len(provider.calls) == 3


def test_non_retryable_fails_fast():
    provider = MockDescribeProvider(script=[ProviderError("bad request"), "never"])
    with pytest.raises(ProviderError):
        describe_video(request(), provider)
    assert len(provider.calls) == 1
