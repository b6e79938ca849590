"""Highlight detection and adaptive frame scheduling.

Audio amplitude and luminance series are resampled onto a common grid,
smoothed, differentiated, and combined into a highlight score. Runs of the
score above a threshold become highlight windows, which are sampled densely
while the rest of the video is sampled sparsely.
"""

from __future__ import annotations

import math
import re
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MediaDecodeError, SignalError

GRID_HZ = 20.0
HIGHLIGHT_FPS = 10.0
NORMAL_FPS = 0.5
AUDIO_RATE = 16000

KINDS = ("audio_amplitude", "light_intensity", "highlight_score")
_NORMALIZED_KINDS = ("audio_amplitude", "light_intensity")
_EPS = 1e-9


@dataclass(frozen=True)
class SignalSeries:
    times: np.ndarray
    values: np.ndarray
    kind: str
    sample_rate_hz: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.shape != values.shape:
            raise SignalError("times and values differ in length")
        if self.kind not in KINDS:
            raise SignalError(f"unknown signal kind: {self.kind}")
        if not self.sample_rate_hz > 0:
            raise SignalError("sample_rate_hz must be positive")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise SignalError("timestamps must be strictly increasing")
        if self.kind in _NORMALIZED_KINDS and values.size:
            if values.min() < -1e-12 or values.max() > 1 + 1e-12:
                raise SignalError(f"{self.kind} values must lie in [0, 1]")

    @classmethod
    def uniform(cls, values: Sequence[float], sample_rate_hz: float, kind: str,
                start_s: float = 0.0) -> "SignalSeries":
        values = np.asarray(values, dtype=float)
        times = start_s + np.arange(values.size) / sample_rate_hz
        return cls(times, values, kind, sample_rate_hz)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def shifted(self, dt: float) -> "SignalSeries":
        return SignalSeries(self.times + dt, self.values, self.kind, self.sample_rate_hz)


def normalize(raw: Sequence[float]) -> np.ndarray:
    """Min-max scale to [0, 1]. A constant series maps to all zeros."""
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0:
        return raw
    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo <= 0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


_PERCENTILE_RE = re.compile(r"^\s*p(\d+(?:\.\d+)?)\s*$|^\s*(\d+(?:\.\d+)?)\s*%\s*$")


@dataclass(frozen=True)
class HighlightParams:
    """Weights, threshold and window post-processing for highlight detection.

    ``theta_h`` is either an absolute score or a percentile directive such as
    ``"p90"`` (or ``"90%"``) resolved against the score series of each video.
    """

    omega_a: float = 0.5
    omega_l: float = 0.5
    theta_h: float | str = "p90"
    smooth_window_s: float = 0.25
    min_window_s: float = 0.5
    merge_gap_s: float = 1.0
    grid_hz: float = GRID_HZ

    def __post_init__(self):
        for name in ("omega_a", "omega_l"):
            w = getattr(self, name)
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {w}")
        if abs(self.omega_a + self.omega_l - 1.0) > _EPS:
            raise ValueError("omega_a + omega_l must equal 1")
        for name in ("smooth_window_s", "min_window_s", "merge_gap_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.grid_hz > 0:
            raise ValueError("grid_hz must be positive")
        if isinstance(self.theta_h, str):
            parse_percentile(self.theta_h)

    def resolve_threshold(self, values: np.ndarray) -> float:
        if isinstance(self.theta_h, str):
            return float(np.percentile(values, parse_percentile(self.theta_h)))
        return float(self.theta_h)


def parse_percentile(directive: str) -> float:
    m = _PERCENTILE_RE.match(directive)
    if not m:
        raise ValueError(f"bad percentile directive: {directive!r}")
    p = float(m.group(1) or m.group(2))
    if not 0 <= p <= 100:
        raise ValueError(f"percentile out of range: {p}")
    return p


@dataclass(frozen=True)
class HighlightWindow:
    start_s: float
    end_s: float
    peak_score: float = 0.0

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError(f"empty highlight window [{self.start_s}, {self.end_s})")

    @property
    def length_s(self) -> float:
        return self.end_s - self.start_s

    def to_dict(self) -> dict:
        return {"start_s": self.start_s, "end_s": self.end_s, "peak_score": self.peak_score}

    @classmethod
    def from_dict(cls, d: dict) -> "HighlightWindow":
        return cls(float(d["start_s"]), float(d["end_s"]), float(d.get("peak_score", 0.0)))


def _box(x: np.ndarray, n: int) -> np.ndarray:
    if n <= 1 or x.size < 2:
        return x.copy()
    pad = n // 2
    return np.convolve(np.pad(x, pad, mode="edge"), np.ones(n) / n, mode="valid")


def smooth(x: np.ndarray, window_s: float, grid_hz: float) -> np.ndarray:
    """Centered triangular moving average spanning about ``window_s``.

    Two passes of an odd box filter; edge samples are repeated so constants
    stay constant.
    """
    half = int(round(window_s * grid_hz / 4.0))
    n = 2 * half + 1
    return _box(_box(np.asarray(x, dtype=float), n), n)


def _derivative(x: np.ndarray, dt: float) -> np.ndarray:
    if x.size < 2:
        return np.zeros_like(x)
    return np.gradient(x, dt)


def highlight_score(audio: SignalSeries, light: SignalSeries,
                    params: HighlightParams = HighlightParams()) -> SignalSeries:
    """Weighted sum of absolute audio and luminance rates of change."""
    if len(audio) == 0 or len(light) == 0:
        raise SignalError("empty signal")
    period = max(1.0 / audio.sample_rate_hz, 1.0 / light.sample_rate_hz)
    (a0, a1), (l0, l1) = audio.span, light.span
    if abs(a0 - l0) > period + _EPS or abs(a1 - l1) > period + _EPS:
        raise SignalError("span mismatch")

    hz = params.grid_hz
    start, end = max(a0, l0), min(a1, l1)
    n = int(math.floor(max(end - start, 0.0) * hz + _EPS)) + 1
    grid = start + np.arange(n) / hz
    dt = 1.0 / hz

    a = smooth(np.interp(grid, audio.times, audio.values), params.smooth_window_s, hz)
    li = smooth(np.interp(grid, light.times, light.values), params.smooth_window_s, hz)
    h = params.omega_a * np.abs(_derivative(a, dt)) + params.omega_l * np.abs(_derivative(li, dt))
    return SignalSeries(grid, h, "highlight_score", hz)


def detect_highlights(score: SignalSeries,
                      params: HighlightParams = HighlightParams()) -> list[HighlightWindow]:
    """Runs of ``score > theta`` as half-open windows, merged then length-filtered.

    A run covering grid points i..j becomes ``[t_i, t_{j+1})``; a run that
    reaches the end of the series is closed one grid step past the last point.
    """
    if len(score) == 0:
        return []
    values, times = score.values, score.times
    theta = params.resolve_threshold(values)
    above = values > theta
    step = 1.0 / score.sample_rate_hz

    runs: list[list[float]] = []
    i, n = 0, values.size
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and above[j + 1]:
            j += 1
        end = times[j + 1] if j + 1 < n else times[j] + step
        runs.append([float(times[i]), float(end), float(values[i:j + 1].max())])
        i = j + 1

    merged: list[list[float]] = []
    for run in runs:
        if merged and run[0] - merged[-1][1] < params.merge_gap_s:
            merged[-1][1] = run[1]
            merged[-1][2] = max(merged[-1][2], run[2])
        else:
            merged.append(run)

    return [HighlightWindow(s, e, p) for s, e, p in merged
            if e - s >= params.min_window_s - _EPS]


@dataclass(frozen=True)
class FrameSegment:
    start_s: float
    end_s: float
    rate_fps: float

    @property
    def frame_count(self) -> int:
        # Each frame owns a full 1/rate slot inside the segment.
        return int(math.floor((self.end_s - self.start_s) * self.rate_fps + _EPS))

    def timestamps(self) -> list[float]:
        return [self.start_s + k / self.rate_fps for k in range(self.frame_count)]


@dataclass(frozen=True)
class FrameSchedule:
    duration_s: float
    segments: tuple[FrameSegment, ...] = field(default_factory=tuple)

    @property
    def frame_count(self) -> int:
        return sum(seg.frame_count for seg in self.segments)

    def timestamps(self) -> list[float]:
        return [t for seg in self.segments for t in seg.timestamps()]

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "segments": [
                {"start_s": s.start_s, "end_s": s.end_s, "rate_fps": s.rate_fps}
                for s in self.segments
            ],
            "frame_timestamps": [round(t, 6) for t in self.timestamps()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameSchedule":
        segs = tuple(FrameSegment(float(s["start_s"]), float(s["end_s"]), float(s["rate_fps"]))
                     for s in d["segments"])
        return cls(float(d["duration_s"]), segs)


def build_frame_schedule(duration_s: float, highlights: Sequence[HighlightWindow],
                         highlight_fps: float = HIGHLIGHT_FPS,
                         normal_fps: float = NORMAL_FPS) -> FrameSchedule:
    """Tile ``[0, duration_s)`` with dense highlight segments and sparse fill.

    Windows are clipped to the video and overlapping or touching windows are
    joined before tiling.
    """
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    spans: list[list[float]] = []
    for w in sorted(highlights, key=lambda w: (w.start_s, w.end_s)):
        s, e = max(0.0, w.start_s), min(duration_s, w.end_s)
        if e <= s:
            continue
        if spans and s <= spans[-1][1]:
            spans[-1][1] = max(spans[-1][1], e)
        else:
            spans.append([s, e])

    segments: list[FrameSegment] = []
    cursor = 0.0
    for s, e in spans:
        if s > cursor:
            segments.append(FrameSegment(cursor, s, normal_fps))
        segments.append(FrameSegment(s, e, highlight_fps))
        cursor = e
    if cursor < duration_s:
        segments.append(FrameSegment(cursor, duration_s, normal_fps))
    return FrameSchedule(float(duration_s), tuple(segments))


# ---------------------------------------------------------------------------
# Decoding front-end


def resolve_decoder(decoder: str = "auto") -> str:
    """Path of an ffmpeg binary. ``auto`` prefers the pinned imageio-ffmpeg build."""
    if decoder != "auto":
        return decoder
    try:
        import imageio_ffmpeg
        return imageio_ffmpeg.get_ffmpeg_exe()
    except Exception:  # noqa: BLE001 - any failure means "not available"
        pass
    found = shutil.which("ffmpeg")
    if not found:
        raise MediaDecodeError("no media decoder available: install ffmpeg or imageio-ffmpeg")
    return found


@dataclass(frozen=True)
class MediaInfo:
    duration_s: float
    width: int
    height: int
    fps: float
    has_audio: bool


_DURATION_RE = re.compile(r"Duration:\s*(\d+):(\d+):(\d+(?:\.\d+)?)")
_VIDEO_RE = re.compile(r"Stream #\S+.*?Video:.*?(\d{2,5})x(\d{2,5}).*?(\d+(?:\.\d+)?) (?:fps|tbr)")


def probe(video_path: str | Path, decoder: str = "auto") -> MediaInfo:
    path = Path(video_path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    exe = resolve_decoder(decoder)
    proc = subprocess.run([exe, "-hide_banner", "-i", str(path)], capture_output=True)
    err = proc.stderr.decode("utf-8", "replace")
    dm, vm = _DURATION_RE.search(err), _VIDEO_RE.search(err)
    if not dm or not vm:
        raise MediaDecodeError(f"cannot decode {path}: {_tail(err)}")
    h, m, s = dm.groups()
    duration = int(h) * 3600 + int(m) * 60 + float(s)
    return MediaInfo(duration, int(vm.group(1)), int(vm.group(2)), float(vm.group(3)),
                     has_audio=bool(re.search(r"Stream #\S+.*?Audio:", err)))


def _tail(text: str, lines: int = 5) -> str:
    return " | ".join(text.strip().splitlines()[-lines:])


def _run_decoder(cmd: list[str]) -> bytes:
    proc = subprocess.run(cmd, capture_output=True)
    if proc.returncode != 0:
        raise MediaDecodeError(f"decoder failed: {_tail(proc.stderr.decode('utf-8', 'replace'))}")
    return proc.stdout


def _scaled_size(info: MediaInfo, max_width: int) -> tuple[int, int]:
    w = min(info.width, max_width)
    h = max(2, int(round(info.height * w / info.width / 2.0)) * 2)
    return w - (w % 2), h


def extract_media_series(video_path: str | Path, decoder: str = "auto",
                         grid_hz: float = GRID_HZ) -> tuple[SignalSeries, SignalSeries, float]:
    """Decode a clip into normalized (audio RMS, mean luminance) series and its duration.

    Audio RMS is taken over consecutive ``1/grid_hz`` windows of the 16 kHz mono
    mix; luminance is the mean gray level of each decoded frame. Both series
    are cut to their common span. A clip without an audio stream gets an
    all-zero audio series.
    """
    path = Path(video_path)
    info = probe(path, decoder)
    exe = resolve_decoder(decoder)

    w, h = _scaled_size(info, 128)
    raw = _run_decoder([exe, "-v", "error", "-i", str(path), "-map", "0:v:0",
                        "-vf", f"scale={w}:{h}", "-pix_fmt", "gray", "-f", "rawvideo", "-"])
    frames = np.frombuffer(raw, dtype=np.uint8)
    n_frames = frames.size // (w * h)
    if n_frames == 0:
        raise MediaDecodeError(f"no video frames decoded from {path}")
    lum = frames[: n_frames * w * h].reshape(n_frames, w * h).mean(axis=1) / 255.0
    light_t = np.arange(n_frames) / info.fps

    if info.has_audio:
        pcm = np.frombuffer(_run_decoder([exe, "-v", "error", "-i", str(path), "-map", "0:a:0",
                                          "-ac", "1", "-ar", str(AUDIO_RATE), "-f", "s16le", "-"]),
                            dtype="<i2").astype(float) / 32768.0
        hop = int(round(AUDIO_RATE / grid_hz))
        n_win = max(pcm.size // hop, 1)
        pcm = np.pad(pcm, (0, max(0, n_win * hop - pcm.size)))
        rms = np.sqrt((pcm[: n_win * hop].reshape(n_win, hop) ** 2).mean(axis=1))
    else:
        n_win = int(math.floor(light_t[-1] * grid_hz + _EPS)) + 1
        rms = np.zeros(n_win)
    audio_t = np.arange(rms.size) / grid_hz

    end = min(audio_t[-1], light_t[-1])
    a_keep, l_keep = audio_t <= end + _EPS, light_t <= end + _EPS
    audio = SignalSeries(audio_t[a_keep], normalize(rms[a_keep]), "audio_amplitude", grid_hz)
    light = SignalSeries(light_t[l_keep], normalize(lum[l_keep]), "light_intensity", info.fps)
    duration = info.duration_s if info.duration_s > 0 else n_frames / info.fps
    return audio, light, duration


def extract_frames(video_path: str | Path, timestamps: Sequence[float], out_dir: str | Path,
                   decoder: str = "auto", max_width: int = 640, quality: int = 90) -> list[Path]:
    """Write the frame shown at each timestamp as ``frame_{index:06}.jpg``.

    Frames are streamed from the decoder one at a time, so memory stays
    bounded by a single frame.
    """
    from PIL import Image

    path = Path(video_path)
    info = probe(path, decoder)
    exe = resolve_decoder(decoder)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not timestamps:
        return []

    w, h = _scaled_size(info, max_width)
    frame_bytes = w * h * 3
    wanted: dict[int, list[int]] = {}
    for k, t in enumerate(timestamps):
        wanted.setdefault(int(math.floor(t * info.fps + 1e-6)), []).append(k)

    proc = subprocess.Popen([exe, "-v", "error", "-i", str(path), "-map", "0:v:0",
                             "-vf", f"scale={w}:{h}", "-pix_fmt", "rgb24", "-f", "rawvideo", "-"],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    written: dict[int, Path] = {}
    last = None
    idx = 0
    try:
        assert proc.stdout is not None
        while True:
            buf = proc.stdout.read(frame_bytes)
            if len(buf) < frame_bytes:
                break
            last = buf
            for k in wanted.pop(idx, []):
                written[k] = _save_frame(buf, w, h, out_dir, k, quality, Image)
            idx += 1
            if not wanted:
                break
    finally:
        proc.stdout.close()
        stderr = proc.stderr.read().decode("utf-8", "replace") if proc.stderr else ""
        proc.stderr.close()
        proc.wait()
    if last is None:
        raise MediaDecodeError(f"decoder failed: {_tail(stderr)}")
    # Timestamps past the last decodable frame reuse it.
    for ks in wanted.values():
        for k in ks:
            written[k] = _save_frame(last, w, h, out_dir, k, quality, Image)
    return [written[k] for k in range(len(timestamps))]


def _save_frame(buf: bytes, w: int, h: int, out_dir: Path, k: int, quality: int, Image) -> Path:
    target = out_dir / f"frame_{k:06}.jpg"
    Image.frombytes("RGB", (w, h), buf).save(target, format="JPEG", quality=quality)
    return target
