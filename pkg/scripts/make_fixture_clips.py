"""Regenerate the tiny synthetic clips used by the mock platform fixtures.

Each clip is dark and quiet except for one loud, bright burst, so highlight
detection has something to find. Output goes to
``tests/fixtures/platform/<platform>/<video_id>/video.mp4``.
"""

import argparse
import subprocess
from pathlib import Path

from stylecast.media import resolve_decoder

CLIPS = {
    # video_id: (platform, duration_s, burst_start_s, burst_end_s, tone_hz)
    "dy001": ("douyin", 8.0, 3.0, 4.0, 440),
    "dy002": ("douyin", 6.0, 1.5, 2.5, 660),
    "yt001": ("youtube", 10.0, 5.0, 6.5, 550),
}


def make_clip(exe: str, out: Path, duration: float, start: float, end: float, tone: int) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    cmd = [
        exe, "-y", "-v", "error",
        "-f", "lavfi", "-i", f"color=c=0x303030:s=160x120:r=10:d={duration}",
        "-f", "lavfi", "-i", f"sine=frequency={tone}:sample_rate=16000:duration={duration}",
        "-filter_complex",
        f"[0:v]geq=lum='if(between(T,{start},{end}),235,48)':cb=128:cr=128[v];"
        f"[1:a]volume='if(between(t,{start},{end}),1.0,0.05)':eval=frame[a]",
        "-map", "[v]", "-map", "[a]",
        "-c:v", "libx264", "-preset", "veryfast", "-crf", "32", "-threads", "1", "-pix_fmt", "yuv420p",
        "-c:a", "aac", "-b:a", "32k",
        "-map_metadata", "-1", "-fflags", "+bitexact", "-flags:v", "+bitexact", "-flags:a", "+bitexact",
        str(out),
    ]
    subprocess.run(cmd, check=True)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default=Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "platform",
                    type=Path)
    args = ap.parse_args()
    exe = resolve_decoder("auto")
    for vid, (platform, duration, start, end, tone) in CLIPS.items():
        target = args.root / platform / vid / "video.mp4"
        make_clip(exe, target, duration, start, end, tone)
        print(f"{target} ({target.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
