"""Run every pipeline stage on the fixture manifest with mock providers, then score.

Prints the stage output and a digest of the resulting workdir, so two runs
(or two machines) can be compared by eye.
"""

import argparse
import hashlib
import sys
import tempfile
from pathlib import Path

from stylecast.cli import main as cli

FIXTURE_CONFIG = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "stylecast.toml"
STAGES = ("ingest", "preprocess", "describe", "classify", "generate", "score")


def tree_sha256(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root)
        if rel.parts[0] == "logs":
            continue
        h.update(rel.as_posix().encode() + b"\0" + hashlib.sha256(path.read_bytes()).digest())
    return h.hexdigest()


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, default=None, help="default: a fresh temporary directory")
    ap.add_argument("--config", type=Path, default=FIXTURE_CONFIG)
    ap.add_argument("--per-style", action="store_true", help="generate one comment per style label")
    args = ap.parse_args()
    workdir = args.workdir or Path(tempfile.mkdtemp(prefix="stylecast-"))
    for stage in STAGES:
        argv = [stage, "--config", str(args.config), "--workdir", str(workdir)]
        if stage == "generate" and args.per_style:
            argv.append("--per-style")
        print(f"== {stage}")
        code = cli(argv)
        if code:
            return code
    print(f"workdir {workdir}")
    print(f"tree sha256 {tree_sha256(workdir)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
