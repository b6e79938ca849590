"""Check that per-system table totals are the mean of their three dimension scores.

Rows are read from a CSV with columns platform,model,orig,rel,style,total.
Without an argument the built-in rows are used.
"""

import argparse
import csv
import sys

from stylecast.scoring import total_score

BUILTIN = [
    ("douyin", "system-a", 1.58, 8.24, 1.1, 3.64),
    ("douyin", "system-b", 1.56, 7.49, 5.44, 4.83),
    ("douyin", "system-c", 2.11, 8.48, 6.07, 5.55),
    ("douyin", "system-d", 0.7, 7.5, 1.0, 3.06),
    ("youtube", "system-a", 3.12, 8.67, 1.7, 4.5),
    ("youtube", "system-b", 3.08, 4.9, 6.77, 4.92),
    ("youtube", "system-c", 3.26, 7.67, 5.32, 5.42),
    ("youtube", "system-d", 2.78, 4.29, 5.0, 4.02),
]


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [(r["platform"], r["model"], float(r["orig"]), float(r["rel"]), float(r["style"]), float(r["total"]))
                for r in csv.DictReader(fh)]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", nargs="?")
    ap.add_argument("--tol", type=float, default=0.01)
    args = ap.parse_args()
    rows = read_rows(args.csv) if args.csv else BUILTIN
    bad = 0
    for platform, model, o, r, s, printed in rows:
        mean = total_score(o, r, s)
        ok = abs(mean - printed) <= args.tol
        bad += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {platform:8} {model:16} mean={mean:.4f} printed={printed:.2f} "
              f"diff={mean - printed:+.4f}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
