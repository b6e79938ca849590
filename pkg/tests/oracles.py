"""Brute-force reference implementations, written independently of the package.

They share no code with ``stylecast`` beyond the data types, so a bug in a
production routine cannot hide in its own oracle.
"""

import math

CATEGORY_ORDER = ("talk_show", "humorous_commentary", "funny_animal", "daily_life_jokes", "comedy_skits")


def global_argmax(scores):
    """Index of the first maximum."""
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


def cosine(a, b):
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)


def classify_bruteforce(target, labelled, threshold=0.15):
    """(category, sums) by summed cosine per category; ``other`` below mean ``threshold``."""
    sims = {c: [] for c in CATEGORY_ORDER}
    for vec, cat in labelled:
        sims[cat].append(max(-1.0, min(1.0, cosine(target, vec))))
    sums = {c: math.fsum(v) for c, v in sims.items()}
    top = max(sums.values())
    best = next(c for c in CATEGORY_ORDER if sums[c] == top)
    mean = sums[best] / len(sims[best]) if sims[best] else 0.0
    return ("other" if mean < threshold else best), sums


def top_k_bruteforce(likes, k):
    """Indices of the first ``k`` items of a stable descending sort by likes."""
    decorated = sorted(enumerate(likes), key=lambda p: (-p[1], p[0]))
    return [i for i, _ in decorated[:k]]


def frame_count_bruteforce(duration, windows, hi=10.0, lo=0.5):
    """Sum of floor(len * rate) over the tiling implied by ``windows``.

    Walks the timeline in 1 ms ticks to find the segment boundaries, so it
    does not reuse the interval arithmetic of the production tiler. Inputs
    must be multiples of 1 ms.
    """
    ticks = int(round(duration * 1000))
    marks = [False] * ticks
    for s, e in windows:
        for t in range(max(0, int(round(s * 1000))), min(ticks, int(round(e * 1000)))):
            marks[t] = True
    total, run_start = 0, 0
    for t in range(1, ticks + 1):
        if t == ticks or marks[t] != marks[run_start]:
            length = (t - run_start) / 1000.0
            total += math.floor(length * (hi if marks[run_start] else lo) + 1e-9)
            run_start = t
    return total


def scan_runs(times, values, theta, step):
    """Half-open runs where value > theta, closed one step after the last point."""
    runs, start = [], None
    for i, v in enumerate(values):
        if v > theta and start is None:
            start = i
        if start is not None and (v <= theta or i == len(values) - 1):
            last = i - 1 if v <= theta else i
            runs.append((times[start], times[last] + step))
            start = None
    return runs
