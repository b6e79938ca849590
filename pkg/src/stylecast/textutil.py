"""Text helpers: length counting, tokenization, fingerprints and stable JSON io."""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from pathlib import Path
from typing import Any

# CJK unified ideographs, extension A, compatibility ideographs, kana, hangul.
_CJK = "㐀-䶿一-鿿豈-﫿぀-ヿ가-힯"
# Full-score comment length bands: words for English, characters for Chinese.
LENGTH_BANDS = {"en": (63, 72), "zh": (25, 35)}
LENGTH_UNITS = {"en": "words", "zh": "characters"}

_TOKEN_RE = re.compile(rf"[{_CJK}]|[^\W{_CJK}]+(?:'[^\W{_CJK}]+)*", re.UNICODE)


def count_length(text: str, language: str) -> int:
    """Words for English, non-whitespace code points for Chinese."""
    if language == "en":
        return len(text.split())
    if language == "zh":
        return sum(1 for ch in text if not ch.isspace())
    raise ValueError(f"unknown language: {language}")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; every CJK character is its own token."""
    return _TOKEN_RE.findall(text.lower())


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def fingerprint(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"


def write_json(path: str | os.PathLike, obj: Any) -> None:
    """Atomically write ``obj`` as pretty UTF-8 JSON; skip the write if bytes are unchanged."""
    write_text(path, dumps(obj))


def write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    data = text.encode("utf-8")
    if path.exists() and path.read_bytes() == data:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_json(path: str | os.PathLike) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_prompt(version: str) -> tuple[str, str]:
    """(system, user) template text of a versioned prompt in ``stylecast/prompts/``."""
    from importlib import resources

    try:
        raw = resources.files("stylecast").joinpath("prompts").joinpath(f"{version}.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValueError(f"unknown prompt template: {version}") from None
    _, _, rest = raw.partition("[system]\n")
    system, _, user = rest.partition("[user]\n")
    return system.strip(), user.rstrip("\n")
