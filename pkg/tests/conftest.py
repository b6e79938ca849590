import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
UPDATE_GOLDENS = os.environ.get("STYLECAST_UPDATE_GOLDENS") == "1"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def check_golden(name: str, text: str) -> None:
    """Byte-exact comparison against ``tests/golden/<name>``.

    Set ``STYLECAST_UPDATE_GOLDENS=1`` to rewrite the files after an
    intentional change, then review the diff.
    """
    path = GOLDEN / name
    if UPDATE_GOLDENS or not path.exists():
        if not UPDATE_GOLDENS:
            pytest.fail(f"missing golden {path}; rerun with STYLECAST_UPDATE_GOLDENS=1")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(text.encode("utf-8"))
    assert path.read_bytes().decode("utf-8") == text


PIPELINE_STAGES = ("ingest", "preprocess", "describe", "classify", "generate")


def run_cli(*argv: str, workdir: Path) -> int:
    from stylecast.cli import main

    return main([*argv, "--config", str(FIXTURES / "stylecast.toml"), "--workdir", str(workdir)])


def run_mock_pipeline(workdir: Path) -> None:
    for stage in PIPELINE_STAGES:
        code = run_cli(stage, workdir=workdir)
        assert code == 0, f"{stage} exited {code}"


def tree_digest(root: Path, exclude: tuple[str, ...] = ("logs",)) -> str:
    """One ``sha256  path`` line per file under ``root``, sorted, skipping top-level ``exclude`` dirs."""
    import hashlib

    lines = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root)
        if rel.parts[0] in exclude:
            continue
        lines.append(f"{hashlib.sha256(path.read_bytes()).hexdigest()}  {rel.as_posix()}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def clean_env(monkeypatch):
    monkeypatch.delenv("STYLECAST_WORKDIR", raising=False)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)
