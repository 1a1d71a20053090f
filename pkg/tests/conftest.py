import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import corpus  # noqa: E402
from lyromel.cli import main  # noqa: E402

LYRICS = "twinkle twinkle little star how I wonder what you are up above the world so high"


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def run_pipeline(root: Path, seed: int = 7, files: int = 30, epochs: int = 3, hidden: int = 8) -> Path:
    """build-dataset -> train-embeddings -> train -> generate -> evaluate under ``root``."""
    midi = corpus.write_corpus(root / "midi", files, seed=seed)
    steps = [
        ("build-dataset", "--in", midi, "--out", root / "ds", "--seed", seed),
        ("train-embeddings", "--dataset", root / "ds", "--out", root / "emb", "--seed", seed),
        ("train", "--dataset", root / "ds", "--embeddings", root / "emb", "--out", root / "run",
         "--seed", seed, "--epochs", epochs, "--hidden", hidden, "--batch", 8),
        ("generate", "--model", root / "run", "--embeddings", root / "emb", "--lyrics", LYRICS,
         "--count", 2, "--seed", seed, "--out", root / "gen", "--emit-raw"),
        ("evaluate", "--model", root / "run", "--embeddings", root / "emb", "--dataset", root / "ds",
         "--seed", seed, "--out", root / "eval", "--samples", 500),
    ]
    for step in steps:
        rc = run_cli(*step)
        if rc != 0:
            raise AssertionError(f"{step[0]} exited with {rc}")
    return root


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipeline"))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line; the test still asserts afterwards."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} | {name} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
