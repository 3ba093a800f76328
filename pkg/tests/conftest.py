from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

import fixture_defs as fd  # noqa: E402
from gforge.gateway import BackendConfig  # noqa: E402
from gforge.moderation import RunConfig  # noqa: E402


@pytest.fixture
def loop_corpus_path() -> Path:
    return fd.LOOP_CORPUS_PATH


@pytest.fixture
def guideline_path() -> Path:
    return fd.GUIDELINE_PATH


def make_replay_config(
    run_root: Path,
    run_id: str,
    review_mode: str = "auto",
    cassette: Path | None = None,
    **overrides,
) -> RunConfig:
    cassette = cassette or (
        fd.HITL_CASSETTE if review_mode == "hitl" else fd.AUTO_CASSETTE
    )
    defaults = dict(
        corpus_paths=(str(fd.LOOP_CORPUS_PATH),),
        guideline_path=str(fd.GUIDELINE_PATH),
        backend=BackendConfig(
            kind="replay", model=fd.LOOP_MODEL, cassette_path=str(cassette)
        ),
        run_root=str(run_root),
        run_id=run_id,
        batch_size=fd.LOOP_BATCH_SIZE,
        gate_threshold=fd.LOOP_THRESHOLD,
        seed=fd.LOOP_SEED,
        review_mode=review_mode,
    )
    defaults.update(overrides)
    return RunConfig(**defaults)
