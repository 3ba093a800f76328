"""Acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE PASS`` line (visible with
``pytest -s``); a failing criterion fails its test. Two criteria are
environment-gated and skip cleanly: the official-corpus count check
(set ``NCBI_DISEASE_DIR`` to a directory holding the corpus files) and
the live smoke test (set ``GFORGE_LIVE_ENDPOINT`` and ``GFORGE_API_KEY``).
"""

from __future__ import annotations

import json
import os
import random
import time
from pathlib import Path

import pytest

import fixture_defs as fd
from conftest import make_replay_config
from gforge.corpus import load_corpus, parse_pubtator, serialize_pubtator
from gforge.metrics import (
    ALL_MODES,
    SOFT,
    SOFT_NO_CATEGORY,
    STRICT,
    STRICT_NO_CATEGORY,
    PRF,
    match_annotations,
    score,
)
from gforge.moderation import ReviewDecision, apply_review, resume_run, run_loop
from gforge.runstore import RunStore
from gforge.tables import format_score
from oracle import brute_force_max_matching, random_instance

N_ORACLE_INSTANCES = 1000
_ORACLE_SEED = 20240811


def _oracle_instances():
    rng = random.Random(_ORACLE_SEED)
    return [random_instance(rng) for _ in range(N_ORACLE_INSTANCES)]


def test_matching_oracle_equivalence():
    """1,000 random instances, all four modes, exact equality, < 10 s."""
    instances = _oracle_instances()
    started = time.monotonic()
    for pred, gold in instances:
        for mode in ALL_MODES:
            got = len(match_annotations(pred, gold, mode).pairs)
            expected = brute_force_max_matching(pred, gold, mode)
            assert got == expected, (pred, gold, mode)
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"
    print(
        f"\nACCEPTANCE PASS: matching oracle ({N_ORACLE_INSTANCES} instances x 4 modes, "
        f"{elapsed:.1f}s)"
    )


def test_ordering_invariants():
    """F1 orderings over the same 1,000 instances, exact comparisons."""
    for pred, gold in _oracle_instances():
        f1 = {mode: score(match_annotations(pred, gold, mode)).f1 for mode in ALL_MODES}
        assert f1[SOFT] >= f1[STRICT]
        assert f1[SOFT_NO_CATEGORY] >= f1[STRICT_NO_CATEGORY]
        assert f1[STRICT_NO_CATEGORY] >= f1[STRICT]
        assert f1[SOFT_NO_CATEGORY] >= f1[SOFT]
    print("\nACCEPTANCE PASS: ordering invariants (soft >= strict, w/o category >= with)")


def test_score_arithmetic():
    """F1 vs harmonic mean to 1e-12; the 0.38/0.35 row renders F1 0.36."""
    rng = random.Random(7)
    checked = 0
    for _ in range(2000):
        n_pred = rng.randrange(0, 60)
        n_gold = rng.randrange(0, 60)
        matched = rng.randrange(0, min(n_pred, n_gold) + 1) if min(n_pred, n_gold) else 0
        prf = PRF.from_counts(matched, n_pred, n_gold)
        if prf.precision > 0 and prf.recall > 0:
            harmonic = 2 * prf.precision * prf.recall / (prf.precision + prf.recall)
            assert abs(prf.f1 - harmonic) < 1e-12
            checked += 1
    assert checked > 500
    baseline_row = PRF.from_counts(133, 350, 380)  # P = 0.38, R = 0.35 exactly
    assert format_score(baseline_row.precision) == "0.38"
    assert format_score(baseline_row.recall) == "0.35"
    assert format_score(baseline_row.f1) == "0.36"
    print("\nACCEPTANCE PASS: score arithmetic (harmonic mean to 1e-12; 0.38/0.35 -> 0.36)")


def test_round_trip_on_shipped_fixtures():
    fixtures = [
        fd.LOOP_CORPUS_PATH,
        fd.SINGLE_DOC_PATH,
        fd.EVAL_GOLD_PATH,
        fd.EVAL_PRED_PATH,
    ]
    for path in fixtures:
        text = path.read_text(encoding="utf-8")
        once = parse_pubtator(text)
        serialized = serialize_pubtator(once)
        twice = parse_pubtator(serialized)
        assert serialize_pubtator(twice) == serialized
        assert [d.doc_id for d in twice.documents] == [d.doc_id for d in once.documents]
        assert twice.gold == once.gold
    print(f"\nACCEPTANCE PASS: parse/serialize round-trip on {len(fixtures)} shipped fixtures")


def test_official_corpus_counts():
    """Gated on the externally downloaded NCBI Disease corpus."""
    corpus_dir = os.environ.get("NCBI_DISEASE_DIR")
    if not corpus_dir:
        pytest.skip("NCBI_DISEASE_DIR not set; official-corpus check skipped")
    files = sorted(Path(corpus_dir).glob("*.txt"))
    assert files, f"no corpus files in {corpus_dir}"
    corpus = load_corpus(files)
    assert corpus.n_documents == 793
    assert corpus.n_annotations == 6892
    print("\nACCEPTANCE PASS: official corpus parses to 793 documents, 6892 mentions")


def _no_network(monkeypatch):
    import httpx

    def refuse(*args, **kwargs):
        raise AssertionError("replay run attempted network I/O")

    monkeypatch.setattr(httpx, "post", refuse)


def _normalized(record_dict: dict) -> str:
    data = json.loads(json.dumps(record_dict))
    data["config"]["run_root"] = "<root>"
    return json.dumps(data, sort_keys=True)


def test_replay_trajectory(tmp_path, monkeypatch):
    """Shipped cassettes reproduce the hand-computed trajectories exactly,
    bit-identically across two consecutive runs, offline, < 5 s."""
    _no_network(monkeypatch)
    started = time.monotonic()

    records = []
    for name in ("first", "second"):
        record = run_loop(make_replay_config(tmp_path / name, "acceptance-auto"))
        records.append(record)
    first, second = records
    assert _normalized(first.to_dict()) == _normalized(second.to_dict())

    assert first.status == "Completed"
    gates = tuple(it.gate_value for it in first.iterations)
    assert gates == fd.EXPECTED_GATES
    assert tuple(it.batch_index for it in first.iterations) == fd.EXPECTED_BATCHES
    for it in first.iterations:
        assert (it.report is not None) == (it.gate_value < fd.LOOP_THRESHOLD)
        assert (it.applied_revision_version is not None) == (
            it.gate_value < fd.LOOP_THRESHOLD
        )
    v0 = first.iterations[0].guideline_version
    v1 = first.iterations[0].applied_revision_version
    assert [it.guideline_version for it in first.iterations] == [v0, v1, v1]
    store = RunStore.open(tmp_path / "first", "acceptance-auto")
    assert store.guidelines.lineage(v1) == [v1, v0]

    # Byte-level comparison of the persisted trajectories (config.json
    # embeds the differing run roots; the lock file is incidental).
    def snapshot(root: Path) -> dict[str, str]:
        base = root / "acceptance-auto"
        return {
            str(p.relative_to(base)): p.read_text(encoding="utf-8")
            for p in sorted(base.rglob("*"))
            if p.is_file() and p.name not in ("config.json", "run.lock")
        }

    assert snapshot(tmp_path / "first") == snapshot(tmp_path / "second")

    # The hitl cassette reproduces the pause and the approve path.
    hitl = run_loop(
        make_replay_config(tmp_path / "hitl", "acceptance-hitl", review_mode="hitl")
    )
    assert hitl.status == "AwaitingReview"
    assert [it.gate_value for it in hitl.iterations] == [fd.EXPECTED_GATES[0]]
    resumed = apply_review(
        tmp_path / "hitl", "acceptance-hitl", ReviewDecision("approve")
    )
    assert resumed.status == "Completed"
    assert tuple(it.gate_value for it in resumed.iterations) == fd.EXPECTED_GATES
    assert [it.guideline_version for it in resumed.iterations] == [v0, v1, v1]

    elapsed = time.monotonic() - started
    assert elapsed < 5.0, f"replay trajectories took {elapsed:.1f}s"
    print(
        f"\nACCEPTANCE PASS: replay trajectory (auto + hitl, gates {gates}, "
        f"bit-identical, offline, {elapsed:.1f}s)"
    )


class SimulatedCrash(BaseException):
    """Raised by the write hook; deliberately not an Exception subclass so
    no engine error handling can swallow it, mimicking a hard kill."""


def _crash_after(n: int):
    count = {"writes": 0}

    def hook():
        count["writes"] += 1
        if count["writes"] >= n:
            raise SimulatedCrash(f"killed after write {n}")

    return hook


def test_crash_resumability(tmp_path):
    """Kill after every persisted transition; resume; identical record."""
    counter = {"writes": 0}

    def counting_hook():
        counter["writes"] += 1

    baseline = run_loop(
        make_replay_config(tmp_path / "base", "crash-run"), on_write=counting_hook
    )
    total_writes = counter["writes"]
    assert baseline.status == "Completed"
    expected = _normalized(baseline.to_dict())

    for n in range(1, total_writes + 1):
        root = tmp_path / f"kill-{n:02d}"
        try:
            run_loop(make_replay_config(root, "crash-run"), on_write=_crash_after(n))
            crashed = False
        except SimulatedCrash:
            crashed = True
        assert crashed, f"write {n} of {total_writes} did not crash"
        resumed = resume_run(root, "crash-run")
        assert resumed.status == "Completed", f"resume after write {n} incomplete"
        assert _normalized(resumed.to_dict()) == expected, f"divergence after write {n}"

    # Also kill inside the review transaction of the hitl path.
    hitl_root = tmp_path / "hitl"
    run_loop(make_replay_config(hitl_root, "crash-run", review_mode="hitl"))
    review_writes = {"writes": 0}

    def count_review():
        review_writes["writes"] += 1

    done = apply_review(
        hitl_root, "crash-run", ReviewDecision("approve"), on_write=count_review
    )
    assert done.status == "Completed"
    reference = _normalized(done.to_dict())
    for n in range(1, review_writes["writes"] + 1):
        root = tmp_path / f"hitl-kill-{n:02d}"
        run_loop(make_replay_config(root, "crash-run", review_mode="hitl"))
        try:
            apply_review(root, "crash-run", ReviewDecision("approve"), on_write=_crash_after(n))
            crashed = False
        except SimulatedCrash:
            crashed = True
        assert crashed
        # Recovery mirrors the operator: a run still AwaitingReview gets the
        # same decision re-posted (idempotent); one already past the review
        # transition just resumes.
        store = RunStore.open(root, "crash-run")
        if store.state().status == "AwaitingReview":
            record = apply_review(root, "crash-run", ReviewDecision("approve"))
        else:
            record = resume_run(root, "crash-run")
        assert record.status == "Completed"
        assert _normalized(record.to_dict()) == reference, f"hitl divergence at {n}"

    print(
        f"\nACCEPTANCE PASS: crash resumability ({total_writes} auto kill points, "
        f"{review_writes['writes']} review kill points)"
    )


def test_live_results_are_not_targets():
    """Published live-model scores are model- and time-dependent; nothing
    in this suite asserts them. Only structure is checked live, and only
    when an operator supplies an endpoint and key."""
    assert not os.environ.get("GFORGE_ASSERT_PAPER_SCORES"), (
        "live-model scores must never become acceptance targets"
    )
    print(
        "\nACCEPTANCE PASS: non-reproducibility statement (live scores are not targets; "
        "smoke test is optional and structural)"
    )


@pytest.mark.skipif(
    not (os.environ.get("GFORGE_LIVE_ENDPOINT") and os.environ.get("GFORGE_API_KEY")),
    reason="live smoke test requires GFORGE_LIVE_ENDPOINT and GFORGE_API_KEY",
)
def test_live_smoke_structural():
    from gforge.gateway import BackendConfig, Gateway
    from gforge.guidelines import parse_guideline
    from gforge.metrics import STRICT
    from gforge.moderation import RunConfig, run_iteration

    corpus = load_corpus([fd.SINGLE_DOC_PATH])
    config = RunConfig(
        corpus_paths=(str(fd.SINGLE_DOC_PATH),),
        guideline_path=str(fd.GUIDELINE_PATH),
        backend=BackendConfig(
            kind="live", endpoint=os.environ["GFORGE_LIVE_ENDPOINT"]
        ),
        batch_size=1,
        gate_threshold=1.0,  # force the moderation path for structure checks
    )
    gateway = Gateway(config.backend)
    guideline = parse_guideline(fd.GUIDELINE_PATH.read_text(encoding="utf-8"))
    result = run_iteration(
        corpus.documents[:1], corpus.gold, guideline, config, gateway
    )
    assert sum(len(a) for a in result.annotations.values()) >= 1
    if result.report is not None:
        assert result.report.items
        assert result.report.proposed_revision.edits
    print("\nACCEPTANCE PASS: live smoke (structural only)")
