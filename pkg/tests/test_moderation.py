from __future__ import annotations

import json
from pathlib import Path

import pytest

import fixture_defs as fd
from conftest import make_replay_config
from gforge.corpus import Annotation, Category, load_corpus, sample_batch
from gforge.factors import FACTOR_CLASSES, UNCLASSIFIED
from gforge.gateway import RateLimited
from gforge.guidelines import AppendExample, Revision, parse_guideline, render
from gforge.metrics import STRICT
from gforge.moderation import (
    Discrepancy,
    EmptyReport,
    FailedRun,
    IterationError,
    IterationResult,
    ModerationReport,
    NotAwaitingReview,
    ReportItem,
    ReviewDecision,
    RunConfig,
    apply_review,
    classify_report_factors,
    extract_discrepancies,
    load_record,
    resume_run,
    run_iteration,
    run_loop,
)
from gforge.runstore import RunStore, revision_from_dict

SD = Category.SPECIFIC_DISEASE
MOD = Category.MODIFIER


def ann(start, end, mention="m", category=SD, doc="d"):
    return Annotation(doc, start, end, mention, category)


class ScriptedGateway:
    """Duck-typed Gateway: responses are a pure function of the prompt."""

    def __init__(self, responder):
        self.responder = responder
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        return self.responder(prompt)


# -- extract_discrepancies -----------------------------------------------------


def test_extract_identical_sets_empty():
    gold = [ann(0, 5)]
    assert extract_discrepancies(gold, gold, STRICT, "x" * 10) == []


def test_extract_category_mismatch():
    text = "abcdefghij"
    pred = [ann(0, 5, "abcde", MOD)]
    gold = [ann(0, 5, "abcde", SD)]
    items = extract_discrepancies(pred, gold, STRICT, text)
    assert [d.kind for d in items] == ["CategoryMismatch"]
    assert items[0].predicted is not None and items[0].gold is not None


def test_extract_disjoint_spans():
    text = "abcdefghijklmno"
    pred = [ann(0, 3, "abc")]
    gold = [ann(5, 8, "fgh")]
    items = extract_discrepancies(pred, gold, STRICT, text)
    assert sorted(d.kind for d in items) == ["FalseNegative", "FalsePositive"]
    fp = next(d for d in items if d.kind == "FalsePositive")
    assert fp.predicted is not None and fp.gold is None


def test_extract_context_window():
    text = "x" * 500
    pred = [ann(200, 210, "x" * 10)]
    items = extract_discrepancies(pred, [], STRICT, text, window=50)
    assert len(items[0].context) == 110  # 50 + span + 50
    assert items[0].context == text[150:260]


def test_extract_ordering_by_offset():
    text = "abcdefghijklmnopqrst"
    pred = [ann(10, 12, "kl"), ann(0, 2, "ab")]
    gold = [ann(5, 7, "fg")]
    items = extract_discrepancies(pred, gold, STRICT, text)
    starts = [d.anchor.start for d in items]
    assert starts == sorted(starts)


# -- classify_report_factors ---------------------------------------------------


def _report(factors):
    d = Discrepancy("FalsePositive", "d", ann(0, 1, "a"), None, "ctx")
    items = tuple(ReportItem(d, "c", f, "s") for f in factors)
    rev = Revision((AppendExample("x", "y"),), "r", "llm")
    return ModerationReport(items=items, proposed_revision=rev)


def test_classify_single_class():
    shares = classify_report_factors(_report([FACTOR_CLASSES[0]] * 4))
    assert shares[FACTOR_CLASSES[0]] == 1.0
    assert sum(shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_classify_two_thirds_one_third():
    shares = classify_report_factors(
        _report([FACTOR_CLASSES[0], FACTOR_CLASSES[0], FACTOR_CLASSES[1]])
    )
    assert shares[FACTOR_CLASSES[0]] == pytest.approx(2 / 3, abs=1e-12)
    assert shares[FACTOR_CLASSES[1]] == pytest.approx(1 / 3, abs=1e-12)
    assert sum(shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_classify_unknown_factor_is_unclassified():
    shares = classify_report_factors(_report(["A Novel Factor"]))
    assert shares[UNCLASSIFIED] == 1.0


def test_classify_empty_report():
    rev = Revision((AppendExample("x", "y"),), "r", "llm")
    with pytest.raises(EmptyReport):
        classify_report_factors(ModerationReport(items=(), proposed_revision=rev))


# -- run_iteration --------------------------------------------------------------


def _loop_corpus():
    return load_corpus([fd.LOOP_CORPUS_PATH])


def _base_guideline():
    return parse_guideline(fd.GUIDELINE_PATH.read_text(encoding="utf-8"))


def _config(tmp_path: Path, **overrides) -> RunConfig:
    return make_replay_config(tmp_path, overrides.pop("run_id", "r"), **overrides)


def test_run_iteration_gate_passes_without_report(tmp_path):
    corpus = _loop_corpus()
    revised = parse_guideline(
        render(_base_guideline()).replace(
            "Annotate the longest span", f"{fd.REVISION_MARKER}. Annotate the longest span"
        )
    )
    gw = ScriptedGateway(fd.scripted_response)
    batch = sample_batch(corpus, 2, fd.LOOP_SEED, 0)
    result = run_iteration(batch, corpus.gold, revised, _config(tmp_path), gw)
    assert result.gate_value == 1.0
    assert result.report is None
    assert result.discrepancies == ()
    assert gw.calls == 2  # annotator only, no moderator


def test_run_iteration_gate_fails_with_report(tmp_path):
    corpus = _loop_corpus()
    gw = ScriptedGateway(fd.scripted_response)
    batch = sample_batch(corpus, 2, fd.LOOP_SEED, 0)
    result = run_iteration(batch, corpus.gold, _base_guideline(), _config(tmp_path), gw)
    assert result.gate_value == 0.5
    assert result.report is not None
    assert result.report.proposed_revision.edits
    assert len(result.report.items) == len(result.discrepancies)
    assert {d.kind for d in result.discrepancies} == {
        "FalsePositive",
        "FalseNegative",
        "CategoryMismatch",
    }
    assert gw.calls == 4  # two annotator + analyze + update
    for mode_key, prf in result.per_doc_prf["1002"].items():
        assert 0.0 <= prf.f1 <= 1.0
    assert result.per_doc_prf["1002"]["strict"].f1 == 0.5


def test_run_iteration_baseline_mode_still_moderates_guideline(tmp_path):
    # With guideline prompting disabled the annotator prompt is the bare
    # baseline, but Phase 3 still analyzes against (and revises) the
    # loaded guideline.
    corpus = _loop_corpus()
    gw = ScriptedGateway(fd.scripted_response)
    batch = sample_batch(corpus, 2, fd.LOOP_SEED, 0)
    config = _config(tmp_path, use_guidelines=False)
    result = run_iteration(batch, corpus.gold, _base_guideline(), config, gw)
    assert result.gate_value == 0.5
    assert result.report is not None
    assert result.report.proposed_revision.edits


def test_run_iteration_default_threshold_is_paper_default(tmp_path):
    config = _config(tmp_path)
    assert config.gate_threshold == 0.8
    assert RunConfig(
        corpus_paths=("x",), guideline_path="y", backend=config.backend
    ).batch_size == 5


def test_run_iteration_partial_on_backend_failure(tmp_path):
    from dataclasses import replace

    corpus = _loop_corpus()
    seen = []

    def flaky(prompt):
        if len(seen) >= 1:
            raise RateLimited("nope")
        seen.append(prompt)
        return fd.scripted_response(prompt)

    gw = ScriptedGateway(flaky)
    batch = sample_batch(corpus, 2, fd.LOOP_SEED, 0)
    config = _config(tmp_path)
    # Sequential annotation so exactly the second document fails.
    config = replace(config, backend=replace(config.backend, max_concurrency=1))
    with pytest.raises(IterationError) as err:
        run_iteration(batch, corpus.gold, _base_guideline(), config, gw)
    partial = err.value.partial
    assert partial.partial is True
    assert len(partial.annotations) == 1
    assert batch[0].doc_id in partial.annotations


def test_iteration_result_serde_round_trip(tmp_path):
    corpus = _loop_corpus()
    gw = ScriptedGateway(fd.scripted_response)
    batch = sample_batch(corpus, 2, fd.LOOP_SEED, 0)
    result = run_iteration(batch, corpus.gold, _base_guideline(), _config(tmp_path), gw)
    data = json.loads(json.dumps(result.to_dict()))
    assert IterationResult.from_dict(data) == result


# -- run_loop (auto) -------------------------------------------------------------


def test_auto_replay_trajectory(tmp_path):
    record = run_loop(_config(tmp_path / "runs"))
    assert record.status == "Completed"
    assert tuple(it.gate_value for it in record.iterations) == fd.EXPECTED_GATES
    assert tuple(it.batch_index for it in record.iterations) == fd.EXPECTED_BATCHES
    assert (
        tuple(it.iteration_index for it in record.iterations) == fd.EXPECTED_ITER_INDICES
    )
    v0, v1, v2 = (it.guideline_version for it in record.iterations)
    assert v0 != v1 and v1 == v2
    assert record.iterations[0].applied_revision_version == v1
    assert record.iterations[1].applied_revision_version is None
    # Gate law: a report exists iff the recorded gate is under the threshold.
    for it in record.iterations:
        assert (it.report is not None) == (it.gate_value < 0.8)


def test_auto_replay_lineage_and_store(tmp_path):
    record = run_loop(_config(tmp_path / "runs", run_id="lineage"))
    store = RunStore.open(tmp_path / "runs", "lineage")
    v1 = record.iterations[-1].guideline_version
    v0 = record.iterations[0].guideline_version
    assert store.guidelines.lineage(v1) == [v1, v0]
    reloaded = store.guidelines.get(v1)
    assert fd.REVISION_MARKER in render(reloaded)


def test_empty_corpus_completes_with_zero_iterations(tmp_path):
    empty = tmp_path / "empty.pubtator"
    empty.write_text("", encoding="utf-8")
    config = make_replay_config(
        tmp_path / "runs", "empty", corpus_paths=(str(empty),)
    )
    record = run_loop(config)
    assert record.status == "Completed"
    assert record.iterations == []


def test_failed_run_persists_partial(tmp_path):
    truncated = tmp_path / "truncated.jsonl"
    lines = fd.AUTO_CASSETTE.read_text(encoding="utf-8").splitlines()
    truncated.write_text("\n".join(lines[:4]) + "\n", encoding="utf-8")
    config = make_replay_config(
        tmp_path / "runs", "doomed", cassette=truncated
    )
    with pytest.raises(FailedRun):
        run_loop(config)
    record = load_record(tmp_path / "runs", "doomed")
    assert record.status == "Failed"
    assert record.iterations[-1].partial is True
    # Earlier completed iteration is intact.
    assert record.iterations[0].gate_value == 0.5


def test_rerunning_same_id_rejected(tmp_path):
    from gforge.runstore import RunExists

    run_loop(_config(tmp_path / "runs", run_id="dup"))
    with pytest.raises(RunExists):
        run_loop(_config(tmp_path / "runs", run_id="dup"))


def test_resume_of_completed_run_is_identity(tmp_path):
    first = run_loop(_config(tmp_path / "runs", run_id="done"))
    again = resume_run(tmp_path / "runs", "done")
    assert json.dumps(first.to_dict(), sort_keys=True) == json.dumps(
        again.to_dict(), sort_keys=True
    )


def test_batch_plan_independent_of_prompting_mode(tmp_path):
    corpus = _loop_corpus()
    with_g = make_replay_config(tmp_path, "a", use_guidelines=True)
    without_g = make_replay_config(tmp_path, "b", use_guidelines=False)
    for offset in range(2):
        batch_a = sample_batch(corpus, with_g.batch_size, with_g.seed, offset)
        batch_b = sample_batch(corpus, without_g.batch_size, without_g.seed, offset)
        assert [d.doc_id for d in batch_a] == [d.doc_id for d in batch_b]


# -- hitl -------------------------------------------------------------------------


def _hitl_config(tmp_path: Path, run_id="hitl") -> RunConfig:
    return make_replay_config(tmp_path / "runs", run_id, review_mode="hitl")


def test_hitl_pauses_awaiting_review(tmp_path):
    record = run_loop(_hitl_config(tmp_path))
    assert record.status == "AwaitingReview"
    assert len(record.iterations) == 1
    assert record.iterations[0].report is not None
    assert record.iterations[0].review_decision is None


def test_hitl_approve_resumes_and_matches_auto(tmp_path):
    run_loop(_hitl_config(tmp_path))
    record = apply_review(tmp_path / "runs", "hitl", ReviewDecision("approve"))
    assert record.status == "Completed"
    assert tuple(it.gate_value for it in record.iterations) == fd.EXPECTED_GATES
    assert record.iterations[0].review_decision == "approve"
    v1 = record.iterations[0].applied_revision_version
    assert v1 is not None
    assert record.iterations[1].guideline_version == v1

    auto = run_loop(_config(tmp_path / "runs_auto", run_id="auto"))
    assert [it.guideline_version for it in auto.iterations] == [
        it.guideline_version for it in record.iterations
    ]


def test_hitl_reject_keeps_guideline(tmp_path):
    run_loop(_hitl_config(tmp_path))
    record = apply_review(
        tmp_path / "runs", "hitl", ReviewDecision("reject")
    )
    # Same batch re-annotated with the unchanged guideline: same flawed
    # output, gate fails again, pauses again.
    assert record.status == "AwaitingReview"
    assert len(record.iterations) == 2
    assert record.iterations[0].review_decision == "reject"
    assert record.iterations[0].applied_revision_version is None
    assert record.iterations[1].guideline_version == record.iterations[0].guideline_version


def test_hitl_edit_applies_human_revision(tmp_path):
    run_loop(_hitl_config(tmp_path))
    human = revision_from_dict({**fd.HUMAN_EDIT_JSON, "author": "human"})
    record = apply_review(
        tmp_path / "runs", "hitl", ReviewDecision("edit", revision=human)
    )
    assert record.status == "Completed"
    first = record.iterations[0]
    assert first.review_decision == "edit"
    assert first.review_revision is not None
    assert first.review_revision.author == "human"
    store = RunStore.open(tmp_path / "runs", "hitl")
    revised = store.guidelines.get(first.applied_revision_version)
    assert "reviewer" not in render(revised)  # rationale not part of content
    assert any(
        fd.REVISION_MARKER in e for s in revised.sections for e in s.examples
    )


def test_hitl_edit_unknown_section_keeps_awaiting(tmp_path):
    from gforge.guidelines import UnknownSection

    run_loop(_hitl_config(tmp_path))
    bad = Revision((AppendExample("no-such-section", "x"),), "r", "human")
    with pytest.raises(UnknownSection):
        apply_review(tmp_path / "runs", "hitl", ReviewDecision("edit", revision=bad))
    record = load_record(tmp_path / "runs", "hitl")
    assert record.status == "AwaitingReview"
    assert record.iterations[0].review_decision is None


def test_apply_review_requires_awaiting(tmp_path):
    run_loop(_config(tmp_path / "runs", run_id="done"))
    with pytest.raises(NotAwaitingReview):
        apply_review(tmp_path / "runs", "done", ReviewDecision("approve"))


def test_hitl_max_iterations_advances_after_final_revision(tmp_path):
    config = make_replay_config(
        tmp_path / "runs", "budget", review_mode="hitl", max_iterations_per_batch=1
    )
    run_loop(config)
    record = apply_review(tmp_path / "runs", "budget", ReviewDecision("approve"))
    # Batch 0 had its single allowed iteration; the approved revision is
    # still applied and batch 1 runs under it.
    assert record.status == "Completed"
    assert tuple(it.batch_index for it in record.iterations) == (0, 1)
    assert record.iterations[0].applied_revision_version is not None
    assert (
        record.iterations[1].guideline_version
        == record.iterations[0].applied_revision_version
    )


def test_review_conflict_after_partial_review_crash(tmp_path):
    """A crash between recording the decision and advancing state leaves
    the run AwaitingReview with a recorded decision; only the same
    decision may be re-posted."""
    from gforge.moderation import ReviewConflict

    class Boom(BaseException):
        pass

    run_loop(_hitl_config(tmp_path))
    writes = {"n": 0}

    def crash_on_second_write():
        writes["n"] += 1
        if writes["n"] >= 2:
            raise Boom()

    with pytest.raises(Boom):
        apply_review(
            tmp_path / "runs", "hitl", ReviewDecision("approve"),
            on_write=crash_on_second_write,
        )
    record = load_record(tmp_path / "runs", "hitl")
    assert record.status == "AwaitingReview"
    assert record.iterations[0].review_decision == "approve"
    with pytest.raises(ReviewConflict):
        apply_review(tmp_path / "runs", "hitl", ReviewDecision("reject"))
    resumed = apply_review(tmp_path / "runs", "hitl", ReviewDecision("approve"))
    assert resumed.status == "Completed"
