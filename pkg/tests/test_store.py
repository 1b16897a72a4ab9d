"""Durable response store: assignment, recording, idempotency, export."""

import pytest

from aicscale.design import Method, build_design
from aicscale.store import (
    Choice,
    DuplicateConflict,
    LimitReached,
    Response,
    ResponseStore,
    StoreError,
    StudyComplete,
    read_responses_csv,
    render_responses_csv,
    summarize_responses,
    write_responses_csv,
)


@pytest.fixture()
def designs(manifest_small):
    # 2 sources x (2 codecs x 12 + 4 cross) = 56 triplets per method
    return [build_design(manifest_small, m, cross_count=4, batch_size=28, seed=5)
            for m in (Method.BTC, Method.PTC)]


@pytest.fixture()
def store(designs, tmp_path):
    s = ResponseStore(tmp_path, designs, target_coverage=2,
                      max_batches_per_participant=2, durable=False)
    yield s
    s.close()


def _answer_batch(store, participant, batch, choice=Choice.LEFT):
    toggles = 2 if participant.method == Method.PTC else None
    for i, tid in enumerate(batch.questions):
        store.record(Response(tid, batch.id, participant.id, choice,
                              response_time_ms=900 + i,
                              toggle_count=toggles, submitted_at=1000.0 + i))


class TestAssignment:
    def test_enroll_assigns_unique_ids_and_tokens(self, store):
        a = store.enroll(Method.BTC)
        b = store.enroll(Method.BTC)
        assert a.id != b.id
        assert a.token != b.token
        assert store.participant_by_token(b.token) is b

    def test_unknown_token(self, store):
        with pytest.raises(StoreError):
            store.participant_by_token("nope")

    def test_least_covered_batch_first(self, store):
        a = store.enroll(Method.BTC)
        b = store.enroll(Method.BTC)
        first = store.next_batch(a.id)
        second = store.next_batch(b.id)
        assert first.id != second.id  # both batches at count 0 -> spread out

    def test_no_repeat_for_same_participant(self, store):
        p = store.enroll(Method.BTC)
        seen = {store.next_batch(p.id).id, store.next_batch(p.id).id}
        assert len(seen) == 2

    def test_batch_limit(self, store):
        p = store.enroll(Method.BTC)
        store.next_batch(p.id)
        store.next_batch(p.id)
        with pytest.raises(LimitReached):
            store.next_batch(p.id)

    def test_study_complete_at_target_coverage(self, store):
        # target_coverage=2 and 2 batches -> 4 assignments fill the method
        for _ in range(2):
            p = store.enroll(Method.PTC)
            store.next_batch(p.id)
            store.next_batch(p.id)
        late = store.enroll(Method.PTC)
        with pytest.raises(StudyComplete):
            store.next_batch(late.id)

    def test_methods_tracked_separately(self, store):
        p_btc = store.enroll(Method.BTC)
        p_ptc = store.enroll(Method.PTC)
        assert store.next_batch(p_btc.id).method == Method.BTC
        assert store.next_batch(p_ptc.id).method == Method.PTC


class TestRecording:
    def test_response_accepted(self, store):
        p = store.enroll(Method.BTC)
        batch = store.next_batch(p.id)
        ack = store.record(Response(batch.questions[0], batch.id, p.id,
                                    Choice.RIGHT, 700.0))
        assert ack.accepted and not ack.duplicate

    def test_identical_resubmission_is_idempotent(self, store):
        p = store.enroll(Method.BTC)
        batch = store.next_batch(p.id)
        r = Response(batch.questions[0], batch.id, p.id, Choice.NOT_SURE, 700.0)
        store.record(r)
        ack = store.record(r)
        assert ack.duplicate
        assert len(store.export_rows()) == 1

    def test_conflicting_resubmission_rejected(self, store):
        p = store.enroll(Method.BTC)
        batch = store.next_batch(p.id)
        store.record(Response(batch.questions[0], batch.id, p.id,
                              Choice.LEFT, 700.0))
        with pytest.raises(DuplicateConflict):
            store.record(Response(batch.questions[0], batch.id, p.id,
                                  Choice.RIGHT, 900.0))

    def test_unassigned_batch_rejected(self, store, designs):
        p = store.enroll(Method.BTC)
        other = designs[0].batches[1]
        with pytest.raises(StoreError, match="not assigned"):
            store.record(Response(other.questions[0], other.id, p.id,
                                  Choice.LEFT, 700.0))

    def test_foreign_triplet_rejected(self, store, designs):
        p = store.enroll(Method.BTC)
        batch = store.next_batch(p.id)
        foreign = next(tid for b in designs[0].batches
                       for tid in b.questions if tid not in batch.questions)
        with pytest.raises(StoreError, match="not part of"):
            store.record(Response(foreign, batch.id, p.id, Choice.LEFT, 700.0))

    def test_ptc_requires_at_least_one_toggle(self, store):
        p = store.enroll(Method.PTC)
        batch = store.next_batch(p.id)
        with pytest.raises(StoreError, match="toggle_count"):
            store.record(Response(batch.questions[0], batch.id, p.id,
                                  Choice.LEFT, 700.0, toggle_count=0))

    def test_ptc_skip_needs_no_toggle(self, store):
        p = store.enroll(Method.PTC)
        batch = store.next_batch(p.id)
        ack = store.record(Response(batch.questions[0], batch.id, p.id,
                                    Choice.SKIP, 700.0, toggle_count=0))
        assert ack.accepted

    def test_completion_tracked(self, store):
        p = store.enroll(Method.BTC)
        batch = store.next_batch(p.id)
        _answer_batch(store, p, batch)
        assert batch.id in store.participants[p.id].completed


class TestDurability:
    def test_state_survives_reopen(self, designs, tmp_path):
        s1 = ResponseStore(tmp_path, designs, target_coverage=2, durable=False)
        p = s1.enroll(Method.BTC, token="tok-fixed")
        batch = s1.next_batch(p.id)
        _answer_batch(s1, p, batch)
        s1.close()

        s2 = ResponseStore(tmp_path, designs, target_coverage=2, durable=False)
        assert s2.participant_by_token("tok-fixed").id == p.id
        assert s2.assignment_counts[batch.id] == 1
        assert len(s2.export_rows()) == len(batch.questions)
        assert batch.id in s2.participants[p.id].completed
        s2.close()


class TestExport:
    def test_rows_sorted_by_presentation_order(self, store):
        p = store.enroll(Method.BTC)
        batch = store.next_batch(p.id)
        # record in reverse presentation order; export must restore it
        for i, tid in reversed(list(enumerate(batch.questions))):
            store.record(Response(tid, batch.id, p.id, Choice.LEFT, 600.0 + i))
        rows = store.export_rows(Method.BTC)
        assert [r.triplet_id for r in rows] == batch.questions

    def test_method_filter(self, store):
        for method in (Method.BTC, Method.PTC):
            p = store.enroll(method)
            batch = store.next_batch(p.id)
            _answer_batch(store, p, batch)
        btc = store.export_rows(Method.BTC)
        assert btc and all(r.method == Method.BTC for r in btc)

    def test_csv_round_trip(self, store, tmp_path):
        p = store.enroll(Method.PTC)
        batch = store.next_batch(p.id)
        _answer_batch(store, p, batch, choice=Choice.NOT_SURE)
        rows = store.export_rows()
        path = tmp_path / "responses.csv"
        write_responses_csv(rows, path)
        assert read_responses_csv(path) == rows

    def test_csv_summary_header(self, store):
        p = store.enroll(Method.BTC)
        batch = store.next_batch(p.id)
        _answer_batch(store, p, batch)
        text = render_responses_csv(store.export_rows())
        assert "# summary[btc].counts" in text
        assert "triplet_id" in text.splitlines()[-len(batch.questions) - 1]


class TestSummary:
    def test_counts_by_choice(self, store):
        p = store.enroll(Method.BTC)
        batch = store.next_batch(p.id)
        choices = [Choice.LEFT, Choice.RIGHT, Choice.NOT_SURE, Choice.SKIP]
        for tid, c in zip(batch.questions, choices):
            store.record(Response(tid, batch.id, p.id, c, 500.0,
                                  submitted_at=1.0))
        counts = summarize_responses(store.export_rows())["btc"]["counts"]
        assert counts["total"] == 4
        assert all(counts[c.value] == 1 for c in choices)
