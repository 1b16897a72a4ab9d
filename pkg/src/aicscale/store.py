"""Durable response collection: batch assignment, response recording, export.

State is kept in an append-only JSONL event log (``events.log`` inside the
data directory); every acknowledged event is flushed and fsynced before the
call returns, and the full state is rebuilt by replay on open. Export is a
pure function of the stored responses.
"""

from __future__ import annotations

import csv
import io
import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .design import Method, StudyDesign, parse_triplet_id

LOG_NAME = "events.log"


class StoreError(RuntimeError):
    """A response-store operation was rejected."""


class LimitReached(StoreError):
    """Participant already completed the maximum number of batches."""


class StudyComplete(StoreError):
    """Every batch has reached its target coverage."""


class DuplicateConflict(StoreError):
    """A response with the same key but different content was re-sent."""


class Choice(str, Enum):
    LEFT = "left"
    NOT_SURE = "not_sure"
    RIGHT = "right"
    SKIP = "skip"


@dataclass(frozen=True)
class Response:
    triplet_id: str
    batch_id: str
    participant_id: str
    choice: Choice
    response_time_ms: float
    toggle_count: int | None = None
    submitted_at: float = 0.0

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.participant_id, self.triplet_id, self.batch_id)

    @property
    def method(self) -> Method:
        return Method(self.triplet_id.split("~", 1)[0])


@dataclass
class Participant:
    id: str
    method: Method
    token: str
    assigned: list[str] = field(default_factory=list)  # batch ids, in order
    completed: list[str] = field(default_factory=list)


@dataclass
class Ack:
    accepted: bool
    duplicate: bool = False


class ResponseStore:
    """Assigns batches, records responses, and exports the response table."""

    def __init__(
        self,
        data_dir: str | Path,
        designs: list[StudyDesign],
        target_coverage: int = 24,
        max_batches_per_participant: int = 2,
        durable: bool = True,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.designs = {d.method: d for d in designs}
        self.target_coverage = target_coverage
        self.max_batches_per_participant = max_batches_per_participant
        self.durable = durable

        self._lock = threading.Lock()
        self.participants: dict[str, Participant] = {}
        self._by_token: dict[str, Participant] = {}
        self.responses: dict[tuple, Response] = {}
        self.assignment_counts: dict[str, int] = {
            b.id: 0 for d in designs for b in d.batches
        }

        self._log_path = self.data_dir / LOG_NAME
        self._replay()
        self._log_fh = open(self._log_path, "a")

    # persistence ---------------------------------------------------------
    def _replay(self) -> None:
        if not self._log_path.exists():
            return
        with open(self._log_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _append(self, event: dict) -> None:
        self._log_fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._log_fh.flush()
        if self.durable:
            os.fsync(self._log_fh.fileno())

    def flush(self) -> None:
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())

    def close(self) -> None:
        self.flush()
        self._log_fh.close()

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "enroll":
            p = Participant(
                id=event["participant_id"],
                method=Method(event["method"]),
                token=event["token"],
            )
            self.participants[p.id] = p
            self._by_token[p.token] = p
        elif kind == "assign":
            p = self.participants[event["participant_id"]]
            p.assigned.append(event["batch_id"])
            self.assignment_counts[event["batch_id"]] += 1
        elif kind == "response":
            r = Response(
                triplet_id=event["triplet_id"],
                batch_id=event["batch_id"],
                participant_id=event["participant_id"],
                choice=Choice(event["choice"]),
                response_time_ms=event["response_time_ms"],
                toggle_count=event.get("toggle_count"),
                submitted_at=event.get("submitted_at", 0.0),
            )
            self.responses[r.key] = r
            self._check_completion(r.participant_id, r.batch_id)

    def _check_completion(self, participant_id: str, batch_id: str) -> None:
        p = self.participants[participant_id]
        if batch_id in p.completed:
            return
        batch = self.designs[p.method].batch(batch_id)
        answered = all(
            (participant_id, tid, batch_id) in self.responses
            for tid in batch.questions
        )
        if answered:
            p.completed.append(batch_id)

    # operations ------------------------------------------------------------
    def enroll(self, method: Method, token: str | None = None) -> Participant:
        if method not in self.designs:
            raise StoreError(f"no design loaded for method {method.value!r}")
        with self._lock:
            pid = f"p{len(self.participants) + 1:04d}"
            event = {"event": "enroll", "participant_id": pid,
                     "method": method.value,
                     "token": token or secrets.token_hex(16)}
            self._append(event)
            self._apply(event)
            return self.participants[pid]

    def participant_by_token(self, token: str) -> Participant:
        p = self._by_token.get(token)
        if p is None:
            raise StoreError("unknown participant token")
        return p

    def next_batch(self, participant_id: str):
        """Assign the least-covered batch the participant has not done yet.

        Coverage counts every assignment (active or completed), so
        concurrent enrollments can never push a batch past target coverage.
        """
        with self._lock:
            p = self.participants.get(participant_id)
            if p is None:
                raise StoreError(f"unknown participant {participant_id!r}")
            if len(p.assigned) >= self.max_batches_per_participant:
                raise LimitReached(
                    f"participant {participant_id} reached the limit of "
                    f"{self.max_batches_per_participant} batches"
                )
            design = self.designs[p.method]
            candidates = [b for b in design.batches if b.id not in p.assigned]
            candidates = [
                b for b in candidates
                if self.assignment_counts[b.id] < self.target_coverage
            ]
            if not candidates:
                raise StudyComplete(
                    f"all {p.method.value} batches are at target coverage"
                )
            chosen = min(candidates,
                         key=lambda b: (self.assignment_counts[b.id], b.id))
            event = {"event": "assign", "participant_id": participant_id,
                     "batch_id": chosen.id}
            self._append(event)
            self._apply(event)
            return chosen

    def record(self, response: Response) -> Ack:
        with self._lock:
            p = self.participants.get(response.participant_id)
            if p is None:
                raise StoreError(f"unknown participant {response.participant_id!r}")
            if response.batch_id not in p.assigned:
                raise StoreError(
                    f"batch {response.batch_id!r} is not assigned to "
                    f"participant {response.participant_id}"
                )
            design = self.designs[p.method]
            batch = design.batch(response.batch_id)
            if response.triplet_id not in batch.questions:
                raise StoreError(
                    f"triplet {response.triplet_id!r} is not part of "
                    f"batch {response.batch_id!r}"
                )
            if (response.method == Method.PTC and response.choice != Choice.SKIP
                    and not (response.toggle_count or 0) >= 1):
                raise StoreError(
                    "PTC responses require toggle_count >= 1 before submitting"
                )
            existing = self.responses.get(response.key)
            if existing is not None:
                if (existing.choice == response.choice
                        and existing.toggle_count == response.toggle_count):
                    return Ack(accepted=True, duplicate=True)
                raise DuplicateConflict(
                    f"a different response for {response.key} already exists"
                )
            event = {
                "event": "response",
                "triplet_id": response.triplet_id,
                "batch_id": response.batch_id,
                "participant_id": response.participant_id,
                "choice": response.choice.value,
                "response_time_ms": response.response_time_ms,
                "toggle_count": response.toggle_count,
                "submitted_at": response.submitted_at,
            }
            self._append(event)
            self._apply(event)
            return Ack(accepted=True)

    # export ----------------------------------------------------------------
    def export_rows(self, method: Method | None = None) -> list[Response]:
        """Responses ordered by (batch, participant, question index)."""

        def sort_key(r: Response) -> tuple:
            design = self.designs.get(r.method)
            try:
                idx = design.batch(r.batch_id).question_index(r.triplet_id)
            except (KeyError, ValueError, AttributeError):
                idx = -1
            return (r.batch_id, r.participant_id, idx, r.triplet_id)

        rows = [
            r for r in self.responses.values()
            if method is None or r.method == method
        ]
        return sorted(rows, key=sort_key)


# response table file ---------------------------------------------------------

RESPONSE_COLUMNS = [
    "triplet_id", "batch_id", "participant_id", "choice",
    "response_time_ms", "toggle_count", "submitted_at",
]

_HEADER_DOC = [
    "# triplet_id: method~source~left~right; sides are codec.level or src",
    "# choice: left | not_sure | right | skip (left/right = judged more distorted)",
    "# response_time_ms: wall time of the trial in milliseconds",
    "# toggle_count: number of in-place toggles (PTC only, empty for BTC)",
    "# submitted_at: unix timestamp of submission",
]


def summarize_responses(rows: list[Response]) -> dict:
    """Per-method totals plus correctness/timing grouped by level difference.

    Correctness is defined for same-codec triplets only: a response is
    correct when the side with the lower bitrate (higher level; SOURCE is
    level 0) is judged more distorted. Skips are excluded from the grouped
    ratios and timings but counted in the totals.
    """
    summary: dict[str, dict] = {}
    for r in rows:
        triplet = parse_triplet_id(r.triplet_id)
        m = summary.setdefault(
            triplet.method.value,
            {"counts": {c.value: 0 for c in Choice} | {"total": 0},
             "by_level_diff": {}},
        )
        m["counts"][r.choice.value] += 1
        m["counts"]["total"] += 1
        if triplet.kind != "same_codec" or r.choice == Choice.SKIP:
            continue
        diff = triplet.level_difference
        g = m["by_level_diff"].setdefault(
            diff, {"correct": 0, "not_sure": 0, "incorrect": 0,
                   "n": 0, "time_ms_total": 0.0},
        )
        g["n"] += 1
        g["time_ms_total"] += r.response_time_ms
        if r.choice == Choice.NOT_SURE:
            g["not_sure"] += 1
        else:
            chosen = triplet.left if r.choice == Choice.LEFT else triplet.right
            other = triplet.right if r.choice == Choice.LEFT else triplet.left
            if chosen.effective_level > other.effective_level:
                g["correct"] += 1
            else:
                g["incorrect"] += 1

    for m in summary.values():
        for g in m["by_level_diff"].values():
            n = g["n"]
            g["ratio_correct"] = g["correct"] / n
            g["ratio_not_sure"] = g["not_sure"] / n
            g["ratio_incorrect"] = g["incorrect"] / n
            g["mean_time_ms"] = g["time_ms_total"] / n
    return summary


def _summary_lines(summary: dict) -> list[str]:
    lines = []
    for method in sorted(summary):
        counts = summary[method]["counts"]
        lines.append(
            f"# summary[{method}].counts left={counts['left']} "
            f"not_sure={counts['not_sure']} right={counts['right']} "
            f"skip={counts['skip']} total={counts['total']}"
        )
        for diff in sorted(summary[method]["by_level_diff"]):
            g = summary[method]["by_level_diff"][diff]
            lines.append(
                f"# summary[{method}].level_diff={diff} "
                f"correct={g['ratio_correct']:.6f} "
                f"not_sure={g['ratio_not_sure']:.6f} "
                f"incorrect={g['ratio_incorrect']:.6f} "
                f"mean_time_ms={g['mean_time_ms']:.3f} n={g['n']}"
            )
    return lines


def render_responses_csv(rows: list[Response], with_summary: bool = True) -> str:
    """Render the response table as CSV text (pure function of the rows)."""
    buf = io.StringIO()
    for line in _HEADER_DOC:
        buf.write(line + "\n")
    if with_summary:
        for line in _summary_lines(summarize_responses(rows)):
            buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESPONSE_COLUMNS)
    for r in rows:
        writer.writerow([
            r.triplet_id, r.batch_id, r.participant_id, r.choice.value,
            f"{r.response_time_ms:g}",
            "" if r.toggle_count is None else r.toggle_count,
            f"{r.submitted_at:g}",
        ])
    return buf.getvalue()


def write_responses_csv(rows: list[Response], path: str | Path,
                        with_summary: bool = True) -> dict:
    """Write the response table; returns the computed summary."""
    Path(path).write_text(render_responses_csv(rows, with_summary))
    return summarize_responses(rows) if with_summary else {}


def read_responses_csv(path: str | Path) -> list[Response]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header != RESPONSE_COLUMNS:
            raise StoreError(
                f"unexpected response file columns in {path}: {header}"
            )
        for rec in reader:
            tid, batch_id, pid, choice, rt, toggles, submitted = rec
            rows.append(Response(
                triplet_id=tid,
                batch_id=batch_id,
                participant_id=pid,
                choice=Choice(choice),
                response_time_ms=float(rt),
                toggle_count=int(toggles) if toggles else None,
                submitted_at=float(submitted) if submitted else 0.0,
            ))
    return rows
