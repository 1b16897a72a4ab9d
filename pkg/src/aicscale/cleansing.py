"""Reliability scoring of batch instances and filtering before reconstruction.

A batch instance is one participant's sitting of one batch. Each instance
gets an accuracy and a consistency in [0, 1]; instances whose mean falls
below the threshold are excluded. Both scores consider same-codec questions
only (cross-codec comparisons have no ground-truth ordering) and exclude
skipped responses. Question weights are the absolute distortion-level
difference, with the pristine source counting as level 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import StudyManifest
from .design import Triplet, parse_triplet_id
from .store import Choice, Response


class CleansingError(ValueError):
    """An instance cannot be scored."""


CORRECT = "correct"
INCORRECT = "incorrect"
NOT_SURE = "not_sure"

# pair score when exactly one of the two mirrored responses is "not sure"
HALF_SURE_PAIR_SCORE = 0.375


def response_class(triplet: Triplet, choice: Choice) -> str | None:
    """Classify one same-codec response; None when not scorable."""
    if triplet.kind != "same_codec" or choice == Choice.SKIP:
        return None
    if choice == Choice.NOT_SURE:
        return NOT_SURE
    chosen = triplet.left if choice == Choice.LEFT else triplet.right
    other = triplet.right if choice == Choice.LEFT else triplet.left
    # higher level = lower bitrate = objectively more distorted
    return CORRECT if chosen.effective_level > other.effective_level else INCORRECT


_CLASS_SCORE = {CORRECT: 1.0, NOT_SURE: 0.5, INCORRECT: 0.0}


def accuracy(responses: list[Response],
             manifest: StudyManifest | None = None) -> float:
    """Distortion-weighted ratio of correct responses; not-sure = half credit."""
    num = 0.0
    den = 0.0
    for r in responses:
        triplet = parse_triplet_id(r.triplet_id)
        _validate_refs(triplet, manifest)
        cls = response_class(triplet, r.choice)
        if cls is None:
            continue
        w = triplet.level_difference
        num += w * _CLASS_SCORE[cls]
        den += w
    if den == 0:
        raise CleansingError("no scorable same-codec responses in instance")
    return num / den


def consistency(responses: list[Response],
                manifest: StudyManifest | None = None) -> float:
    """Weighted mean of mirror-pair agreement scores.

    Pair score: 1 when both responses fall in the same class (both correct,
    both incorrect, or both not-sure), 0.375 when exactly one is not-sure,
    0 otherwise. Pairs where either side was skipped are excluded.
    """
    by_key: dict[tuple, list[str | None]] = {}
    weights: dict[tuple, int] = {}
    for r in responses:
        triplet = parse_triplet_id(r.triplet_id)
        _validate_refs(triplet, manifest)
        if triplet.kind != "same_codec":
            continue
        key = triplet.mirror_key()
        cls = None if r.choice == Choice.SKIP else response_class(triplet, r.choice)
        by_key.setdefault(key, []).append(cls)
        weights[key] = triplet.level_difference

    num = 0.0
    den = 0.0
    for key, classes in by_key.items():
        if len(classes) != 2 or None in classes:
            continue  # unpaired or skipped
        a, b = classes
        if a == b:
            score = 1.0
        elif NOT_SURE in (a, b):
            score = HALF_SURE_PAIR_SCORE
        else:
            score = 0.0
        num += weights[key] * score
        den += weights[key]
    if den == 0:
        raise CleansingError("no scorable mirror pairs in instance")
    return num / den


def _validate_refs(triplet: Triplet, manifest: StudyManifest | None) -> None:
    if manifest is None:
        return
    for side in (triplet.left, triplet.right):
        if not side.is_source:
            try:
                manifest.stimulus(triplet.source_id, side.codec_id, side.level)
            except KeyError:
                raise CleansingError(
                    f"triplet {triplet.id!r} references a stimulus missing "
                    "from the manifest"
                ) from None


@dataclass
class BatchInstance:
    participant_id: str
    batch_id: str
    responses: list[Response] = field(default_factory=list)
    accuracy: float = math.nan
    consistency: float = math.nan

    @property
    def mean_score(self) -> float:
        return (self.accuracy + self.consistency) / 2

    @property
    def key(self) -> tuple[str, str]:
        return (self.participant_id, self.batch_id)


def group_instances(rows: list[Response]) -> list[BatchInstance]:
    """Group a response table into batch instances (participant x batch)."""
    grouped: dict[tuple, BatchInstance] = {}
    for r in rows:
        key = (r.participant_id, r.batch_id)
        if key not in grouped:
            grouped[key] = BatchInstance(r.participant_id, r.batch_id)
        grouped[key].responses.append(r)
    return [grouped[k] for k in sorted(grouped)]


def score_instances(instances: list[BatchInstance],
                    manifest: StudyManifest | None = None) -> list[BatchInstance]:
    for inst in instances:
        try:
            inst.accuracy = accuracy(inst.responses, manifest)
            inst.consistency = consistency(inst.responses, manifest)
        except CleansingError:
            inst.accuracy = math.nan
            inst.consistency = math.nan
    return instances


def filter_instances(
    instances: list[BatchInstance], threshold: float = 0.7
) -> tuple[list[BatchInstance], list[BatchInstance]]:
    """Retain instances with mean(accuracy, consistency) >= threshold.

    Instances that could not be scored are excluded. Returns
    (retained, excluded).
    """
    retained, excluded = [], []
    for inst in instances:
        if not math.isnan(inst.mean_score) and inst.mean_score >= threshold:
            retained.append(inst)
        else:
            excluded.append(inst)
    return retained, excluded


def audit_report(retained: list[BatchInstance], excluded: list[BatchInstance],
                 threshold: float) -> dict:
    def entry(inst: BatchInstance) -> dict:
        return {
            "participant_id": inst.participant_id,
            "batch_id": inst.batch_id,
            "accuracy": None if math.isnan(inst.accuracy) else inst.accuracy,
            "consistency": None if math.isnan(inst.consistency) else inst.consistency,
            "mean": None if math.isnan(inst.mean_score) else inst.mean_score,
            "n_responses": len(inst.responses),
        }

    by_method: dict[str, dict[str, int]] = {}
    for inst in retained:
        m = inst.batch_id.split("-", 1)[0]
        by_method.setdefault(m, {"retained": 0, "excluded": 0})["retained"] += 1
    for inst in excluded:
        m = inst.batch_id.split("-", 1)[0]
        by_method.setdefault(m, {"retained": 0, "excluded": 0})["excluded"] += 1

    return {
        "threshold": threshold,
        "n_retained": len(retained),
        "n_excluded": len(excluded),
        "by_method": by_method,
        "excluded": [entry(i) for i in excluded],
        "retained": [entry(i) for i in retained],
    }


def cleanse(
    rows: list[Response],
    manifest: StudyManifest | None = None,
    threshold: float = 0.7,
) -> tuple[list[Response], dict]:
    """Score, filter, and return (retained rows, audit report)."""
    instances = score_instances(group_instances(rows), manifest)
    retained, excluded = filter_instances(instances, threshold)
    keep = {inst.key for inst in retained}
    kept_rows = [r for r in rows if (r.participant_id, r.batch_id) in keep]
    return kept_rows, audit_report(retained, excluded, threshold)


def write_audit(report: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
