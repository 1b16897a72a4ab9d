"""Triplet generation and batch assignment.

Every comparison is an ordered triplet (left, pivot, right): the pivot is the
pristine source image, the two sides are either encoded stimuli or the source
itself (the SOURCE sentinel). Triplet ids are self-describing —
``{method}~{source}~{left}~{right}`` with sides written ``{codec}.{level}``
or ``src`` — so downstream stages can resolve stimuli from the id alone.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .catalog import StudyManifest


class DesignError(ValueError):
    """Triplet or batch generation failed a precondition."""


class Method(str, Enum):
    BTC = "btc"
    PTC = "ptc"


SOURCE_TOKEN = "src"
SOURCE_LEVEL = 0  # level assigned to the pristine source in weighting


@dataclass(frozen=True, order=True)
class Side:
    """One side of a triplet: an encoded stimulus or the SOURCE sentinel."""

    codec_id: str | None = None
    level: int | None = None

    @property
    def is_source(self) -> bool:
        return self.codec_id is None

    @property
    def effective_level(self) -> int:
        return SOURCE_LEVEL if self.is_source else self.level

    @property
    def token(self) -> str:
        if self.is_source:
            return SOURCE_TOKEN
        return f"{self.codec_id}.{self.level}"

    @classmethod
    def source(cls) -> "Side":
        return cls(None, None)

    @classmethod
    def stimulus(cls, codec_id: str, level: int) -> "Side":
        if level < 1:
            raise DesignError(f"stimulus level must be >= 1, got {level}")
        return cls(codec_id, level)

    @classmethod
    def from_token(cls, token: str) -> "Side":
        if token == SOURCE_TOKEN:
            return cls.source()
        codec_id, _, level = token.rpartition(".")
        if not codec_id or not level.isdigit():
            raise DesignError(f"malformed side token {token!r}")
        return cls.stimulus(codec_id, int(level))


SOURCE = Side.source()


@dataclass(frozen=True)
class Triplet:
    method: Method
    source_id: str
    left: Side
    right: Side

    def __post_init__(self):
        if self.left == self.right:
            raise DesignError(
                f"triplet sides must differ, got {self.left.token} twice"
            )

    @property
    def id(self) -> str:
        return f"{self.method.value}~{self.source_id}~{self.left.token}~{self.right.token}"

    @property
    def kind(self) -> str:
        if (not self.left.is_source and not self.right.is_source
                and self.left.codec_id != self.right.codec_id):
            return "cross_codec"
        return "same_codec"

    @property
    def level_difference(self) -> int:
        return abs(self.left.effective_level - self.right.effective_level)

    def mirror(self) -> "Triplet":
        return Triplet(self.method, self.source_id, self.right, self.left)

    def mirror_key(self) -> tuple:
        """Order-independent key shared by a triplet and its mirror."""
        pair = tuple(sorted([self.left.token, self.right.token]))
        return (self.method.value, self.source_id, pair)


def parse_triplet_id(triplet_id: str) -> Triplet:
    parts = triplet_id.split("~")
    if len(parts) != 4:
        raise DesignError(f"malformed triplet id {triplet_id!r}")
    method, source_id, left, right = parts
    try:
        method = Method(method)
    except ValueError:
        raise DesignError(f"unknown method in triplet id {triplet_id!r}") from None
    return Triplet(method, source_id, Side.from_token(left), Side.from_token(right))


@dataclass
class Batch:
    id: str
    method: Method
    questions: list[str]  # triplet ids in presentation order

    def __post_init__(self):
        if len(set(self.questions)) != len(self.questions):
            raise DesignError(f"batch {self.id!r} contains duplicate triplet ids")

    def question_index(self, triplet_id: str) -> int:
        return self.questions.index(triplet_id)


# generation ----------------------------------------------------------------

def generate_same_codec(
    manifest: StudyManifest, source_id: str, codec_id: str, method: Method
) -> list[Triplet]:
    """Both orderings of every pair from {SOURCE, level 1..L} of one ladder."""
    ladder = manifest.ladder(source_id, codec_id)
    if not ladder:
        raise DesignError(f"no stimuli for (source {source_id!r}, codec {codec_id!r})")
    items = [SOURCE] + [Side.stimulus(codec_id, s.level) for s in ladder]
    triplets = []
    for a, b in itertools.combinations(items, 2):
        triplets.append(Triplet(method, source_id, a, b))
        triplets.append(Triplet(method, source_id, b, a))
    return triplets


def generate_cross_codec(
    manifest: StudyManifest,
    source_id: str,
    method: Method,
    count: int,
    seed,
    balanced: bool = True,
) -> list[Triplet]:
    """Cross-codec triplets balanced over codec pairs, both orders included.

    Level pairs are sampled uniformly without replacement per codec pair
    (the SOURCE sentinel is excluded: it is codec-neutral). Deterministic
    for a given seed.
    """
    codec_ids = sorted(manifest.codec_ids)
    if len(codec_ids) < 2:
        raise DesignError("cross-codec triplets require at least 2 codecs")
    if count % 2 != 0:
        raise DesignError(f"cross-codec count must be even, got {count}")
    codec_pairs = list(itertools.combinations(codec_ids, 2))
    n_pairs = len(codec_pairs)
    levels = range(1, manifest.levels_per_codec + 1)
    combos_per_pair = manifest.levels_per_codec ** 2

    n_comparisons = count // 2  # each comparison yields both orders
    if balanced:
        if n_comparisons % n_pairs != 0:
            raise DesignError(
                f"count {count} not satisfiable: {count}/2 comparisons must divide "
                f"evenly over {n_pairs} codec pairs"
            )
        quota = {pair: n_comparisons // n_pairs for pair in codec_pairs}
    else:
        quota = {pair: n_comparisons // n_pairs for pair in codec_pairs}
        for i in range(n_comparisons % n_pairs):
            quota[codec_pairs[i]] += 1
    if max(quota.values()) > combos_per_pair:
        raise DesignError(
            f"count {count} exceeds the {combos_per_pair} distinct level pairs "
            "available per codec pair"
        )

    rng = np.random.default_rng(seed)
    triplets = []
    for codec_a, codec_b in codec_pairs:
        all_combos = [(la, lb) for la in levels for lb in levels]
        chosen = rng.choice(len(all_combos), size=quota[(codec_a, codec_b)],
                            replace=False)
        for idx in sorted(chosen):
            la, lb = all_combos[idx]
            left = Side.stimulus(codec_a, la)
            right = Side.stimulus(codec_b, lb)
            t = Triplet(method, source_id, left, right)
            triplets.append(t)
            triplets.append(t.mirror())
    return triplets


def generate_source_triplets(
    manifest: StudyManifest,
    source_id: str,
    method: Method,
    cross_count: int = 24,
    seed=0,
) -> list[Triplet]:
    """All triplets of one source: same-codec ladders plus cross-codec links."""
    triplets = []
    for codec_id in manifest.codec_ids:
        triplets.extend(generate_same_codec(manifest, source_id, codec_id, method))
    if cross_count:
        triplets.extend(
            generate_cross_codec(manifest, source_id, method, cross_count, seed)
        )
    return triplets


# batch assignment ------------------------------------------------------------

def _mirror_pairs(triplets: list[Triplet]) -> list[tuple[Triplet, Triplet]]:
    by_key: dict[tuple, list[Triplet]] = {}
    for t in triplets:
        by_key.setdefault(t.mirror_key(), []).append(t)
    pairs = []
    for key, members in by_key.items():
        ids = sorted(t.id for t in members)
        if len(members) != 2 or ids[0] == ids[1]:
            raise DesignError(
                f"triplet {ids[0]!r} has no mirror counterpart in the input"
            )
        members = sorted(members, key=lambda t: t.id)
        pairs.append((members[0], members[1]))
    return pairs


def _order_questions(pair_list: list[tuple[Triplet, Triplet]], rng) -> list[str]:
    """Random within-batch order; a triplet and its mirror are not adjacent
    whenever that is avoidable."""
    ids = [t.id for pair in pair_list for t in pair]
    mirror_of = {}
    for a, b in pair_list:
        mirror_of[a.id] = b.id
        mirror_of[b.id] = a.id

    def has_adjacent(seq):
        return any(mirror_of[a] == b for a, b in zip(seq, seq[1:]))

    order = list(ids)
    for _ in range(50):
        rng.shuffle(order)
        if not has_adjacent(order):
            return order
    # repair pass: push the second element of an adjacent pair elsewhere
    for i in range(len(order) - 1):
        if mirror_of[order[i]] == order[i + 1]:
            for j in range(len(order)):
                if abs(j - i) <= 1:
                    continue
                cand = order.copy()
                cand[i + 1], cand[j] = cand[j], cand[i + 1]
                if not has_adjacent(cand):
                    order = cand
                    break
    return order


def assign_batches(
    triplets: list[Triplet], batch_size: int, seed
) -> list[Batch]:
    """Partition triplets into batches, keeping each mirror pair together.

    Pairs are dealt round-robin by (source, kind) so batches are balanced
    across sources and triplet kinds as evenly as integrality allows; the
    within-batch order is then shuffled with mirrors kept non-adjacent.
    """
    if not triplets:
        raise DesignError("no triplets to assign")
    methods = {t.method for t in triplets}
    if len(methods) > 1:
        raise DesignError("all triplets in one batch assignment must share a method")
    method = methods.pop()
    if batch_size % 2 != 0:
        raise DesignError("batch_size must be even (mirror pairs stay together)")
    if len(triplets) % batch_size != 0:
        raise DesignError(
            f"{len(triplets)} triplets are not divisible into batches of {batch_size}"
        )

    pairs = _mirror_pairs(triplets)
    n_batches = len(triplets) // batch_size
    pairs_per_batch = batch_size // 2

    buckets: dict[tuple, list] = {}
    for pair in pairs:
        bucket_key = (pair[0].source_id, pair[0].kind)
        buckets.setdefault(bucket_key, []).append(pair)

    rng = np.random.default_rng(seed)
    assigned: list[list[tuple[Triplet, Triplet]]] = [[] for _ in range(n_batches)]
    cursor = 0
    for key in sorted(buckets):
        bucket = sorted(buckets[key], key=lambda p: p[0].id)
        for pair in bucket:
            # deal to the next batch with room, round-robin
            for _ in range(n_batches):
                if len(assigned[cursor % n_batches]) < pairs_per_batch:
                    assigned[cursor % n_batches].append(pair)
                    cursor += 1
                    break
                cursor += 1

    batches = []
    for i, pair_list in enumerate(assigned):
        order = _order_questions(pair_list, rng)
        batches.append(Batch(id=f"{method.value}-{i + 1:02d}", method=method,
                             questions=order))
    return batches


# design document -------------------------------------------------------------

@dataclass
class StudyDesign:
    method: Method
    batches: list[Batch]
    triplets: dict[str, Triplet]
    seed: int = 0
    batch_size: int = 120

    def batch(self, batch_id: str) -> Batch:
        for b in self.batches:
            if b.id == batch_id:
                return b
        raise KeyError(batch_id)

    @property
    def batch_ids(self) -> list[str]:
        return [b.id for b in self.batches]


def build_design(
    manifest: StudyManifest,
    method: Method,
    cross_count: int = 24,
    batch_size: int = 120,
    seed: int = 0,
) -> StudyDesign:
    """Generate the full study design for one method over all sources."""
    triplets: list[Triplet] = []
    for i, source_id in enumerate(manifest.source_ids):
        source_seed = np.random.SeedSequence([int(seed), i])
        triplets.extend(
            generate_source_triplets(manifest, source_id, method,
                                     cross_count=cross_count, seed=source_seed)
        )
    batch_seed = np.random.SeedSequence([int(seed), len(manifest.source_ids)])
    batches = assign_batches(triplets, batch_size, batch_seed)
    return StudyDesign(
        method=method,
        batches=batches,
        triplets={t.id: t for t in triplets},
        seed=seed,
        batch_size=batch_size,
    )


def save_design(design: StudyDesign, path: str | Path) -> None:
    doc = {
        "method": design.method.value,
        "seed": design.seed,
        "batch_size": design.batch_size,
        "batches": [
            {"id": b.id, "questions": b.questions} for b in design.batches
        ],
        "triplets": {
            t.id: {
                "source_id": t.source_id,
                "left": t.left.token,
                "right": t.right.token,
                "kind": t.kind,
            }
            for t in sorted(design.triplets.values(), key=lambda t: t.id)
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_design(path: str | Path) -> StudyDesign:
    with open(path) as fh:
        doc = json.load(fh)
    method = Method(doc["method"])
    triplets = {tid: parse_triplet_id(tid) for tid in doc["triplets"]}
    batches = [
        Batch(id=b["id"], method=method, questions=list(b["questions"]))
        for b in doc["batches"]
    ]
    for b in batches:
        for tid in b.questions:
            if tid not in triplets:
                raise DesignError(f"batch {b.id!r} references unknown triplet {tid!r}")
    return StudyDesign(
        method=method,
        batches=batches,
        triplets=triplets,
        seed=doc.get("seed", 0),
        batch_size=doc.get("batch_size", len(batches[0].questions) if batches else 0),
    )
