"""Unified functional observer model for triplet comparisons.

Each codec of a source image gets four parameters: an exponential
rate-distortion curve ``d(r) = alpha * exp(-beta * r)`` mapping bitrate to
perceived distortion in JND units under plain viewing, and a quadratic
boosting transform ``h(d) = gamma1 * d + gamma2 * d^2`` mapping plain
distortion to its boosted-viewing counterpart. Choice probabilities follow
Thurstone's Case V: the probability that the left image is judged more
distorted is ``Phi(k * (d_left - d_right))`` with a fixed scaling constant
``k`` (default 1). "Not sure" responses contribute half a count to each
direction; skips are excluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .catalog import StudyManifest
from .design import Method, parse_triplet_id
from .store import Choice, Response

PROB_EPS = 1e-12  # probability clamp guarding log underflow


class ModelError(ValueError):
    """Invalid model parameters or unusable response data."""


@dataclass(frozen=True)
class CodecParams:
    alpha: float   # JND scale of the RD curve
    beta: float    # decay rate per bpp
    gamma1: float  # linear boost coefficient
    gamma2: float  # quadratic boost coefficient, may be 0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.gamma1 > 0
                and self.gamma2 >= 0):
            raise ModelError(
                f"require alpha, beta, gamma1 > 0 and gamma2 >= 0, got "
                f"({self.alpha}, {self.beta}, {self.gamma1}, {self.gamma2})"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma1, self.gamma2])


def rd_distortion(params: CodecParams, r) -> float | np.ndarray:
    """Plain-viewing distortion in JND at bitrate ``r`` (bpp)."""
    return params.alpha * np.exp(-params.beta * np.asarray(r, dtype=float))


def boost(params: CodecParams, d) -> float | np.ndarray:
    """Boosted-viewing distortion for a plain distortion ``d``."""
    d = np.asarray(d, dtype=float)
    return params.gamma1 * d + params.gamma2 * d * d


def choice_probability(d_left: float, d_right: float, k: float = 1.0) -> float:
    """Probability that the left image is judged more distorted."""
    return float(ndtr(k * (d_left - d_right)))


@dataclass
class SourceModel:
    source_id: str
    params: dict[str, CodecParams]
    k: float = 1.0
    nll: float = math.nan
    iterations: int = 0
    restart_index: int = 0
    converged: bool = True

    def param_array(self, codec_ids: list[str]) -> np.ndarray:
        return np.stack([self.params[c].as_array() for c in codec_ids])


@dataclass
class QuestionTable:
    """Aggregated directed questions of one source, ready for the kernel.

    ``n_left``/``n_right`` are directed response counts per question
    (not-sure responses contribute 0.5 to each side). Codec indices refer to
    ``codec_ids``; -1 marks the pristine source (distortion exactly 0,
    never evaluated through the curve).
    """

    source_id: str
    codec_ids: list[str]
    triplet_ids: list[str]
    codec_left: np.ndarray   # int32, -1 for SOURCE
    r_left: np.ndarray       # float64 bpp
    codec_right: np.ndarray
    r_right: np.ndarray
    boosted: np.ndarray      # uint8, 1 for BTC questions
    n_left: np.ndarray       # float64
    n_right: np.ndarray
    stimulus_bitrates: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def n_questions(self) -> int:
        return len(self.triplet_ids)

    @property
    def n_responses(self) -> float:
        return float(self.n_left.sum() + self.n_right.sum())

    def median_stimulus_bitrate(self) -> float:
        rates = []
        for c, r in zip(self.codec_left, self.r_left):
            if c >= 0:
                rates.append(r)
        for c, r in zip(self.codec_right, self.r_right):
            if c >= 0:
                rates.append(r)
        if not rates:
            raise ModelError("question table contains no encoded stimuli")
        return float(np.median(np.unique(np.asarray(rates))))

    def scaled_counts(self, multiplicity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Counts scaled by a per-question multiplicity (bootstrap weights)."""
        return self.n_left * multiplicity, self.n_right * multiplicity


def build_question_table(
    rows: list[Response],
    manifest: StudyManifest,
    source_id: str,
) -> QuestionTable:
    """Aggregate the responses of one source into directed-question counts."""
    codec_ids = list(manifest.codec_ids)
    codec_index = {c: i for i, c in enumerate(codec_ids)}

    counts: dict[str, list[float]] = {}
    for r in rows:
        triplet = parse_triplet_id(r.triplet_id)
        if triplet.source_id != source_id:
            continue
        if r.choice == Choice.SKIP:
            continue
        c = counts.setdefault(r.triplet_id, [0.0, 0.0])
        if r.choice == Choice.LEFT:
            c[0] += 1.0
        elif r.choice == Choice.RIGHT:
            c[1] += 1.0
        else:  # not sure: split half and half between the directions
            c[0] += 0.5
            c[1] += 0.5

    triplet_ids = sorted(counts)
    if not triplet_ids:
        raise ModelError(f"no usable responses for source {source_id!r}")

    n = len(triplet_ids)
    codec_left = np.empty(n, dtype=np.int32)
    r_left = np.zeros(n)
    codec_right = np.empty(n, dtype=np.int32)
    r_right = np.zeros(n)
    boosted = np.zeros(n, dtype=np.uint8)
    n_left = np.zeros(n)
    n_right = np.zeros(n)

    for i, tid in enumerate(triplet_ids):
        triplet = parse_triplet_id(tid)
        boosted[i] = 1 if triplet.method == Method.BTC else 0
        for side, c_arr, r_arr in (
            (triplet.left, codec_left, r_left),
            (triplet.right, codec_right, r_right),
        ):
            if side.is_source:
                c_arr[i] = -1
                r_arr[i] = 0.0
            else:
                if side.codec_id not in codec_index:
                    raise ModelError(
                        f"triplet {tid!r} references codec {side.codec_id!r} "
                        "missing from the manifest"
                    )
                stim = manifest.stimulus(source_id, side.codec_id, side.level)
                c_arr[i] = codec_index[side.codec_id]
                r_arr[i] = stim.actual_bpp
        n_left[i], n_right[i] = counts[tid]

    spans = {}
    for codec_id in codec_ids:
        ladder = manifest.ladder(source_id, codec_id)
        if ladder:
            rates = [s.actual_bpp for s in ladder]
            spans[codec_id] = (min(rates), max(rates))

    return QuestionTable(
        source_id=source_id,
        codec_ids=codec_ids,
        triplet_ids=triplet_ids,
        codec_left=codec_left,
        r_left=r_left,
        codec_right=codec_right,
        r_right=r_right,
        boosted=boosted,
        n_left=n_left,
        n_right=n_right,
        stimulus_bitrates=spans,
    )


def negative_log_likelihood(
    model: SourceModel | dict[str, CodecParams],
    table: QuestionTable,
    k: float | None = None,
) -> float:
    """Total negative log-likelihood of the table under the model."""
    from .kernel import nll_and_grad

    if isinstance(model, SourceModel):
        params = model.param_array(table.codec_ids)
        k = model.k if k is None else k
    else:
        params = np.stack([model[c].as_array() for c in table.codec_ids])
        k = 1.0 if k is None else k
    nll, _ = nll_and_grad(
        params, table.codec_left, table.r_left, table.codec_right, table.r_right,
        table.boosted, table.n_left, table.n_right, k, want_grad=False,
    )
    return nll
