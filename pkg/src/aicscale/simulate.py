"""Synthetic observers: model-driven response generation for validation.

Observers draw choices from the same Thurstonian model the fitter assumes,
so recovery experiments are self-consistent.  A uniform guesser is provided
for data-cleansing checks, and a mock metric-score generator exercises the
correlation stage without any real image metric.
"""

from __future__ import annotations

import numpy as np

from .bench import MetricScores
from .catalog import StudyManifest
from .design import Batch, Method, StudyDesign, Triplet
from .model import (
    CodecParams,
    ModelError,
    SourceModel,
    boost,
    choice_probability,
    rd_distortion,
)
from .store import Choice, Response, ResponseStore

__all__ = [
    "triplet_probability",
    "default_generator_models",
    "simulate_rows",
    "guesser_rows",
    "simulate_into_store",
    "synth_metric_scores",
]


def default_generator_models(
    manifest: StudyManifest,
    alpha: float = 3.0,
    gamma1: float = 2.0,
    gamma2: float = 0.3,
    k: float = 1.0,
) -> dict[str, SourceModel]:
    """Ground-truth models whose RD curves cross 1 JND mid-ladder.

    The decay rate is chosen per source so that ``d(median bitrate) = 1``,
    which keeps simulated comparisons informative across the whole ladder.
    """
    models = {}
    for source_id in manifest.source_ids:
        beta = float(np.log(alpha) / manifest.median_bitrate(source_id))
        params = {c: CodecParams(alpha, beta, gamma1, gamma2)
                  for c in manifest.codec_ids}
        models[source_id] = SourceModel(source_id=source_id, params=params, k=k)
    return models

_TIME_BASE = 1.7e9  # epoch seconds; synthetic submission clock start


def triplet_probability(
    triplet: Triplet,
    manifest: StudyManifest,
    model: SourceModel,
) -> float:
    """Model probability that the left side is judged more distorted."""

    def side_distortion(side):
        if side.is_source:
            return 0.0
        params = model.params[side.codec_id]
        stim = manifest.stimulus(triplet.source_id, side.codec_id, side.level)
        d = rd_distortion(params, stim.actual_bpp)
        if triplet.method == Method.BTC:
            d = boost(params, d)
        return float(d)

    return choice_probability(
        side_distortion(triplet.left), side_distortion(triplet.right), model.k)


def _draw_choice(rng, p_left: float, not_sure_rate: float) -> Choice:
    if not_sure_rate > 0.0 and rng.random() < not_sure_rate:
        return Choice.NOT_SURE
    return Choice.LEFT if rng.random() < p_left else Choice.RIGHT


def _answer(rng, method: Method, triplet_id: str, batch_id: str,
            participant_id: str, choice: Choice, clock: list[float]) -> Response:
    clock[0] += 1.0
    return Response(
        triplet_id=triplet_id,
        batch_id=batch_id,
        participant_id=participant_id,
        choice=choice,
        response_time_ms=float(rng.integers(500, 4000)),
        toggle_count=int(rng.integers(1, 6)) if method == Method.PTC else None,
        submitted_at=clock[0],
    )


def simulate_rows(
    manifest: StudyManifest,
    designs: list[StudyDesign],
    models: dict[str, SourceModel],
    responses_per_triplet: int = 24,
    seed: int = 0,
    not_sure_rate: float = 0.0,
) -> list[Response]:
    """Complete batch sittings: every batch answered by
    ``responses_per_triplet`` distinct simulated participants."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    clock = [_TIME_BASE]
    rows: list[Response] = []
    for design in designs:
        for batch in design.batches:
            probs = []
            for tid in batch.questions:
                triplet = design.triplets[tid]
                model = models.get(triplet.source_id)
                if model is None:
                    raise ModelError(
                        f"no generating model for source {triplet.source_id!r}")
                probs.append(triplet_probability(triplet, manifest, model))
            for j in range(responses_per_triplet):
                pid = f"{batch.id}-sim{j + 1:03d}"
                for tid, p_left in zip(batch.questions, probs):
                    choice = _draw_choice(rng, p_left, not_sure_rate)
                    rows.append(_answer(rng, design.method, tid, batch.id,
                                        pid, choice, clock))
    return rows


def guesser_rows(
    batch: Batch,
    participant_id: str,
    seed: int = 0,
    not_sure_rate: float = 0.0,
) -> list[Response]:
    """One full batch sitting answered uniformly at random."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    clock = [_TIME_BASE]
    return [
        _answer(rng, batch.method, tid, batch.id, participant_id,
                _draw_choice(rng, 0.5, not_sure_rate), clock)
        for tid in batch.questions
    ]


def simulate_into_store(
    store: ResponseStore,
    manifest: StudyManifest,
    models: dict[str, SourceModel],
    seed: int = 0,
    not_sure_rate: float = 0.0,
) -> int:
    """Drive the full enrollment/assignment/response protocol to completion.

    Enrolls participants until every batch of every loaded design reaches
    the store's target coverage; returns the number of responses recorded.
    """
    from .store import LimitReached, StudyComplete

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    clock = [_TIME_BASE]
    recorded = 0
    for method, design in sorted(store.designs.items()):
        probs = {
            tid: triplet_probability(t, manifest, models[t.source_id])
            for tid, t in design.triplets.items()
        }
        done = False
        while not done:
            participant = store.enroll(method, token=f"tok-{method.value}-{recorded}")
            while True:
                try:
                    batch = store.next_batch(participant.id)
                except StudyComplete:
                    done = True
                    break
                except LimitReached:
                    break
                for tid in batch.questions:
                    choice = _draw_choice(rng, probs[tid], not_sure_rate)
                    store.record(_answer(rng, method, tid, batch.id,
                                         participant.id, choice, clock))
                    recorded += 1
    return recorded


def synth_metric_scores(
    manifest: StudyManifest,
    models: dict[str, SourceModel],
    metric: str = "mock-metric",
    polarity: str = "higher_is_better",
    noise: float = 0.05,
    seed: int = 0,
) -> MetricScores:
    """Scores that track the fitted distortion through a monotone map."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    table = {}
    for stim in manifest.stimuli:
        model = models.get(stim.source_id)
        if model is None:
            raise ModelError(f"no model for source {stim.source_id!r}")
        d = float(rd_distortion(model.params[stim.codec_id], stim.actual_bpp))
        value = np.log1p(d) + rng.normal(0.0, noise)
        if polarity == "higher_is_better":
            value = 10.0 - 2.0 * value
        table[stim.key] = float(value)
    return MetricScores(metric=metric, polarity=polarity, scores=table)
