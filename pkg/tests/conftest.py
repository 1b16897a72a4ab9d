"""Shared fixtures: synthetic manifests, generating models, response sets.

The synthetic stimuli follow an exponential rate-distortion ladder so that
simulated studies have a known ground truth to recover. Session-scoped
fixtures cache the expensive shared artifacts (simulated response tables,
fitted models); everything is seeded, so reruns are bitwise identical.
"""

from __future__ import annotations

import numpy as np
import pytest

from aicscale.catalog import (
    BitrateRule,
    CodecRecipe,
    SourceImage,
    Stimulus,
    StudyManifest,
)
from aicscale.design import Method, build_design
from aicscale.model import CodecParams, SourceModel

# Generating parameters used throughout the suite: distortion 3 * exp(-1.2 r)
# JND at r bpp, with a quadratic flicker boost 2 d + 0.3 d^2.
TRUE_PARAMS = CodecParams(alpha=3.0, beta=1.2, gamma1=2.0, gamma2=0.3)


def build_synthetic_manifest(
    n_sources: int = 1,
    codecs: tuple[str, ...] = ("c1", "c2", "c3", "c4"),
    levels: int = 5,
    d_span: tuple[float, float] = (0.6, 1.8),
    jitter: float = 0.04,
    seed: int = 42,
) -> StudyManifest:
    """Manifest whose ladders land on the TRUE_PARAMS curve.

    Levels are placed so that the generating distortion runs from
    ``d_span[0]`` (level 1) to ``d_span[1]`` (level ``levels``), with a
    small log-normal bitrate jitter so no two ladders are identical.
    """
    rng = np.random.default_rng(seed)
    recipes = [
        CodecRecipe(
            codec_id=c,
            encode_command_template="encode -q {quality} {input} {output}",
            quality_range=(1, 100),
            quality_direction="higher_is_better",
            bitrate_rule=BitrateRule(scale=1.0, offset_bpp=0.0),
        )
        for c in codecs
    ]
    sources = [
        SourceImage(
            id=f"s{i + 1:02d}",
            width=840,
            height=944,
            color_space_tag="pq",
            file_path=f"s{i + 1:02d}.png",
        )
        for i in range(n_sources)
    ]
    stimuli = []
    for src in sources:
        for c in codecs:
            d_targets = np.geomspace(d_span[0], d_span[1], levels)
            r = np.log(TRUE_PARAMS.alpha / d_targets) / TRUE_PARAMS.beta
            r = np.sort(r * np.exp(jitter * rng.standard_normal(levels)))[::-1]
            for lvl in range(1, levels + 1):
                bpp = float(r[lvl - 1])
                stimuli.append(
                    Stimulus(src.id, c, lvl, bpp, bpp, 100 - 10 * lvl,
                             f"{src.id}_{c}_l{lvl}.bin")
                )
    return StudyManifest(sources=sources, codecs=recipes, stimuli=stimuli,
                         levels_per_codec=levels)


def true_models(manifest: StudyManifest) -> dict[str, SourceModel]:
    return {
        sid: SourceModel(sid, {c: TRUE_PARAMS for c in manifest.codec_ids})
        for sid in manifest.source_ids
    }


@pytest.fixture(scope="session")
def manifest_1x4() -> StudyManifest:
    """One source, four codecs, five levels: 144 triplets per method."""
    return build_synthetic_manifest(n_sources=1)


@pytest.fixture(scope="session")
def manifest_5x4() -> StudyManifest:
    """The headline design shape: five sources, four codecs, five levels."""
    return build_synthetic_manifest(n_sources=5)


@pytest.fixture(scope="session")
def manifest_small() -> StudyManifest:
    """Two sources, two codecs, three levels: cheap end-to-end runs."""
    return build_synthetic_manifest(n_sources=2, codecs=("cA", "cB"), levels=3)


@pytest.fixture(scope="session")
def designs_1x4(manifest_1x4):
    return [build_design(manifest_1x4, m, batch_size=144, seed=1)
            for m in (Method.BTC, Method.PTC)]


@pytest.fixture(scope="session")
def sim_rows_1x4(manifest_1x4, designs_1x4):
    """24 responses/triplet drawn from the generating model (both methods)."""
    from aicscale.simulate import simulate_rows

    return simulate_rows(manifest_1x4, designs_1x4, true_models(manifest_1x4),
                         responses_per_triplet=24, seed=7)


@pytest.fixture(scope="session")
def table_1x4(manifest_1x4, sim_rows_1x4):
    from aicscale.model import build_question_table

    return build_question_table(sim_rows_1x4, manifest_1x4, "s01")


@pytest.fixture(scope="session")
def fitted_1x4(table_1x4):
    from aicscale.fitting import FitConfig, fit_source

    return fit_source(table_1x4, FitConfig(seed=0))


# --- acceptance reporting --------------------------------------------------
# test_acceptance.py carries one test per acceptance criterion; after the
# run, print a single PASS/FAIL/SKIP line for each so the gate is readable
# without scrolling the full pytest output.

_ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        status = "PASS" if report.passed else "FAIL"
        detail = ""
        if report.skipped:
            status = "SKIP"
            detail = report.longrepr[-1] if isinstance(report.longrepr, tuple) else ""
        _ACCEPTANCE_RESULTS[name] = (status, detail)
    elif report.when == "setup" and report.skipped:
        detail = report.longrepr[-1] if isinstance(report.longrepr, tuple) else ""
        _ACCEPTANCE_RESULTS[name] = ("SKIP", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, (status, detail) in sorted(_ACCEPTANCE_RESULTS.items()):
        line = f"{status:4s} {name}"
        if detail:
            line += f" ({detail})"
        tr.write_line(line)
