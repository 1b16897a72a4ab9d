"""Correlation of objective metric scores against reconstructed JND values.

Coefficients are computed against *distortion* (JND), not quality, so a
well-behaved quality metric correlates negatively and no sign flip is
applied.  Grouped variants compute the coefficient inside each codec or
source group and average the groups with equal weight.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .catalog import StudyManifest
from .model import SourceModel, rd_distortion

__all__ = [
    "BenchError",
    "MetricScores",
    "GroupResult",
    "CorrelationReport",
    "MRRResult",
    "plcc",
    "srcc",
    "grouped_correlation",
    "mrr_test",
    "stimulus_jnd",
    "build_report",
    "render_report",
    "load_score_file",
    "write_score_file",
    "load_score_dir",
]

POLARITIES = ("higher_is_better", "higher_is_worse")

StimKey = tuple[str, str, int]


class BenchError(ValueError):
    """Degenerate correlation input or malformed score file."""


@dataclass
class MetricScores:
    """One metric's scores keyed by (source_id, codec_id, level)."""

    metric: str
    polarity: str
    scores: dict[StimKey, float]

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise BenchError(
                f"polarity must be one of {POLARITIES}, got {self.polarity!r}")

    def missing(self, manifest: StudyManifest) -> list[StimKey]:
        return [s.key for s in manifest.stimuli if s.key not in self.scores]


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise BenchError("inputs must be equal-length vectors")
    if x.size < 3:
        raise BenchError(f"need at least 3 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise BenchError("zero variance input")
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson on tie-averaged ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise BenchError("inputs must be equal-length vectors")
    return plcc(rankdata(x), rankdata(y))


def stimulus_jnd(
    models: dict[str, SourceModel],
    manifest: StudyManifest,
) -> dict[StimKey, float]:
    """Fitted plain-viewing distortion d(actual_bpp) of every stimulus."""
    jnd = {}
    for stim in manifest.stimuli:
        model = models.get(stim.source_id)
        if model is None:
            continue
        params = model.params[stim.codec_id]
        jnd[stim.key] = float(rd_distortion(params, stim.actual_bpp))
    return jnd


def _paired(scores: MetricScores, jnd: dict[StimKey, float],
            keys=None) -> tuple[np.ndarray, np.ndarray]:
    keys = sorted(jnd if keys is None else keys)
    xs, ys, dropped = [], [], 0
    for key in keys:
        if key in scores.scores and key in jnd:
            xs.append(scores.scores[key])
            ys.append(jnd[key])
        else:
            dropped += 1
    if dropped:
        warnings.warn(
            f"metric {scores.metric!r}: {dropped} stimuli lack a score "
            "and were dropped pairwise", stacklevel=3)
    return np.asarray(xs), np.asarray(ys)


@dataclass
class GroupResult:
    group: str
    n: int
    plcc: float
    srcc: float


def grouped_correlation(
    scores: MetricScores,
    jnd: dict[StimKey, float],
    group_by: str,
) -> tuple[float, float, list[GroupResult]]:
    """(mean PLCC, mean SRCC, per-group detail) for codec or source groups.

    Degenerate groups (fewer than 3 scored stimuli or zero variance) are
    reported with NaN coefficients and excluded from the unweighted means.
    """
    if group_by not in ("codec", "source"):
        raise BenchError(f"group_by must be 'codec' or 'source', got {group_by!r}")
    part = 1 if group_by == "codec" else 0

    groups: dict[str, list[StimKey]] = {}
    for key in sorted(jnd):
        groups.setdefault(key[part], []).append(key)

    detail = []
    kept_p, kept_s = [], []
    for name in sorted(groups):
        x, y = _paired(scores, jnd, groups[name])
        try:
            p, s = plcc(x, y), srcc(x, y)
            kept_p.append(p)
            kept_s.append(s)
        except BenchError as exc:
            warnings.warn(
                f"metric {scores.metric!r}, {group_by} group {name!r} "
                f"excluded from the mean: {exc}", stacklevel=2)
            p = s = float("nan")
        detail.append(GroupResult(name, len(x), p, s))
    if not kept_p:
        raise BenchError(f"no non-degenerate {group_by} group")
    return float(np.mean(kept_p)), float(np.mean(kept_s)), detail


@dataclass
class MRRResult:
    z: float
    p: float


def mrr_test(r_jk: float, r_jh: float, r_kh: float, n: int) -> MRRResult:
    """Meng-Rosenthal-Rubin z-test for two correlations sharing a variable.

    ``r_jk`` and ``r_jh`` correlate metrics k and h with the shared JND
    vector j; ``r_kh`` correlates the two metrics; ``n`` is the sample count.
    """
    if n <= 3:
        raise BenchError(f"need n > 3, got {n}")
    for r in (r_jk, r_jh, r_kh):
        if not -1.0 < r < 1.0:
            raise BenchError(f"correlations must lie strictly in (-1, 1), got {r}")
    r_sq = (r_jk * r_jk + r_jh * r_jh) / 2.0
    f = min(1.0, (1.0 - r_kh) / (2.0 * (1.0 - r_sq)))
    h = (1.0 - f * r_sq) / (1.0 - r_sq)
    z = (math.atanh(r_jk) - math.atanh(r_jh)) * math.sqrt(
        (n - 3) / (2.0 * (1.0 - r_kh) * h))
    p = 2.0 * float(ndtr(-abs(z)))
    return MRRResult(z=z, p=p)


@dataclass
class CorrelationReport:
    metric: str
    polarity: str
    n: int
    overall_plcc: float
    overall_srcc: float
    per_codec_plcc: float
    per_codec_srcc: float
    per_source_plcc: float
    per_source_srcc: float
    codec_detail: list[GroupResult] = field(default_factory=list)
    source_detail: list[GroupResult] = field(default_factory=list)


def build_report(
    scores: MetricScores,
    jnd: dict[StimKey, float],
) -> CorrelationReport:
    x, y = _paired(scores, jnd)
    pc_p, pc_s, codec_detail = grouped_correlation(scores, jnd, "codec")
    ps_p, ps_s, source_detail = grouped_correlation(scores, jnd, "source")
    return CorrelationReport(
        metric=scores.metric,
        polarity=scores.polarity,
        n=len(x),
        overall_plcc=plcc(x, y),
        overall_srcc=srcc(x, y),
        per_codec_plcc=pc_p,
        per_codec_srcc=pc_s,
        per_source_plcc=ps_p,
        per_source_srcc=ps_s,
        codec_detail=codec_detail,
        source_detail=source_detail,
    )


def significance_matrix(
    metrics: list[MetricScores],
    jnd: dict[StimKey, float],
) -> dict[str, dict[str, MRRResult]]:
    """Pairwise MRR tests on overall SRCC over the common stimulus set."""
    common = sorted(set(jnd) & set.intersection(
        *(set(m.scores) for m in metrics)))
    if len(common) <= 3:
        raise BenchError("too few commonly scored stimuli for the z-test")
    y = np.array([jnd[k] for k in common])
    vectors = {m.metric: np.array([m.scores[k] for k in common])
               for m in metrics}
    r_j = {name: srcc(v, y) for name, v in vectors.items()}

    matrix: dict[str, dict[str, MRRResult]] = {}
    for a in metrics:
        row = {}
        for b in metrics:
            if a.metric == b.metric:
                continue
            r_kh = srcc(vectors[a.metric], vectors[b.metric])
            try:
                row[b.metric] = mrr_test(r_j[a.metric], r_j[b.metric],
                                         r_kh, len(common))
            except BenchError:
                # a correlation of exactly +/-1 has no Fisher transform;
                # drop the pair rather than fail the whole report
                continue
        matrix[a.metric] = row
    return matrix


FISHER_NOTE = ("note: z-tests apply the Fisher transform to rank "
               "correlations, which is an approximation")


def render_report(
    reports: list[CorrelationReport],
    significance: dict[str, dict[str, MRRResult]] | None = None,
) -> str:
    """Plain-text correlation matrix plus the optional pairwise z/p table."""
    lines = []
    header = (f"{'metric':<18} {'n':>4}  "
              f"{'PLCC':>7} {'SRCC':>7}  "
              f"{'PLCC/codec':>10} {'SRCC/codec':>10}  "
              f"{'PLCC/src':>8} {'SRCC/src':>8}")
    lines.append(header)
    lines.append("-" * len(header))
    for r in reports:
        lines.append(
            f"{r.metric:<18} {r.n:>4}  "
            f"{r.overall_plcc:>7.3f} {r.overall_srcc:>7.3f}  "
            f"{r.per_codec_plcc:>10.3f} {r.per_codec_srcc:>10.3f}  "
            f"{r.per_source_plcc:>8.3f} {r.per_source_srcc:>8.3f}")
    if significance:
        lines.append("")
        lines.append("pairwise SRCC comparison (Meng-Rosenthal-Rubin)")
        lines.append(FISHER_NOTE)
        for a in sorted(significance):
            for b in sorted(significance[a]):
                res = significance[a][b]
                lines.append(f"  {a} vs {b}: z = {res.z:+.3f}, p = {res.p:.4g}")
    return "\n".join(lines) + "\n"


# -- score files ---------------------------------------------------------

SCORE_COLUMNS = ["source_id", "codec_id", "level", "score"]


def write_score_file(scores: MetricScores, path: str | Path) -> None:
    lines = [f"# metric: {scores.metric}",
             f"# polarity: {scores.polarity}",
             ",".join(SCORE_COLUMNS)]
    for (source_id, codec_id, level), value in sorted(scores.scores.items()):
        lines.append(f"{source_id},{codec_id},{level},{value:.10g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_score_file(path: str | Path) -> MetricScores:
    metric = None
    polarity = None
    table: dict[StimKey, float] = {}
    header_seen = False
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("metric:"):
                metric = body.split(":", 1)[1].strip()
            elif body.startswith("polarity:"):
                polarity = body.split(":", 1)[1].strip()
            continue
        if not header_seen:
            if line.split(",") != SCORE_COLUMNS:
                raise BenchError(
                    f"{path}:{lineno}: expected columns {SCORE_COLUMNS}")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise BenchError(f"{path}:{lineno}: expected 4 fields")
        key = (parts[0], parts[1], int(parts[2]))
        if key in table:
            raise BenchError(f"{path}:{lineno}: duplicate stimulus {key}")
        table[key] = float(parts[3])
    if metric is None or polarity is None:
        raise BenchError(f"{path}: missing '# metric:' or '# polarity:' header")
    return MetricScores(metric=metric, polarity=polarity, scores=table)


def load_score_dir(directory: str | Path) -> list[MetricScores]:
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise BenchError(f"no .csv score files under {directory}")
    return [load_score_file(p) for p in paths]
