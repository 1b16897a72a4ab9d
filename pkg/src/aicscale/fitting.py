"""Maximum-likelihood fitting and bootstrap confidence bands.

The 4K model parameters of a source (4 per codec) are optimized in a
log-parameterized space: ``alpha``, ``beta``, ``gamma1`` through ``log``,
``gamma2`` through an inverse softplus so the quadratic boost coefficient
can approach zero without violating positivity elsewhere.  Optimization is
multi-start quasi-Newton (L-BFGS-B with the analytic gradient) with a
Nelder-Mead fallback when the line search fails.

Bootstrap resampling draws directed triplet questions with replacement;
a resample is represented as a per-question multiplicity vector so each
replicate reuses the aggregated table with scaled counts.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

from .catalog import StudyManifest
from .kernel import nll_and_grad
from .model import (
    CodecParams,
    ModelError,
    QuestionTable,
    SourceModel,
    build_question_table,
)
from .store import Response

__all__ = [
    "FitConfig",
    "BootstrapConfig",
    "BootstrapError",
    "RDCurveBand",
    "fit_source",
    "fit_all",
    "null_nll",
    "bootstrap_bands",
    "bootstrap_all",
    "band_width_at",
    "save_models",
    "load_models",
    "save_bands",
    "load_bands",
    "plot_data",
]


class BootstrapError(RuntimeError):
    """Too many replicate fits failed for the bands to be trustworthy."""


@dataclass(frozen=True)
class FitConfig:
    k: float = 1.0                # Thurstone scaling constant
    n_restarts: int = 8
    max_iterations: int = 500
    seed: int = 0
    restart_sigma: float = 0.3    # log-normal perturbation of restarts
    init_alpha: float = 2.0
    init_gamma1: float = 2.0
    init_gamma2: float = 0.1


@dataclass(frozen=True)
class BootstrapConfig:
    n_boot: int = 1000
    grid_size: int = 100
    seed: int = 0
    n_jobs: int = 1
    stratify_by_method: bool = False
    max_failure_fraction: float = 0.05
    max_iterations: int = 500


@dataclass
class RDCurveBand:
    """95% bootstrap band of one codec's RD curve on a bitrate grid."""

    source_id: str
    codec_id: str
    grid: np.ndarray    # bpp, equally spaced over the stimulus span
    point: np.ndarray   # fitted d(r), JND
    lower: np.ndarray   # 2.5th percentile
    upper: np.ndarray   # 97.5th percentile

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.point = np.asarray(self.point, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not (self.grid.shape == self.point.shape == self.lower.shape
                == self.upper.shape):
            raise ModelError("band arrays must share one shape")
        if np.any(self.lower > self.point) or np.any(self.point > self.upper):
            raise ModelError("band must contain the point estimate")
        if np.any(np.diff(self.point) >= 0):
            raise ModelError("point estimate must decrease with bitrate")

    def width(self) -> np.ndarray:
        return self.upper - self.lower


# -- parameter transforms ---------------------------------------------------

def _softplus(x):
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))),
                    np.log1p(np.exp(np.minimum(x, 0.0))))


def _softplus_inv(y):
    y = np.maximum(np.asarray(y, dtype=float), 1e-12)
    return np.where(y > 20.0, y, np.log(np.expm1(y)))


def _raw_to_natural(raw: np.ndarray) -> np.ndarray:
    nat = np.empty_like(raw)
    nat[:, :3] = np.exp(raw[:, :3])
    nat[:, 3] = _softplus(raw[:, 3])
    return nat


def _natural_to_raw(nat: np.ndarray) -> np.ndarray:
    raw = np.empty_like(nat)
    raw[:, :3] = np.log(nat[:, :3])
    raw[:, 3] = _softplus_inv(nat[:, 3])
    return raw


def _objective(x, table: QuestionTable, n_left, n_right, k, want_grad=True):
    raw = x.reshape(-1, 4)
    nat = np.ascontiguousarray(_raw_to_natural(raw))
    nll, grad = nll_and_grad(
        nat, table.codec_left, table.r_left, table.codec_right, table.r_right,
        table.boosted, n_left, n_right, k, want_grad=want_grad,
    )
    if not want_grad:
        return nll, None
    # chain rule into the raw space: d nat / d raw
    jac = np.empty_like(nat)
    jac[:, :3] = nat[:, :3]
    jac[:, 3] = 1.0 / (1.0 + np.exp(-raw[:, 3]))  # sigmoid = softplus'
    return nll, (grad * jac).ravel()


_RAW_BOUNDS = (-30.0, 30.0)  # keeps exp() finite; generous in natural units

# the point fit runs to a tight projected gradient; replicate refits accept
# a looser one, so a warm start on unchanged data converges immediately
_POLISH_OPTIONS = {"ftol": 1e-15, "gtol": 1e-9}
_REPLICATE_OPTIONS = {"gtol": 1e-3}


def _minimize_once(table, n_left, n_right, k, start_nat, max_iterations,
                   lbfgs_options=None):
    """One optimization attempt; returns (nat, nll, nit, converged)."""
    x0 = _natural_to_raw(np.asarray(start_nat, dtype=float)).ravel()
    x0 = np.clip(x0, *_RAW_BOUNDS)
    bounds = [_RAW_BOUNDS] * x0.size

    options = {"maxiter": max_iterations}
    if lbfgs_options:
        options.update(lbfgs_options)
    res = minimize(
        _objective, x0, args=(table, n_left, n_right, k), jac=True,
        method="L-BFGS-B", bounds=bounds,
        options=options,
    )
    nit = int(res.nit)
    converged = bool(res.success and np.isfinite(res.fun))
    if not converged:
        # line-search failure or abnormal exit: polish with a simplex run
        x_start = res.x if np.isfinite(res.fun) else x0
        res_nm = minimize(
            lambda x: _objective(x, table, n_left, n_right, k,
                                 want_grad=False)[0],
            x_start, method="Nelder-Mead",
            options={"maxiter": max(2000, 200 * x0.size), "xatol": 1e-8,
                     "fatol": 1e-10},
        )
        nit += int(res_nm.nit)
        if np.isfinite(res_nm.fun) and (not np.isfinite(res.fun)
                                        or res_nm.fun <= res.fun):
            res = res_nm
            converged = bool(res_nm.success)
    if not np.isfinite(res.fun):
        raise ModelError("optimizer produced a non-finite likelihood")
    nat = _raw_to_natural(np.clip(res.x, *_RAW_BOUNDS).reshape(-1, 4))
    return nat, float(res.fun), nit, converged


def _initial_natural(table: QuestionTable, config: FitConfig) -> np.ndarray:
    beta0 = np.log(config.init_alpha) / table.median_stimulus_bitrate()
    row = np.array([config.init_alpha, beta0,
                    config.init_gamma1, config.init_gamma2])
    return np.tile(row, (len(table.codec_ids), 1))


def _check_identified(table: QuestionTable) -> None:
    used = set(table.codec_left[table.codec_left >= 0].tolist())
    used |= set(table.codec_right[table.codec_right >= 0].tolist())
    missing = [c for i, c in enumerate(table.codec_ids) if i not in used]
    if missing:
        raise ModelError(
            f"source {table.source_id!r}: no retained responses involve "
            f"codec(s) {missing}; parameters are unidentified"
        )


def fit_source(table: QuestionTable, config: FitConfig = FitConfig()) -> SourceModel:
    """Fit one source's 4K parameters by multi-start maximum likelihood."""
    _check_identified(table)
    base = _initial_natural(table, config)

    best = None
    for restart in range(max(1, config.n_restarts)):
        if restart == 0:
            start = base
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, restart]))
            start = base * np.exp(
                rng.normal(0.0, config.restart_sigma, size=base.shape))
        try:
            nat, nll, nit, converged = _minimize_once(
                table, table.n_left, table.n_right, config.k, start,
                config.max_iterations)
        except ModelError:
            continue
        if best is None or nll < best[1]:
            best = (nat, nll, nit, converged, restart)

    if best is None:
        raise ModelError(
            f"all {config.n_restarts} restarts failed for source "
            f"{table.source_id!r}")

    nat, nll, nit, converged, restart = best
    try:
        # polish the winner to a tight first-order point, so warm restarts
        # (e.g. bootstrap replicates of the unresampled data) stay put
        nat2, nll2, nit2, conv2 = _minimize_once(
            table, table.n_left, table.n_right, config.k, nat,
            max(2000, config.max_iterations), _POLISH_OPTIONS)
        if nll2 <= nll:
            nat, nll, converged = nat2, nll2, converged or conv2
        nit += nit2
    except ModelError:
        pass
    params = {c: CodecParams(*(float(v) for v in nat[i]))
              for i, c in enumerate(table.codec_ids)}
    return SourceModel(
        source_id=table.source_id, params=params, k=config.k, nll=nll,
        iterations=nit, restart_index=restart, converged=converged,
    )


def fit_all(
    rows: Sequence[Response],
    manifest: StudyManifest,
    config: FitConfig = FitConfig(),
) -> dict[str, SourceModel]:
    """Fit every source present in the manifest, deterministic per source."""
    models = {}
    for source in manifest.sources:
        table = build_question_table(list(rows), manifest, source.id)
        child = np.random.SeedSequence(
            [config.seed, zlib.crc32(source.id.encode())])
        seed = int(child.generate_state(1)[0])
        models[source.id] = fit_source(table, replace(config, seed=seed))
    return models


def null_nll(table: QuestionTable) -> float:
    """NLL of the null model in which every comparison is a coin flip."""
    return float((table.n_left.sum() + table.n_right.sum()) * np.log(2.0))


# -- bootstrap ---------------------------------------------------------------

def _resample_indices(rng, table: QuestionTable, stratify: bool) -> np.ndarray:
    n = table.n_questions
    if not stratify:
        return rng.integers(0, n, size=n)
    parts = []
    for flag in (1, 0):
        stratum = np.flatnonzero(table.boosted == flag)
        if stratum.size:
            parts.append(rng.choice(stratum, size=stratum.size, replace=True))
    return np.concatenate(parts)


def _replicate_curves(table, start_nat, grids, k, config, rep, index_sampler):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, rep]))
    if index_sampler is not None:
        idx = np.asarray(index_sampler(rng, table.n_questions), dtype=np.intp)
    else:
        idx = _resample_indices(rng, table, config.stratify_by_method)
    mult = np.bincount(idx, minlength=table.n_questions).astype(float)
    n_left, n_right = table.scaled_counts(mult)
    try:
        nat, _, _, converged = _minimize_once(
            table, n_left, n_right, k, start_nat, config.max_iterations,
            _REPLICATE_OPTIONS)
    except ModelError:
        return None
    if not converged:
        return None
    out = {}
    for codec_id, grid in grids.items():
        i = table.codec_ids.index(codec_id)
        out[codec_id] = nat[i, 0] * np.exp(-nat[i, 1] * grid)
    return out


def bootstrap_bands(
    table: QuestionTable,
    model: SourceModel,
    config: BootstrapConfig = BootstrapConfig(),
    index_sampler: Callable | None = None,
) -> list[RDCurveBand]:
    """95% percentile bands of d(r) per codec from resampled refits.

    ``index_sampler(rng, n) -> indices`` overrides the resampling draw
    (dependency injection for tests); replicates are seeded independently
    from (seed, replicate) so the worker count cannot change the result.
    """
    grids = {
        codec_id: np.linspace(lo, hi, config.grid_size)
        for codec_id, (lo, hi) in sorted(table.stimulus_bitrates.items())
    }
    start_nat = model.param_array(table.codec_ids)

    jobs = (
        delayed(_replicate_curves)(
            table, start_nat, grids, model.k, config, rep, index_sampler)
        for rep in range(config.n_boot)
    )
    results = Parallel(n_jobs=config.n_jobs)(jobs)

    failures = sum(1 for r in results if r is None)
    if failures > config.max_failure_fraction * config.n_boot:
        raise BootstrapError(
            f"{failures}/{config.n_boot} bootstrap replicates failed "
            f"for source {table.source_id!r}")

    bands = []
    for codec_id, grid in grids.items():
        curves = np.stack([r[codec_id] for r in results if r is not None])
        lower, upper = np.percentile(curves, [2.5, 97.5], axis=0)
        params = model.params[codec_id]
        point = params.alpha * np.exp(-params.beta * grid)
        # percentile bands can sit a hair off the point fit; never exclude it
        lower = np.minimum(lower, point)
        upper = np.maximum(upper, point)
        bands.append(RDCurveBand(
            source_id=table.source_id, codec_id=codec_id,
            grid=grid, point=point, lower=lower, upper=upper,
        ))
    return bands


def bootstrap_all(
    rows: Sequence[Response],
    manifest: StudyManifest,
    models: dict[str, SourceModel],
    config: BootstrapConfig = BootstrapConfig(),
) -> list[RDCurveBand]:
    """Bands for every source, one independent seed stream per source."""
    bands = []
    for source in manifest.sources:
        if source.id not in models:
            raise ModelError(f"no fitted model for source {source.id!r}")
        table = build_question_table(list(rows), manifest, source.id)
        child = np.random.SeedSequence(
            [config.seed, zlib.crc32(source.id.encode())])
        seed = int(child.generate_state(1)[0])
        bands.extend(bootstrap_bands(
            table, models[source.id], replace(config, seed=seed)))
    return bands


def band_width_at(band: RDCurveBand, d_level: float = 1.0) -> float:
    """Band width at the bitrate where the point estimate crosses d_level.

    Returns NaN when the crossing lies outside the grid span.
    """
    point = band.point
    if not (point.min() <= d_level <= point.max()):
        return float("nan")
    # point is strictly decreasing in r: interpolate on the reversed axis
    r_star = float(np.interp(d_level, point[::-1], band.grid[::-1]))
    lo = float(np.interp(r_star, band.grid, band.lower))
    hi = float(np.interp(r_star, band.grid, band.upper))
    return hi - lo


# -- persistence -------------------------------------------------------------

MODEL_FORMAT = "aicscale-model/1"


def save_models(models: dict[str, SourceModel], path: str | Path) -> None:
    doc = {"format": MODEL_FORMAT, "sources": {}}
    for source_id in sorted(models):
        m = models[source_id]
        doc["sources"][source_id] = {
            "k": m.k,
            "nll": m.nll,
            "iterations": m.iterations,
            "restart_index": m.restart_index,
            "converged": m.converged,
            "codecs": {
                c: {"alpha": p.alpha, "beta": p.beta,
                    "gamma1": p.gamma1, "gamma2": p.gamma2}
                for c, p in sorted(m.params.items())
            },
        }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_models(path: str | Path) -> dict[str, SourceModel]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ModelError(f"unrecognized model file format in {path}")
    models = {}
    for source_id, entry in doc["sources"].items():
        params = {
            c: CodecParams(v["alpha"], v["beta"], v["gamma1"], v["gamma2"])
            for c, v in entry["codecs"].items()
        }
        models[source_id] = SourceModel(
            source_id=source_id, params=params, k=entry["k"],
            nll=entry["nll"], iterations=entry["iterations"],
            restart_index=entry["restart_index"],
            converged=entry["converged"],
        )
    return models


BAND_COLUMNS = ["source_id", "codec_id", "bitrate_bpp",
                "distortion_jnd", "lower_jnd", "upper_jnd"]


def save_bands(bands: list[RDCurveBand], path: str | Path) -> None:
    lines = [
        "# 95% bootstrap confidence bands of the fitted RD curves",
        "# one row per grid point; distortion in JND under plain viewing",
        ",".join(BAND_COLUMNS),
    ]
    for b in bands:
        for r, d, lo, hi in zip(b.grid, b.point, b.lower, b.upper):
            lines.append(f"{b.source_id},{b.codec_id},"
                         f"{r:.10g},{d:.10g},{lo:.10g},{hi:.10g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_bands(path: str | Path) -> list[RDCurveBand]:
    rows = []
    header = None
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = line.split(",")
            if header != BAND_COLUMNS:
                raise ModelError(f"unexpected band file columns: {header}")
            continue
        rows.append(line.split(","))

    bands = []
    series: dict[tuple[str, str], list[list[float]]] = {}
    order = []
    for source_id, codec_id, r, d, lo, hi in rows:
        key = (source_id, codec_id)
        if key not in series:
            series[key] = [[], [], [], []]
            order.append(key)
        for store, value in zip(series[key], (r, d, lo, hi)):
            store.append(float(value))
    for source_id, codec_id in order:
        grid, point, lower, upper = series[(source_id, codec_id)]
        bands.append(RDCurveBand(source_id, codec_id,
                                 grid, point, lower, upper))
    return bands


def plot_data(
    models: dict[str, SourceModel],
    bands: list[RDCurveBand],
    manifest: StudyManifest,
) -> dict:
    """Per-source panel series: band curves plus per-stimulus fitted JND."""
    panels: dict[str, dict] = {}
    by_key = {(b.source_id, b.codec_id): b for b in bands}
    for source in manifest.sources:
        model = models.get(source.id)
        if model is None:
            continue
        panel = {}
        for codec in manifest.codecs:
            band = by_key.get((source.id, codec.codec_id))
            if band is None:
                continue
            params = model.params[codec.codec_id]
            ladder = manifest.ladder(source.id, codec.codec_id)
            rates = [s.actual_bpp for s in ladder]
            panel[codec.codec_id] = {
                "bitrate_bpp": band.grid.tolist(),
                "distortion_jnd": band.point.tolist(),
                "lower_jnd": band.lower.tolist(),
                "upper_jnd": band.upper.tolist(),
                "stimuli": {
                    "level": [s.level for s in ladder],
                    "bitrate_bpp": rates,
                    "distortion_jnd": [
                        float(params.alpha * np.exp(-params.beta * r))
                        for r in rates
                    ],
                },
            }
        panels[source.id] = panel
    return panels
