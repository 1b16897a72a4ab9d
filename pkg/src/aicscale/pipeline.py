"""End-to-end study pipeline with a reproducible run report.

Stages run in a fixed order — design, simulate (optional, synthetic data
only), export, clean, fit, bootstrap, bench — each consuming files the
previous stage produced.  Every stage gets its own seed split from the
root seed, and the run report records SHA-256 hashes of all inputs and
outputs so re-runs can be verified byte-identical and later stages can
check they are reading exactly what an earlier run produced.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    build_report,
    load_score_dir,
    render_report,
    significance_matrix,
    stimulus_jnd,
    write_score_file,
)
from .catalog import load_manifest
from .cleansing import cleanse, write_audit
from .design import Method, build_design, load_design, save_design
from .fitting import (
    BootstrapConfig,
    FitConfig,
    band_width_at,
    bootstrap_all,
    fit_all,
    load_models,
    save_bands,
    save_models,
)
from .kernel import BACKEND
from .store import ResponseStore, read_responses_csv, write_responses_csv

__all__ = ["PipelineError", "RunConfig", "load_run_config", "run",
           "STAGES", "REPORT_NAME"]

STAGES = ("design", "simulate", "export", "clean", "fit", "bootstrap", "bench")
REPORT_NAME = "run-report.json"

_DEFAULT_PATHS = {
    "design_btc": "design-btc.json",
    "design_ptc": "design-ptc.json",
    "data_dir": "data",
    "generator_model": "generator-model.json",
    "scores_dir": "scores",
    "responses": "responses.csv",
    "retained": "retained.csv",
    "audit": "audit.json",
    "model": "model.json",
    "bands": "bands.csv",
    "bench_report": "bench-report.txt",
    "bench_json": "bench-report.json",
}

_KNOWN_KEYS = {"seed", "manifest", "out_dir", "stages", "paths",
               "design", "simulate", "clean", "fit", "bootstrap", "bench"}


class PipelineError(RuntimeError):
    """A stage failed or its inputs are missing/inconsistent."""


@dataclass
class RunConfig:
    base: Path                      # directory the config was loaded from
    seed: int = 0
    manifest: str = "manifest.json"
    out_dir: str = "."
    stages: list[str] = field(default_factory=lambda: list(STAGES))
    paths: dict[str, str] = field(default_factory=dict)
    design: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    clean: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    bootstrap: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise PipelineError(f"unknown stage(s) {unknown}; valid: {list(STAGES)}")
        # keep declared pipeline order regardless of config order
        self.stages = [s for s in STAGES if s in self.stages]
        merged = dict(_DEFAULT_PATHS)
        merged.update(self.paths)
        self.paths = merged

    @property
    def out_root(self) -> Path:
        out = Path(self.out_dir)
        return out if out.is_absolute() else self.base / out

    def path(self, name: str) -> Path:
        return self.out_root / self.paths[name]

    @property
    def manifest_path(self) -> Path:
        p = Path(self.manifest)
        return p if p.is_absolute() else self.base / p

    def stage_seed(self, stage: str) -> int:
        ss = np.random.SeedSequence([self.seed, zlib.crc32(stage.encode())])
        return int(ss.generate_state(1)[0])


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    doc = json.loads(path.read_text())
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise PipelineError(
            f"unknown config key(s) {sorted(unknown)}; valid: {sorted(_KNOWN_KEYS)}")
    return RunConfig(base=path.parent.resolve(), **doc)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _relname(config: RunConfig, path: Path) -> str:
    try:
        return str(Path(path).resolve().relative_to(config.out_root.resolve()))
    except ValueError:
        return str(path)


# -- stage input declarations --------------------------------------------------

def _inputs_design(config):
    return [config.manifest_path]


def _inputs_simulate(config):
    return [config.manifest_path,
            config.path("design_btc"), config.path("design_ptc")]


def _inputs_export(config):
    return [config.path("data_dir") / "events.log",
            config.path("design_btc"), config.path("design_ptc")]


def _inputs_clean(config):
    return [config.path("responses"), config.manifest_path]


def _inputs_fit(config):
    return [config.path("retained"), config.manifest_path]


def _inputs_bootstrap(config):
    return [config.path("retained"), config.path("model"),
            config.manifest_path]


def _inputs_bench(config):
    scores = sorted(config.path("scores_dir").glob("*.csv"))
    return [config.path("model"), config.manifest_path, *scores]


# -- stage bodies ---------------------------------------------------------------

def _stage_design(config: RunConfig):
    manifest = load_manifest(config.manifest_path)
    opts = config.design
    seed = config.stage_seed("design")
    outputs, summary = [], {}
    for method, key in ((Method.BTC, "design_btc"), (Method.PTC, "design_ptc")):
        design = build_design(
            manifest, method,
            cross_count=opts.get("cross_count", 24),
            batch_size=opts.get("batch_size", 120),
            seed=seed,
        )
        out = config.path(key)
        save_design(design, out)
        outputs.append(out)
        summary[method.value] = {
            "triplets": len(design.triplets),
            "batches": len(design.batches),
        }
    return outputs, summary


def _load_designs(config: RunConfig):
    return [load_design(config.path("design_btc")),
            load_design(config.path("design_ptc"))]


def _stage_simulate(config: RunConfig):
    from .simulate import (
        default_generator_models,
        simulate_into_store,
        synth_metric_scores,
    )

    manifest = load_manifest(config.manifest_path)
    designs = _load_designs(config)
    opts = config.simulate
    seed = config.stage_seed("simulate")

    data_dir = config.path("data_dir")
    if (data_dir / "events.log").exists():
        raise PipelineError(
            f"{data_dir} already holds an event log; simulate requires a "
            "fresh data directory")

    gen_path = opts.get("generator_model")
    if gen_path:
        models = load_models(config.base / gen_path)
    else:
        models = default_generator_models(
            manifest,
            alpha=opts.get("alpha", 3.0),
            gamma1=opts.get("gamma1", 2.0),
            gamma2=opts.get("gamma2", 0.3),
        )
    save_models(models, config.path("generator_model"))

    store = ResponseStore(
        data_dir, designs,
        target_coverage=opts.get("target_coverage", 24),
        durable=False,
    )
    n = simulate_into_store(store, manifest, models, seed=seed,
                            not_sure_rate=opts.get("not_sure_rate", 0.05))
    store.close()

    scores_dir = config.path("scores_dir")
    scores_dir.mkdir(parents=True, exist_ok=True)
    score_files = []
    metric_specs = opts.get("metrics", [
        {"name": "mock-sharp", "polarity": "higher_is_better", "noise": 0.03},
        {"name": "mock-blunt", "polarity": "higher_is_worse", "noise": 0.4},
    ])
    for i, spec in enumerate(metric_specs):
        scores = synth_metric_scores(
            manifest, models,
            metric=spec["name"], polarity=spec["polarity"],
            noise=spec.get("noise", 0.05), seed=seed + i + 1,
        )
        path = scores_dir / f"{spec['name']}.csv"
        write_score_file(scores, path)
        score_files.append(path)

    outputs = [data_dir / "events.log", config.path("generator_model"),
               *score_files]
    return outputs, {"responses_recorded": n,
                     "metrics": [s["name"] for s in metric_specs]}


def _stage_export(config: RunConfig):
    designs = _load_designs(config)
    data_dir = config.path("data_dir")
    store = ResponseStore(data_dir, designs,
                          target_coverage=config.simulate.get("target_coverage", 24),
                          durable=False)
    rows = store.export_rows()
    store.close()
    out = config.path("responses")
    write_responses_csv(rows, out)
    by_method = {}
    for r in rows:
        by_method[r.method.value] = by_method.get(r.method.value, 0) + 1
    return [out], {"rows": len(rows), "by_method": by_method}


def _stage_clean(config: RunConfig):
    manifest = load_manifest(config.manifest_path)
    rows = read_responses_csv(config.path("responses"))
    threshold = config.clean.get("threshold", 0.7)
    kept, report = cleanse(rows, manifest, threshold=threshold)
    write_responses_csv(kept, config.path("retained"))
    write_audit(report, config.path("audit"))
    summary = {
        "threshold": threshold,
        "retained_rows": len(kept),
        "by_method": report["by_method"],
    }
    return [config.path("retained"), config.path("audit")], summary


def _stage_fit(config: RunConfig):
    manifest = load_manifest(config.manifest_path)
    rows = read_responses_csv(config.path("retained"))
    opts = config.fit
    fc = FitConfig(
        k=opts.get("k", 1.0),
        n_restarts=opts.get("n_restarts", 8),
        max_iterations=opts.get("max_iterations", 500),
        seed=config.stage_seed("fit"),
    )
    models = fit_all(rows, manifest, fc)
    save_models(models, config.path("model"))
    summary = {
        sid: {"nll": m.nll, "converged": m.converged,
              "restart_index": m.restart_index}
        for sid, m in sorted(models.items())
    }
    return [config.path("model")], summary


def _stage_bootstrap(config: RunConfig):
    manifest = load_manifest(config.manifest_path)
    rows = read_responses_csv(config.path("retained"))
    models = load_models(config.path("model"))
    opts = config.bootstrap
    bc = BootstrapConfig(
        n_boot=opts.get("n_boot", 1000),
        grid_size=opts.get("grid_size", 100),
        seed=config.stage_seed("bootstrap"),
        n_jobs=opts.get("n_jobs", 1),
        stratify_by_method=opts.get("stratify_by_method", False),
    )
    bands = bootstrap_all(rows, manifest, models, bc)
    save_bands(bands, config.path("bands"))
    widths = [band_width_at(b, 1.0) for b in bands]
    widths = [w for w in widths if not np.isnan(w)]
    summary = {
        "bands": len(bands),
        "n_boot": bc.n_boot,
        "mean_width_at_1jnd": float(np.mean(widths)) if widths else None,
    }
    return [config.path("bands")], summary


def _stage_bench(config: RunConfig):
    manifest = load_manifest(config.manifest_path)
    models = load_models(config.path("model"))
    metrics = load_score_dir(config.path("scores_dir"))
    jnd = stimulus_jnd(models, manifest)

    reports = [build_report(m, jnd) for m in metrics]
    matrix = None
    if config.bench.get("significance", True) and len(metrics) >= 2:
        matrix = significance_matrix(metrics, jnd)

    text = render_report(reports, matrix)
    config.path("bench_report").write_text(text)
    doc = {
        "metrics": [dataclasses.asdict(r) for r in reports],
        "significance": {
            a: {b: dataclasses.asdict(res) for b, res in row.items()}
            for a, row in (matrix or {}).items()
        },
    }
    config.path("bench_json").write_text(json.dumps(doc, indent=2) + "\n")

    summary = {r.metric: {"plcc": r.overall_plcc, "srcc": r.overall_srcc}
               for r in reports}
    return [config.path("bench_report"), config.path("bench_json")], summary


_STAGE_INPUTS = {
    "design": _inputs_design,
    "simulate": _inputs_simulate,
    "export": _inputs_export,
    "clean": _inputs_clean,
    "fit": _inputs_fit,
    "bootstrap": _inputs_bootstrap,
    "bench": _inputs_bench,
}

_STAGE_BODIES = {
    "design": _stage_design,
    "simulate": _stage_simulate,
    "export": _stage_export,
    "clean": _stage_clean,
    "fit": _stage_fit,
    "bootstrap": _stage_bootstrap,
    "bench": _stage_bench,
}


# -- runner ---------------------------------------------------------------------

def _load_existing_report(path: Path) -> dict:
    if path.exists():
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError:
            pass
    return {}


def run(config: RunConfig, stages: list[str] | None = None) -> dict:
    """Execute the requested stages in order and write the run report.

    Before a stage runs, its declared inputs must exist, and any input that
    an earlier stage produced (in this run or a previous one recorded in
    the report) must still match the hash recorded at production time — a
    stale or hand-edited intermediate halts the pipeline instead of
    silently corrupting downstream results.
    """
    if stages is None:
        stages = config.stages
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise PipelineError(f"unknown stage(s) {unknown}")
    stages = [s for s in STAGES if s in stages]
    if not stages:
        raise PipelineError("no stages requested")

    config.out_root.mkdir(parents=True, exist_ok=True)
    report_path = config.out_root / REPORT_NAME

    report = _load_existing_report(report_path)
    report.setdefault("stages", {})
    report["root_seed"] = config.seed
    report["environment"] = {
        "package_version": __version__,
        "numpy": np.__version__,
        "kernel_backend": BACKEND,
    }

    known_hashes: dict[str, str] = {}
    for entry in report["stages"].values():
        for rel, digest in entry.get("outputs", {}).items():
            known_hashes[rel] = digest

    for stage in stages:
        t0 = time.monotonic()
        entry: dict = {"status": "failed", "seed": config.stage_seed(stage)}
        report["stages"][stage] = entry
        try:
            in_hashes = {}
            for p in _STAGE_INPUTS[stage](config):
                p = Path(p)
                rel = _relname(config, p)
                if not p.exists():
                    raise PipelineError(
                        f"stage {stage!r}: required input {rel} is missing; "
                        "run the producing stage first")
                digest = _sha256(p)
                if rel in known_hashes and known_hashes[rel] != digest:
                    raise PipelineError(
                        f"stage {stage!r}: input {rel} does not match the "
                        "hash recorded when it was produced")
                in_hashes[rel] = digest

            outputs, summary = _STAGE_BODIES[stage](config)

            out_hashes = {}
            for p in outputs:
                rel = _relname(config, Path(p))
                out_hashes[rel] = _sha256(Path(p))
                known_hashes[rel] = out_hashes[rel]
            entry.update(
                status="green",
                elapsed_s=round(time.monotonic() - t0, 3),
                inputs=in_hashes,
                outputs=out_hashes,
                summary=summary,
            )
        except Exception as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            entry["elapsed_s"] = round(time.monotonic() - t0, 3)
            report_path.write_text(json.dumps(report, indent=2) + "\n")
            if isinstance(exc, PipelineError):
                raise
            raise PipelineError(f"stage {stage!r} failed: {exc}") from exc
        report_path.write_text(json.dumps(report, indent=2) + "\n")

    return report
