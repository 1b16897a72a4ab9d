"""``aic`` command line: study design, serving, analysis, and reporting."""

from __future__ import annotations

import dataclasses
import json
import math
import sys
from pathlib import Path

import click

from . import __version__
from .bench import (
    BenchError,
    build_report,
    load_score_dir,
    mrr_test,
    render_report,
    significance_matrix,
    srcc,
    stimulus_jnd,
)
from .catalog import load_manifest, match_bitrate
from .cleansing import cleanse, write_audit
from .design import Method, build_design, load_design, save_design
from .fitting import (
    BootstrapConfig,
    FitConfig,
    band_width_at,
    bootstrap_all,
    fit_all,
    load_bands,
    load_models,
    plot_data,
    save_bands,
    save_models,
)
from .kernel import BACKEND
from .store import ResponseStore, read_responses_csv, write_responses_csv


@click.group()
@click.version_option(__version__, prog_name="aic")
def main():
    """Subjective image-quality study toolkit."""


@main.command()
def info():
    """Show version and which likelihood kernel backend is active."""
    click.echo(f"aic {__version__}")
    click.echo(f"kernel backend: {BACKEND}")


# -- catalog -------------------------------------------------------------------

@main.group()
def catalog():
    """Stimulus catalog operations."""


@catalog.command("match")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--codec", required=True, help="codec id from the manifest")
@click.option("--source", required=True, help="source image id")
@click.option("--target-bpp", type=float, required=True)
@click.option("--tolerance", type=float, default=None,
              help="relative deviation below which the search stops early "
                   "(default: run until the quality interval collapses)")
@click.option("--workdir", type=click.Path(), default="encodes",
              show_default=True,
              help="directory where the encoder writes candidate files")
def catalog_match(manifest_path, codec, source, target_bpp, tolerance,
                  workdir):
    """Binary-search the encoder quality setting for a target bitrate."""
    manifest = load_manifest(manifest_path)
    recipe = manifest.codec(codec)
    src = manifest.source(source)
    result = match_bitrate(recipe, src, target_bpp, tolerance=tolerance,
                           workdir=workdir)
    click.echo(json.dumps(dataclasses.asdict(result), indent=2))
    if result.target_unreachable:
        sys.exit(3)


# -- design --------------------------------------------------------------------

@main.group()
def design():
    """Triplet design generation."""


@design.command("gen")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["btc", "ptc"]), required=True)
@click.option("--cross-count", type=int, default=24, show_default=True)
@click.option("--batch-size", type=int, default=120, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def design_gen(manifest_path, method, cross_count, batch_size, seed, out):
    """Generate the full triplet design of one comparison method."""
    manifest = load_manifest(manifest_path)
    d = build_design(manifest, Method(method), cross_count=cross_count,
                     batch_size=batch_size, seed=seed)
    save_design(d, out)
    click.echo(f"{len(d.triplets)} triplets in {len(d.batches)} batches -> {out}")


def _load_designs(paths):
    designs = [load_design(p) for p in paths]
    if len({d.method for d in designs}) != len(designs):
        raise click.ClickException("each design file must cover a distinct method")
    return designs


# -- serve / export --------------------------------------------------------------

@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--batches", "design_paths", required=True, multiple=True,
              type=click.Path(exists=True),
              help="design file; repeat for several methods")
@click.option("--data-dir", required=True, type=click.Path())
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--coverage", type=int, default=24, show_default=True,
              help="target responses per triplet")
@click.option("--admin-token", default=None,
              help="bearer token required by the export endpoint")
def serve(manifest_path, design_paths, data_dir, port, host, coverage,
          admin_token):
    """Serve the study API (enrollment, batches, assets, responses)."""
    import uvicorn

    from .service import create_app

    manifest = load_manifest(manifest_path)
    store = ResponseStore(data_dir, _load_designs(design_paths),
                          target_coverage=coverage)
    app = create_app(store, manifest, admin_token=admin_token)
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--batches", "design_paths", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def export(data_dir, design_paths, out):
    """Export the recorded responses to the tabular interchange file."""
    store = ResponseStore(data_dir, _load_designs(design_paths), durable=False)
    rows = store.export_rows()
    store.close()
    write_responses_csv(rows, out)
    click.echo(f"{len(rows)} responses -> {out}")


# -- analysis ---------------------------------------------------------------------

@main.command()
@click.option("--responses", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--threshold", type=float, default=0.7, show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="retained responses file")
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="audit report (per-instance scores and decisions)")
def clean(responses, manifest_path, threshold, out, report_path):
    """Score batch instances and drop unreliable ones."""
    manifest = load_manifest(manifest_path)
    rows = read_responses_csv(responses)
    kept, report = cleanse(rows, manifest, threshold=threshold)
    write_responses_csv(kept, out)
    write_audit(report, report_path)
    for method, counts in sorted(report["by_method"].items()):
        click.echo(f"{method}: retained {counts['retained']} / "
                   f"{counts['retained'] + counts['excluded']} instances")


@main.command()
@click.option("--responses", required=True, type=click.Path(exists=True),
              help="retained responses from `aic clean`")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--k", type=float, default=1.0, show_default=True,
              help="Thurstone scaling constant")
@click.option("--restarts", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def fit(responses, manifest_path, out, k, restarts, seed):
    """Fit per-source RD curves and boosting transforms by ML."""
    manifest = load_manifest(manifest_path)
    rows = read_responses_csv(responses)
    models = fit_all(rows, manifest,
                     FitConfig(k=k, n_restarts=restarts, seed=seed))
    save_models(models, out)
    for sid, m in sorted(models.items()):
        flag = "" if m.converged else "  [not converged]"
        click.echo(f"{sid}: nll={m.nll:.2f} restart={m.restart_index}{flag}")


@main.command()
@click.option("--responses", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--n", "n_boot", type=int, default=1000, show_default=True)
@click.option("--grid", "grid_size", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--stratify-by-method", is_flag=True, default=False,
              help="resample BTC and PTC questions separately")
@click.option("--out", required=True, type=click.Path())
def bootstrap(responses, manifest_path, model_path, n_boot, grid_size, seed,
              jobs, stratify_by_method, out):
    """Bootstrap 95% confidence bands for every fitted RD curve."""
    manifest = load_manifest(manifest_path)
    rows = read_responses_csv(responses)
    models = load_models(model_path)
    bands = bootstrap_all(rows, manifest, models, BootstrapConfig(
        n_boot=n_boot, grid_size=grid_size, seed=seed, n_jobs=jobs,
        stratify_by_method=stratify_by_method))
    save_bands(bands, out)
    widths = [w for b in bands
              if not math.isnan(w := band_width_at(b, 1.0))]
    if widths:
        click.echo(f"mean width at 1 JND: {sum(widths) / len(widths):.3f}")
    click.echo(f"{len(bands)} bands -> {out}")


@main.command("plot-data")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--bands", "bands_path", required=True,
              type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def plot_data_cmd(model_path, bands_path, manifest_path, out):
    """Emit per-source panel series (curves, bands, stimulus points)."""
    manifest = load_manifest(manifest_path)
    models = load_models(model_path)
    bands = load_bands(bands_path)
    panels = plot_data(models, bands, manifest)
    Path(out).write_text(json.dumps(panels, indent=2) + "\n")
    click.echo(f"{len(panels)} source panels -> {out}")


@main.command()
@click.option("--models", "model_path", required=True,
              type=click.Path(exists=True), help="fitted model file")
@click.option("--scores", "scores_dir", required=True,
              type=click.Path(exists=True), help="directory of score files")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--significance/--no-significance", default=True,
              show_default=True, help="append the pairwise MRR z/p matrix")
@click.option("--mrr-on", type=click.Choice(["overall", "codec", "source"]),
              default="overall", show_default=True,
              help="sample over which the z-test correlations are computed")
def bench(model_path, scores_dir, manifest_path, out, significance, mrr_on):
    """Correlate metric score files against the reconstructed JND scale."""
    manifest = load_manifest(manifest_path)
    models = load_models(model_path)
    metrics = load_score_dir(scores_dir)
    jnd = stimulus_jnd(models, manifest)

    reports = [build_report(m, jnd) for m in metrics]
    matrix = None
    if significance and len(metrics) >= 2:
        if mrr_on == "overall":
            matrix = significance_matrix(metrics, jnd)
        else:
            matrix = _grouped_significance(metrics, jnd, mrr_on)
    text = render_report(reports, matrix)
    Path(out).write_text(text)
    click.echo(text, nl=False)


def _grouped_significance(metrics, jnd, group_by):
    """Pairwise MRR tests inside each codec/source group, labeled by group."""
    part = 1 if group_by == "codec" else 0
    groups = {}
    for key in jnd:
        groups.setdefault(key[part], []).append(key)
    matrix = {}
    for name in sorted(groups):
        sub = {k: jnd[k] for k in groups[name]}
        common = sorted(set(sub) & set.intersection(
            *(set(m.scores) for m in metrics)))
        if len(common) <= 3:
            continue
        y = [sub[k] for k in common]
        for a in metrics:
            for b in metrics:
                if a.metric == b.metric:
                    continue
                xa = [a.scores[k] for k in common]
                xb = [b.scores[k] for k in common]
                try:
                    res = mrr_test(srcc(xa, y), srcc(xb, y), srcc(xa, xb),
                                   len(common))
                except BenchError:
                    continue  # +/-1 correlation: no Fisher transform
                matrix.setdefault(f"{a.metric}[{name}]", {})[b.metric] = res
    return matrix


# -- pipeline --------------------------------------------------------------------

@main.command("run")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--stages", default=None,
              help="comma-separated subset, e.g. design,clean,fit")
def run_cmd(config_path, stages):
    """Run the analysis pipeline from a structured config file."""
    from .pipeline import PipelineError, load_run_config, run

    config = load_run_config(config_path)
    wanted = stages.split(",") if stages else None
    try:
        report = run(config, wanted)
    except PipelineError as exc:
        raise click.ClickException(str(exc)) from exc
    for stage, entry in report["stages"].items():
        click.echo(f"{stage}: {entry['status']} ({entry.get('elapsed_s', 0)}s)")


if __name__ == "__main__":
    main()
