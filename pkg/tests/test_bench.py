"""Metric benchmarking: correlations, grouping, MRR z-test, score files."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from aicscale.bench import (
    BenchError,
    MetricScores,
    build_report,
    grouped_correlation,
    load_score_dir,
    load_score_file,
    mrr_test,
    plcc,
    render_report,
    significance_matrix,
    srcc,
    stimulus_jnd,
    write_score_file,
)
from aicscale.model import rd_distortion
from aicscale.simulate import synth_metric_scores
from conftest import TRUE_PARAMS, true_models

finite_floats = st.floats(min_value=-1e6, max_value=1e6,
                          allow_nan=False, allow_infinity=False)


def vectors(min_size=4, max_size=24):
    return st.lists(finite_floats, min_size=min_size,
                    max_size=max_size).filter(lambda v: len(set(v)) > 1)


class TestPLCC:
    def test_hand_value(self):
        # x = [-2..2], y = x + 0.75 * e with e orthogonal to x: r = 0.8.
        x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        e = np.array([1.0, -2.0, 0.0, 2.0, -1.0])
        y = x + 0.75 * e
        assert plcc(x, y) == pytest.approx(0.8)

    def test_perfect_and_inverse(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert plcc(x, x) == 1.0
        assert plcc(x, [-v for v in x]) == -1.0

    def test_zero_variance_rejected(self):
        with pytest.raises(BenchError, match="zero variance"):
            plcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_short_input_rejected(self):
        with pytest.raises(BenchError, match="at least 3"):
            plcc([1.0, 2.0], [1.0, 2.0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(BenchError):
            plcc([1.0, 2.0, 3.0], [1.0, 2.0])

    @settings(max_examples=150, deadline=None)
    @given(vectors(), st.floats(0.1, 50.0), finite_floats)
    def test_affine_invariance(self, v, scale, shift):
        x = np.arange(len(v), dtype=float)
        y = np.asarray(v)
        try:
            base = plcc(x, y)
        except BenchError:
            return
        # a shift far larger than the data spread absorbs the signal in
        # float rounding; the identity only holds on well-conditioned input
        assume(abs(shift) <= 1e3 * scale * float(np.ptp(y)))
        assert plcc(x, scale * y + shift) == pytest.approx(base, abs=1e-9)
        assert plcc(x, -scale * y + shift) == pytest.approx(-base, abs=1e-9)

    def test_symmetry(self):
        x = [0.3, 1.9, -0.7, 2.2, 0.0]
        y = [1.0, 0.4, 0.2, 2.0, 1.1]
        assert plcc(x, y) == pytest.approx(plcc(y, x))


class TestSRCC:
    def test_monotone_function_scores_one(self):
        x = np.array([0.1, 0.7, 1.3, 2.9, 4.0])
        assert srcc(x, np.exp(x)) == 1.0
        assert srcc(x, -np.log1p(x)) == -1.0

    def test_ties_use_average_ranks(self):
        # against scipy's published convention for tied observations
        from scipy.stats import spearmanr

        x = [1.0, 2.0, 2.0, 3.0, 5.0]
        y = [4.0, 4.0, 6.0, 2.0, 9.0]
        assert srcc(x, y) == pytest.approx(spearmanr(x, y).statistic)

    @settings(max_examples=150, deadline=None)
    @given(vectors())
    def test_monotone_transform_invariance(self, v):
        x = np.arange(len(v), dtype=float)
        y = np.asarray(v)
        try:
            base = srcc(x, y)
        except BenchError:
            return
        for ty in (np.exp(y / 1e6), 3.0 * y + 2.0):
            # the mathematical property needs a strictly increasing map;
            # discard draws where float rounding collapsed distinct values
            assume(len(np.unique(ty)) == len(np.unique(y)))
            assert srcc(x, ty) == pytest.approx(base, abs=1e-12)


class TestStimulusJND:
    def test_values_follow_fitted_curve(self, manifest_1x4):
        models = true_models(manifest_1x4)
        jnd = stimulus_jnd(models, manifest_1x4)
        stim = manifest_1x4.stimulus("s01", "c2", 4)
        assert jnd[stim.key] == pytest.approx(
            rd_distortion(TRUE_PARAMS, stim.actual_bpp))
        assert len(jnd) == len(manifest_1x4.stimuli)

    def test_unmodelled_sources_skipped(self, manifest_small):
        models = {"s01": true_models(manifest_small)["s01"]}
        jnd = stimulus_jnd(models, manifest_small)
        assert {k[0] for k in jnd} == {"s01"}


class TestGroupedCorrelation:
    def test_groups_cover_all_codecs(self, manifest_1x4):
        models = true_models(manifest_1x4)
        jnd = stimulus_jnd(models, manifest_1x4)
        scores = synth_metric_scores(manifest_1x4, models, noise=0.0,
                                     polarity="higher_is_worse")
        mean_p, mean_s, detail = grouped_correlation(scores, jnd, "codec")
        assert {g.group for g in detail} == set(manifest_1x4.codec_ids)
        assert mean_s == pytest.approx(1.0)  # noiseless monotone metric
        assert mean_p > 0.97

    def test_degenerate_group_gets_nan_and_warning(self, manifest_small):
        models = true_models(manifest_small)
        jnd = stimulus_jnd(models, manifest_small)
        scores = synth_metric_scores(manifest_small, models, noise=0.0)
        # strip one source's scores below the 3-point minimum
        for key in list(scores.scores):
            if key[0] == "s02":
                del scores.scores[key]
        with pytest.warns(UserWarning, match="excluded"):
            _, _, detail = grouped_correlation(scores, jnd, "source")
        by_group = {g.group: g for g in detail}
        assert math.isnan(by_group["s02"].plcc)
        assert not math.isnan(by_group["s01"].plcc)

    def test_unknown_grouping_rejected(self, manifest_small):
        models = true_models(manifest_small)
        jnd = stimulus_jnd(models, manifest_small)
        scores = synth_metric_scores(manifest_small, models)
        with pytest.raises(BenchError):
            grouped_correlation(scores, jnd, "level")


class TestMRR:
    def test_equal_correlations_give_zero(self):
        res = mrr_test(0.8, 0.8, 0.5, n=100)
        assert res.z == 0.0
        assert res.p == pytest.approx(1.0)

    def test_antisymmetric(self):
        a = mrr_test(0.9, 0.6, 0.4, n=80)
        b = mrr_test(0.6, 0.9, 0.4, n=80)
        assert a.z == pytest.approx(-b.z)
        assert a.p == pytest.approx(b.p)

    def test_more_samples_sharpen_the_test(self):
        z_small = abs(mrr_test(0.9, 0.7, 0.5, n=20).z)
        z_large = abs(mrr_test(0.9, 0.7, 0.5, n=200).z)
        assert z_large > z_small
        # z scales with sqrt(n - 3)
        assert z_large / z_small == pytest.approx(
            math.sqrt(197 / 17), rel=1e-12)

    def test_correlated_metrics_sharpen_the_test(self):
        loose = abs(mrr_test(0.9, 0.7, 0.1, n=50).z)
        tight = abs(mrr_test(0.9, 0.7, 0.9, n=50).z)
        assert tight > loose

    def test_sample_size_guard(self):
        with pytest.raises(BenchError):
            mrr_test(0.5, 0.4, 0.3, n=3)

    def test_degenerate_correlation_guard(self):
        with pytest.raises(BenchError):
            mrr_test(1.0, 0.4, 0.3, n=30)


class TestReport:
    @pytest.fixture()
    def jnd_and_scores(self, manifest_1x4):
        models = true_models(manifest_1x4)
        jnd = stimulus_jnd(models, manifest_1x4)
        sharp = synth_metric_scores(manifest_1x4, models, metric="sharp",
                                    noise=0.02, polarity="higher_is_better",
                                    seed=1)
        blunt = synth_metric_scores(manifest_1x4, models, metric="blunt",
                                    noise=0.6, polarity="higher_is_worse",
                                    seed=2)
        return jnd, sharp, blunt

    def test_build_report_fields(self, jnd_and_scores):
        jnd, sharp, _ = jnd_and_scores
        report = build_report(sharp, jnd)
        assert report.metric == "sharp"
        assert report.n == 20
        # higher_is_better metric against distortion: strongly negative
        assert report.overall_srcc < -0.95
        assert report.per_codec_srcc < -0.95

    def test_significance_matrix_antisymmetric(self, jnd_and_scores):
        jnd, sharp, blunt = jnd_and_scores
        matrix = significance_matrix([sharp, blunt], jnd)
        ab = matrix["sharp"]["blunt"]
        ba = matrix["blunt"]["sharp"]
        assert ab.z == pytest.approx(-ba.z)
        assert "sharp" not in matrix["sharp"]

    def test_render_report_layout(self, jnd_and_scores):
        jnd, sharp, blunt = jnd_and_scores
        reports = [build_report(m, jnd) for m in (sharp, blunt)]
        text = render_report(reports, significance_matrix([sharp, blunt], jnd))
        assert "PLCC/codec" in text.splitlines()[0]
        assert "sharp" in text and "blunt" in text
        assert "z = " in text and "Fisher" in text

    def test_missing_scores_drop_pairwise_with_warning(self, jnd_and_scores):
        jnd, sharp, _ = jnd_and_scores
        key = next(iter(sharp.scores))
        del sharp.scores[key]
        with pytest.warns(UserWarning, match="dropped pairwise"):
            report = build_report(sharp, jnd)
        assert report.n == 19


class TestScoreFiles:
    def test_round_trip(self, manifest_small, tmp_path):
        scores = synth_metric_scores(manifest_small,
                                     true_models(manifest_small),
                                     metric="mock", seed=9)
        path = tmp_path / "mock.csv"
        write_score_file(scores, path)
        again = load_score_file(path)
        assert again.metric == scores.metric
        assert again.polarity == scores.polarity
        assert again.scores.keys() == scores.scores.keys()
        for key in scores.scores:
            assert again.scores[key] == pytest.approx(scores.scores[key])

    def test_duplicate_row_rejected(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("# metric: m\n# polarity: higher_is_better\n"
                        "source_id,codec_id,level,score\n"
                        "s01,c1,1,0.5\ns01,c1,1,0.6\n")
        with pytest.raises(BenchError, match="duplicate"):
            load_score_file(path)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "anon.csv"
        path.write_text("source_id,codec_id,level,score\ns01,c1,1,0.5\n")
        with pytest.raises(BenchError, match="polarity"):
            load_score_file(path)

    def test_bad_polarity_rejected(self):
        with pytest.raises(BenchError, match="polarity"):
            MetricScores("m", "bigger_is_nicer", {})

    def test_load_score_dir(self, manifest_small, tmp_path):
        models = true_models(manifest_small)
        for name in ("a", "b"):
            write_score_file(
                synth_metric_scores(manifest_small, models, metric=name),
                tmp_path / f"{name}.csv")
        loaded = load_score_dir(tmp_path)
        assert [m.metric for m in loaded] == ["a", "b"]

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(BenchError, match="no .csv"):
            load_score_dir(tmp_path)
