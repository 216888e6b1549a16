import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eyeaffect import features, wavelet as wv
from eyeaffect.errors import AlignmentError, CatalogError, InsufficientDataError


def quantile_oracle(values, q):
    """Independent linear-interpolation quantile over order statistics."""
    s = sorted(values)
    pos = q * (len(s) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def run_length_oracle(flags):
    """Enumerate contiguous true runs the slow way; durations in seconds."""
    runs, current = [], 0
    for f in list(flags) + [False]:
        if f:
            current += 1
        elif current:
            runs.append(current / 25.0)
            current = 0
    return runs


class TestWindowSlices:
    def test_exactly_one_window(self):
        assert features.window_slices(200) == [(0, 199)]

    def test_eleven_windows(self):
        slices = features.window_slices(210)
        assert len(slices) == 11
        assert slices[-1] == (10, 209)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            features.window_slices(199)


class TestDescriptiveStats:
    def test_constant_window_guards(self):
        d = features.descriptive_stats([2.0] * 200)
        assert d["sd"] == 0.0
        assert d["slope"] == 0.0
        assert d["skew"] == 0.0
        assert d["kurt"] == 0.0
        assert d["min"] == d["max"] == d["mean"] == 2.0
        # RMS of a constant window is the constant itself
        assert abs(d["rms" if "rms" in d else "mean"] - 2.0) < 1e-12

    def test_ramp_slope_and_intercept(self):
        values = [2.0 * (i / 25.0) for i in range(200)]
        d = features.descriptive_stats(values, ("slope", "intercept"))
        assert abs(d["slope"] - 2.0) < 1e-9
        assert abs(d["intercept"]) < 1e-9

    def test_quartiles_match_oracle(self):
        d = features.descriptive_stats([1, 5, 3, 7])
        assert d["median"] == quantile_oracle([1, 5, 3, 7], 0.5) == 4.0
        assert d["q1"] == quantile_oracle([1, 5, 3, 7], 0.25) == 2.5
        assert d["q3"] == quantile_oracle([1, 5, 3, 7], 0.75) == 5.5
        assert d["iqr13"] == 3.0

    def test_random_windows_match_oracle(self, rng):
        for _ in range(20):
            values = rng.normal(size=37)
            d = features.descriptive_stats(values)
            for q, key in ((0.25, "q1"), (0.5, "median"), (0.75, "q3")):
                assert abs(d[key] - quantile_oracle(values, q)) < 1e-12

    def test_ordering_invariant(self, rng):
        values = rng.normal(size=200)
        d = features.descriptive_stats(values)
        assert d["min"] <= d["q1"] <= d["median"] <= d["q3"] <= d["max"]

    @given(shift=st.floats(-25.0, 25.0), seed=st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_shift_behavior(self, shift, seed):
        r = np.random.default_rng(seed)
        values = r.normal(size=64)
        base = features.descriptive_stats(values)
        moved = features.descriptive_stats(values + shift)
        for key in ("mean", "median", "q1", "q3", "min", "max", "intercept"):
            assert abs(moved[key] - (base[key] + shift)) < 1e-8
        for key in ("sd", "iqr12", "iqr23", "iqr13", "skew", "kurt", "slope"):
            assert abs(moved[key] - base[key]) < 1e-7

    def test_empty_window_rejected(self):
        with pytest.raises(ValueError):
            features.descriptive_stats([])
        with pytest.raises(ValueError):
            features.descriptive_stats([1.0])

    def test_unknown_stat_rejected(self):
        with pytest.raises(ValueError):
            features.descriptive_stats([1.0, 2.0], ("bogus",))


class TestEventStats:
    def test_run_length_example(self):
        flags = [0, 1, 1, 1, 0, 0, 1, 1, 0, 0]
        d = features.event_stats(flags, ("ratio", "min_s", "mean_s", "max_s", "total_s"))
        assert d["ratio"] == 0.5
        assert abs(d["mean_s"] - 0.1) < 1e-12
        assert abs(d["max_s"] - 0.12) < 1e-12
        assert abs(d["total_s"] - 0.2) < 1e-12
        assert abs(d["min_s"] - 0.08) < 1e-12

    def test_all_false(self):
        d = features.event_stats([False] * 10)
        assert d["ratio"] == 0.0
        assert all(d[k] == 0.0 for k in ("min_s", "median_s", "mean_s", "max_s"))

    def test_all_true_200(self):
        d = features.event_stats([True] * 200, ("ratio", "max_s", "total_s"))
        assert d["ratio"] == 1.0
        assert d["max_s"] == 8.0
        assert d["total_s"] == 8.0

    def test_matches_enumeration_oracle(self, rng):
        for _ in range(30):
            flags = rng.random(rng.integers(1, 60)) < 0.4
            d = features.event_stats(flags, ("ratio", "min_s", "median_s", "mean_s",
                                             "max_s", "total_s"))
            runs = run_length_oracle(flags)
            assert d["ratio"] == flags.mean()
            if runs:
                assert abs(d["min_s"] - min(runs)) < 1e-12
                assert abs(d["max_s"] - max(runs)) < 1e-12
                assert abs(d["mean_s"] - np.mean(runs)) < 1e-12
                assert abs(d["median_s"] - np.median(runs)) < 1e-12
                assert abs(d["total_s"] - sum(runs)) < 1e-12
            else:
                assert d["total_s"] == 0.0
            assert 0.0 <= d["ratio"] <= 1.0
            assert d["total_s"] >= d["max_s"]


class TestCatalog:
    def test_canonical_counts(self):
        catalog = features.build_catalog()
        features.validate_canonical(catalog)
        assert len(catalog) == 292
        assert catalog.group_count("gaze") == 69
        assert catalog.group_count("pupil") == 209
        assert catalog.group_count("closure") == 14
        assert catalog.kind_count("event") == 26
        assert catalog.kind_count("stat") == 93
        assert catalog.kind_count("wavelet") == 173

    def test_block_structure(self):
        names = features.build_catalog().names
        assert names[:4] == [
            "gaze.direct.ratio", "gaze.direct.mean_s", "gaze.direct.max_s",
            "gaze.direct.total_s",
        ]
        # 12 + 14 event, 84 numeric, 9 blink, 173 wavelet
        assert sum(1 for n in names if ".wavelet." in n) == 173
        assert sum(1 for n in names if n.startswith("closure.blink_intensity.")) == 9

    def test_interface_names_present(self):
        names = set(features.build_catalog().names)
        for expected in ("gaze.x.max", "gaze.direct.ratio",
                         "closure.blink_intensity.iqr12", "pupil.wavelet.detail.l3.rms"):
            assert expected in names

    def test_names_unique(self):
        names = features.build_catalog().names
        assert len(set(names)) == len(names)

    def test_digest_stable(self):
        assert features.build_catalog().digest() == features.build_catalog().digest()


class TestExtractAndAssemble:
    def test_row_count_and_offset(self, tiny_series):
        series = tiny_series["S00"]
        matrix = features.extract_features(series)
        assert len(matrix) == len(series) - 199
        assert matrix.frame_offset == 199
        assert matrix.values.shape[1] == 292
        assert np.all(np.isfinite(matrix.values))

    def test_assemble_matches_extract_row(self, tiny_series, tiny_features):
        series = tiny_series["S00"]
        matrix = tiny_features["S00"]
        for t in (199, 300, 487):
            window = series.window(t - 199, t)
            decomp = wv.dwt_db10(window.pupil_diam)
            _, block = wv.wavelet_feature_block_batch(decomp)
            vector, _ = features.assemble_feature_vector(window, block[0])
            assert np.array_equal(vector, matrix.values[t - 199])

    def test_group_filter_widths(self, tiny_features):
        matrix = tiny_features["S00"]
        assert matrix.values[:, matrix.catalog.mask_for_group("gaze")].shape[1] == 69
        assert matrix.values[:, matrix.catalog.mask_for_group("closure")].shape[1] == 14

    def test_wrong_wavelet_width(self, tiny_series):
        window = tiny_series["S00"].window(0, 199)
        with pytest.raises(CatalogError):
            features.assemble_feature_vector(window, np.zeros(100))

    def test_wrong_window_length(self, tiny_series):
        with pytest.raises(ValueError):
            features.assemble_feature_vector(tiny_series["S00"].window(0, 100), np.zeros(173))

    def test_short_series_rejected(self, tiny_series):
        with pytest.raises(InsufficientDataError):
            features.extract_features(tiny_series["S00"].window(0, 150))


class TestFeatureCSV:
    def test_round_trip_exact(self, tiny_features):
        matrix = tiny_features["S00"]
        buf = io.StringIO()
        features.write_feature_csv(matrix, buf)
        buf.seek(0)
        again = features.read_feature_csv(buf, matrix.catalog)
        assert np.array_equal(again.values, matrix.values)
        assert again.frame_offset == matrix.frame_offset

    def test_catalog_mismatch_detected(self, tiny_features):
        matrix = tiny_features["S00"]
        buf = io.StringIO()
        features.write_feature_csv(matrix, buf)
        text = buf.getvalue().replace("gaze.x.max", "gaze.x.maximum", 1)
        with pytest.raises(CatalogError):
            features.read_feature_csv(io.StringIO(text), matrix.catalog)


class TestFuse:
    def _external(self, n, width, offset):
        catalog = features.FeatureCatalog(
            tuple(
                features.CatalogEntry(f"speech_{i}", "ext", "ext", "ext")
                for i in range(width)
            )
        )
        return features.FeatureMatrix(
            values=np.arange(n * width, dtype=float).reshape(n, width),
            catalog=catalog,
            frame_offset=offset,
        )

    def test_width_concatenation(self, tiny_features):
        eye = tiny_features["S00"]
        ext = self._external(len(eye), 88, eye.frame_offset)
        fused = features.fuse(eye, ext)
        assert fused.values.shape[1] == 292 + 88
        assert fused.catalog.names[292] == "ext.speech_0"

    def test_duplicate_names_namespaced(self, tiny_features):
        eye = tiny_features["S00"]
        catalog = features.FeatureCatalog(
            tuple([features.CatalogEntry("gaze.x.max", "ext", "ext", "ext")])
        )
        ext = features.FeatureMatrix(
            values=np.zeros((len(eye), 1)), catalog=catalog, frame_offset=eye.frame_offset
        )
        fused = features.fuse(eye, ext)
        assert "ext.gaze.x.max" in fused.catalog.names
        assert len(set(fused.catalog.names)) == 293

    def test_mismatched_frames_rejected(self, tiny_features):
        eye = tiny_features["S00"]
        ext = self._external(len(eye) - 5, 4, eye.frame_offset)
        with pytest.raises(AlignmentError):
            features.fuse(eye, ext)

    def test_alignment_shift_applies(self, tiny_features):
        eye = tiny_features["S00"]
        ext = self._external(len(eye), 4, 0)
        fused = features.fuse(eye, ext, alignment=eye.frame_offset)
        assert fused.values.shape[1] == 296
