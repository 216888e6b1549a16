import io

import numpy as np
import pytest

from eyeaffect.corpus import AnnotationTrace
from eyeaffect.model import ModelConfig, SubjectSequence
from eyeaffect.selection import (
    SelectionReport,
    ShiftConfig,
    aligned_sequence,
    best_report,
    default_shifts,
    mi_filter,
    mutual_information,
    read_sweep_csv,
    shift_labels,
    sweep_protocol,
    write_sweep_csv,
)


def trace(values):
    return AnnotationTrace(dimension="arousal", annotator_id="A1", values=np.asarray(values, float))


class TestShiftConfig:
    def test_defaults(self):
        cfg = ShiftConfig()
        assert len(cfg.shifts) == 23
        assert cfg.shifts[0] == 0.0
        assert cfg.shifts[-1] == 4.4
        assert np.allclose(np.diff(cfg.shifts), 0.2)
        assert cfg.frames() == [int(round(s * 25)) for s in default_shifts()]

    def test_non_integral_shift_rejected(self):
        with pytest.raises(ValueError):
            ShiftConfig(shifts=(0.03,))


class TestShiftLabels:
    def test_zero_identity(self):
        t = trace(np.linspace(-1, 1, 100))
        shifted, dropped = shift_labels(t, 0.0)
        assert dropped == 0
        assert np.array_equal(shifted.values, t.values)

    def test_five_frame_shift(self):
        t = trace(np.linspace(-1, 1, 100))
        shifted, dropped = shift_labels(t, 0.2)
        assert dropped == 5
        assert len(shifted) == 95
        assert np.array_equal(shifted.values, t.values[5:])

    def test_sixty_second_trace(self):
        t = trace(np.zeros(1500))
        shifted, dropped = shift_labels(t, 4.4)
        assert len(shifted) == 1390
        assert dropped == 110

    def test_composition(self, rng):
        t = trace(np.clip(rng.normal(0, 0.3, 400), -1, 1))
        via_two, _ = shift_labels(shift_labels(t, 0.2)[0], 0.4)
        direct, _ = shift_labels(t, 0.6)
        assert np.array_equal(via_two.values, direct.values)

    def test_too_large_rejected(self):
        with pytest.raises(ValueError):
            shift_labels(trace(np.zeros(100)), 4.4)


class TestMutualInformation:
    def test_self_information_is_log_bins(self, rng):
        x = rng.normal(size=32 * 300)
        assert abs(mutual_information(x, x) - np.log(32)) < 1e-6

    def test_constant_is_zero(self, rng):
        assert mutual_information(np.full(500, 2.0), rng.normal(size=500)) == 0.0

    def test_independent_bias_small(self):
        values = []
        for seed in range(20):
            r = np.random.default_rng(seed)
            values.append(mutual_information(r.uniform(size=10000), r.uniform(size=10000)))
        assert np.mean(values) < 0.08

    def test_symmetry(self, rng):
        x, y = rng.normal(size=4000), rng.normal(size=4000)
        assert abs(mutual_information(x, y) - mutual_information(y, x)) < 1e-9

    def test_self_dominates_cross(self, rng):
        x = rng.normal(size=4000)
        y = x + rng.normal(size=4000)
        assert mutual_information(x, x) >= mutual_information(x, y)

    def test_binary_binned_by_value(self, rng):
        x = (rng.random(4000) < 0.3).astype(float)
        y = x + rng.normal(0, 0.01, 4000)
        assert mutual_information(x, y) > 0.4

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mutual_information(np.zeros(5), np.zeros(6))


class TestMIFilter:
    def test_rule_application(self, rng):
        n = 6000
        y = rng.normal(size=n)
        X = np.column_stack([
            rng.normal(size=n),            # independent -> low score
            y + rng.normal(0, 0.3, n),     # strongly dependent
            y + rng.normal(0, 1.5, n),     # weakly dependent
        ])
        mask, scores = mi_filter(X, y, threshold=0.15)
        assert np.array_equal(mask, scores >= 0.15)
        assert mask[1]
        assert not mask[0]

    def test_threshold_zero_keeps_all(self, rng):
        X = rng.normal(size=(1000, 5))
        mask, _ = mi_filter(X, rng.normal(size=1000), threshold=0.0)
        assert mask.all()

    def test_above_max_empties_with_warning(self, rng, caplog):
        X = rng.normal(size=(1000, 3))
        with caplog.at_level("WARNING"):
            mask, scores = mi_filter(X, rng.normal(size=1000), threshold=99.0)
        assert not mask.any()
        assert any("removed every feature" in r.message for r in caplog.records)

    def test_mask_monotone_in_threshold(self, rng):
        X = rng.normal(size=(2000, 8))
        y = X[:, 0] + rng.normal(0, 0.5, 2000)
        previous = None
        for thr in (0.0, 0.05, 0.1, 0.2, 0.5):
            mask, _ = mi_filter(X, y, thr)
            if previous is not None:
                assert not np.any(mask & ~previous)
            previous = mask

    def test_alignment_required(self, rng):
        with pytest.raises(ValueError):
            mi_filter(rng.normal(size=(10, 2)), rng.normal(size=9), 0.1)


def micro_data(rng, n_sub=3, frames=260, width=6):
    """Tiny aligned sequences with one strongly informative feature."""
    train, val = [], []
    for i in range(n_sub):
        X = rng.normal(size=(frames, width))
        y = np.tanh(X[:, 0] * 0.8 + rng.normal(0, 0.1, frames))
        seq = SubjectSequence(subject=f"T{i}", features=X, targets=y)
        (train if i < n_sub - 1 else val).append(seq)
    return train, val


MICRO_CONFIG = ModelConfig(hidden_sizes=(5, 4), learning_rate=1e-4,
                           max_epochs=2, patience_epochs=2, seed=7)


class TestSweepProtocol:
    def test_before_grid_shape(self, rng):
        train, val = micro_data(rng)
        reports = sweep_protocol("before", train, val, MICRO_CONFIG)
        assert len(reports) == 4
        assert [r.threshold for r in reports] == [None, 0.1, 0.15, 0.2]
        assert all(r.shift_s == 0.0 for r in reports)
        assert all(r.protocol == "before" for r in reports)

    def test_during_uses_fixed_threshold(self, rng):
        train, val = micro_data(rng)
        shifts = ShiftConfig(shifts=(0.0, 0.2, 0.4))
        reports = sweep_protocol("during", train, val, MICRO_CONFIG,
                                 shifts=shifts, fixed_threshold=0.1)
        assert len(reports) == 3
        assert all(r.threshold == 0.1 for r in reports)
        assert [r.shift_s for r in reports] == [0.0, 0.2, 0.4]

    def test_none_mode_no_filter(self, rng):
        train, val = micro_data(rng)
        shifts = ShiftConfig(shifts=(0.0, 0.2))
        reports = sweep_protocol("none", train, val, MICRO_CONFIG, shifts=shifts)
        assert all(r.threshold is None for r in reports)
        assert all(r.n_features == train[0].features.shape[1] for r in reports)

    def test_after_grid_shape(self, rng):
        train, val = micro_data(rng)
        reports = sweep_protocol("after", train, val, MICRO_CONFIG, fixed_shift=0.2)
        assert len(reports) == 4
        assert [r.threshold for r in reports] == [None, 0.1, 0.15, 0.2]
        assert all(r.shift_s == 0.2 for r in reports)

    def test_failed_cell_continues(self, rng):
        train, val = micro_data(rng)
        reports = sweep_protocol("during", train, val, MICRO_CONFIG,
                                 shifts=ShiftConfig(shifts=(0.0,)),
                                 fixed_threshold=50.0)
        assert len(reports) == 1
        assert reports[0].failed
        assert reports[0].n_features == 0

    def test_unknown_mode_rejected(self, rng):
        train, val = micro_data(rng)
        with pytest.raises(ValueError):
            sweep_protocol("bogus", train, val, MICRO_CONFIG)

    def test_parallel_matches_serial(self, rng):
        train, val = micro_data(rng)
        shifts = ShiftConfig(shifts=(0.0, 0.2))
        serial = sweep_protocol("during", train, val, MICRO_CONFIG,
                                shifts=shifts, fixed_threshold=0.0, n_jobs=1)
        parallel = sweep_protocol("during", train, val, MICRO_CONFIG,
                                  shifts=shifts, fixed_threshold=0.0, n_jobs=2)
        for a, b in zip(serial, parallel):
            assert a.val_ccc == b.val_ccc
            assert a.val_sse == b.val_sse
            assert np.array_equal(a.retained, b.retained)


class TestBestReport:
    def _report(self, ccc, n, shift):
        return SelectionReport(
            protocol="during", threshold=0.1, shift_s=shift, mi_scores=None,
            retained=None, val_ccc=ccc, val_sse=0.0, n_features=n,
        )

    def test_highest_ccc_wins(self):
        best = best_report([self._report(0.2, 5, 0.0), self._report(0.4, 50, 1.0)])
        assert best.val_ccc == 0.4

    def test_tie_prefers_fewer_features_then_smaller_shift(self):
        a = self._report(0.4, 10, 2.0)
        b = self._report(0.4, 5, 3.0)
        c = self._report(0.4, 5, 1.0)
        assert best_report([a, b, c]) is c

    def test_failed_cells_skipped(self):
        failed = SelectionReport(
            protocol="during", threshold=9.0, shift_s=0.0, mi_scores=None,
            retained=None, val_ccc=float("nan"), val_sse=float("nan"),
            n_features=0, failed=True,
        )
        assert best_report([failed, self._report(0.1, 3, 0.0)]).val_ccc == 0.1
        with pytest.raises(ValueError):
            best_report([failed])


class TestSweepCSV:
    def test_round_trip(self):
        reports = [
            SelectionReport(protocol="during", threshold=0.15, shift_s=1.2,
                            mi_scores=None, retained=None, val_ccc=0.31,
                            val_sse=0.42, n_features=150),
            SelectionReport(protocol="before", threshold=None, shift_s=0.0,
                            mi_scores=None, retained=None, val_ccc=0.11,
                            val_sse=0.52, n_features=292),
        ]
        buf = io.StringIO()
        write_sweep_csv(reports, buf)
        buf.seek(0)
        again = read_sweep_csv(buf)
        assert [(r.protocol, r.threshold, r.shift_s, r.n_features, r.val_sse, r.val_ccc)
                for r in again] == \
               [(r.protocol, r.threshold, r.shift_s, r.n_features, r.val_sse, r.val_ccc)
                for r in reports]


class TestAlignedSequence:
    def test_alignment(self, tiny_features, tiny_corpus):
        _, traces_by = tiny_corpus
        matrix = tiny_features["S00"]
        t = next(x for x in traces_by["S00"] if x.dimension == "arousal")
        seq = aligned_sequence("S00", matrix, t)
        assert seq.features.shape[0] == seq.targets.size
        assert seq.targets[0] == t.values[matrix.frame_offset]

    def test_truncation_warning(self, tiny_features, caplog):
        matrix = tiny_features["S00"]
        short = np.zeros(matrix.frame_offset + len(matrix) - 10)
        with caplog.at_level("WARNING"):
            seq = aligned_sequence("S00", matrix, short)
        assert seq.targets.size == len(matrix) - 10
        assert any("truncating" in r.message for r in caplog.records)

    def test_no_overlap_rejected(self, tiny_features):
        with pytest.raises(ValueError):
            aligned_sequence("S00", tiny_features["S00"], np.zeros(10))
