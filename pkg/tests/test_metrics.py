import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eyeaffect.corpus import AnnotationTrace
from eyeaffect.metrics import (
    EvalReport,
    ccc,
    human_baseline,
    pcc,
    read_eval_csv,
    sse,
    wilcoxon_rank_sum,
    write_eval_csv,
)


def ccc_oracle(x, y):
    """Direct population-moment evaluation, independent of the library."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = x.size
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    return 2 * cov / (vx + vy + (mx - my) ** 2)


class TestCCC:
    def test_perfect_concordance(self):
        assert ccc([1, 2, 3], [1, 2, 3]) == 1.0

    def test_zero_covariance(self):
        assert ccc([0, 0, 0, 0], [1, -1, 1, -1]) == 0.0

    def test_worked_example(self):
        # sigma_xy=1.625, var_x=1.25, var_y=2.1875, dmu^2=1.5625 -> 0.65
        assert abs(ccc([1, 2, 3, 4], [2, 3, 4, 6]) - 0.65) < 1e-12

    def test_matches_oracle_on_random_pairs(self, rng):
        for _ in range(50):
            x = rng.normal(size=40)
            y = rng.normal(size=40)
            assert abs(ccc(x, y) - ccc_oracle(x, y)) < 1e-12

    def test_symmetry(self, rng):
        x, y = rng.normal(size=100), rng.normal(size=100)
        assert ccc(x, y) == ccc(y, x)

    def test_both_constant_equal_is_zero(self):
        assert ccc([2.0, 2.0, 2.0], [2.0, 2.0, 2.0]) == 0.0

    def test_bounded_by_pcc(self, rng):
        for _ in range(200):
            x = rng.normal(size=30)
            y = rng.normal(size=30) + 0.4 * x
            assert abs(ccc(x, y)) <= abs(pcc(x, y)) + 1e-12

    @given(
        scale=st.floats(0.1, 50.0),
        shift=st.floats(-20.0, 20.0),
        seed=st.integers(0, 2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_affine_invariance(self, scale, shift, seed):
        r = np.random.default_rng(seed)
        x, y = r.normal(size=50), r.normal(size=50)
        assert abs(ccc(scale * x + shift, scale * y + shift) - ccc(x, y)) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ccc([1, 2, 3], [1, 2])


class TestPCCAndSSE:
    def test_affine_of_itself(self):
        y = np.array([0.3, 1.2, -0.5, 2.0])
        assert abs(pcc(2 * y + 1, y) - 1.0) < 1e-12

    def test_reversed_ramp(self):
        assert abs(pcc([1, 2, 3], [3, 2, 1]) + 1.0) < 1e-12

    def test_zero_variance_undefined(self):
        with pytest.raises(ValueError):
            pcc([1, 1, 1], [1, 2, 3])

    def test_sse_zero_on_equal(self):
        assert sse([0.5, -0.5], [0.5, -0.5]) == 0.0

    def test_sse_mean_of_squares(self):
        assert sse([1, 2], [0, 0]) == 2.5


class TestHumanBaseline:
    def _trace(self, values, who):
        return AnnotationTrace(dimension="arousal", annotator_id=who, values=np.asarray(values))

    def test_identical_pair(self):
        t = self._trace([0.1, 0.2, 0.3], "A1")
        assert human_baseline([t, self._trace([0.1, 0.2, 0.3], "A2")]) == 1.0

    def test_single_trace_rejected(self):
        with pytest.raises(ValueError):
            human_baseline([self._trace([0.1, 0.2], "A1")])

    def test_mean_of_pairwise_oracle(self, rng):
        traces = [
            self._trace(np.clip(rng.normal(0, 0.3, 200), -1, 1), f"A{i}") for i in range(3)
        ]
        expected = np.mean(
            [ccc_oracle(a.values, b.values) for a, b in itertools.combinations(traces, 2)]
        )
        assert abs(human_baseline(traces) - expected) < 1e-12


def ranksum_exact_oracle(n_a, n_b, u_obs):
    """Enumerate every rank assignment; two-sided tail probability."""
    n = n_a + n_b
    us = []
    for combo in itertools.combinations(range(1, n + 1), n_a):
        us.append(sum(combo) - n_a * (n_a + 1) / 2)
    lo = min(u_obs, n_a * n_b - u_obs)
    count = sum(1 for u in us if min(u, n_a * n_b - u) <= lo)
    return count / len(us)


class TestWilcoxonRankSum:
    def test_small_exact(self):
        w, p = wilcoxon_rank_sum([1, 2], [3, 4])
        assert w == 0.0
        assert abs(p - 1 / 3) < 1e-12
        assert abs(p - ranksum_exact_oracle(2, 2, 0)) < 1e-12

    def test_identical_samples(self):
        _, p = wilcoxon_rank_sum([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert p >= 0.99

    def test_big_shift_significant(self):
        a = np.arange(8) + 1000.0
        b = np.arange(8).astype(float)
        _, p = wilcoxon_rank_sum(a, b)
        assert p < 0.001

    def test_swap_maps_w(self, rng):
        a, b = rng.normal(size=9), rng.normal(size=7)
        w_ab, _ = wilcoxon_rank_sum(a, b)
        w_ba, _ = wilcoxon_rank_sum(b, a)
        assert abs(w_ab + w_ba - a.size * b.size) < 1e-9

    def test_exact_matches_oracle(self, rng):
        a, b = rng.normal(size=5), rng.normal(size=6)
        w, p = wilcoxon_rank_sum(a, b)
        assert abs(p - ranksum_exact_oracle(5, 6, w)) < 1e-12

    def test_p_in_unit_interval(self, rng):
        for _ in range(25):
            a = rng.normal(size=rng.integers(2, 30))
            b = rng.normal(size=rng.integers(2, 30))
            _, p = wilcoxon_rank_sum(a, b)
            assert 0.0 < p <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            wilcoxon_rank_sum([], [1.0])


class TestEvalReport:
    def test_invariant_enforced(self):
        with pytest.raises(ValueError):
            EvalReport(dimension="arousal", ccc=0.9, pcc=0.1, sse=0.5, n_frames=10)

    def test_csv_round_trip(self, tmp_path):
        report = EvalReport(dimension="arousal", ccc=0.32, pcc=0.41, sse=0.11, n_frames=500)
        path = tmp_path / "eval.csv"
        with open(path, "w", newline="") as fh:
            write_eval_csv(fh, [("eye", "arousal", "validation", report)])
        with open(path) as fh:
            rows = read_eval_csv(fh)
        assert rows == [("eye", "arousal", "validation", 0.11, 0.32, 0.41)]
