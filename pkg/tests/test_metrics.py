import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ktlab.errors import ParameterError, UndefinedAucError
from ktlab.eval import (
    EvalRecord,
    auc,
    auc_stderr,
    calibration,
    read_records_csv,
    write_calibration_csv,
    write_records_csv,
)


def brute_force_auc(labels, scores):
    """Independent oracle: count concordant pairs, ties worth one half."""
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_separation(self):
        assert auc(([1, 0], [0.9, 0.1])) == 1.0

    def test_all_tied_scores(self):
        assert auc(([1, 0], [0.5, 0.5])) == 0.5

    def test_hand_example(self):
        value = auc(([1, 0, 1, 0], [0.8, 0.7, 0.6, 0.5]))
        assert value == pytest.approx(0.75, abs=1e-12)
        assert value == pytest.approx(brute_force_auc([1, 0, 1, 0], [0.8, 0.7, 0.6, 0.5]), abs=1e-12)

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedAucError):
            auc(([1, 1], [0.2, 0.3]))

    def test_accepts_eval_records(self):
        records = [EvalRecord(1, 0.8), EvalRecord(0, 0.3)]
        assert auc(records) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(
        n=st.integers(5, 200),
        seed=st.integers(0, 10_000),
        coarse=st.booleans(),
    )
    def test_matches_brute_force_with_ties(self, n, seed, coarse):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.random(n)
        if coarse:  # quantized scores force plenty of ties
            scores = np.round(scores * 4) / 4
        assert auc((labels, scores)) == pytest.approx(
            brute_force_auc(labels, scores), abs=1e-12
        )

    def test_invariant_to_monotone_transform(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, size=50)
        labels[0], labels[1] = 0, 1
        scores = rng.random(50)
        squashed = 1 / (1 + np.exp(-(5 * scores - 2)))
        assert auc((labels, scores)) == pytest.approx(auc((labels, squashed)), abs=1e-12)

    def test_stderr_positive(self):
        assert auc_stderr(0.7, 40, 60) > 0


class TestCalibration:
    def test_hand_example_two_bins(self):
        report = calibration(([0, 0, 1, 1], [0.1, 0.1, 0.9, 0.9]), n_bins=2)
        assert report.ece == pytest.approx(0.1, abs=1e-12)
        lo, hi = report.bins
        assert (lo.mean_conf, lo.frac_pos, lo.count) == (pytest.approx(0.1), 0.0, 2)
        assert (hi.mean_conf, hi.frac_pos, hi.count) == (pytest.approx(0.9), 1.0, 2)

    def test_constant_half_scores_calibrated(self):
        report = calibration(([0, 1, 0, 1], [0.5, 0.5, 0.5, 0.5]), n_bins=10)
        assert report.ece == pytest.approx(0.0, abs=1e-12)

    def test_bin_counts_sum_to_records(self):
        rng = np.random.default_rng(1)
        scores = rng.random(500)
        labels = (rng.random(500) < scores).astype(int)
        report = calibration((labels, scores), n_bins=10)
        assert sum(b.count for b in report.bins) == 500

    def test_empty_bins_reported_and_excluded(self):
        report = calibration(([0, 1], [0.05, 0.95]), n_bins=10)
        empty = [b for b in report.bins if b.count == 0]
        assert len(empty) == 8
        assert report.ece == pytest.approx(0.05 * 0.5 + 0.05 * 0.5, abs=1e-12)

    def test_last_bin_right_closed(self):
        report = calibration(([1], [1.0]), n_bins=10)
        assert report.bins[-1].count == 1

    def test_perfectly_calibrated_on_diagonal(self):
        rng = np.random.default_rng(7)
        scores = np.repeat([0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95], 2000)
        labels = (rng.random(len(scores)) < scores).astype(int)
        report = calibration((labels, scores), n_bins=10)
        for b in report.bins:
            assert abs(b.mean_conf - b.frac_pos) < 0.05
        assert report.ece < 0.05

    def test_min_bins(self):
        with pytest.raises(ParameterError):
            calibration(([0, 1], [0.1, 0.9]), n_bins=1)


class TestCsvRoundTrips:
    def test_records_csv(self, tmp_path):
        records = [
            EvalRecord(1, 0.875, "s1", 3, "kc1"),
            EvalRecord(0, 0.125, "s2", 0, "kc2"),
        ]
        path = tmp_path / "records.csv"
        write_records_csv(records, path)
        assert read_records_csv(path) == records

    def test_calibration_csv_has_ece_footer(self, tmp_path):
        report = calibration(([0, 1], [0.1, 0.9]), n_bins=2)
        path = tmp_path / "cal.csv"
        write_calibration_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "bin_lo,bin_hi,mean_conf,frac_pos,count"
        assert len(lines) == 1 + 2 + 1
        assert lines[-1].startswith("ece,")
        assert float(lines[-1].split(",")[1]) == pytest.approx(report.ece)
