import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenedistill import metrics
from scenedistill.metrics import (ConfusionMatrix, accumulate, hiou, miou_macc,
                                  split_head_common_tail)


class TestAccumulate:
    def test_perfect_is_diagonal(self):
        labels = np.array([0, 1, 2, 1, 0])
        cm = accumulate(labels, labels, 3)
        assert np.array_equal(cm.counts, np.diag([2, 2, 1]))

    def test_all_ignored_zero(self):
        cm = accumulate(np.array([0, 1]), np.array([-1, -1]), 2)
        assert cm.counts.sum() == 0

    def test_two_class_fixture(self):
        cm = accumulate(np.array([0, 1, 1]), np.array([0, 0, 1]), 2)
        assert np.array_equal(cm.counts, [[1, 1], [0, 1]])

    def test_out_of_range_prediction(self):
        with pytest.raises(ValueError):
            accumulate(np.array([5]), np.array([0]), 2)
        with pytest.raises(ValueError):
            accumulate(np.array([-1]), np.array([0]), 2)

    def test_total_equals_evaluated(self, rng):
        gt = rng.integers(-1, 4, 500)
        pred = rng.integers(0, 4, 500)
        cm = accumulate(pred, gt, 4)
        assert cm.counts.sum() == (gt >= 0).sum()

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), split=st.integers(1, 99))
    def test_additivity(self, seed, split):
        r = np.random.default_rng(seed)
        gt = r.integers(-1, 3, 100)
        pred = r.integers(0, 3, 100)
        whole = accumulate(pred, gt, 3)
        parts = accumulate(pred[:split], gt[:split], 3) + accumulate(pred[split:], gt[split:], 3)
        assert np.array_equal(whole.counts, parts.counts)


class TestMiouMacc:
    def test_perfect_prediction(self):
        cm = ConfusionMatrix(np.diag([5, 3, 2]).astype(np.uint64))
        _, miou, _, macc = miou_macc(cm)
        assert miou == 100.0 and macc == 100.0

    def test_all_swapped_zero(self):
        cm = ConfusionMatrix(np.array([[0, 4], [4, 0]], dtype=np.uint64))
        _, miou, _, _ = miou_macc(cm)
        assert miou == 0.0

    def test_hand_arithmetic_fixture(self):
        cm = ConfusionMatrix(np.array([[1, 1], [0, 1]], dtype=np.uint64))
        iou, miou, acc, macc = miou_macc(cm)
        np.testing.assert_allclose(iou, [50.0, 50.0])
        assert miou == 50.0
        np.testing.assert_allclose(acc, [50.0, 100.0])
        assert macc == 75.0

    def test_absent_class_excluded(self):
        cm = ConfusionMatrix(np.array([[4, 0, 0], [0, 2, 0], [0, 0, 0]],
                                      dtype=np.uint64))
        iou, miou, acc, macc = miou_macc(cm)
        assert np.isnan(iou[2]) and np.isnan(acc[2])
        assert miou == 100.0 and macc == 100.0

    def test_iou_never_exceeds_acc(self, rng):
        for _ in range(20):
            gt = rng.integers(0, 4, 200)
            pred = rng.integers(0, 4, 200)
            iou, _, acc, _ = miou_macc(accumulate(pred, gt, 4))
            ok = ~(np.isnan(iou) | np.isnan(acc))
            assert np.all(iou[ok] <= acc[ok] + 1e-12)


class TestHiou:
    def test_paper_pin_unseen2(self):
        assert abs(hiou(58.6, 51.6) - 54.9) <= 0.05

    def test_paper_pin_unseen4(self):
        assert abs(hiou(64.8, 26.1) - 37.2) <= 0.05

    def test_idempotent(self):
        for x in (0.0, 13.7, 100.0):
            assert hiou(x, x) == pytest.approx(x)

    def test_zero_sum(self):
        assert hiou(0.0, 0.0) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(s=st.floats(0, 100), u=st.floats(0, 100))
    def test_bounds(self, s, u):
        h = hiou(s, u)
        assert h <= 2 * min(s, u) + 1e-9
        assert h <= (s + u) / 2 + 1e-9


class TestSplitHeadCommonTail:
    def test_36_classes_three_twelves(self, rng):
        counts = rng.integers(1, 10000, 36)
        head, common, tail = split_head_common_tail(counts)
        assert len(head) == len(common) == len(tail) == 12
        assert sorted(head + common + tail) == list(range(36))

    def test_remainder_to_earlier_groups(self):
        head, common, tail = split_head_common_tail([40, 30, 20, 10])
        assert head == [0, 1] and common == [2] and tail == [3]

    def test_tie_breaks_by_class_id(self):
        head, common, tail = split_head_common_tail([5, 5, 5])
        assert head == [0] and common == [1] and tail == [2]

    def test_sorted_by_count(self):
        head, common, tail = split_head_common_tail([1, 100, 50])
        assert head == [1] and common == [2] and tail == [0]

    def test_too_few_classes(self):
        with pytest.raises(ValueError):
            split_head_common_tail([1, 2])


class TestReport:
    def test_format_and_csv(self, tmp_path):
        cm = accumulate(np.array([0, 1, 1]), np.array([0, 0, 1]), 2)
        text = metrics.format_report(["wall", "floor"], cm)
        assert "50.0" in text and "75.0" in text
        metrics.write_report_csv(tmp_path / "r.csv", ["wall", "floor"], cm)
        rows = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert rows[-1] == "mean,50.0,75.0"

    def test_report_with_groups(self):
        from scenedistill.openvocab import LabelSet

        cm = ConfusionMatrix(np.diag([10, 10, 10, 10]).astype(np.uint64))
        ls = LabelSet(names=list("abcd"), seen=[0, 1], unseen=[2, 3])
        text = metrics.format_report(ls.names, cm, ls)
        assert "hIoU" in text
