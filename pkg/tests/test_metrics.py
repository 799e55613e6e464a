import io
import json
from fractions import Fraction

import numpy as np
import pytest

from naq import metrics
from naq.annotations import TemporalWindow

from reference_impls import iou_fraction, recall_at_k_fraction

W = TemporalWindow


def pred(qid, *windows, scores=None):
    if scores is None:
        scores = tuple(1.0 - 0.1 * i for i in range(len(windows)))
    return metrics.Prediction(qid, tuple(W(*w) for w in windows), tuple(scores))


class TestIntervalIoU:
    def test_direct_interval_arithmetic(self):
        assert metrics.interval_iou(W(0, 10), W(5, 15)) == pytest.approx(1 / 3)

    def test_identical_intervals(self):
        assert metrics.interval_iou(W(3, 7), W(3, 7)) == 1.0

    def test_disjoint_intervals(self):
        assert metrics.interval_iou(W(0, 1), W(2, 3)) == 0.0

    def test_zero_width_identical_defined_as_zero(self):
        assert metrics.interval_iou(W(4, 4), W(4, 4)) == 0.0

    def test_symmetry_and_range_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            a = sorted(rng.integers(0, 100, size=2).tolist())
            b = sorted(rng.integers(0, 100, size=2).tolist())
            wa, wb = W(*map(float, a)), W(*map(float, b))
            ab = metrics.interval_iou(wa, wb)
            assert ab == metrics.interval_iou(wb, wa)
            assert 0.0 <= ab <= 1.0

    def test_matches_rational_reference_on_integer_grid(self):
        rng = np.random.default_rng(11)
        for _ in range(10_000):
            a = sorted(rng.integers(0, 1000, size=2).tolist())
            b = sorted(rng.integers(0, 1000, size=2).tolist())
            got = metrics.interval_iou(W(*map(float, a)), W(*map(float, b)))
            want = float(iou_fraction(a, b))
            assert abs(got - want) < 1e-12


class TestRecallAtK:
    def test_enumeration_over_two_queries(self):
        # top-1 IoUs are 0.4 and 0.2
        preds = [pred("a", (0, 10)), pred("b", (0, 10))]
        gt = {"a": W(0, 4), "b": W(8, 10)}
        assert metrics.interval_iou(preds[0].windows[0], gt["a"]) == pytest.approx(0.4)
        assert metrics.interval_iou(preds[1].windows[0], gt["b"]) == pytest.approx(0.2)
        assert metrics.recall_at_k(preds, gt, k=1, m=0.3) == 50.0

    def test_threshold_zero_gives_hundred(self):
        preds = [pred("a", (0, 5)), pred("b", (2, 3))]
        gt = {"a": W(4, 6), "b": W(0, 10)}
        assert metrics.recall_at_k(preds, gt, k=1, m=0.0) == 100.0

    def test_k_beyond_list_length_equals_shorter_list(self):
        preds = [pred("a", (0, 10)), pred("b", (20, 30))]
        gt = {"a": W(0, 10), "b": W(0, 10)}
        assert metrics.recall_at_k(preds, gt, k=5, m=0.3) == metrics.recall_at_k(
            preds, gt, k=1, m=0.3
        )

    def test_missing_ground_truth_lists_offender(self):
        preds = [pred("mystery", (0, 1))]
        with pytest.raises(KeyError, match="mystery"):
            metrics.recall_at_k(preds, {}, k=1, m=0.3)

    def test_matches_naive_rational_reference(self):
        rng = np.random.default_rng(23)
        for trial in range(300):
            n_queries = int(rng.integers(1, 8))
            preds = []
            ref_preds = {}
            gt = {}
            for q in range(n_queries):
                qid = f"q{trial}_{q}"
                windows = []
                for _ in range(int(rng.integers(1, 6))):
                    a, b = sorted(rng.integers(0, 60, size=2).tolist())
                    windows.append((float(a), float(b)))
                preds.append(pred(qid, *windows))
                ref_preds[qid] = windows
                g = sorted(rng.integers(0, 60, size=2).tolist())
                gt[qid] = W(float(g[0]), float(g[1]))
            for k in (1, 3, 5):
                for m in (0.3, 0.5):
                    got = metrics.recall_at_k(preds, gt, k=k, m=m)
                    want = recall_at_k_fraction(
                        ref_preds,
                        {q: (w.start_sec, w.end_sec) for q, w in gt.items()},
                        k,
                        Fraction(3, 10) if m == 0.3 else Fraction(1, 2),
                    )
                    assert abs(got - float(want)) < 1e-12


class TestEvaluate:
    def test_single_exact_match(self):
        report = metrics.evaluate([pred("a", (2, 9))], {"a": W(2, 9)})
        assert all(v == 100.0 for v in report.recall.values())
        assert report.mean_r1 == 100.0
        assert report.n_queries == 1

    def test_three_query_enumeration(self):
        # top-1 IoUs: 0.6, 0.35, 0.1
        preds = [pred("a", (0, 60)), pred("b", (0, 40)), pred("c", (0, 10))]
        gt = {"a": W(0, 36), "b": W(0, 14), "c": W(0, 1)}
        report = metrics.evaluate(preds, gt)
        assert report.cell(1, 0.3) == pytest.approx(66.67, abs=0.005)
        assert report.cell(1, 0.5) == pytest.approx(33.33, abs=0.005)
        assert report.mean_r1 == pytest.approx(50.0)

    def test_empty_query_set_rejected(self):
        with pytest.raises(ValueError, match="no queries"):
            metrics.evaluate([], {})

    def test_report_invariants_randomized(self):
        rng = np.random.default_rng(31)
        preds, gt = [], {}
        for q in range(40):
            qid = f"q{q}"
            windows = []
            for _ in range(5):
                a, b = sorted(rng.integers(0, 50, size=2).tolist())
                windows.append((float(a), float(b)))
            preds.append(pred(qid, *windows))
            g = sorted(rng.integers(0, 50, size=2).tolist())
            gt[qid] = W(float(g[0]), float(g[1]))
        report = metrics.evaluate(preds, gt)
        for m in metrics.IOU_THRESHOLDS:
            assert report.cell(5, m) >= report.cell(1, m)
        for k in metrics.K_VALUES:
            assert report.cell(k, 0.3) >= report.cell(k, 0.5)


class TestShotTiers:
    def test_paper_tier_bounds(self):
        tiers = metrics.assign_shot_tier({"funnel": 7})
        assert tiers["funnel"] is metrics.LOW_SHOT

    def test_boundaries(self):
        tiers = metrics.assign_shot_tier({"a": 50, "b": 51, "c": 10, "d": 11, "e": 2})
        assert tiers["a"] is metrics.MID_SHOT
        assert tiers["b"] is metrics.HIGH_SHOT
        assert tiers["c"] is metrics.LOW_SHOT
        assert tiers["d"] is metrics.MID_SHOT
        assert tiers["e"] is metrics.LOW_SHOT

    def test_below_floor_unassigned(self):
        assert metrics.assign_shot_tier({"a": 1, "b": 0}) == {}


class TestStratify:
    def test_per_stratum_isolation(self):
        preds = [pred("a", (0, 10)), pred("b", (90, 95))]
        gt = {"a": W(0, 10), "b": W(0, 10)}
        out = metrics.stratify(preds, gt, {"a": "hit", "b": "miss"})
        assert out["hit"].cell(1, 0.3) == 100.0
        assert out["miss"].cell(1, 0.3) == 0.0

    def test_single_stratum_equals_global(self):
        preds = [pred(f"q{i}", (i, i + 10)) for i in range(4)]
        gt = {f"q{i}": W(i + 2, i + 12) for i in range(4)}
        whole = metrics.evaluate(preds, gt)
        strat = metrics.stratify(preds, gt, {f"q{i}": "only" for i in range(4)})
        assert strat["only"].recall == whole.recall

    def test_labeled_query_must_be_present(self):
        with pytest.raises(KeyError, match="ghost"):
            metrics.stratify([pred("a", (0, 1))], {"a": W(0, 1)}, {"ghost": "x"})

    def test_unlabeled_queries_omitted(self):
        preds = [pred("a", (0, 10)), pred("b", (0, 10))]
        gt = {"a": W(0, 10), "b": W(0, 10)}
        out = metrics.stratify(preds, gt, {"a": "s"})
        assert set(out) == {"s"}
        assert out["s"].n_queries == 1

    def test_count_weighted_aggregation_identity(self):
        rng = np.random.default_rng(37)
        preds, gt, labels = [], {}, {}
        for q in range(60):
            qid = f"q{q}"
            a, b = sorted(rng.integers(0, 30, size=2).tolist())
            preds.append(pred(qid, (float(a), float(b))))
            g = sorted(rng.integers(0, 30, size=2).tolist())
            gt[qid] = W(float(g[0]), float(g[1]))
            labels[qid] = f"s{int(rng.integers(0, 4))}"
        report = metrics.evaluate(preds, gt, strata=labels)
        for k in metrics.K_VALUES:
            for m in metrics.IOU_THRESHOLDS:
                # recall percentages are 100 * hits / n; recover integer hits
                total_hits = 0
                for sub in report.strata.values():
                    hits = sub.cell(k, m) * sub.n_queries / 100.0
                    assert hits == pytest.approx(round(hits), abs=1e-9)
                    total_hits += round(hits)
                global_hits = report.cell(k, m) * report.n_queries / 100.0
                assert round(global_hits) == total_hits


class TestPredictionValidation:
    def test_scores_must_not_increase(self):
        with pytest.raises(ValueError, match="scores increase"):
            metrics.Prediction("q", (W(0, 1), W(1, 2)), (0.1, 0.9))

    def test_empty_prediction_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            metrics.Prediction("q", (), ())

    def test_tied_scores_preserve_submitted_order(self):
        p = metrics.Prediction("q", (W(5, 6), W(0, 1)), (0.5, 0.5))
        assert p.windows[0] == W(5, 6)


class TestPredictionsIO:
    def test_round_trip(self):
        preds = [pred("a", (0.0, 1.5), (2.0, 3.0)), pred("b", (5.0, 9.0))]
        sink = io.StringIO()
        assert metrics.write_predictions(preds, sink) == 2
        back = metrics.read_predictions(io.StringIO(sink.getvalue()))
        assert back == preds

    def test_schema(self):
        sink = io.StringIO()
        metrics.write_predictions([pred("a", (0.0, 1.0))], sink)
        record = json.loads(sink.getvalue())
        assert set(record) == {"query_id", "windows"}
        assert set(record["windows"][0]) == {"start_sec", "end_sec", "score"}


class TestReportCsv:
    def test_fixed_schema_and_cells(self):
        report = metrics.evaluate(
            [pred("a", (0, 10)), pred("b", (0, 10))],
            {"a": W(0, 10), "b": W(50, 60)},
            strata={"a": "x", "b": "y"},
        )
        sink = io.StringIO()
        metrics.write_report_csv(report, sink)
        lines = sink.getvalue().splitlines()
        assert lines[0] == "stratum,metric,value,n_queries"
        body = [line.split(",") for line in lines[1:]]
        all_metrics = [row[1] for row in body if row[0] == "all"]
        assert all_metrics == ["R@1@0.3", "R@1@0.5", "R@5@0.3", "R@5@0.5", "mean_r1"]
        assert {row[0] for row in body} == {"all", "x", "y"}

    def test_deterministic_bytes(self):
        report = metrics.evaluate([pred("a", (0, 3))], {"a": W(0, 9)})
        a, b = io.StringIO(), io.StringIO()
        metrics.write_report_csv(report, a)
        metrics.write_report_csv(report, b)
        assert a.getvalue() == b.getvalue()
