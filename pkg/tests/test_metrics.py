import logging

import numpy as np
import pytest
from scipy import stats

from sketchembed.data.manifest import DatasetManifest, ManifestItem
from sketchembed.index import EmbeddingIndex
from sketchembed.metrics import (average_precision, benchmark_report,
                                 kendall_tau_b, mean_ap, pr_curve,
                                 RankedResult)


def result_from_flags(flags, total=None, qid="q"):
    ids = [f"r{i}" for i in range(len(flags))]
    rel = {f"r{i}": float(f) for i, f in enumerate(flags)}
    return RankedResult(query_id=qid, retrieved=ids, relevance=rel,
                        total_relevant=total)


def reference_ap(flags, total):
    """Plain-loop AP reference."""
    hits = 0
    acc = 0.0
    for rank, f in enumerate(flags, start=1):
        if f:
            hits += 1
            acc += hits / rank
    return acc / total


def reference_pr(results, points):
    """Per-level scan reference for the PR curve."""
    levels = [i / (points - 1) for i in range(points)]
    curves = []
    for res in results:
        flags = [res.relevance[r] > 0 for r in res.retrieved]
        path = []
        hits = 0
        for j, f in enumerate(flags, start=1):
            hits += bool(f)
            path.append((hits / res.total_relevant, hits / j))
        per_level = []
        for lv in levels:
            if lv <= 0:
                per_level.append(path[0][1] if path else 0.0)
                continue
            val = 0.0
            for rec, prec in path:
                if rec >= lv - 1e-12:
                    val = prec
                    break
            per_level.append(val)
        curves.append(per_level)
    return [sum(c[i] for c in curves) / len(curves) for i in range(points)]


class TestAveragePrecision:
    def test_hand_case(self):
        res = result_from_flags([1, 0, 1, 0], total=2)
        assert average_precision(res) == pytest.approx(5 / 6, abs=1e-12)

    def test_perfect_ranking(self):
        res = result_from_flags([1, 1, 1, 0, 0], total=3)
        assert average_precision(res) == 1.0

    def test_nothing_relevant_retrieved(self):
        res = result_from_flags([0, 0, 0], total=4)
        assert average_precision(res) == 0.0

    def test_total_below_hits_rejected(self):
        res = result_from_flags([1, 1, 1], total=3)
        with pytest.raises(ValueError, match="total_relevant"):
            average_precision(res, total_relevant=2)

    def test_total_must_be_positive(self):
        res = result_from_flags([0, 0], total=0)
        with pytest.raises(ValueError, match=">= 1"):
            average_precision(res)

    def test_matches_loop_reference_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(1, 51))
            flags = (rng.random(n) < 0.4).tolist()
            total = sum(flags) + int(rng.integers(0, 4))
            if total == 0:
                total = 1
            res = result_from_flags(flags, total=total)
            want = reference_ap(flags, total)
            assert abs(average_precision(res) - want) <= 1e-12

    def test_duplicate_retrieved_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            RankedResult("q", ["a", "a"], {"a": 1.0})

    def test_unlabeled_retrieved_rejected(self):
        with pytest.raises(ValueError, match="label"):
            RankedResult("q", ["a", "b"], {"a": 1.0})


class TestMeanAp:
    def test_single_query(self):
        res = result_from_flags([1, 0], total=1)
        assert mean_ap([res]) == average_precision(res)

    def test_two_queries_average(self):
        a = result_from_flags([1], total=1, qid="a")
        b = result_from_flags([0], total=1, qid="b")
        assert mean_ap([a, b]) == 0.5

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        results = [result_from_flags((rng.random(20) < 0.3).tolist(),
                                     total=10, qid=f"q{i}")
                   for i in range(9)]
        base = mean_ap(results)
        for _ in range(5):
            perm = list(rng.permutation(len(results)))
            assert abs(mean_ap([results[i] for i in perm]) - base) <= 1e-12

    def test_zero_relevant_query_excluded_with_warning(self, caplog):
        good = result_from_flags([1], total=1, qid="good")
        empty = result_from_flags([0, 0], total=0, qid="empty")
        with caplog.at_level(logging.WARNING, logger="sketchembed.metrics"):
            value = mean_ap([good, empty])
        assert value == 1.0
        assert any("empty" in rec.getMessage() for rec in caplog.records)

    def test_all_empty_rejected(self):
        empty = result_from_flags([0], total=0)
        with pytest.raises(ValueError, match="zero relevant"):
            mean_ap([empty])

    def test_needs_results(self):
        with pytest.raises(ValueError, match="at least one"):
            mean_ap([])


class TestPrCurve:
    def test_perfect_ranking_flat_at_one(self):
        res = result_from_flags([1, 1, 1], total=3)
        curve = pr_curve([res], points=11)
        assert all(p == 1.0 for _, p in curve)
        recalls = [r for r, _ in curve]
        assert recalls == sorted(recalls)
        assert recalls[0] == 0.0 and recalls[-1] == 1.0

    def test_left_edge_is_precision_at_one(self):
        # top item is a miss: precision@1 = 0 even though later hits exist
        res = result_from_flags([0, 1, 1], total=2)
        curve = pr_curve([res], points=5)
        assert curve[0][1] == 0.0
        many = [result_from_flags([0, 1], total=1, qid="a"),
                result_from_flags([1, 0], total=1, qid="b")]
        assert pr_curve(many, points=5)[0][1] == 0.5

    def test_matches_scan_reference_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            results = []
            for q in range(int(rng.integers(1, 6))):
                n = int(rng.integers(1, 51))
                flags = (rng.random(n) < 0.4).tolist()
                if not any(flags):
                    flags[int(rng.integers(n))] = True
                results.append(result_from_flags(
                    flags, total=sum(flags) + int(rng.integers(0, 3)),
                    qid=f"q{q}"))
            points = int(rng.integers(2, 120))
            got = pr_curve(results, points)
            want = reference_pr(results, points)
            assert max(abs(p - w) for (_, p), w in zip(got, want)) <= 1e-12

    def test_points_validation(self):
        res = result_from_flags([1], total=1)
        with pytest.raises(ValueError, match="points"):
            pr_curve([res], points=1)


class TestKendallTauB:
    def test_identical_orders(self):
        ref = {f"i{k}": k for k in range(6)}
        assert kendall_tau_b([f"i{k}" for k in range(6)], ref) == 1.0

    def test_reversed_orders(self):
        ref = {f"i{k}": k for k in range(6)}
        pred = [f"i{k}" for k in reversed(range(6))]
        assert kendall_tau_b(pred, ref) == -1.0

    def test_hand_case_with_one_swap(self):
        pred = ["a", "b", "c", "d"]
        ref = {"a": 1, "b": 3, "c": 2, "d": 4}
        assert kendall_tau_b(pred, ref) == pytest.approx(2 / 3, abs=1e-12)

    def test_matches_scipy_on_random_instances(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 300:
            n = int(rng.integers(2, 51))
            ids = [f"i{k}" for k in range(n)]
            ref = {i: int(rng.integers(1, 6)) for i in ids}
            if len(set(ref.values())) < 2:
                continue
            pred = [ids[j] for j in rng.permutation(n)]
            got = kendall_tau_b(pred, ref)
            pred_rank = {r: i + 1 for i, r in enumerate(pred)}
            want = stats.kendalltau([pred_rank[i] for i in ids],
                                    [ref[i] for i in ids],
                                    variant="b").statistic
            assert abs(got - want) <= 1e-12
            checked += 1

    def test_tied_predictions_supported(self):
        pred = {"a": 1, "b": 1, "c": 2}
        ref = {"a": 1, "b": 2, "c": 3}
        got = kendall_tau_b(pred, ref)
        want = stats.kendalltau([1, 1, 2], [1, 2, 3], variant="b").statistic
        assert got == pytest.approx(want, abs=1e-12)

    def test_antisymmetric_under_reversal(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            ids = [f"i{k}" for k in range(n)]
            # tie-free reference
            ref_ranks = rng.permutation(n)
            ref = {i: int(r) for i, r in zip(ids, ref_ranks)}
            pred = [ids[j] for j in rng.permutation(n)]
            assert kendall_tau_b(pred[::-1], ref) == \
                pytest.approx(-kendall_tau_b(pred, ref), abs=1e-12)

    def test_degenerate_reference_rejected(self):
        with pytest.raises(ValueError, match="tied"):
            kendall_tau_b(["a", "b"], {"a": 1, "b": 1})

    def test_mismatched_id_sets_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            kendall_tau_b(["a", "b"], {"a": 1, "c": 2})

    def test_too_few_ids_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            kendall_tau_b(["a"], {"a": 1})


def one_hot_setup(num_cats=3, per_cat=4):
    """Index of one-hot photo embeddings plus a matching manifest."""
    dim = 8
    items = []
    index = EmbeddingIndex(dim)
    for c in range(num_cats):
        cat = f"cat{c}"
        for j in range(per_cat):
            pid = f"{cat}/p{j}"
            vec = np.zeros(dim)
            vec[c] = 1.0
            index.add(pid, vec, cat)
            items.append(ManifestItem(pid, f"{pid}.png", cat, pid,
                                      "photo", "train"))
        items.append(ManifestItem(f"{cat}/s0", f"{cat}/s0.json", cat,
                                  f"{cat}/p0", "sketch", "validation"))
    index.snapshot()
    manifest = DatasetManifest(items, ".")
    queries = []
    for c in range(num_cats):
        q = np.zeros(dim)
        q[c] = 0.5  # doubled by the query scale to land on the photos
        queries.append((f"cat{c}/s0", q))
    return index, manifest, queries


class TestBenchmarkReport:
    def test_one_hot_embeddings_reach_map_one(self):
        index, manifest, queries = one_hot_setup()
        report = benchmark_report(index, queries, manifest, "map")
        assert report.metrics["map"] == 1.0
        assert all(v == 1.0 for _, v in report.per_query)
        assert report.pr_points[0] == (0.0, 1.0)

    def test_text_is_byte_identical_across_runs(self):
        index, manifest, queries = one_hot_setup()
        a = benchmark_report(index, queries, manifest, "map").to_text()
        b = benchmark_report(index, queries, manifest, "map").to_text()
        assert a.encode() == b.encode()
        assert "metrics" in a and "per-query" in a and "pr-curve" in a

    def test_report_map_equals_independent_mean_ap(self):
        rng = np.random.default_rng(5)
        index, manifest, _ = one_hot_setup(num_cats=4, per_cat=5)
        queries = [(f"cat{c}/s0", rng.standard_normal(8) * 0.3)
                   for c in range(4)]
        report = benchmark_report(index, queries, manifest, "map")
        assert report.metrics["map"] == pytest.approx(
            float(np.mean([v for _, v in report.per_query])), abs=1e-12)

    def test_unlabeled_query_rejected(self):
        index, manifest, queries = one_hot_setup()
        bad = queries + [("ghost", np.zeros(8))]
        with pytest.raises(ValueError, match="ghost"):
            benchmark_report(index, bad, manifest, "map")

    def test_tau_protocol(self):
        index, manifest, queries = one_hot_setup()
        qid, emb = queries[0]
        ranking = [rid for rid, _ in index.query(emb, k=len(index))]
        ref = {rid: i + 1 for i, rid in enumerate(ranking)}
        report = benchmark_report(index, [(qid, emb)], manifest, "tau_b",
                                  reference_ranks={qid: ref})
        assert report.metrics["mean_tau_b"] == 1.0

    def test_tau_requires_reference_ranks(self):
        index, manifest, queries = one_hot_setup()
        with pytest.raises(ValueError, match="reference"):
            benchmark_report(index, queries, manifest, "tau_b")

    def test_csv_emission(self, tmp_path):
        index, manifest, queries = one_hot_setup()
        report = benchmark_report(index, queries, manifest, "map")
        written = report.write_csv(tmp_path)
        assert (tmp_path / "per_query.csv").exists()
        assert (tmp_path / "pr_curve.csv").exists()
        lines = (tmp_path / "per_query.csv").read_text().strip()
        assert lines.splitlines()[0] == "query_id,ap"
        assert len(written) == 2

    def test_unknown_protocol(self):
        index, manifest, queries = one_hot_setup()
        with pytest.raises(ValueError, match="protocol"):
            benchmark_report(index, queries, manifest, "ndcg")
