"""Retrieval benchmark metrics: mean average precision with PR curves, and
Kendall's tau-b for graded reference rankings.

Conventions worth stating once: rankings are full-corpus (no depth cut
unless the caller truncates), precision-recall curves are sampled at
evenly spaced recall levels, and the recall-zero end of the curve is
anchored at precision@1 so the left edge reflects what the top hit looks
like.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class RankedResult:
    """One query's ranking plus relevance labels for every retrieved id.

    ``relevance`` maps retrieved id -> label: binary 0/1 for precision
    metrics, graded ranks for tau_b. ``total_relevant`` is the number of
    relevant items in the whole corpus; when omitted it defaults to the
    positives present in the ranking (i.e. the ranking is assumed to
    cover the corpus).
    """

    query_id: str
    retrieved: list
    relevance: dict
    total_relevant: int = None

    def __post_init__(self):
        if len(set(self.retrieved)) != len(self.retrieved):
            raise ValueError(f"query {self.query_id!r}: duplicate ids in "
                             f"the retrieved list")
        missing = [r for r in self.retrieved if r not in self.relevance]
        if missing:
            raise ValueError(f"query {self.query_id!r}: no relevance label "
                             f"for {missing[:5]}")
        if self.total_relevant is None:
            self.total_relevant = sum(
                1 for r in self.retrieved if self.relevance[r] > 0)

    def hit_flags(self) -> np.ndarray:
        return np.array([self.relevance[r] > 0 for r in self.retrieved],
                        dtype=bool)


def average_precision(result: RankedResult,
                      total_relevant: int = None) -> float:
    """AP = mean over relevant items of precision at each hit's rank."""
    if total_relevant is None:
        total_relevant = result.total_relevant
    if total_relevant < 1:
        raise ValueError(f"query {result.query_id!r}: total_relevant must "
                         f"be >= 1, got {total_relevant}")
    hits = result.hit_flags()
    found = int(hits.sum())
    if found > total_relevant:
        raise ValueError(f"query {result.query_id!r}: ranking contains "
                         f"{found} relevant items but total_relevant is "
                         f"{total_relevant}")
    if found == 0:
        return 0.0
    positions = np.flatnonzero(hits) + 1
    precisions = np.arange(1, found + 1) / positions
    return float(precisions.sum() / total_relevant)


def _usable(results) -> list:
    usable = []
    for r in results:
        if r.total_relevant < 1:
            logger.warning("query %r has no relevant items in the corpus; "
                           "excluded", r.query_id)
            continue
        usable.append(r)
    return usable


def mean_ap(results) -> float:
    if not results:
        raise ValueError("mean_ap needs at least one result")
    usable = _usable(results)
    if not usable:
        raise ValueError("every query has zero relevant items")
    return float(np.mean([average_precision(r) for r in usable]))


def _query_pr(result: RankedResult, levels: np.ndarray) -> np.ndarray:
    """Precision of one query at each recall level.

    Level 0 is anchored at precision@1; a positive level r gets the
    precision at the first rank whose recall reaches r, or 0 when the
    ranking never gets there.
    """
    hits = result.hit_flags()
    cum = np.cumsum(hits)
    n = len(hits)
    ranks = np.arange(1, n + 1)
    precision_at = cum / ranks
    recall_at = cum / result.total_relevant
    out = np.zeros(len(levels))
    for i, r in enumerate(levels):
        if r <= 0.0:
            out[i] = precision_at[0] if n else 0.0
            continue
        reached = np.flatnonzero(recall_at >= r - 1e-12)
        out[i] = precision_at[reached[0]] if reached.size else 0.0
    return out


def pr_curve(results, points: int = 100) -> list:
    """(recall, precision) pairs averaged over queries."""
    if points < 2:
        raise ValueError(f"points must be >= 2, got {points}")
    if not results:
        raise ValueError("pr_curve needs at least one result")
    usable = _usable(results)
    if not usable:
        raise ValueError("every query has zero relevant items")
    # single division keeps levels exactly representable per rational
    levels = np.arange(points) / (points - 1)
    stack = np.stack([_query_pr(r, levels) for r in usable])
    mean_p = stack.mean(axis=0)
    return [(float(r), float(p)) for r, p in zip(levels, mean_p)]


def kendall_tau_b(predicted_order, reference_ranks: dict) -> float:
    """Rank correlation with tie corrections on both sides.

    ``predicted_order`` is either an ordered id list (no ties) or an
    id -> rank mapping (ties allowed). ``reference_ranks`` maps the same
    ids to graded reference ranks.
    """
    if isinstance(predicted_order, dict):
        pred = dict(predicted_order)
    else:
        order = list(predicted_order)
        if len(set(order)) != len(order):
            raise ValueError("predicted order contains duplicate ids")
        pred = {r: i + 1 for i, r in enumerate(order)}
    if set(pred) != set(reference_ranks):
        only_p = sorted(set(pred) - set(reference_ranks))[:5]
        only_r = sorted(set(reference_ranks) - set(pred))[:5]
        raise ValueError(f"id sets differ: prediction-only {only_p}, "
                         f"reference-only {only_r}")
    ids = sorted(pred)
    n = len(ids)
    if n < 2:
        raise ValueError(f"need at least 2 ids, got {n}")
    p = np.array([pred[i] for i in ids], dtype=np.float64)
    r = np.array([reference_ranks[i] for i in ids], dtype=np.float64)
    concordant = discordant = ties_ref = ties_pred = 0
    for i in range(n):
        for j in range(i + 1, n):
            dp = p[i] - p[j]
            dr = r[i] - r[j]
            if dp == 0 and dr == 0:
                continue
            if dp == 0:
                ties_pred += 1
            elif dr == 0:
                ties_ref += 1
            elif dp * dr > 0:
                concordant += 1
            else:
                discordant += 1
    denom_ref = concordant + discordant + ties_ref
    denom_pred = concordant + discordant + ties_pred
    if denom_ref == 0 or denom_pred == 0:
        raise ValueError("tau_b is undefined: one side is entirely tied")
    return float((concordant - discordant) /
                 np.sqrt(denom_ref * denom_pred))


PROTOCOLS = ("map", "tau_b")


@dataclass
class BenchmarkReport:
    protocol: str
    metrics: dict
    per_query: list            # (query_id, value) pairs
    pr_points: list = None     # (recall, precision) pairs for map
    config_echo: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["metrics"]
        for key in sorted(self.config_echo):
            lines.append(f"  {key},{self.config_echo[key]}")
        for key in sorted(self.metrics):
            lines.append(f"  {key},{self.metrics[key]!r}")
        lines.append("")
        name = "ap" if self.protocol == "map" else "tau_b"
        lines.append("per-query")
        lines.append(f"  query_id,{name}")
        for qid, value in self.per_query:
            lines.append(f"  {qid},{value!r}")
        if self.pr_points is not None:
            lines.append("")
            lines.append("pr-curve")
            lines.append("  recall,precision")
            for r, p in self.pr_points:
                lines.append(f"  {r!r},{p!r}")
        return "\n".join(lines) + "\n"

    def write_csv(self, out_dir):
        import csv
        from pathlib import Path
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        name = "ap" if self.protocol == "map" else "tau_b"
        with open(out_dir / "per_query.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["query_id", name])
            for qid, value in self.per_query:
                w.writerow([qid, repr(value)])
        written = [out_dir / "per_query.csv"]
        if self.pr_points is not None:
            with open(out_dir / "pr_curve.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["recall", "precision"])
                for r, p in self.pr_points:
                    w.writerow([repr(r), repr(p)])
            written.append(out_dir / "pr_curve.csv")
        return written


def ranked_result_from_query(index, query_id: str, embedding,
                             query_category: str,
                             scale: float = 2.0) -> RankedResult:
    """Rank the full index for one query; relevance = category match."""
    ranking = index.query(embedding, k=len(index), scale=scale)
    retrieved = [rid for rid, _ in ranking]
    relevance = {rid: 1.0 if index.category(rid) == query_category else 0.0
                 for rid in retrieved}
    total = sum(1 for rid in index.ids()
                if index.category(rid) == query_category)
    return RankedResult(query_id=query_id, retrieved=retrieved,
                        relevance=relevance, total_relevant=total)


def benchmark_report(index, queries, manifest, protocol: str,
                     scale: float = 2.0, pr_points: int = 100,
                     reference_ranks: dict = None) -> BenchmarkReport:
    """Run queries against the index and assemble the metric report.

    ``queries`` is a list of (query_id, embedding). For the map protocol
    each query id must resolve to a manifest item whose category defines
    relevance. For tau_b, ``reference_ranks`` must hold an id -> rank
    mapping per query id.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got "
                         f"{protocol!r}")
    if not queries:
        raise ValueError("no queries given")
    config_echo = {"protocol": protocol, "corpus_size": len(index),
                   "dim": index.dim, "scale": scale,
                   "num_queries": len(queries)}
    if protocol == "map":
        unknown = [qid for qid, _ in queries
                   if qid not in {i.id for i in manifest}]
        if unknown:
            raise ValueError(f"queries without manifest labels: "
                             f"{unknown[:5]}")
        results = []
        for qid, emb in queries:
            cat = manifest.by_id(qid).category
            results.append(ranked_result_from_query(index, qid, emb, cat,
                                                    scale))
        usable = _usable(results)
        if not usable:
            raise ValueError("every query has zero relevant items")
        per_query = [(r.query_id, average_precision(r)) for r in usable]
        return BenchmarkReport(
            protocol="map",
            metrics={"map": float(np.mean([v for _, v in per_query]))},
            per_query=per_query,
            pr_points=pr_curve(usable, pr_points),
            config_echo=config_echo)
    missing = [qid for qid, _ in queries
               if reference_ranks is None or qid not in reference_ranks]
    if missing:
        raise ValueError(f"tau_b needs reference ranks for every query; "
                         f"missing {missing[:5]}")
    per_query = []
    for qid, emb in queries:
        ranking = index.query(emb, k=len(index), scale=scale)
        predicted = [rid for rid, _ in ranking]
        per_query.append((qid, kendall_tau_b(predicted,
                                             reference_ranks[qid])))
    values = [v for _, v in per_query]
    return BenchmarkReport(
        protocol="tau_b",
        metrics={"mean_tau_b": float(np.mean(values))},
        per_query=per_query,
        config_echo=config_echo)
