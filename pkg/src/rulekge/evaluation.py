"""Filtered link-prediction evaluation: per-triple ranks, MRR, MED, HITS@N.

For each test triple both the head and the tail slot are ranked against
every entity. In the filtered setting, candidate completions that appear in
any split (other than the test triple itself) are removed before ranking,
since they are true triples and should not penalize the model.

Tie handling is configurable: "mid" (default, unbiased) places the test
entity in the middle of its tie group, "optimistic" at the top,
"pessimistic" at the bottom.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .kg import KnowledgeGraph, Triple
from .model import ComplexEmbeddings

TIE_MODES = ("mid", "optimistic", "pessimistic")
DEFAULT_HITS = (1, 3, 5, 10)


@dataclass
class RankRecord:
    triple: Triple
    head_rank: int
    tail_rank: int


@dataclass
class EvalReport:
    """Aggregated ranking metrics over all head and tail queries."""

    mrr: float
    med: float
    hits: dict[int, float]
    n_triples: int
    records: list[RankRecord] | None = None

    def format_key_values(self) -> str:
        lines = [f"mrr={self.mrr:.6f}", f"med={self.med:.1f}"]
        lines += [f"hits@{n}={v:.6f}" for n, v in sorted(self.hits.items())]
        lines.append(f"triples={self.n_triples}")
        return "\n".join(lines)

    def format_table(self) -> str:
        headers = ["MRR", "MED"] + [f"HITS@{n}" for n in sorted(self.hits)]
        values = [f"{self.mrr:.3f}", f"{self.med:.1f}"] + [
            f"{self.hits[n]:.3f}" for n in sorted(self.hits)
        ]
        widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
        head_row = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        val_row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        return head_row + "\n" + val_row


def rank_from_scores(
    scores: np.ndarray,
    true_index: int,
    excluded: Iterable[int] = (),
    tie_mode: str = "mid",
) -> int:
    """Rank of ``true_index`` by descending score among non-excluded candidates.

    ``excluded`` indices are removed from the candidate pool entirely (the
    true index stays in even if listed). Mid-rank resolves a tie group of
    size k by placing the true candidate at position ceil(k / 2) within it.
    """
    if tie_mode not in TIE_MODES:
        raise ValueError(f"tie_mode must be one of {TIE_MODES}, got {tie_mode!r}")
    keep = np.ones(len(scores), dtype=bool)
    excluded = np.fromiter(excluded, dtype=np.int64)
    if len(excluded):
        keep[excluded] = False
    keep[true_index] = True
    s = scores[true_index]
    greater = int(np.count_nonzero(keep & (scores > s)))
    equal_others = int(np.count_nonzero(keep & (scores == s))) - 1
    if tie_mode == "optimistic":
        return 1 + greater
    if tie_mode == "pessimistic":
        return 1 + greater + equal_others
    return 1 + greater + (equal_others + 1) // 2


def rank_entity(
    emb: ComplexEmbeddings,
    test: Triple,
    slot: str,
    kg: KnowledgeGraph,
    tie_mode: str = "mid",
    filtered: bool = True,
) -> int:
    """Filtered rank of the test triple's entity in the given slot."""
    if slot == "head":
        scores = emb.score_all_heads(test.relation, test.tail)
        known = kg.known_heads(test.relation, test.tail) if filtered else ()
        true_index = test.head
    elif slot == "tail":
        scores = emb.score_all_tails(test.head, test.relation)
        known = kg.known_tails(test.head, test.relation) if filtered else ()
        true_index = test.tail
    else:
        raise ValueError(f"slot must be 'head' or 'tail', got {slot!r}")
    return rank_from_scores(scores, true_index, known, tie_mode)


def aggregate_ranks(ranks: Sequence[int], hits_at: Sequence[int] = DEFAULT_HITS) -> tuple[float, float, dict[int, float]]:
    """MRR, MED, and HITS@N over a flat list of ranks.

    MED uses the mean of the two central values for an even count.
    """
    arr = np.asarray(ranks, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no ranks to aggregate")
    mrr = float(np.mean(1.0 / arr))
    med = float(np.median(arr))
    hits = {n: float(np.mean(arr <= n)) for n in hits_at}
    return mrr, med, hits


def evaluate(
    emb: ComplexEmbeddings,
    test_set: Sequence[Triple],
    kg: KnowledgeGraph,
    tie_mode: str = "mid",
    filtered: bool = True,
    hits_at: Sequence[int] = DEFAULT_HITS,
    keep_records: bool = False,
    n_threads: int = 1,
) -> EvalReport:
    """Rank every test triple in both slots and aggregate.

    Embarrassingly parallel over triples; with ``n_threads`` > 1 a thread
    pool is used and results are still aggregated in input order.
    """
    if not test_set:
        raise ValueError("empty test set")

    def ranks_of(t: Triple) -> tuple[int, int]:
        return (
            rank_entity(emb, t, "head", kg, tie_mode, filtered),
            rank_entity(emb, t, "tail", kg, tie_mode, filtered),
        )

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            pairs = list(pool.map(ranks_of, test_set))
    else:
        pairs = [ranks_of(t) for t in test_set]

    all_ranks = [r for pair in pairs for r in pair]
    mrr, med, hits = aggregate_ranks(all_ranks, hits_at)
    records = None
    if keep_records:
        records = [RankRecord(t, hr, tr) for t, (hr, tr) in zip(test_set, pairs)]
    return EvalReport(mrr=mrr, med=med, hits=hits, n_triples=len(test_set), records=records)
