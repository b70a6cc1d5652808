"""Recall@k, Sufficiency@k, NDCG@k and the evaluation harness.

All three metrics use binary relevance against the golden set (duplicates
collapsed).  NDCG is the canonical one: DCG with a ``log2(rank + 1)``
discount over the top k, divided by the ideal DCG of ``min(|golden|, k)``
hits.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .corpus import QuerySample, ToolCorpus
from .retrieval import DenseIndex, Ranking, rank_full
from .rewriter import RewriteConfig, rewrite_once, sample_subset
from .rng import Rng, derive

log = logging.getLogger(__name__)

METRICS = ("recall", "sufficiency", "ndcg")
SHORT = {"recall": "R", "sufficiency": "S", "ndcg": "N"}


def _ids(ranking) -> list[str]:
    return ranking.ids if isinstance(ranking, Ranking) else list(ranking)


def _check(ids, golden, k) -> frozenset:
    golden = frozenset(golden)
    if not golden:
        raise ValueError("golden set is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds corpus size {len(ids)}")
    return golden


def _hits(ids, golden, k) -> list[int]:
    """1-based positions of golden tools within the top k."""
    return [i for i, tid in enumerate(ids[:k], start=1) if tid in golden]


def recall_at_k(ranking, golden: Iterable[str], k: int) -> float:
    ids = _ids(ranking)
    golden = _check(ids, golden, k)
    return len(_hits(ids, golden, k)) / len(golden)


def sufficiency_at_k(ranking, golden: Iterable[str], k: int) -> int:
    """1 iff every golden tool is in the top k."""
    ids = _ids(ranking)
    golden = _check(ids, golden, k)
    return int(len(_hits(ids, golden, k)) == len(golden))


def _ndcg_from_hits(hits: Sequence[int], n_golden: int, k: int) -> float:
    dcg = math.fsum(1.0 / math.log2(i + 1) for i in hits)
    idcg = math.fsum(1.0 / math.log2(i + 1) for i in range(1, min(n_golden, k) + 1))
    return dcg / idcg


def ndcg_at_k(ranking, golden: Iterable[str], k: int) -> float:
    ids = _ids(ranking)
    golden = _check(ids, golden, k)
    return _ndcg_from_hits(_hits(ids, golden, k), len(golden), k)


def metrics_from_positions(positions: Sequence[int], n_golden: int, k: int) -> tuple[float, int, float]:
    """(recall, sufficiency, ndcg) from the 1-based ranks of all golden tools."""
    hits = sorted(p for p in positions if p <= k)
    return len(hits) / n_golden, int(len(hits) == n_golden), _ndcg_from_hits(hits, n_golden, k)


# --- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = (5, 10)
    seed: int = 0
    trials: int = 10000
    workers: int = 1

    def __post_init__(self):
        ks = tuple(sorted(set(self.ks)))
        if not ks or ks[0] < 1:
            raise ValueError("ks must be positive integers")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "ks", ks)


@dataclass
class MetricRow:
    query_id: str
    recall: dict[int, float]
    sufficiency: dict[int, float]
    ndcg: dict[int, float]
    query: str = ""
    golden_ranks: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for m in METRICS:
            d[m] = {str(k): v for k, v in d[m].items()}
        return d


@dataclass
class EvalReport:
    rows: list[MetricRow]
    aggregates: dict[str, dict[int, float]]  # metric -> k -> percent
    config: dict
    fallbacks: int = 0

    def value(self, metric: str, k: int) -> float:
        return self.aggregates[metric][k]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "aggregates": {m: {str(k): v for k, v in by_k.items()} for m, by_k in self.aggregates.items()},
            "fallbacks": self.fallbacks,
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "k", "value_percent"])
        for m in METRICS:
            for k, v in self.aggregates[m].items():
                w.writerow([f"{SHORT[m]}@{k}", k, repr(v)])
        return buf.getvalue()

    def summary(self) -> str:
        return "  ".join(f"{SHORT[m]}@{k}={v:.2f}" for m in ("sufficiency", "ndcg", "recall")
                         for k, v in self.aggregates[m].items())


def aggregate(rows: Sequence[MetricRow], ks: Sequence[int]) -> dict[str, dict[int, float]]:
    if not rows:
        return {m: {k: 0.0 for k in ks} for m in METRICS}
    return {
        m: {k: 100.0 * math.fsum(getattr(r, m)[k] for r in rows) / len(rows) for k in ks}
        for m in METRICS
    }


def _row(sample: QuerySample, ranking: Ranking, ks) -> MetricRow:
    golden = sample.golden_tools
    ids = ranking.ids
    pos = {tid: i for i, tid in enumerate(ids, start=1)}
    row = MetricRow(sample.query_id, {}, {}, {}, ranking.query, {g: pos[g] for g in sorted(golden)})
    for k in ks:
        _check(ids, golden, k)
        row.recall[k], row.sufficiency[k], row.ndcg[k] = metrics_from_positions(
            list(row.golden_ranks.values()), len(golden), k)
    return row


def evaluate(retriever, samples: Sequence[QuerySample], cfg: EvalConfig = EvalConfig(),
             rewriter=None, rewrite_cfg: RewriteConfig | None = None,
             extra_config: dict | None = None) -> EvalReport:
    """Rank the full corpus for every sample and score the results.

    With a rewriter, each query is rewritten once at temperature 0 against a
    fresh random tool subset seeded by ``derive(cfg.seed, j)``.  A failed
    rewrite falls back to the raw query and is counted.
    """
    corpus: ToolCorpus = retriever.corpus
    rcfg = RewriteConfig(temperature=0.0) if rewrite_cfg is None else rewrite_cfg
    for k in cfg.ks:
        if k > corpus.size:
            raise ValueError(f"k={k} exceeds corpus size {corpus.size}")

    def one(item):
        j, sample = item
        query, key, failed = sample.query, sample.query_id, False
        if rewriter is not None:
            rng = Rng(derive(cfg.seed, j))
            subset = sample_subset(corpus, min(rcfg.subset_size, corpus.size), rng)
            scfg = RewriteConfig(rcfg.subset_size, 0.0, rcfg.prompt_template_id, rng.next_u64())
            golden = sample.golden_tools if getattr(rewriter, "needs_golden", False) else None
            try:
                query = rewrite_once(rewriter, sample.query, subset, scfg, golden).text
                key = None if query != sample.query else key
            except Exception as exc:  # noqa: BLE001 - per-sample fallback
                log.warning("rewrite failed for %s, using raw query: %s", sample.query_id, exc)
                failed = True
        ranking = rank_full(retriever, query, key) if isinstance(retriever, DenseIndex) else rank_full(retriever, query)
        return _row(sample, ranking, cfg.ks), failed

    items = list(enumerate(samples))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]

    rows = sorted((r for r, _ in results), key=lambda r: r.query_id)
    config = {
        "retriever": _retriever_name(retriever),
        "rewriter": getattr(rewriter, "source", None),
        "ks": list(cfg.ks),
        "seed": cfg.seed,
        "subset_size": rcfg.subset_size if rewriter is not None else None,
        "corpus_size": corpus.size,
        "samples": len(samples),
        **(extra_config or {}),
    }
    return EvalReport(rows, aggregate(rows, cfg.ks), config, sum(f for _, f in results))


def _retriever_name(retriever) -> str:
    if isinstance(retriever, DenseIndex):
        return f"dense:{retriever.provider.name}"
    p = retriever.params
    return f"bm25(k1={p.k1},b={p.b})"


def random_baseline(corpus: ToolCorpus, samples: Sequence[QuerySample], cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Mean metrics over ``cfg.trials`` uniform random rankings per sample.

    Only the golden tools' positions matter, so each trial draws them as a
    uniform set of distinct ranks, the same law as a full random permutation.
    Row values are per-sample means over trials.
    """
    m = corpus.size
    for k in cfg.ks:
        if k > m:
            raise ValueError(f"k={k} exceeds corpus size {m}")
    rows = []
    for j, sample in enumerate(samples):
        rng = Rng(derive(cfg.seed, j))
        g = len(sample.golden_tools)
        sums = {mt: {k: 0.0 for k in cfg.ks} for mt in METRICS}
        for _ in range(cfg.trials):
            positions = [p + 1 for p in rng.distinct(m, g)]
            for k in cfg.ks:
                r, s, n = metrics_from_positions(positions, g, k)
                sums["recall"][k] += r
                sums["sufficiency"][k] += s
                sums["ndcg"][k] += n
        rows.append(MetricRow(
            sample.query_id,
            *({k: v / cfg.trials for k, v in sums[mt].items()} for mt in METRICS),
            query=sample.query,
        ))
    rows.sort(key=lambda r: r.query_id)
    config = {"retriever": "random", "ks": list(cfg.ks), "seed": cfg.seed, "trials": cfg.trials,
              "corpus_size": m, "samples": len(samples)}
    return EvalReport(rows, aggregate(rows, cfg.ks), config)


def random_trial_recalls(m: int, n_golden: int, k: int, trials: int, seed: int) -> list[float]:
    """Per-trial recall@k under random ranking; for calibration checks."""
    rng = Rng(seed)
    return [metrics_from_positions([p + 1 for p in rng.distinct(m, n_golden)], n_golden, k)[0]
            for _ in range(trials)]
