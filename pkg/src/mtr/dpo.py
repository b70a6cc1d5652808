"""DPO preference pairs from annotated samples, the DPO loss, and a toy policy.

Pair synthesis: sample a tool subset, draw two rewrites, rank the full corpus
for the original query and both rewrites, score each by golden-tool position,
and keep the better rewrite as ``chosen``.  The original query stays in the
prompt; its score is kept in ``meta`` for diagnostics only.

The toy policy is a log-linear model over hashed (prompt, completion)
features, normalised over the pair's two completions.  It is small enough
to check the loss gradient against finite differences and to train in
milliseconds.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import QuerySample, ToolCorpus, tokenize
from .qscore import ScoreConfig, candidate_score
from .retrieval import DenseIndex, fnv1a64, rank_full
from .rewriter import RewriteConfig, build_prompt, rewrite_pair, sample_subset
from .rng import Rng, derive

log = logging.getLogger(__name__)

REWRITE_ATTEMPTS = 3


@dataclass(frozen=True)
class DpoPair:
    prompt: str
    chosen: str
    rejected: str
    meta: dict

    def to_dict(self) -> dict:
        return {"prompt": self.prompt, "chosen": self.chosen, "rejected": self.rejected, "meta": self.meta}


@dataclass
class DpoDataset:
    pairs: list[DpoPair]
    provenance: dict = field(default_factory=dict, compare=False)
    skips: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    m: int = 100
    lr: float = 0.1
    epochs: int = 3
    batch_size: int = 32
    seed: int = 0
    feature_dim: int = 1024

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.m < 1 or self.batch_size < 1 or self.epochs < 0 or self.feature_dim < 1:
            raise ValueError("m, batch_size and feature_dim must be >= 1, epochs >= 0")


class PairSkipped(Exception):
    def __init__(self, reason: str, query_id: str = "", iteration: int = -1):
        super().__init__(f"{query_id}#{iteration}: {reason}")
        self.reason = reason


# --- pair synthesis ----------------------------------------------------------


def _rank(retriever, text, key=None):
    if isinstance(retriever, DenseIndex):
        return rank_full(retriever, text, key)
    return rank_full(retriever, text)


def _placement(original: float, hi: float, lo: float) -> str:
    if original > hi:
        return "above"
    if original < lo:
        return "below"
    return "between"


def generate_pair(sample: QuerySample, corpus: ToolCorpus, retriever, rewriter,
                  score_cfg: ScoreConfig = ScoreConfig(), rewrite_cfg: RewriteConfig = RewriteConfig(),
                  iteration: int = 0, stream_seed: int | None = None) -> DpoPair:
    """One preference pair, or :class:`PairSkipped` when the rewrites tie or the rewriter keeps failing."""
    seed = derive(rewrite_cfg.seed, iteration) if stream_seed is None else stream_seed
    rng = Rng(seed)
    subset = sample_subset(corpus, rewrite_cfg.subset_size, rng)
    cfg = replace(rewrite_cfg, seed=rng.next_u64())
    golden = sample.golden_tools if getattr(rewriter, "needs_golden", False) else None

    for attempt in range(REWRITE_ATTEMPTS):
        try:
            r1, r2 = rewrite_pair(rewriter, sample.query, subset, cfg, golden)
            break
        except Exception as exc:  # noqa: BLE001 - retried, then skipped
            log.warning("rewrite failed for %s#%d (attempt %d/%d): %s",
                        sample.query_id, iteration, attempt + 1, REWRITE_ATTEMPTS, exc)
    else:
        raise PairSkipped("rewriter failure", sample.query_id, iteration)

    s0 = candidate_score(_rank(retriever, sample.query, sample.query_id), sample.golden_tools, score_cfg)
    s1 = candidate_score(_rank(retriever, r1.text), sample.golden_tools, score_cfg)
    s2 = candidate_score(_rank(retriever, r2.text), sample.golden_tools, score_cfg)
    if s1.total == s2.total:
        raise PairSkipped("tie", sample.query_id, iteration)
    (cq, cs, ci), (rq, rs, ri) = sorted([(r1, s1, 1), (r2, s2, 2)], key=lambda t: -t[1].total)

    meta = {
        "query_id": sample.query_id,
        "iteration": iteration,
        "seed": seed,
        "subset": [t.id for t in subset],
        "scores": {"original": s0.total, "chosen": cs.total, "rejected": rs.total},
        "golden_ranks": {"original": dict(s0.golden_ranks), "chosen": dict(cs.golden_ranks),
                         "rejected": dict(rs.golden_ranks)},
        "chosen_draw": ci,
        "sources": {"chosen": cq.source, "rejected": rq.source},
        "original_placement": _placement(s0.total, cs.total, rs.total),
    }
    return DpoPair(build_prompt(sample.query, subset, rewrite_cfg.prompt_template_id), cq.text, rq.text, meta)


def generate_dataset(samples: Sequence[QuerySample], m: int, corpus: ToolCorpus, retriever, rewriter,
                     score_cfg: ScoreConfig = ScoreConfig(), rewrite_cfg: RewriteConfig = RewriteConfig(),
                     workers: int = 1) -> DpoDataset:
    """``m`` generation attempts per sample; attempt ``i`` of sample ``j`` uses stream ``derive(seed, j*m + i)``."""
    if m < 1:
        raise ValueError("m must be >= 1")

    def one(job):
        j, i = job
        try:
            return generate_pair(samples[j], corpus, retriever, rewriter, score_cfg, rewrite_cfg,
                                 iteration=i, stream_seed=derive(rewrite_cfg.seed, j * m + i))
        except PairSkipped as skip:
            return skip

    jobs = [(j, i) for j in range(len(samples)) for i in range(m)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(job) for job in jobs]

    pairs, skips = [], {}
    for r in results:
        if isinstance(r, PairSkipped):
            skips[r.reason] = skips.get(r.reason, 0) + 1
        else:
            pairs.append(r)
    provenance = {
        "m": m,
        "samples": len(samples),
        "n": score_cfg.n,
        "subset_size": rewrite_cfg.subset_size,
        "temperature": rewrite_cfg.temperature,
        "template": rewrite_cfg.prompt_template_id,
        "seed": rewrite_cfg.seed,
        "rewriter": getattr(rewriter, "source", None),
        "corpus_digest": corpus.digest(),
    }
    return DpoDataset(pairs, provenance, dict(sorted(skips.items())))


def export_dataset(dataset: DpoDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in dataset:
            fh.write(json.dumps(pair.to_dict(), ensure_ascii=False) + "\n")


def import_dataset(path) -> DpoDataset:
    pairs = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            pair = DpoPair(obj["prompt"], obj["chosen"], obj["rejected"], obj["meta"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed DPO record ({exc})") from None
        if not all(isinstance(x, str) for x in (pair.prompt, pair.chosen, pair.rejected)) or not isinstance(pair.meta, dict):
            raise ValueError(f"{path}:{lineno}: malformed DPO record (field types)")
        pairs.append(pair)
    return DpoDataset(pairs)


# --- loss --------------------------------------------------------------------


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def log_sigmoid(z: float) -> float:
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


@dataclass(frozen=True)
class DpoLossInput:
    policy_chosen: float
    ref_chosen: float
    policy_rejected: float
    ref_rejected: float
    beta: float = 0.1


def dpo_z(x: DpoLossInput) -> float:
    """beta * (chosen log-ratio - rejected log-ratio)."""
    if x.beta <= 0:
        raise ValueError("beta must be positive")
    return x.beta * ((x.policy_chosen - x.ref_chosen) - (x.policy_rejected - x.ref_rejected))


def dpo_loss(z: float) -> float:
    """-log sigmoid(z), i.e. softplus(-z)."""
    return -log_sigmoid(z)


def preference_probability(pi_chosen: float, ref_chosen: float, pi_rejected: float, ref_rejected: float,
                           beta: float) -> float:
    """Bradley-Terry preference written with probability ratios instead of log-ratios."""
    return 1.0 / (1.0 + math.exp(beta * math.log(pi_rejected / ref_rejected)
                                 - beta * math.log(pi_chosen / ref_chosen)))


# --- toy policy --------------------------------------------------------------


class ToyPolicy:
    """Log-linear policy over hashed features, normalised per candidate set.

    Features of a completion: its token counts, plus counts of the tokens it
    shares with the prompt, each hashed with a sign into ``dim`` buckets.
    """

    def __init__(self, dim: int = 1024, weights=None):
        self.dim = dim
        self.weights = np.zeros(dim) if weights is None else np.array(weights, dtype=np.float64)
        if self.weights.shape != (dim,):
            raise ValueError(f"weights must have shape ({dim},)")
        self.ref_weights = self.weights.copy()
        self.ref_weights.flags.writeable = False

    def features(self, prompt: str, completion: str) -> np.ndarray:
        v = np.zeros(self.dim)
        ptoks = set(tokenize(prompt))
        for tok in tokenize(completion):
            names = ("c:" + tok, "s:" + tok) if tok in ptoks else ("c:" + tok,)
            for name in names:
                h = fnv1a64(name.encode("utf-8"))
                v[h % self.dim] += -1.0 if h >> 63 else 1.0
        return v

    def pair_features(self, pair: DpoPair) -> np.ndarray:
        return np.vstack([self.features(pair.prompt, pair.chosen), self.features(pair.prompt, pair.rejected)])

    def log_probs(self, feats: np.ndarray, weights=None) -> np.ndarray:
        logits = feats @ (self.weights if weights is None else weights)
        return logits - np.logaddexp.reduce(logits)

    def loss_input(self, pair: DpoPair, beta: float, weights=None, feats=None) -> DpoLossInput:
        feats = self.pair_features(pair) if feats is None else feats
        lp = self.log_probs(feats, weights)
        ref = self.log_probs(feats, self.ref_weights)
        return DpoLossInput(float(lp[0]), float(ref[0]), float(lp[1]), float(ref[1]), beta)


def pair_loss(policy: ToyPolicy, pair: DpoPair, beta: float, weights=None, feats=None) -> float:
    return dpo_loss(dpo_z(policy.loss_input(pair, beta, weights, feats)))


def dpo_loss_grad(policy: ToyPolicy, pair: DpoPair, beta: float, feats=None) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to ``policy.weights``.

    dL/dz = -sigmoid(-z); dz/dw = beta * (dlogp_chosen/dw - dlogp_rejected/dw),
    where dlogp_i/dw = phi_i - sum_j p_j phi_j under the two-way softmax.
    """
    feats = policy.pair_features(pair) if feats is None else feats
    x = policy.loss_input(pair, beta, feats=feats)
    z = dpo_z(x)
    probs = np.exp(policy.log_probs(feats))
    mean_phi = probs @ feats
    dz = beta * ((feats[0] - mean_phi) - (feats[1] - mean_phi))
    return dpo_loss(z), -sigmoid(-z) * dz


@dataclass
class TrainResult:
    policy: ToyPolicy
    history: list[dict]  # epoch 0 is the untrained policy

    @property
    def final(self) -> dict:
        return self.history[-1]


def _evaluate(w, ref, fc, fr, beta):
    # log-ratio difference; the two-way normaliser cancels inside z
    z = beta * ((fc @ w - fr @ w) - (fc @ ref - fr @ ref))
    loss = np.logaddexp(0.0, -z)
    return z, loss, np.exp(-loss)


def evaluate_policy(policy: ToyPolicy, dataset: DpoDataset, beta: float) -> dict:
    """Mean loss, sigmoid(z) and z of ``policy`` on ``dataset`` as labelled."""
    feats = [policy.pair_features(p) for p in dataset]
    z, loss, sig = _evaluate(policy.weights, policy.ref_weights, np.vstack([f[0] for f in feats]),
                             np.vstack([f[1] for f in feats]), beta)
    return {"loss": float(np.mean(loss)), "mean_sigmoid_z": float(np.mean(sig)), "mean_z": float(np.mean(z))}


def train_toy_policy(dataset: DpoDataset, cfg: DpoConfig = DpoConfig(), policy: ToyPolicy | None = None) -> TrainResult:
    """Mini-batch gradient descent on the mean DPO loss.

    Each epoch visits the pairs in an order shuffled by ``derive(cfg.seed, epoch)``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    policy = ToyPolicy(cfg.feature_dim) if policy is None else policy
    feats = [policy.pair_features(p) for p in dataset]
    fc = np.vstack([f[0] for f in feats])
    fr = np.vstack([f[1] for f in feats])
    ref = policy.ref_weights
    w = policy.weights

    def record(epoch):
        z, loss, sig = _evaluate(w, ref, fc, fr, cfg.beta)
        entry = {"epoch": epoch, "loss": float(np.mean(loss)), "mean_sigmoid_z": float(np.mean(sig)),
                 "mean_z": float(np.mean(z))}
        if not math.isfinite(entry["loss"]):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}: {entry}")
        return entry

    history = [record(0)]
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        order = list(range(n))
        Rng(derive(cfg.seed, epoch)).shuffle(order)
        for start in range(0, n, cfg.batch_size):
            b = order[start : start + cfg.batch_size]
            bc, br = fc[b], fr[b]
            lc, lr_ = bc @ w, br @ w
            norm = np.logaddexp(lc, lr_)
            pc, pr = np.exp(lc - norm), np.exp(lr_ - norm)
            mean_phi = pc[:, None] * bc + pr[:, None] * br
            z = cfg.beta * ((lc - lr_) - (bc @ ref - br @ ref))
            dldz = -np.exp(-np.logaddexp(0.0, z))  # -sigmoid(-z)
            grad = (dldz * cfg.beta) @ ((bc - mean_phi) - (br - mean_phi)) / len(b)
            w = w - cfg.lr * grad
            if not np.all(np.isfinite(w)):
                raise FloatingPointError(f"non-finite weights in epoch {epoch}")
        history.append(record(epoch))
    policy.weights = w
    return TrainResult(policy, history)


def flipped(dataset: DpoDataset) -> DpoDataset:
    """Same pairs with chosen and rejected swapped."""
    return DpoDataset([replace(p, chosen=p.rejected, rejected=p.chosen) for p in dataset],
                      dict(dataset.provenance, flipped=True))
