"""Command-line front end.

    mtr corpus validate | corpus synth | retrieve | eval | dpo gen | dpo train-toy | rewrite

Settings resolve as built-in defaults < ``--config`` INI file < flags.  The
INI file groups keys into sections, but keys are flat: any section may hold
any key, spelled like its flag (``k = 5,10``, ``retriever = bm25``).  The API
key for remote services is read from ``MTR_API_KEY`` only.

Exit codes: 0 success, 1 input error, 2 remote-service failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .corpus import CorpusError, SynthSpec
from .dpo import DpoConfig, export_dataset, generate_dataset, import_dataset, train_toy_policy
from .metrics import EvalConfig, evaluate, random_baseline
from .qscore import ScoreConfig
from .retrieval import (Bm25Params, EmbeddingError, FileProvider, HashedProvider, RemoteProvider,
                        RemoteServiceError, build_bm25, build_dense, rank_full)
from .rewriter import (ChatRewriter, DrawRewriter, GoldenOracleRewriter, IdentityRewriter, NoiseRewriter,
                       RewriteConfig, RewriteError, rewrite_once, sample_subset)
from .rng import Rng

log = logging.getLogger("mtr")

DEFAULTS = {
    "tools": None,
    "samples": None,
    "embeddings": None,
    "retriever": "bm25",
    "provider": "hashed",
    "dimension": "256",
    "k1": "1.2",
    "b": "0.75",
    "rewriter": "none",
    "rewriter_url": None,
    "rewriter_model": None,
    "embedding_url": None,
    "embedding_model": None,
    "temperature": "1.0",
    "template": "qta-v1",
    "k": "5,10",
    "n": "10",
    "s": "5",
    "m": "100",
    "beta": "0.1",
    "epochs": "3",
    "batch": "32",
    "lr": "0.1",
    "dim": "1024",
    "trials": "10000",
    "seed": "0",
    "workers": None,
    "out": None,
    "split": "test",
}

# rewriters that read golden labels; refused where no labels are in play
GOLD_REWRITERS = {"golden-oracle", "oracle-noise"}
REWRITERS = ["none", "identity", "noise", "golden-oracle", "oracle-noise", "remote"]


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    helps = {
        "tools": "tools JSONL file",
        "samples": "samples JSONL file",
        "embeddings": "precomputed embeddings JSONL (provider=file)",
        "retriever": "bm25 | dense (eval also accepts random)",
        "provider": "hashed | file | remote",
        "rewriter": " | ".join(REWRITERS),
        "k": "comma-separated cutoffs",
        "n": "top-n boundary of the candidate score",
        "s": "tool subset size shown to the rewriter",
        "m": "generations per annotated sample",
        "beta": "DPO beta",
        "epochs": "training epochs",
        "batch": "batch size",
        "lr": "learning rate",
        "seed": "64-bit seed",
        "out": "output path",
        "workers": "worker pool size (1 = serial)",
        "config": "INI config file",
    }
    for name in names:
        p.add_argument(f"--{name}", default=None, help=helps.get(name))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtr", description="Massive tool retrieval toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = ("config", "seed", "workers")

    corpus = sub.add_parser("corpus", help="validate or synthesise corpora")
    csub = corpus.add_subparsers(dest="action", required=True)
    p = csub.add_parser("validate", help="document-length statistics")
    _add_common(p, "tools", "samples", *common)
    p.add_argument("--range", default=None, help="expected token range lo,hi (warnings only)")
    p = csub.add_parser("synth", help="write a synthetic corpus and samples")
    _add_common(p, "out", *common)
    p.add_argument("--tool-count", type=int, default=200)
    p.add_argument("--sample-count", type=int, default=100)
    p.add_argument("--train-count", type=int, default=None)
    p.add_argument("--vocab", type=int, default=300)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--golden-sizes", default="1")

    p = sub.add_parser("retrieve", help="rank tools for one query")
    _add_common(p, "tools", "embeddings", "retriever", "provider", "k", *common)
    p.add_argument("--query", required=True)

    p = sub.add_parser("eval", help="evaluate a retriever on a sample split")
    _add_common(p, "tools", "samples", "embeddings", "retriever", "provider", "rewriter", "k", "s", "out", *common)
    p.add_argument("--split", default=None, choices=["train", "test"])
    p.add_argument("--trials", default=None, help="random-baseline trials")

    dpo = sub.add_parser("dpo", help="DPO pair generation and toy training")
    dsub = dpo.add_subparsers(dest="action", required=True)
    p = dsub.add_parser("gen", help="generate preference pairs from the train split")
    _add_common(p, "tools", "samples", "embeddings", "retriever", "provider", "rewriter", "n", "s", "m", "out",
                *common)
    p.add_argument("--temperature", default=None)
    p = dsub.add_parser("train-toy", help="train the toy policy on a pair file")
    _add_common(p, "beta", "epochs", "batch", "lr", "out", *common)
    p.add_argument("--data", required=True, help="DPO pairs JSONL")
    p.add_argument("--dim", default=None, help="toy feature dimension")

    p = sub.add_parser("rewrite", help="rewrite one query")
    _add_common(p, "tools", "rewriter", "s", *common)
    p.add_argument("--query", required=True)
    p.add_argument("--temperature", default=None)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Effective settings: defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        ini = configparser.ConfigParser()
        ini.read(path, encoding="utf-8")
        for section in ini.sections():
            for key, value in ini.items(section):
                if key in ("api_key", "mtr_api_key"):
                    raise InputError("secrets belong in the MTR_API_KEY environment variable, not config files")
                cfg[key] = value
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "action", "config", "verbose"):
            cfg[key] = value
    if cfg["workers"] is None:
        cfg["workers"] = str(os.cpu_count() or 1)
    return cfg


def _int(cfg, key) -> int:
    try:
        return int(cfg[key])
    except (TypeError, ValueError):
        raise InputError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _float(cfg, key) -> float:
    try:
        return float(cfg[key])
    except (TypeError, ValueError):
        raise InputError(f"{key} must be a number, got {cfg[key]!r}") from None


def _ks(cfg) -> tuple[int, ...]:
    try:
        ks = tuple(int(x) for x in str(cfg["k"]).split(",") if x.strip())
    except ValueError:
        raise InputError(f"--k must be a comma list of integers, got {cfg['k']!r}") from None
    if not ks or min(ks) < 1:
        raise InputError("--k values must be positive")
    return ks


def _path(cfg, key) -> Path:
    if not cfg.get(key):
        raise InputError(f"--{key} is required")
    p = Path(cfg[key])
    if not p.exists():
        raise InputError(f"file not found: {p}")
    return p


def _load_corpus(cfg):
    return corpus_mod.load_tools(_path(cfg, "tools"))


def _load_samples(cfg, corpus):
    return corpus_mod.load_samples(_path(cfg, "samples"), corpus)


def _retriever(cfg, corpus):
    kind = cfg["retriever"]
    if kind == "bm25":
        return build_bm25(corpus, Bm25Params(_float(cfg, "k1"), _float(cfg, "b")))
    if kind != "dense":
        raise InputError(f"unknown retriever {kind!r}")
    prov = cfg["provider"]
    if prov == "hashed":
        provider = HashedProvider(_int(cfg, "dimension"))
    elif prov == "file":
        provider = FileProvider.load(_path(cfg, "embeddings"))
    elif prov == "remote":
        if not cfg.get("embedding_url") or not cfg.get("embedding_model"):
            raise InputError("provider=remote needs embedding_url and embedding_model")
        provider = RemoteProvider(cfg["embedding_url"], cfg["embedding_model"], max_workers=_int(cfg, "workers"))
    else:
        raise InputError(f"unknown provider {prov!r}")
    return build_dense(corpus, provider)


def _rewriter(cfg, corpus, gold_ok: bool):
    kind = cfg["rewriter"]
    if kind not in REWRITERS:
        raise InputError(f"unknown rewriter {kind!r}")
    if kind in GOLD_REWRITERS and not gold_ok:
        raise InputError(f"rewriter {kind!r} reads golden labels and is not allowed here")
    if kind == "none":
        return None
    if kind == "identity":
        return IdentityRewriter()
    if kind == "noise":
        return NoiseRewriter()
    if kind == "golden-oracle":
        return GoldenOracleRewriter(corpus)
    if kind == "oracle-noise":
        return DrawRewriter(GoldenOracleRewriter(corpus), NoiseRewriter())
    if not cfg.get("rewriter_url") or not cfg.get("rewriter_model"):
        raise InputError("rewriter=remote needs rewriter_url and rewriter_model")
    return ChatRewriter(cfg["rewriter_url"], cfg["rewriter_model"], template=cfg["template"])


def _out(cfg) -> Path:
    if not cfg.get("out"):
        raise InputError("--out is required")
    return Path(cfg["out"])


def _provenance(cfg) -> dict:
    skip = {"workers", "verbose"}
    return {k: v for k, v in sorted(cfg.items()) if v is not None and k not in skip}


# --- commands ----------------------------------------------------------------


def cmd_corpus_validate(cfg, args) -> int:
    corpus = _load_corpus(cfg)
    expected = None
    if args.range:
        try:
            lo, hi = (int(x) for x in args.range.split(","))
        except ValueError:
            raise InputError("--range must be lo,hi") from None
        expected = (lo, hi)
    report = corpus_mod.validate_corpus(corpus, expected)
    out = {"corpus": report.to_dict()}
    if cfg.get("samples"):
        samples = _load_samples(cfg, corpus)
        out["samples"] = {"train": len(samples.train), "test": len(samples.test),
                          "golden_sizes": corpus_mod.golden_sizes(samples.train + samples.test)}
    if report.warnings:
        log.warning("%d tools outside the expected length range", len(report.warnings))
    print(json.dumps(out, indent=2))
    return 0


def cmd_corpus_synth(cfg, args) -> int:
    try:
        sizes = frozenset(int(x) for x in args.golden_sizes.split(","))
    except ValueError:
        raise InputError("--golden-sizes must be a comma list of integers") from None
    spec = SynthSpec(args.tool_count, sizes, args.sample_count, args.vocab, args.dropout, _int(cfg, "seed"),
                     args.train_count)
    corpus, samples = corpus_mod.synth_generate(spec)
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_tools(corpus, out / "tools.jsonl")
    corpus_mod.save_samples(samples, out / "samples.jsonl", corpus)
    log.info("wrote %d tools, %d/%d samples to %s", corpus.size, *samples.sizes, out)
    return 0


def cmd_retrieve(cfg, args) -> int:
    corpus = _load_corpus(cfg)
    k = max(_ks(cfg))
    if k > corpus.size:
        raise InputError(f"k={k} exceeds corpus size {corpus.size}")
    ranking = rank_full(_retriever(cfg, corpus), args.query)
    for rank, (tid, score) in enumerate(ranking.entries[:k], start=1):
        print(f"{rank}\t{tid}\t{score:.6f}\t{corpus.get(tid).name}")
    return 0


def cmd_eval(cfg, args) -> int:
    corpus = _load_corpus(cfg)
    samples = _load_samples(cfg, corpus)
    split = samples.test if cfg["split"] == "test" else samples.train
    ecfg = EvalConfig(_ks(cfg), _int(cfg, "seed"), _int(cfg, "trials"), _int(cfg, "workers"))
    for k in ecfg.ks:
        if k > corpus.size:
            raise InputError(f"k={k} exceeds corpus size {corpus.size}")
    if cfg["retriever"] == "random":
        report = random_baseline(corpus, split, ecfg)
        report.config["effective"] = _provenance(cfg)
    else:
        retriever = _retriever(cfg, corpus)
        rewriter = _rewriter(cfg, corpus, gold_ok=True)
        rcfg = RewriteConfig(_int(cfg, "s"), 0.0, cfg["template"], _int(cfg, "seed"))
        report = evaluate(retriever, split, ecfg, rewriter, rcfg, {"effective": _provenance(cfg)})
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8", newline="\n")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8", newline="\n")
    if report.fallbacks:
        log.warning("%d samples fell back to the raw query", report.fallbacks)
    print(report.summary())
    return 0


def cmd_dpo_gen(cfg, args) -> int:
    corpus = _load_corpus(cfg)
    samples = _load_samples(cfg, corpus)
    if cfg["rewriter"] == "none":
        raise InputError("dpo gen needs a rewriter")
    retriever = _retriever(cfg, corpus)
    rewriter = _rewriter(cfg, corpus, gold_ok=True)
    rcfg = RewriteConfig(_int(cfg, "s"), _float(cfg, "temperature"), cfg["template"], _int(cfg, "seed"))
    if rcfg.subset_size > corpus.size:
        raise InputError(f"s={rcfg.subset_size} exceeds corpus size {corpus.size}")
    dataset = generate_dataset(samples.train, _int(cfg, "m"), corpus, retriever, rewriter,
                               ScoreConfig(_int(cfg, "n")), rcfg, workers=_int(cfg, "workers"))
    out = _out(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_dataset(dataset, out)
    summary = {
        "pairs": len(dataset),
        "skips": dataset.skips,
        "chosen_sources": _count(p.meta["sources"]["chosen"] for p in dataset),
        "original_placement": _count(p.meta["original_placement"] for p in dataset),
        "provenance": dataset.provenance,
        "effective": _provenance(cfg),
    }
    print(json.dumps(summary, indent=2))
    return 0


def _count(values) -> dict:
    out: dict = {}
    for v in values:
        out[v] = out.get(v, 0) + 1
    return dict(sorted(out.items()))


def cmd_dpo_train(cfg, args) -> int:
    data = Path(args.data)
    if not data.exists():
        raise InputError(f"file not found: {data}")
    dataset = import_dataset(data)
    if len(dataset) == 0:
        raise InputError("empty DPO dataset")
    dcfg = DpoConfig(beta=_float(cfg, "beta"), lr=_float(cfg, "lr"), epochs=_int(cfg, "epochs"),
                     batch_size=_int(cfg, "batch"), seed=_int(cfg, "seed"), feature_dim=_int(cfg, "dim"))
    result = train_toy_policy(dataset, dcfg)
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    history = {"config": dcfg.__dict__, "pairs": len(dataset), "history": result.history,
               "effective": _provenance(cfg)}
    (out / "history.json").write_text(json.dumps(history, indent=2) + "\n", encoding="utf-8", newline="\n")
    (out / "weights.json").write_text(json.dumps(result.policy.weights.tolist()) + "\n", encoding="utf-8",
                                      newline="\n")
    for h in result.history:
        print(f"epoch {h['epoch']}: loss={h['loss']:.6f} mean_sigmoid_z={h['mean_sigmoid_z']:.4f}")
    return 0


def cmd_rewrite(cfg, args) -> int:
    corpus = _load_corpus(cfg)
    rewriter = _rewriter(cfg, corpus, gold_ok=False)
    if rewriter is None:
        raise InputError("--rewriter is required")
    s = _int(cfg, "s")
    if not 1 <= s <= corpus.size:
        raise InputError(f"s={s} not in [1, {corpus.size}]")
    rng = Rng(_int(cfg, "seed"))
    subset = sample_subset(corpus, s, rng)
    rcfg = RewriteConfig(s, _float(cfg, "temperature") if args.temperature else 0.0, cfg["template"],
                         rng.next_u64())
    print(rewrite_once(rewriter, args.query, subset, rcfg).text)
    return 0


COMMANDS = {
    ("corpus", "validate"): cmd_corpus_validate,
    ("corpus", "synth"): cmd_corpus_synth,
    ("retrieve", None): cmd_retrieve,
    ("eval", None): cmd_eval,
    ("dpo", "gen"): cmd_dpo_gen,
    ("dpo", "train-toy"): cmd_dpo_train,
    ("rewrite", None): cmd_rewrite,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        return handler(resolve(args), args)
    except RemoteServiceError as exc:
        print(f"mtr: remote service failure: {exc}", file=sys.stderr)
        return 2
    except (InputError, CorpusError, EmbeddingError, RewriteError, ValueError, KeyError, OSError) as exc:
        print(f"mtr: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
