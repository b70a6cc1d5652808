"""
Building preference pairs from rewrites
=======================================

For each training query we show the rewriter a random subset of tools,
draw two rewrites, rank the corpus with each, and keep the better-scored
one as "chosen".  Here the two draws come from a mock that appends the
golden tool names and a mock that shuffles the query words.
"""

from collections import Counter

from mtr.corpus import SynthSpec, synth_generate
from mtr.dpo import generate_dataset, generate_pair
from mtr.metrics import evaluate
from mtr.retrieval import build_bm25
from mtr.rewriter import DrawRewriter, GoldenOracleRewriter, NoiseRewriter, RewriteConfig

corpus, samples = synth_generate(SynthSpec(tool_count=200, sample_count=100, keyword_dropout=0.8, seed=42))
index = build_bm25(corpus)
rewriter = DrawRewriter(GoldenOracleRewriter(corpus), NoiseRewriter())

###############################################################################
# One pair, with its bookkeeping.
pair = generate_pair(samples.train[0], corpus, index, rewriter, rewrite_cfg=RewriteConfig(seed=42))
print(pair.prompt)
print("chosen:  ", pair.chosen)
print("rejected:", pair.rejected)
print(pair.meta["scores"], pair.meta["original_placement"])

###############################################################################
# A hundred attempts per training query.  Attempts whose two rewrites score
# the same are skipped, and the counts are kept.
data = generate_dataset(samples.train, 100, corpus, index, rewriter, rewrite_cfg=RewriteConfig(seed=42))
print(len(data), "pairs, skipped:", data.skips)
print(Counter(p.meta["sources"]["chosen"] for p in data))

###############################################################################
# The same oracle, applied at evaluation time, shows how much room a good
# rewrite leaves on this corpus.
print("raw   ", evaluate(index, samples.test).summary())
print("oracle", evaluate(index, samples.test, rewriter=GoldenOracleRewriter(corpus)).summary())
