"""
Fitting a toy policy with the DPO loss
======================================

A log-linear policy over hashed words picks between the two completions of
each pair.  Its starting weights act as the frozen reference, so training
starts at loss ln 2 and pushes the chosen completion's log-ratio up.
"""

import math

from mtr.corpus import SynthSpec, synth_generate
from mtr.dpo import DpoConfig, dpo_loss, evaluate_policy, flipped, generate_dataset, train_toy_policy
from mtr.retrieval import build_bm25
from mtr.rewriter import DrawRewriter, GoldenOracleRewriter, NoiseRewriter, RewriteConfig

###############################################################################
# The loss itself is softplus(-z).
for z in (-2.0, 0.0, 0.07, 2.0, 20.0):
    print(f"loss({z}) = {dpo_loss(z):.9g}")
print("ln 2 =", math.log(2))

###############################################################################
# Pairs where the chosen rewrite always carries the tool names and the
# rejected one never does: with every keyword dropped from the queries no
# attempt ties, giving 10 x 100 = 1000 pairs.
corpus, samples = synth_generate(SynthSpec(tool_count=200, sample_count=100, keyword_dropout=1.0, seed=42))
rewriter = DrawRewriter(GoldenOracleRewriter(corpus), NoiseRewriter())
data = generate_dataset(samples.train, 100, corpus, build_bm25(corpus), rewriter, rewrite_cfg=RewriteConfig(seed=42))
print(len(data), "pairs")

###############################################################################
# With beta = 0.1 the gradient on sparse features is small, so the step
# size has to be large to move sigmoid(z) within three epochs.
for lr in (0.1, 200.0):
    result = train_toy_policy(data, DpoConfig(lr=lr, seed=42))
    for h in result.history:
        print(f"lr={lr:<6} epoch {h['epoch']}: loss {h['loss']:.4f}  mean sigmoid(z) {h['mean_sigmoid_z']:.4f}")

###############################################################################
# Swapping chosen and rejected trains the opposite preference.
cfg = DpoConfig(lr=200.0, seed=42)
reverse = train_toy_policy(flipped(data), cfg).policy
print("mean z on original labels after flipped training:", evaluate_policy(reverse, data, cfg.beta)["mean_z"])
