"""Massive tool retrieval: full-corpus ranking, query-candidate scoring,
DPO pair synthesis and retrieval evaluation."""

from .corpus import (CorpusError, QuerySample, SampleSet, SynthSpec, ToolCorpus, ToolRecord, load_samples,
                     load_tools, synth_generate, token_count, tokenize, validate_corpus)
from .dpo import (DpoConfig, DpoDataset, DpoLossInput, DpoPair, ToyPolicy, dpo_loss, dpo_loss_grad, dpo_z,
                  evaluate_policy, export_dataset, generate_dataset, generate_pair, import_dataset, sigmoid, train_toy_policy)
from .metrics import EvalConfig, EvalReport, evaluate, ndcg_at_k, random_baseline, recall_at_k, sufficiency_at_k
from .qscore import CandidateScore, ScoreConfig, candidate_score, order_candidates, position_score
from .retrieval import (Bm25Index, Bm25Params, DenseIndex, FileProvider, HashedProvider, Ranking, RemoteProvider,
                        bm25_score, build_bm25, build_dense, embed, rank_full, rank_of)
from .rewriter import (ChatRewriter, DrawRewriter, GoldenOracleRewriter, IdentityRewriter, NoiseRewriter,
                       RewriteConfig, build_prompt, rewrite_once, rewrite_pair, sample_subset)

__version__ = "0.1.0"
