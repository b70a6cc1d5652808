import json
import math
import random

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtr.corpus import ToolCorpus, ToolRecord, synth_generate, SynthSpec
from mtr.retrieval import (Bm25Params, EmbeddingError, FileProvider, HashedProvider, Ranking, RemoteProvider,
                           RemoteServiceError, bm25_score, build_bm25, build_dense, cosine, embed, fnv1a64,
                           normalized, rank_full, rank_of)

from .oracles import bm25_direct, fnv1a64_ref

# ln(1.6) * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 2 / (7/3))), evaluated with mpmath at 40 digits
BM25_D3_WEATHER = 0.4991762683023674156


def _corpus(docs):
    return ToolCorpus(tuple(ToolRecord(f"d{i + 1}", f"d{i + 1}", d) for i, d in enumerate(docs)))


def test_bm25_statistics():
    index = build_bm25(_corpus(["a b c", "a d", "e f"]))
    assert index.avg_len == pytest.approx(7 / 3, abs=1e-15)
    assert index.doc_freq["a"] == 2
    assert index.params == Bm25Params(1.2, 0.75)


def test_bm25_single_document():
    index = build_bm25(_corpus(["alpha beta gamma beta"]))
    assert set(index.doc_freq.values()) == {1}


def test_bm25_rebuild_identical(tiny_corpus):
    a, b = build_bm25(tiny_corpus), build_bm25(tiny_corpus)
    assert (a.doc_freq, a.term_freqs, a.doc_lens, a.avg_len) == (b.doc_freq, b.term_freqs, b.doc_lens, b.avg_len)


def test_bm25_examples(tiny_corpus):
    index = build_bm25(tiny_corpus)
    assert bm25_score(index, "weather", "d2") == 0.0
    assert bm25_score(index, "weather", "d3") == pytest.approx(BM25_D3_WEATHER, abs=1e-12)
    assert bm25_score(build_bm25(_corpus(["music player"])), "weather", "d1") == 0.0
    with pytest.raises(KeyError):
        bm25_score(index, "weather", "zz")


def test_bm25_matches_direct_formula():
    rng = random.Random(3)
    vocab = [f"w{i}" for i in range(20)]
    for _ in range(100):
        docs = [" ".join(rng.choices(vocab, k=rng.randint(1, 8))) for _ in range(rng.randint(1, 10))]
        query = " ".join(rng.choices(vocab, k=rng.randint(1, 4)))
        index = build_bm25(_corpus(docs))
        for i in range(len(docs)):
            assert bm25_score(index, query, f"d{i + 1}") == pytest.approx(bm25_direct(docs, query, i), abs=1e-9)


def test_bm25_param_validation():
    with pytest.raises(ValueError):
        Bm25Params(b=1.5)
    with pytest.raises(ValueError):
        Bm25Params(k1=-1)


def test_fnv1a64_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"weather") == fnv1a64_ref("weather")


def test_hashed_single_token():
    h = fnv1a64_ref("weather")
    v = HashedProvider(256).embed("weather")
    expected = np.zeros(256)
    expected[h % 256] = -1.0 if h >> 63 else 1.0
    assert np.array_equal(v.values, expected)
    assert v.norm == 1.0


def test_hashed_empty_and_deterministic():
    p = HashedProvider(64)
    assert p.embed("").is_zero and not p.embed("").values.any()
    assert np.array_equal(p.embed("find weather now").values, p.embed("find weather now").values)
    assert embed(p, "x").dimension == 64


@given(st.text(max_size=30), st.text(max_size=30))
def test_cosine_symmetry_and_self(a, b):
    p = HashedProvider(32)
    u, v = p.embed(a), p.embed(b)
    assert cosine(u, v) == cosine(v, u)
    if not u.is_zero:
        assert abs(cosine(u, u) - 1.0) < 1e-12


def test_zero_vectors_score_zero():
    assert cosine(normalized([0, 0]), normalized([1, 0])) == 0.0


def test_rank_all_zero_scores_sorted_by_id():
    corpus = _corpus(["b c", "d e", "f g"])
    ranking = rank_full(build_bm25(corpus), "zzz")
    assert ranking.ids == ["d1", "d2", "d3"]
    shuffled = ToolCorpus(tuple(reversed(corpus.tools)))
    assert rank_full(build_bm25(shuffled), "zzz").ids == ["d1", "d2", "d3"]


def test_rank_single_tool():
    assert rank_full(build_bm25(_corpus(["only one"])), "other").ids == ["d1"]


def test_unique_keyword_ranks_first():
    corpus, _ = synth_generate(SynthSpec(tool_count=50, sample_count=2, vocabulary_size=80, seed=9))
    index = build_bm25(corpus)
    for tool in corpus.tools[:10]:
        assert rank_full(index, tool.name).ids[0] == tool.id


def test_rank_of():
    ids = [f"t{i:02d}" for i in range(1, 55)]
    ranking = Ranking.from_scores("q", ids, [-i for i in range(54)])
    assert rank_of(ranking, "t01") == 1
    assert rank_of(ranking, "t54") == 54
    assert rank_of(ranking, "t03") == 3
    with pytest.raises(KeyError):
        rank_of(ranking, "nope")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), min_size=1, max_size=4), st.randoms())
def test_ranking_is_permutation_and_order_free(query, rnd):
    docs = [" ".join(rnd.choices("abcdefg", k=rnd.randint(1, 5))) for _ in range(8)]
    corpus = _corpus(docs)
    perm = list(corpus.tools)
    rnd.shuffle(perm)
    r1 = rank_full(build_bm25(corpus), " ".join(query))
    r2 = rank_full(build_bm25(ToolCorpus(tuple(perm))), " ".join(query))
    assert sorted(r1.ids) == sorted(corpus.ids)
    assert r1.ids == r2.ids
    scores = [s for _, s in r1.entries]
    assert scores == sorted(scores, reverse=True)
    d1 = rank_full(build_dense(corpus, HashedProvider(16)), " ".join(query))
    d2 = rank_full(build_dense(ToolCorpus(tuple(perm)), HashedProvider(16)), " ".join(query))
    assert d1.ids == d2.ids


def test_dense_ranking_prefers_shared_tokens(tiny_corpus):
    ranking = rank_full(build_dense(tiny_corpus, HashedProvider(512)), "music player")
    assert ranking.ids[0] == "d2"
    assert ranking.entries[0][1] == pytest.approx(1.0, abs=1e-12)


def test_file_provider(tmp_path, tiny_corpus):
    lines = [{"id": "d1", "vector": [1, 0, 0]}, {"id": "d2", "vector": [0, 1, 0]},
             {"id": "d3", "vector": [0, 0, 0]}, {"id": "q1", "vector": [0, 2, 0], "text": "tunes"}]
    p = tmp_path / "emb.jsonl"
    p.write_text("".join(json.dumps(x) + "\n" for x in lines))
    provider = FileProvider.load(p)
    index = build_dense(tiny_corpus, provider)
    assert rank_full(index, "tunes").ids == ["d2", "d1", "d3"]
    assert rank_full(index, "???", key="q1").ids[0] == "d2"
    with pytest.raises(EmbeddingError):
        provider.embed("not precomputed")


def test_file_provider_missing_tool(tmp_path, tiny_corpus):
    p = tmp_path / "emb.jsonl"
    p.write_text(json.dumps({"id": "d1", "vector": [1.0]}) + "\n")
    with pytest.raises(EmbeddingError):
        build_dense(tiny_corpus, FileProvider.load(p))


def test_file_provider_dimension_mismatch(tmp_path):
    p = tmp_path / "emb.jsonl"
    p.write_text(json.dumps({"id": "a", "vector": [1.0]}) + "\n" + json.dumps({"id": "b", "vector": [1.0, 2.0]}) + "\n")
    with pytest.raises(EmbeddingError):
        FileProvider.load(p)


def _embedding_server(fail_times=0, dim=3):
    calls = {"n": 0}

    def handler(request: httpx.Request):
        calls["n"] += 1
        if calls["n"] <= fail_times:
            return httpx.Response(503)
        body = json.loads(request.content)
        assert set(body) == {"model", "input"}
        data = [{"index": i, "embedding": [float(len(t)), 1.0, 0.0][:dim]} for i, t in enumerate(body["input"])]
        return httpx.Response(200, json={"data": list(reversed(data))})

    return httpx.Client(transport=httpx.MockTransport(handler)), calls


def test_remote_provider_parses_and_orders(tiny_corpus):
    client, calls = _embedding_server()
    provider = RemoteProvider("http://emb/v1", "m", client=client, batch_size=2, backoff=0)
    vecs = provider.embed_many(["a", "bbb", "cc"])
    assert [v.values[0] > 0 for v in vecs] == [True, True, True]
    assert vecs[1].values[0] > vecs[0].values[0]
    assert calls["n"] == 2
    assert build_dense(tiny_corpus, provider).dimension == 3


def test_remote_provider_retries_then_fails():
    client, calls = _embedding_server(fail_times=2)
    assert RemoteProvider("http://emb", "m", client=client, backoff=0).embed("x").dimension == 3
    client, calls = _embedding_server(fail_times=10)
    with pytest.raises(RemoteServiceError):
        RemoteProvider("http://emb", "m", client=client, backoff=0).embed("x")
    assert calls["n"] == 3


def test_remote_provider_dimension_mismatch():
    client, _ = _embedding_server(dim=2)
    with pytest.raises(EmbeddingError):
        RemoteProvider("http://emb", "m", dimension=3, client=client, backoff=0).embed("x")


def test_remote_provider_sends_key(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0]}]})

    monkeypatch.setenv("MTR_API_KEY", "sekrit")
    RemoteProvider("http://e", "m", client=httpx.Client(transport=httpx.MockTransport(handler))).embed("x")
    assert seen["auth"] == "Bearer sekrit"
