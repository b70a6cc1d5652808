import json

import pytest
from hypothesis import given, strategies as st

from mtr.corpus import (CorpusError, DuplicateGoldenWarning, SynthSpec, ToolCorpus, ToolRecord, dumps_samples,
                        dumps_tools, load_samples, load_tools, synth_generate, token_count, validate_corpus)

from .conftest import write_jsonl


@pytest.mark.parametrize("text, expected", [
    ("", 0),
    ("GET /search/movie", 3),
    ("weather forecast tool", 3),
    ("  --  //  ", 0),
    ("snake_case_name", 3),
    ("v2.1", 2),
])
def test_token_count(text, expected):
    assert token_count(text) == expected


@given(st.text())
def test_token_count_monotone_under_concatenation(text):
    assert token_count(text + " x") == token_count(text) + 1


def test_load_tools_54(tmp_path):
    rows = [{"id": f"GET /t{i}", "name": f"GET /t{i}", "description": f"tool number {i} does things"}
            for i in range(54)]
    corpus = load_tools(write_jsonl(tmp_path / "t.jsonl", rows))
    assert corpus.size == 54
    assert corpus.ids == [r["id"] for r in rows]
    assert corpus.tools[0].token_count == 5
    assert sorted(corpus.index.values()) == list(range(54))


def test_empty_file(tmp_path):
    (tmp_path / "t.jsonl").write_text("")
    with pytest.raises(CorpusError, match="empty corpus"):
        load_tools(tmp_path / "t.jsonl")


def test_duplicate_id_names_both_lines(tmp_path):
    rows = [{"id": f"t{i}", "name": "n", "description": "d"} for i in range(10)]
    rows[1]["id"] = "tx"
    rows[2]["id"] = "t1"
    rows[8]["id"] = "t1"
    with pytest.raises(CorpusError, match=r"'t1' on lines 3 and 9"):
        load_tools(write_jsonl(tmp_path / "t.jsonl", rows))


def test_malformed_line_number(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"id": "a", "name": "a", "description": "x"}\n{oops\n')
    with pytest.raises(CorpusError, match=":2:"):
        load_tools(p)


def test_empty_description(tmp_path):
    with pytest.raises(CorpusError, match="empty description"):
        load_tools(write_jsonl(tmp_path / "t.jsonl", [{"id": "a", "name": "a", "description": "   "}]))


def test_round_trip(tmp_path, synth_small):
    corpus, samples = synth_small
    (tmp_path / "t.jsonl").write_text(dumps_tools(corpus))
    (tmp_path / "s.jsonl").write_text(dumps_samples(samples, corpus))
    again = load_tools(tmp_path / "t.jsonl")
    assert again == corpus
    assert load_samples(tmp_path / "s.jsonl", again) == samples


def _sample(qid, golden, split="test"):
    return {"query_id": qid, "query": "find a movie", "golden_tools": golden, "split": split}


def test_duplicate_golden_collapses_with_warning(tmp_path):
    corpus = ToolCorpus((ToolRecord("GET /search/movie", "GET /search/movie", "search movies by title"),))
    p = write_jsonl(tmp_path / "s.jsonl", [_sample("q1", ["GET /search/movie", "GET /search/movie"])])
    with pytest.warns(DuplicateGoldenWarning):
        samples = load_samples(p, corpus)
    assert samples.test[0].golden_tools == {"GET /search/movie"}


def test_unknown_golden(tmp_path, tiny_corpus):
    with pytest.raises(CorpusError, match="unknown golden tool"):
        load_samples(write_jsonl(tmp_path / "s.jsonl", [_sample("q1", ["nope"])]), tiny_corpus)


@pytest.mark.parametrize("rows, msg", [
    ([_sample("q1", [])], "empty golden"),
    ([_sample("q1", ["d1"]), _sample("q1", ["d2"])], "duplicate query_id"),
    ([_sample("q1", ["d1"], split="dev")], "split"),
])
def test_sample_errors(tmp_path, tiny_corpus, rows, msg):
    with pytest.raises(CorpusError, match=msg):
        load_samples(write_jsonl(tmp_path / "s.jsonl", rows), tiny_corpus)


def test_split_sizes(tmp_path, tiny_corpus):
    rows = [_sample(f"tr{i}", ["d1"], "train") for i in range(10)] + [_sample(f"te{i}", ["d2"]) for i in range(90)]
    assert load_samples(write_jsonl(tmp_path / "s.jsonl", rows), tiny_corpus).sizes == (10, 90)


def _corpus_with_lengths(lengths):
    return ToolCorpus(tuple(ToolRecord(f"t{i}", f"t{i}", " ".join(["w"] * n)) for i, n in enumerate(lengths)))


def test_validate_in_range():
    assert validate_corpus(_corpus_with_lengths([25] * 4), (20, 30)).warnings == []


def test_validate_one_short():
    report = validate_corpus(_corpus_with_lengths([25, 5, 25]), (20, 30))
    assert len(report.warnings) == 1 and report.warnings[0].startswith("t1:")


def test_validate_stats_only():
    report = validate_corpus(_corpus_with_lengths([3, 9, 4]))
    assert (report.min, report.median, report.max, report.warnings) == (3, 4, 9, [])


def test_synth_deterministic():
    spec = SynthSpec(tool_count=200, sample_count=100, seed=42)
    a = synth_generate(spec)
    b = synth_generate(spec)
    assert dumps_tools(a[0]) == dumps_tools(b[0])
    assert dumps_samples(a[1], a[0]) == dumps_samples(b[1], b[0])
    assert dumps_tools(synth_generate(SynthSpec(seed=43))[0]) != dumps_tools(a[0])


def test_synth_keywords_unique():
    corpus, _ = synth_generate(SynthSpec(tool_count=50, sample_count=5, vocabulary_size=80, seed=1))
    for tool in corpus:
        holders = [t.id for t in corpus if tool.name in t.description.split()]
        assert holders == [tool.id]


@pytest.mark.parametrize("dropout, present", [(0.0, True), (1.0, False)])
def test_synth_dropout_extremes(dropout, present):
    corpus, samples = synth_generate(SynthSpec(tool_count=40, golden_per_sample={1, 2, 3}, sample_count=50,
                                               vocabulary_size=70, keyword_dropout=dropout, seed=5))
    for s in samples.train + samples.test:
        words = s.query.split()
        assert all((corpus.get(g).name in words) == present for g in s.golden_tools)


@pytest.mark.parametrize("kwargs", [
    dict(tool_count=10, vocabulary_size=10),
    dict(tool_count=3, golden_per_sample={4}),
    dict(keyword_dropout=1.5),
    dict(sample_count=5, train_count=6),
])
def test_synth_infeasible(kwargs):
    with pytest.raises(CorpusError):
        synth_generate(SynthSpec(**kwargs))


def test_synth_split_default():
    _, samples = synth_generate(SynthSpec(tool_count=20, vocabulary_size=40, sample_count=100))
    assert samples.sizes == (10, 90)
