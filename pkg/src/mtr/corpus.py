"""Tool corpora and annotated query samples.

Both live in line-delimited JSON files (UTF-8, LF):

    tools:   {"id": str, "name": str, "description": str}
    samples: {"query_id": str, "query": str, "golden_tools": [str], "split": "train"|"test"}
"""

from __future__ import annotations

import hashlib
import json
import re
import statistics
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .rng import Rng

_SPLIT_RE = re.compile(r"[^\w]+|_+")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus / sample data."""


class DuplicateGoldenWarning(UserWarning):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character."""
    return [t for t in _SPLIT_RE.split(text.lower()) if t]


def token_count(text: str) -> int:
    return len(tokenize(text))


@dataclass(frozen=True)
class ToolRecord:
    id: str
    name: str
    description: str
    token_count: int = -1

    def __post_init__(self):
        if self.token_count < 0:
            object.__setattr__(self, "token_count", token_count(self.description))


@dataclass(frozen=True)
class ToolCorpus:
    tools: tuple[ToolRecord, ...]
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tools = tuple(self.tools)
        if not tools:
            raise CorpusError("empty corpus")
        index: dict[str, int] = {}
        for pos, tool in enumerate(tools):
            if tool.id in index:
                raise CorpusError(f"duplicate tool id {tool.id!r}")
            index[tool.id] = pos
        object.__setattr__(self, "tools", tools)
        object.__setattr__(self, "index", index)

    @property
    def size(self) -> int:
        return len(self.tools)

    def __len__(self):
        return len(self.tools)

    def __iter__(self):
        return iter(self.tools)

    def __contains__(self, tool_id):
        return tool_id in self.index

    def get(self, tool_id: str) -> ToolRecord:
        try:
            return self.tools[self.index[tool_id]]
        except KeyError:
            raise KeyError(f"unknown tool id {tool_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.tools]

    def digest(self) -> str:
        return hashlib.sha256(dumps_tools(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class QuerySample:
    query_id: str
    query: str
    golden_tools: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "golden_tools", frozenset(self.golden_tools))
        if not self.golden_tools:
            raise CorpusError(f"sample {self.query_id!r}: empty golden set")


@dataclass(frozen=True)
class SampleSet:
    train: tuple[QuerySample, ...] = ()
    test: tuple[QuerySample, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        seen = set()
        for s in self.train + self.test:
            if s.query_id in seen:
                raise CorpusError(f"duplicate query_id {s.query_id!r}")
            seen.add(s.query_id)

    @property
    def sizes(self) -> tuple[int, int]:
        return len(self.train), len(self.test)


# --- loading -----------------------------------------------------------------


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise CorpusError(f"{path}:{lineno}: expected a JSON object")
        yield lineno, obj


def _require_str(obj, key, path, lineno) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise CorpusError(f"{path}:{lineno}: field {key!r} must be a string")
    return value


def load_tools(path) -> ToolCorpus:
    """Read a tools JSONL file; record order is file order."""
    tools = []
    first_line: dict[str, int] = {}
    for lineno, obj in _read_jsonl(path):
        tool_id = _require_str(obj, "id", path, lineno)
        name = _require_str(obj, "name", path, lineno)
        desc = _require_str(obj, "description", path, lineno)
        if not tool_id:
            raise CorpusError(f"{path}:{lineno}: empty id")
        if not name:
            raise CorpusError(f"{path}:{lineno}: empty name")
        if not desc.strip():
            raise CorpusError(f"{path}:{lineno}: empty description for {tool_id!r}")
        if tool_id in first_line:
            raise CorpusError(
                f"{path}: duplicate tool id {tool_id!r} on lines {first_line[tool_id]} and {lineno}"
            )
        first_line[tool_id] = lineno
        tools.append(ToolRecord(tool_id, name, desc))
    if not tools:
        raise CorpusError("empty corpus")
    return ToolCorpus(tuple(tools))


def load_samples(path, corpus: ToolCorpus) -> SampleSet:
    """Read a samples JSONL file and check every golden id against ``corpus``.

    Repeated golden ids collapse into one with a ``DuplicateGoldenWarning``.
    """
    splits: dict[str, list[QuerySample]] = {"train": [], "test": []}
    seen: dict[str, int] = {}
    for lineno, obj in _read_jsonl(path):
        qid = _require_str(obj, "query_id", path, lineno)
        query = _require_str(obj, "query", path, lineno)
        split = obj.get("split")
        golden = obj.get("golden_tools")
        if not query.strip():
            raise CorpusError(f"{path}:{lineno}: empty query")
        if split not in splits:
            raise CorpusError(f"{path}:{lineno}: split must be 'train' or 'test', got {split!r}")
        if not isinstance(golden, list) or not all(isinstance(g, str) for g in golden):
            raise CorpusError(f"{path}:{lineno}: golden_tools must be an array of strings")
        if not golden:
            raise CorpusError(f"{path}:{lineno}: empty golden set for {qid!r}")
        if qid in seen:
            raise CorpusError(f"{path}: duplicate query_id {qid!r} on lines {seen[qid]} and {lineno}")
        seen[qid] = lineno
        for g in golden:
            if g not in corpus:
                raise CorpusError(f"{path}:{lineno}: unknown golden tool {g!r}")
        if len(set(golden)) < len(golden):
            warnings.warn(
                f"{path}:{lineno}: duplicate golden tools in {qid!r} collapsed",
                DuplicateGoldenWarning,
                stacklevel=2,
            )
        splits[split].append(QuerySample(qid, query, frozenset(golden)))
    return SampleSet(tuple(splits["train"]), tuple(splits["test"]))


# --- serialisation -----------------------------------------------------------


def _line(obj) -> str:
    return json.dumps(obj, ensure_ascii=False) + "\n"


def dumps_tools(corpus: ToolCorpus) -> str:
    return "".join(_line({"id": t.id, "name": t.name, "description": t.description}) for t in corpus)


def dumps_samples(samples: SampleSet, corpus: ToolCorpus | None = None) -> str:
    def order(ids):
        if corpus is None:
            return sorted(ids)
        return sorted(ids, key=corpus.index.__getitem__)

    out = []
    for split, rows in (("train", samples.train), ("test", samples.test)):
        for s in rows:
            out.append(_line({
                "query_id": s.query_id,
                "query": s.query,
                "golden_tools": order(s.golden_tools),
                "split": split,
            }))
    return "".join(out)


def save_tools(corpus: ToolCorpus, path) -> None:
    Path(path).write_text(dumps_tools(corpus), encoding="utf-8", newline="\n")


def save_samples(samples: SampleSet, path, corpus: ToolCorpus | None = None) -> None:
    Path(path).write_text(dumps_samples(samples, corpus), encoding="utf-8", newline="\n")


# --- validation --------------------------------------------------------------


@dataclass
class ValidationReport:
    token_counts: dict[str, int]
    min: int
    median: float
    max: int
    expected: tuple[int, int] | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tools": len(self.token_counts),
            "min": self.min,
            "median": self.median,
            "max": self.max,
            "expected": list(self.expected) if self.expected else None,
            "warnings": self.warnings,
        }


def validate_corpus(corpus: ToolCorpus, expected: tuple[int, int] | None = None) -> ValidationReport:
    """Document-length statistics; out-of-range lengths are warnings only.

    Counts come from the approximate tokenizer, so ``expected`` ranges
    published for other tokenizers are advisory.
    """
    counts = {t.id: t.token_count for t in corpus}
    values = list(counts.values())
    report = ValidationReport(counts, min(values), statistics.median(values), max(values), expected)
    if expected is not None:
        lo, hi = expected
        for tool_id, n in counts.items():
            if not lo <= n <= hi:
                report.warnings.append(f"{tool_id}: {n} tokens outside [{lo}, {hi}]")
    return report


# --- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    tool_count: int = 200
    golden_per_sample: frozenset[int] = frozenset({1})
    sample_count: int = 100
    vocabulary_size: int = 300
    keyword_dropout: float = 0.0
    seed: int = 0
    train_count: int | None = None  # default: a tenth of sample_count

    def __post_init__(self):
        object.__setattr__(self, "golden_per_sample", frozenset(self.golden_per_sample))

    @property
    def n_train(self) -> int:
        return self.sample_count // 10 if self.train_count is None else self.train_count

    def check(self) -> None:
        if self.tool_count < 1 or self.sample_count < 1 or self.vocabulary_size < 1:
            raise CorpusError("tool_count, sample_count and vocabulary_size must be positive")
        if not self.golden_per_sample or min(self.golden_per_sample) < 1:
            raise CorpusError("golden_per_sample must hold positive sizes")
        if max(self.golden_per_sample) > self.tool_count:
            raise CorpusError("golden set size exceeds tool_count")
        if not 0.0 <= self.keyword_dropout <= 1.0:
            raise CorpusError("keyword_dropout must lie in [0, 1]")
        if self.vocabulary_size <= self.tool_count:
            raise CorpusError(
                f"vocabulary_size {self.vocabulary_size} leaves no filler words for {self.tool_count} keywords"
            )
        if not 0 <= self.n_train <= self.sample_count:
            raise CorpusError("train_count must lie in [0, sample_count]")
        if not 0 <= self.seed < 1 << 64:
            raise CorpusError("seed must be a 64-bit unsigned integer")


_ONSETS = "b c d f g h j k l m n p r s t v w z br cr dr fl gr pl st tr".split()
_VOWELS = "a e i o u ai ea io ou".split()


def _vocabulary(rng: Rng, size: int) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < size:
        n = 2 + rng.below(3)
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def synth_generate(spec: SynthSpec) -> tuple[ToolCorpus, SampleSet]:
    """Deterministic desk-scale corpus and samples.

    Tool ``i`` owns keyword ``i`` (its name, and the first word of its
    description); no other document contains it.  Each query mixes filler
    words, some borrowed from its golden descriptions, with the golden
    keywords, each dropped with probability ``keyword_dropout``.
    """
    spec.check()
    rng = Rng(spec.seed)
    vocab = _vocabulary(rng, spec.vocabulary_size)
    keywords, fillers = vocab[: spec.tool_count], vocab[spec.tool_count :]
    width = len(str(spec.tool_count - 1))

    tools = []
    filler_sets = []
    for i, kw in enumerate(keywords):
        words = [rng.choice(fillers) for _ in range(6 + rng.below(7))]
        filler_sets.append(words)
        tools.append(ToolRecord(f"tool-{i:0{width}d}", kw, " ".join([kw] + words)))
    corpus = ToolCorpus(tuple(tools))

    sizes = sorted(spec.golden_per_sample)
    qwidth = len(str(spec.sample_count - 1))
    samples = []
    for j in range(spec.sample_count):
        golden = rng.sample(range(spec.tool_count), rng.choice(sizes))
        words = []
        for g in golden:
            words.append(rng.choice(filler_sets[g]))
        words.extend(rng.choice(fillers) for _ in range(2 + rng.below(3)))
        for g in golden:
            if rng.random() >= spec.keyword_dropout:
                words.append(keywords[g])
        rng.shuffle(words)
        samples.append(QuerySample(f"q{j:0{qwidth}d}", " ".join(words), frozenset(tools[g].id for g in golden)))
    n_train = spec.n_train
    return corpus, SampleSet(tuple(samples[:n_train]), tuple(samples[n_train:]))


def keyword_of(corpus: ToolCorpus, tool_id: str) -> str:
    """The discriminative keyword of a synthetic tool (its name)."""
    return corpus.get(tool_id).name


def golden_sizes(samples: Sequence[QuerySample]) -> dict[int, int]:
    out: dict[int, int] = {}
    for s in samples:
        out[len(s.golden_tools)] = out.get(len(s.golden_tools), 0) + 1
    return dict(sorted(out.items()))
