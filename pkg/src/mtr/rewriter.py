"""Query rewriting from ``(query, tool subset)``.

Rewriters share one method, ``rewrite(query, subset, *, temperature, seed,
golden=None, draw=0) -> str``.  The remote one talks to a chat-completion
endpoint; the mocks are pure functions of their inputs and seed.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import httpx

from .corpus import ToolCorpus, ToolRecord
from .retrieval import API_KEY_ENV, RemoteServiceError
from .rng import Rng, derive

log = logging.getLogger(__name__)


class RewriteError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewriteConfig:
    subset_size: int = 5
    temperature: float = 1.0
    prompt_template_id: str = "qta-v1"
    seed: int = 0

    def __post_init__(self):
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True)
class RewrittenQuery:
    text: str
    source: str
    temperature: float
    seed: int


# --- prompts -----------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    system: str
    user: str  # with {tools} and {query}


TEMPLATES = {
    "qta-v1": PromptTemplate(
        system=(
            "You rewrite user queries so a retrieval system can find the right tools. "
            "Reply with the rewritten query only."
        ),
        user="Tools:\n{tools}\nQuery: {query}\nRewritten query:",
    ),
}


def get_template(template_id: str) -> PromptTemplate:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise KeyError(f"unknown prompt template {template_id!r}") from None


def build_prompt(query: str, subset: Sequence[ToolRecord], template: str = "qta-v1") -> str:
    """User message: one ``name: description`` line per subset tool, then the query."""
    tpl = get_template(template)
    tools = "\n".join(f"{t.name}: {t.description}" for t in subset)
    return tpl.user.format(tools=tools, query=query)


def build_messages(query: str, subset: Sequence[ToolRecord], template: str = "qta-v1") -> list[dict]:
    return [
        {"role": "system", "content": get_template(template).system},
        {"role": "user", "content": build_prompt(query, subset, template)},
    ]


def sample_subset(corpus: ToolCorpus, s: int, rng: Rng) -> tuple[ToolRecord, ...]:
    """``s`` distinct tools, uniformly without replacement, in sampled order."""
    if not 1 <= s <= corpus.size:
        raise ValueError(f"subset size {s} not in [1, {corpus.size}]")
    return tuple(rng.sample(corpus.tools, s))


def clean(text: str) -> str:
    return " ".join(text.split())


# --- rewriters ---------------------------------------------------------------


class IdentityRewriter:
    source = "mock-identity"
    needs_golden = False

    def rewrite(self, query, subset, *, temperature=0.0, seed=0, golden=None, draw=0):
        return query


class GoldenOracleRewriter:
    """Appends the golden tools' names (in id order); test and synthetic use only."""

    source = "mock-golden-oracle"
    needs_golden = True

    def __init__(self, corpus: ToolCorpus):
        self.corpus = corpus

    def rewrite(self, query, subset, *, temperature=0.0, seed=0, golden=None, draw=0):
        if not golden:
            raise RewriteError("golden-oracle rewriter needs the sample's golden tools")
        names = [self.corpus.get(g).name for g in sorted(golden)]
        return " ".join([query] + names)


class NoiseRewriter:
    """Seeded shuffle of the query's whitespace tokens."""

    source = "mock-noise"
    needs_golden = False

    def rewrite(self, query, subset, *, temperature=0.0, seed=0, golden=None, draw=0):
        tokens = query.split()
        Rng(seed).shuffle(tokens)
        return " ".join(tokens)


class DrawRewriter:
    """Routes draw ``i`` to ``rewriters[i % len]``; lets one pair mix two mocks."""

    def __init__(self, *rewriters):
        if not rewriters:
            raise ValueError("need at least one rewriter")
        self.rewriters = rewriters
        self.source = "+".join(r.source for r in rewriters)
        self.needs_golden = any(r.needs_golden for r in rewriters)

    def source_for(self, draw: int) -> str:
        return self.rewriters[draw % len(self.rewriters)].source

    def rewrite(self, query, subset, *, temperature=0.0, seed=0, golden=None, draw=0):
        r = self.rewriters[draw % len(self.rewriters)]
        return r.rewrite(query, subset, temperature=temperature, seed=seed, golden=golden, draw=draw)


class ChatRewriter:
    """Chat-completion endpoint client with bounded retries.

    POST {"model", "messages", "temperature"} -> {"choices": [{"message": {"content"}}]}.
    The API key comes from ``MTR_API_KEY`` only.
    """

    source = "remote"
    needs_golden = False

    def __init__(self, url: str, model: str, *, template: str = "qta-v1", attempts: int = 3,
                 backoff: float = 1.0, timeout: float = 60.0, client: httpx.Client | None = None):
        get_template(template)
        self.url = url
        self.model = model
        self.template = template
        self.attempts = attempts
        self.backoff = backoff
        self.api_key = os.environ.get(API_KEY_ENV)
        self.client = client or httpx.Client(timeout=timeout)

    def rewrite(self, query, subset, *, temperature=0.0, seed=0, golden=None, draw=0):
        payload = {
            "model": self.model,
            "messages": build_messages(query, subset, self.template),
            "temperature": temperature,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last = None
        for attempt in range(self.attempts):
            try:
                resp = self.client.post(self.url, json=payload, headers=headers)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.warning("rewrite request failed (attempt %d/%d): %s", attempt + 1, self.attempts, exc)
                if attempt + 1 < self.attempts:
                    time.sleep(self.backoff * 2**attempt)
        raise RemoteServiceError(f"rewrite endpoint failed after {self.attempts} attempts: {last}")


def _source(rewriter, draw: int) -> str:
    if hasattr(rewriter, "source_for"):
        return rewriter.source_for(draw)
    return rewriter.source


def rewrite_once(rewriter, query: str, subset: Sequence[ToolRecord], cfg: RewriteConfig,
                 golden: Iterable[str] | None = None, draw: int = 0) -> RewrittenQuery:
    text = clean(rewriter.rewrite(query, subset, temperature=cfg.temperature, seed=cfg.seed,
                                  golden=frozenset(golden) if golden is not None else None, draw=draw))
    if not text:
        raise RewriteError("empty rewrite")
    return RewrittenQuery(text, _source(rewriter, draw), cfg.temperature, cfg.seed)


def rewrite_pair(rewriter, query: str, subset: Sequence[ToolRecord], cfg: RewriteConfig,
                 golden: Iterable[str] | None = None) -> tuple[RewrittenQuery, RewrittenQuery]:
    """Two independent generations, seeded ``derive(seed, 0)`` and ``derive(seed, 1)``."""
    return tuple(
        rewrite_once(rewriter, query, subset, replace(cfg, seed=derive(cfg.seed, i)), golden, draw=i)
        for i in (0, 1)
    )
