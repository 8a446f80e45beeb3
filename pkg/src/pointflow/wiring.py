"""Build runtime objects from a :class:`~pointflow.config.Config`."""

from __future__ import annotations

import os
from pathlib import Path

from .backends import ChatCompletionsBackend, ScriptBook, SimBackend, SimCostModel
from .config import Config
from .errors import ConfigError
from .prompts import load_expansion_preset, load_template
from .retrieval import HashingEmbedder, VectorIndex, build_index, load_corpus
from .runtime import Capacities


def build_backend(cfg: Config, extra_scripts: ScriptBook | None = None):
    b = cfg.backend
    if b.kind == "sim":
        c = cfg.cost
        try:
            cost = SimCostModel(c.prefill_base, c.prefill_per_token, c.decode_per_token,
                                c.search_cost, c.default_output_tokens, c.default_points)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        scripts = ScriptBook()
        if b.scripts:
            try:
                scripts = ScriptBook.load(b.scripts)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot load scripts {b.scripts}: {exc}") from exc
        if extra_scripts is not None:
            scripts = scripts.merge(extra_scripts)
        return SimBackend(cost, scripts, strict=b.strict)
    if b.kind == "remote":
        if not b.url or not b.model:
            raise ConfigError("remote backend needs backend.url and backend.model")
        return ChatCompletionsBackend(b.url, b.model, api_key=os.environ.get(b.api_key_env),
                                      timeout=b.timeout, retries=b.retries)
    raise ConfigError(f"unknown backend kind {b.kind!r} (expected 'sim' or 'remote')")


def build_capacities(cfg: Config) -> Capacities:
    c = cfg.capacities
    return Capacities(c.search, c.compute, c.bandwidth)


def build_vector_index(cfg: Config) -> VectorIndex | None:
    r = cfg.retrieval
    embedder = HashingEmbedder(r.dimension, r.embed_seed)
    if r.index and Path(r.index).is_file():
        return VectorIndex.load(r.index, embedder)
    if not r.corpus:
        return None
    try:
        docs = load_corpus(r.corpus)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read corpus {r.corpus}: {exc}") from exc
    index = build_index(docs, embedder, r.chunk_size, r.overlap)
    if r.index:
        index.save(r.index)
    return index


def scheduler_options(cfg: Config) -> dict:
    prompt_dir = cfg.prompts.dir or None
    if prompt_dir and not Path(prompt_dir).is_dir():
        raise ConfigError(f"prompts.dir {prompt_dir} is not a directory")
    return {
        "index": build_vector_index(cfg),
        "template": load_template(prompt_dir),
        "preset": load_expansion_preset(prompt_dir),
        "seed": cfg.backend.seed,
        "k": cfg.retrieval.k,
        "max_prompt_chars": cfg.prompts.max_chars or None,
        "keypoint_tokens": cfg.generation.keypoint_tokens,
        "point_tokens": cfg.generation.point_tokens,
        "answer_tokens": cfg.generation.answer_tokens,
    }
