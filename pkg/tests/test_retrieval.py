from __future__ import annotations

import json
import random

import httpx
import numpy as np
import pytest
from oracles import cosine_py

from pointflow.errors import EmbedderUnavailable, EmptyIndex, InvalidChunkParams
from pointflow.retrieval import (
    Chunk,
    Embedding,
    HashingEmbedder,
    RemoteEmbedder,
    VectorIndex,
    build_index,
    chunk_text,
    cosine,
    load_corpus,
    top_k,
)

WORDS = "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu nu xi omicron pi rho".split()


def _random_docs(n_docs: int, words: int, seed: int = 0):
    rng = random.Random(seed)
    return [(f"d{i}", " ".join(rng.choice(WORDS) for _ in range(words))) for i in range(n_docs)]


def test_chunk_spans():
    doc = "x" * 1000
    assert [c.span for c in chunk_text(doc, 512, 64)] == [(0, 512), (448, 960), (896, 1000)]
    assert chunk_text("", 512, 64) == []
    assert [c.text for c in chunk_text("short", 512, 64)] == ["short"]


def test_chunks_reconstruct_source():
    doc = "".join(random.Random(1).choice("abc ") for _ in range(2345))
    chunks = chunk_text(doc, 300, 40)
    rebuilt = chunks[0].text + "".join(c.text[40:] for c in chunks[1:])
    assert rebuilt == doc
    for a, b in zip(chunks, chunks[1:]):
        assert a.span[1] - b.span[0] == 40


@pytest.mark.parametrize("size,overlap", [(0, 0), (10, 10), (10, -1), (10, 20)])
def test_bad_chunk_params(size, overlap):
    with pytest.raises(InvalidChunkParams):
        chunk_text("abc", size, overlap)


def test_embedder_determinism_and_empty():
    e = HashingEmbedder(64, seed=3)
    a, b = e.embed("Reading is fun"), e.embed("Reading is fun")
    assert np.array_equal(a.vector, b.vector)
    assert abs(cosine(a, a) - 1.0) < 1e-9
    assert e.embed("").empty and e.embed("   ...").empty
    index = VectorIndex(e)
    assert index.add(Chunk("d", 0, "", (0, 0))) is False
    assert len(index) == 0


def test_top_k_matches_brute_force():
    emb = HashingEmbedder(128)
    index = build_index(_random_docs(10, 60), emb, chunk_size=60, overlap=10)
    assert len(index) >= 50
    for q in ["alpha beta", "omicron pi rho", "kappa kappa mu"]:
        got = top_k(index, q, 4)
        qv = emb.embed(q).vector
        oracle = sorted(
            ((cosine_py(qv, e.vector), i) for i, (e, _) in enumerate(index.entries)),
            key=lambda t: -t[0],
        )[:4]
        assert [round(s, 9) for _, s in got] == [round(s, 9) for s, _ in oracle]
        scores = [s for _, s in got]
        assert scores == sorted(scores, reverse=True)


def test_full_ranking_and_self_query():
    emb = HashingEmbedder()
    index = build_index(_random_docs(3, 30, seed=5), emb, chunk_size=50, overlap=5)
    full = top_k(index, "alpha", len(index) + 10)
    assert len(full) == len(index)
    target = index.entries[2][1]
    (best, score), *_ = top_k(index, target.text, 3)
    assert best == target and abs(score - 1.0) < 1e-9


def test_empty_index_and_bad_k():
    index = VectorIndex(HashingEmbedder()).freeze()
    with pytest.raises(EmptyIndex):
        top_k(index, "q", 1)
    with pytest.raises(ValueError):
        top_k(index, "q", 0)


def test_symmetry_and_scale_invariance():
    emb = HashingEmbedder(64)
    a, b = emb.embed("alpha beta gamma"), emb.embed("gamma delta")
    assert abs(cosine(a, b) - cosine(b, a)) < 1e-12
    docs = _random_docs(4, 40, seed=9)
    index = build_index(docs, emb, 40, 5)
    scaled = VectorIndex(emb)
    for i, (e, c) in enumerate(index.entries):
        scaled.add(c, Embedding.of(e.vector * (i + 1) * 3.5))
    q = "beta theta"
    assert [c for c, _ in top_k(index, q, 6)] == [c for c, _ in top_k(scaled.freeze(), q, 6)]


def test_index_save_load_round_trip(tmp_path):
    emb = HashingEmbedder(32, seed=2)
    index = build_index(_random_docs(3, 50), emb, 80, 8)
    path = tmp_path / "index.json"
    index.save(path)
    data = json.loads(path.read_text())
    assert data["dimension"] == 32 and isinstance(data["entries"][0]["vector"], list)
    loaded = VectorIndex.load(path)
    assert top_k(loaded, "alpha", 5) == top_k(index, "alpha", 5)


def test_load_corpus_dir_and_jsonl(tmp_path):
    d = tmp_path / "docs"
    d.mkdir()
    (d / "b.txt").write_text("second")
    (d / "a.txt").write_text("first")
    assert load_corpus(d) == [("a", "first"), ("b", "second")]
    j = tmp_path / "c.jsonl"
    j.write_text('{"doc_id": 7, "text": "seven"}\n\n{"doc_id": "x", "text": "ex"}\n')
    assert load_corpus(j) == [("7", "seven"), ("x", "ex")]


def test_remote_embedder_unavailable():
    def refuse(request):
        raise httpx.ConnectError("refused", request=request)

    client = httpx.Client(transport=httpx.MockTransport(refuse))
    emb = RemoteEmbedder("http://embed.invalid", "m", 8, client=client)
    with pytest.raises(EmbedderUnavailable):
        emb.embed("text")
