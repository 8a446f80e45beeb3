"""Reference-document retrieval: chunking, embedding and cosine top-k.

The index is an exhaustive scan over an in-memory matrix; corpora here are
desk-sized, and the scan keeps ``top_k`` exactly equal to a brute-force ranking.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .errors import EmbedderUnavailable, EmptyIndex, InvalidChunkParams

DEFAULT_CHUNK_SIZE = 512
DEFAULT_OVERLAP = 64
DEFAULT_K = 4
DEFAULT_DIMENSION = 256

_TERM = re.compile(r"\w+")


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    seq: int
    text: str
    span: tuple[int, int]


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray
    norm: float

    @property
    def empty(self) -> bool:
        return self.norm == 0.0

    @classmethod
    def of(cls, vector) -> Embedding:
        v = np.asarray(vector, dtype=np.float64)
        return cls(v, float(np.linalg.norm(v)))


def chunk_text(doc: str, chunk_size: int = DEFAULT_CHUNK_SIZE, overlap: int = DEFAULT_OVERLAP,
               doc_id: str = "") -> list[Chunk]:
    if chunk_size < 1 or overlap < 0 or overlap >= chunk_size:
        raise InvalidChunkParams(
            f"need 0 <= overlap < chunk_size, got chunk_size={chunk_size}, overlap={overlap}"
        )
    stride = chunk_size - overlap
    chunks = []
    start, n = 0, len(doc)
    while start < n:
        end = min(start + chunk_size, n)
        chunks.append(Chunk(doc_id, len(chunks), doc[start:end], (start, end)))
        if end == n:
            break
        start += stride
    return chunks


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> Embedding: ...

    def describe(self) -> dict: ...


class HashingEmbedder:
    """Signed feature hashing of lower-cased word terms.

    Deterministic for a given ``(dimension, seed)``; no model download needed.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0):
        if dimension < 1:
            raise ValueError("embedding dimension must be positive")
        self.dimension = dimension
        self.seed = seed

    def _bucket(self, term: str) -> tuple[int, float]:
        digest = hashlib.blake2b(f"{self.seed}\x00{term}".encode(), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        return h % self.dimension, 1.0 if (h >> 63) & 1 else -1.0

    def embed(self, text: str) -> Embedding:
        v = np.zeros(self.dimension)
        for term in _TERM.findall(text.lower()):
            idx, sign = self._bucket(term)
            v[idx] += sign
        return Embedding.of(v)

    def describe(self) -> dict:
        return {"kind": "hashing", "dimension": self.dimension, "seed": self.seed}


class RemoteEmbedder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, url: str, model: str, dimension: int, api_key: str | None = None,
                 timeout: float = 30.0, client=None):
        self.url = url.rstrip("/")
        self.client = client
        self.model = model
        self.dimension = dimension
        self.api_key = api_key
        self.timeout = timeout

    def embed(self, text: str) -> Embedding:
        import httpx

        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            post = self.client.post if self.client is not None else httpx.post
            resp = post(f"{self.url}/embeddings", json={"model": self.model, "input": text},
                        headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            vector = resp.json()["data"][0]["embedding"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise EmbedderUnavailable(f"embedding endpoint failed: {exc}") from exc
        if len(vector) != self.dimension:
            raise EmbedderUnavailable(
                f"endpoint returned dimension {len(vector)}, expected {self.dimension}"
            )
        return Embedding.of(vector)

    def describe(self) -> dict:
        return {"kind": "remote", "url": self.url, "model": self.model, "dimension": self.dimension}


def cosine(a: Embedding, b: Embedding) -> float:
    if a.empty or b.empty:
        return 0.0
    return float(np.dot(a.vector, b.vector) / (a.norm * b.norm))


class VectorIndex:
    """Append-only list of ``(Embedding, Chunk)``; call :meth:`freeze` before searching."""

    def __init__(self, embedder: Embedder):
        self.embedder = embedder
        self.dimension = embedder.dimension
        self.entries: list[tuple[Embedding, Chunk]] = []
        self._matrix: np.ndarray | None = None
        self._norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, chunk: Chunk, embedding: Embedding | None = None) -> bool:
        """Add a chunk; returns False when its embedding carries no information."""
        if self._matrix is not None:
            raise RuntimeError("index is frozen")
        emb = embedding if embedding is not None else self.embedder.embed(chunk.text)
        if emb.vector.shape != (self.dimension,):
            raise ValueError(f"embedding dimension {emb.vector.shape} != index dimension {self.dimension}")
        if emb.empty:
            return False
        self.entries.append((emb, chunk))
        return True

    def freeze(self) -> VectorIndex:
        if self._matrix is None:
            if self.entries:
                self._matrix = np.stack([e.vector for e, _ in self.entries])
            else:
                self._matrix = np.zeros((0, self.dimension))
            self._norms = np.array([e.norm for e, _ in self.entries])
        return self

    def scores(self, query: Embedding) -> np.ndarray:
        self.freeze()
        if query.empty:
            return np.zeros(len(self.entries))
        return (self._matrix @ query.vector) / (self._norms * query.norm)

    def save(self, path: str | Path) -> None:
        payload = {
            "dimension": self.dimension,
            "embedder": self.embedder.describe(),
            "similarity": "cosine",
            "entries": [
                {
                    "doc_id": c.doc_id,
                    "seq": c.seq,
                    "text": c.text,
                    "span": list(c.span),
                    "vector": e.vector.tolist(),
                }
                for e, c in self.entries
            ],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder | None = None) -> VectorIndex:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if embedder is None:
            desc = payload.get("embedder", {})
            if desc.get("kind", "hashing") != "hashing":
                raise ValueError("index was built with a remote embedder; pass it explicitly")
            embedder = HashingEmbedder(payload["dimension"], desc.get("seed", 0))
        index = cls(embedder)
        for e in payload["entries"]:
            chunk = Chunk(e["doc_id"], e["seq"], e["text"], tuple(e["span"]))
            index.add(chunk, Embedding.of(e["vector"]))
        return index.freeze()


def top_k(index: VectorIndex, query: str, k: int = DEFAULT_K) -> list[tuple[Chunk, float]]:
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(index) == 0:
        raise EmptyIndex("cannot search an empty index")
    scores = index.scores(index.embedder.embed(query))
    order = np.argsort(-scores, kind="stable")[:k]
    return [(index.entries[i][1], float(scores[i])) for i in order]


def load_corpus(path: str | Path) -> list[tuple[str, str]]:
    """Read ``(doc_id, text)`` pairs from a directory of ``.txt`` files or a JSONL file."""
    p = Path(path)
    if p.is_dir():
        return [(f.stem, f.read_text(encoding="utf-8")) for f in sorted(p.glob("*.txt"))]
    docs = []
    with p.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                docs.append((str(row["doc_id"]), row["text"]))
    return docs


def build_index(docs: Iterable[tuple[str, str]], embedder: Embedder | None = None,
                chunk_size: int = DEFAULT_CHUNK_SIZE, overlap: int = DEFAULT_OVERLAP) -> VectorIndex:
    index = VectorIndex(embedder or HashingEmbedder())
    for doc_id, text in docs:
        for chunk in chunk_text(text, chunk_size, overlap, doc_id=doc_id):
            index.add(chunk)
    return index.freeze()
