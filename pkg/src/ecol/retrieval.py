"""Prior-knowledge retrieval over previously fact-checked health news.

The index keeps the raw title/article fields, a tf-idf inverted index over
title and article, and one sentence embedding per document over
``"title. article"``. A query first collects the 50 best lexical matches and
then reranks them by sentence-embedding cosine. Results always have exactly
10 entries; missing hits are padded with empty ``("", "")`` documents.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

from .encoder import HashingSentenceEncoder, document_text, sentence_encoder_from_identity

__all__ = [
    "FactCheckDoc",
    "RetrievalResult",
    "FactCheckIndex",
    "build_index",
    "load_index",
    "search",
    "prior_knowledge_vector",
    "relatedness",
    "RetrievalIndexError",
]

TOP_K = 10
CANDIDATES = 50
INDEX_VERSION = 1
PLACEHOLDER = ("", "")

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class RetrievalIndexError(RuntimeError):
    """Raised for invalid corpora and unusable index directories."""


@dataclass(frozen=True)
class FactCheckDoc:
    doc_id: str
    title: str
    article: str
    verdict: str
    published_before: dt.date | None = None

    def __post_init__(self):
        if self.verdict not in ("fake", "real"):
            raise ValueError(f"doc {self.doc_id!r}: verdict must be fake or real, got {self.verdict!r}")

    @property
    def text(self) -> str:
        return document_text(self.title, self.article)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "article": self.article,
            "verdict": self.verdict,
            "date": self.published_before.isoformat() if self.published_before else None,
        }


@dataclass(frozen=True)
class RetrievalResult:
    docs: tuple[tuple[str, str], ...]
    scores: tuple[float, ...]
    doc_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.docs) != len(self.scores):
            raise ValueError("docs and scores differ in length")

    @property
    def n_hits(self) -> int:
        return sum(1 for d in self.docs if d != PLACEHOLDER)


def lexical_terms(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in ENGLISH_STOP_WORDS]


class FactCheckIndex:
    """In-memory hybrid index; see :func:`build_index` and :func:`load_index`."""

    def __init__(self, docs: Sequence[FactCheckDoc], embeddings: np.ndarray,
                 postings: dict[str, list[tuple[int, int]]], sentence_encoder):
        self.docs = list(docs)
        self.embeddings = embeddings
        self.postings = postings
        self.sentence_encoder = sentence_encoder
        n = len(self.docs)
        self.idf = {t: math.log((n + 1) / (len(p) + 1)) + 1.0 for t, p in postings.items()}

    def __len__(self) -> int:
        return len(self.docs)

    def lexical_scores(self, query: str) -> dict[int, float]:
        """tf-idf overlap score for every document sharing a query term."""
        scores: dict[int, float] = defaultdict(float)
        for term, qtf in Counter(lexical_terms(query)).items():
            for doc_idx, tf in self.postings.get(term, ()):
                scores[doc_idx] += qtf * (1.0 + math.log(tf)) * self.idf[term]
        return dict(scores)

    def candidates(self, query: str, n: int = CANDIDATES) -> list[int]:
        scores = self.lexical_scores(query)
        ranked = sorted(scores, key=lambda i: (-scores[i], i))
        return ranked[:n]

    def search(self, query: str, k: int = TOP_K) -> RetrievalResult:
        cand = self.candidates(query)
        if cand:
            q = self.sentence_encoder.encode_sentence(query)
            sims = self.embeddings[cand] @ q
            order = sorted(range(len(cand)), key=lambda j: (-float(sims[j]), cand[j]))[:k]
            hits = [(cand[j], float(sims[j])) for j in order]
        else:
            hits = []
        docs = [(self.docs[i].title, self.docs[i].article) for i, _ in hits]
        scores = [s for _, s in hits]
        ids = [self.docs[i].doc_id for i, _ in hits]
        pad = k - len(hits)
        return RetrievalResult(
            docs=tuple(docs) + (PLACEHOLDER,) * pad,
            scores=tuple(scores) + (0.0,) * pad,
            doc_ids=tuple(ids) + ("",) * pad,
        )

    # persistence

    def save(self, path: str | Path) -> Path:
        """Write ``manifest.json``, ``docs.jsonl``, ``embeddings.npy`` and ``postings.json``."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "docs.jsonl", "w", encoding="utf-8") as f:
            for doc in self.docs:
                f.write(json.dumps(doc.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
        np.save(path / "embeddings.npy", self.embeddings.astype(np.float32), allow_pickle=False)
        (path / "postings.json").write_text(json.dumps(self.postings, sort_keys=True), encoding="utf-8")
        files = {}
        for name in ("docs.jsonl", "embeddings.npy", "postings.json"):
            files[name] = hashlib.sha256((path / name).read_bytes()).hexdigest()
        manifest = {
            "version": INDEX_VERSION,
            "size": len(self.docs),
            "candidates": CANDIDATES,
            "top_k": TOP_K,
            "embedding_dim": int(self.embeddings.shape[1]),
            "sentence_encoder": self.sentence_encoder.identity,
            "files": files,
            "layout": {
                "docs.jsonl": "one indexed fake-news document per line, row order = embedding row",
                "embeddings.npy": "float32 matrix (size, embedding_dim), L2-normalised sentence embeddings",
                "postings.json": "term -> [[row, term frequency], ...] over title and article",
            },
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def build_index(corpus: Iterable[FactCheckDoc], sentence_encoder=None,
                path: str | Path | None = None) -> FactCheckIndex:
    """Index the ``fake`` documents of ``corpus``.

    ``real`` documents are accepted but left out of the index. Duplicate
    ``doc_id`` values are rejected.
    """
    sentence_encoder = sentence_encoder or HashingSentenceEncoder()
    seen: set[str] = set()
    docs = []
    for doc in corpus:
        if doc.doc_id in seen:
            raise RetrievalIndexError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        if doc.verdict == "fake":
            docs.append(doc)
    postings: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for i, doc in enumerate(docs):
        for term, tf in sorted(Counter(lexical_terms(doc.title + " " + doc.article)).items()):
            postings[term].append((i, tf))
    if docs:
        embeddings = sentence_encoder.encode([d.text for d in docs])
    else:
        embeddings = np.zeros((0, sentence_encoder.dim), dtype=np.float32)
    index = FactCheckIndex(docs, embeddings, dict(postings), sentence_encoder)
    if path is not None:
        index.save(path)
    return index


def load_index(path: str | Path) -> FactCheckIndex:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise RetrievalIndexError(f"{path}: no index manifest (run build-index first)")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != INDEX_VERSION:
        raise RetrievalIndexError(f"{path}: unsupported index version {manifest.get('version')}")
    docs = []
    with open(path / "docs.jsonl", encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            date = dt.date.fromisoformat(rec["date"]) if rec.get("date") else None
            docs.append(FactCheckDoc(rec["doc_id"], rec["title"], rec["article"], rec["verdict"], date))
    embeddings = np.load(path / "embeddings.npy", allow_pickle=False)
    postings = {t: [tuple(p) for p in ps] for t, ps in json.loads((path / "postings.json").read_text()).items()}
    encoder = sentence_encoder_from_identity(manifest["sentence_encoder"])
    return FactCheckIndex(docs, embeddings, postings, encoder)


def search(index: FactCheckIndex | None, query: str, k: int = TOP_K) -> RetrievalResult:
    if index is None:
        raise RetrievalIndexError("index has not been built")
    return index.search(query, k)


def prior_knowledge_vector(result: RetrievalResult, encoder) -> np.ndarray:
    """Mean content encoding of the retrieved documents (placeholders included)."""
    if len(result.docs) != TOP_K:
        raise ValueError(f"expected {TOP_K} retrieved documents, got {len(result.docs)}")
    vecs = np.stack([encoder.encode_document(t, a) for t, a in result.docs])
    return vecs.mean(axis=0)


def relatedness(fn: np.ndarray, p: np.ndarray) -> float:
    """Cosine between the fake-news vector and the post vector; 0 if either is all-zero."""
    fn = np.asarray(fn, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if fn.shape != p.shape:
        raise ValueError(f"shape mismatch {fn.shape} vs {p.shape}")
    nf, np_ = np.linalg.norm(fn), np.linalg.norm(p)
    if nf == 0.0 or np_ == 0.0:
        return 0.0
    cos = float((fn / nf) @ (p / np_))
    return min(1.0, max(-1.0, cos))
