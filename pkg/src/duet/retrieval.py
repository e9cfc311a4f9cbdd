"""Exact top-k retrieval, hybrid score fusion, and run evaluation.

Search is exact brute force over the whole corpus: scores are cosine
similarities, ties break by ascending doc id, and the corpus scan is
chunked with a fixed chunk size so results are bit-identical for any
worker count.
"""

from __future__ import annotations

import concurrent.futures
import io
import json
import re
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .encoders import FeatureRecord
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateEmbeddingError,
    DimensionError,
    FormatError,
)
from .trainer import ModelParams, encode_docs, encode_queries

DEFAULT_CHUNK_SIZE = 65536
_WS = re.compile(r"\s+")


@dataclass
class CorpusIndex:
    """Immutable embedded corpus: ids, embedding rows, precomputed norms.

    tie_rank[i] is the position of doc_ids[i] in ascending id order and is
    the secondary sort key everywhere, so equal scores always resolve the
    same way.
    """

    doc_ids: list
    embeddings: np.ndarray
    norms: np.ndarray
    tie_rank: np.ndarray

    @classmethod
    def from_embeddings(cls, doc_ids, embeddings) -> "CorpusIndex":
        doc_ids = list(doc_ids)
        if not doc_ids:
            raise DataError("empty corpus")
        if len(set(doc_ids)) != len(doc_ids):
            raise DataError("corpus doc ids are not unique")
        emb = np.ascontiguousarray(embeddings)
        if emb.ndim != 2 or emb.shape[0] != len(doc_ids):
            raise DimensionError(
                f"embeddings shape {emb.shape} does not match {len(doc_ids)} ids"
            )
        norms = np.linalg.norm(emb, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            bad = ", ".join(doc_ids[i] for i in zero[:5])
            raise DegenerateEmbeddingError(f"zero-norm embedding for doc(s): {bad}")
        order = sorted(range(len(doc_ids)), key=lambda i: doc_ids[i])
        tie_rank = np.empty(len(doc_ids), dtype=np.int64)
        for rank, i in enumerate(order):
            tie_rank[i] = rank
        return cls(doc_ids=doc_ids, embeddings=emb, norms=norms, tie_rank=tie_rank)

    @property
    def size(self) -> int:
        return len(self.doc_ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class RunEntry:
    query_id: str
    doc_id: str
    rank: int
    score: float
    tag: str


def build_index(docs, model: ModelParams, mode: Optional[str] = None) -> CorpusIndex:
    """Encode every document with the selected encoder view and index it."""
    docs = list(docs)
    if not docs:
        raise DataError("empty corpus")
    mode = mode or model.kind
    if mode not in ("teacher", "student"):
        raise ConfigError(f"mode must be 'teacher' or 'student', got {mode!r}")
    if mode == "teacher":
        missing = [d.id for d in docs if d.text_features is None]
        if missing:
            shown = ", ".join(missing[:10])
            more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
            raise DataError(f"teacher mode requires text view; missing on: {shown}{more}")
    view = ModelParams(kind=mode, query_encoder=model.query_encoder,
                       doc_encoder=model.doc_encoder, seed=model.seed)
    embeddings = encode_docs(view, docs)
    return CorpusIndex.from_embeddings([d.id for d in docs], embeddings)


def _chunk_scores(index: CorpusIndex, q: np.ndarray, q_norm: float, start: int, stop: int):
    emb = index.embeddings[start:stop]
    return (emb @ q) / (index.norms[start:stop] * q_norm)


def full_scores(index: CorpusIndex, query_embedding, workers: int = 1,
                chunk_size: int = DEFAULT_CHUNK_SIZE) -> np.ndarray:
    """Cosine score of the query against every document, in corpus order.

    The chunk size, not the worker count, determines how sums are formed,
    so any worker count produces the same bits.
    """
    q = np.asarray(query_embedding)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise DimensionError(f"query shape {q.shape} does not match index dim {index.dim}")
    if index.embeddings.dtype != np.float64:
        q = q.astype(index.embeddings.dtype)
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0.0:
        raise DegenerateEmbeddingError("zero-norm query embedding")
    bounds = [(s, min(s + chunk_size, index.size)) for s in range(0, index.size, chunk_size)]
    out = np.empty(index.size, dtype=np.result_type(index.embeddings.dtype, q.dtype))
    if workers <= 1 or len(bounds) == 1:
        for s, e in bounds:
            out[s:e] = _chunk_scores(index, q, q_norm, s, e)
        return out
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_chunk_scores, index, q, q_norm, s, e): (s, e)
                   for s, e in bounds}
        for fut in concurrent.futures.as_completed(futures):
            s, e = futures[fut]
            out[s:e] = fut.result()
    return out


def _top_k_of_scores(index: CorpusIndex, scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores under (score desc, doc_id asc)."""
    order = np.lexsort((index.tie_rank, -scores))
    return order[:k]


def search_topk(index: CorpusIndex, query_embedding, k: int, query_id: str = "q",
                tag: str = "run", workers: int = 1,
                chunk_size: int = DEFAULT_CHUNK_SIZE) -> list:
    """Exact cosine top-k over the whole corpus.

    Splits the corpus into fixed chunks, takes each chunk's local top-k,
    then merges candidates in chunk order; since every global winner wins
    its chunk, the result equals a full sort.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    q = np.asarray(query_embedding)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise DimensionError(f"query shape {q.shape} does not match index dim {index.dim}")
    if index.embeddings.dtype != np.float64:
        q = q.astype(index.embeddings.dtype)
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0.0:
        raise DegenerateEmbeddingError("zero-norm query embedding")

    bounds = [(s, min(s + chunk_size, index.size)) for s in range(0, index.size, chunk_size)]

    def chunk_topk(bound):
        s, e = bound
        scores = _chunk_scores(index, q, q_norm, s, e)
        local = np.lexsort((index.tie_rank[s:e], -scores))[:k]
        return local + s, scores[local]

    if workers <= 1 or len(bounds) == 1:
        parts = [chunk_topk(b) for b in bounds]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk_topk, bounds))

    cand_idx = np.concatenate([p[0] for p in parts])
    cand_scores = np.concatenate([p[1] for p in parts])
    top = np.lexsort((index.tie_rank[cand_idx], -cand_scores))[:k]
    return [
        RunEntry(query_id=query_id, doc_id=index.doc_ids[cand_idx[i]], rank=r + 1,
                 score=float(cand_scores[i]), tag=tag)
        for r, i in enumerate(top)
    ]


def entries_from_scores(index: CorpusIndex, scores, k: int, query_id: str,
                        tag: str) -> list:
    scores = np.asarray(scores)
    if scores.shape != (index.size,):
        raise ContractError(f"scores shape {scores.shape} does not cover corpus of {index.size}")
    top = _top_k_of_scores(index, scores, k)
    return [
        RunEntry(query_id=query_id, doc_id=index.doc_ids[i], rank=r + 1,
                 score=float(scores[i]), tag=tag)
        for r, i in enumerate(top)
    ]


def hybrid_interpolate(index: CorpusIndex, scores_a, scores_b, alpha: float, k: int,
                       query_id: str = "q", tag: str = "hybrid") -> list:
    """Top-k of alpha*scores_a + (1-alpha)*scores_b over the full corpus.

    The endpoints are special-cased to return the exact endpoint scores so
    alpha in {0, 1} reproduces the single-model ranking bit for bit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be within [0, 1], got {alpha}")
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != (index.size,) or b.shape != (index.size,):
        raise ContractError(
            f"score arrays {a.shape}/{b.shape} must cover the corpus of {index.size}"
        )
    if alpha == 1.0:
        fused = a
    elif alpha == 0.0:
        fused = b
    else:
        fused = alpha * a + (1.0 - alpha) * b
    return entries_from_scores(index, fused, k, query_id, tag)


# --- judgments and metrics ---------------------------------------------------


def normalize_text(s: str) -> str:
    """Lowercase and collapse whitespace runs to single spaces."""
    return _WS.sub(" ", s).lower()


@dataclass
class RelevanceJudgments:
    """Per-query relevance data: gold doc ids, or answer strings."""

    mode: str  # "gold_ids" | "answer_strings"
    by_query: dict

    def __post_init__(self):
        if self.mode not in ("gold_ids", "answer_strings"):
            raise ConfigError(f"unknown judgment mode {self.mode!r}")
        for qid, val in self.by_query.items():
            if not val:
                raise DataError(f"query {qid} has no gold ids / answers")

    @classmethod
    def from_queries(cls, queries, mode: str = "gold_ids") -> "RelevanceJudgments":
        by_query = {}
        for q in queries:
            if mode == "gold_ids":
                if not q.positives:
                    raise DataError(f"query {q.id} has no positives for gold_ids judging")
                by_query[q.id] = frozenset(q.positives)
            else:
                if not q.answers:
                    raise DataError(f"query {q.id} has no answers for answer_strings judging")
                by_query[q.id] = tuple(q.answers)
        return cls(mode=mode, by_query=by_query)


def judge_relevant(doc_id: str, doc_text: Optional[str], query_id: str,
                   judgments: RelevanceJudgments) -> bool:
    """Gold mode: membership. Answer mode: normalized substring containment."""
    if query_id not in judgments.by_query:
        raise DataError(f"query {query_id} missing from judgments")
    val = judgments.by_query[query_id]
    if judgments.mode == "gold_ids":
        return doc_id in val
    if doc_text is None:
        raise DataError(f"doc {doc_id} has no text for answer_strings judging")
    hay = normalize_text(doc_text)
    return any(normalize_text(ans) in hay for ans in val)


@dataclass
class MetricsReport:
    recall_at_k: float
    mrr_at_k: float
    k: int
    num_queries: int

    def to_dict(self) -> dict:
        return {
            f"recall_at_{self.k}": self.recall_at_k,
            f"mrr_at_{self.k}": self.mrr_at_k,
            "k": self.k,
            "num_queries": self.num_queries,
        }


def evaluate_run(run_entries, judgments: RelevanceJudgments, k: int = 10,
                 doc_texts: Optional[dict] = None) -> MetricsReport:
    """Recall@k and MRR@k over the queries present in the run."""
    by_query = {}
    for e in run_entries:
        by_query.setdefault(e.query_id, []).append(e)
    if not by_query:
        raise DataError("run is empty")
    hits = 0
    rr_sum = 0.0
    for qid, entries in by_query.items():
        if qid not in judgments.by_query:
            raise DataError(f"query {qid} missing from judgments")
        first = None
        for e in sorted(entries, key=lambda e: e.rank):
            if e.rank > k:
                break
            text = doc_texts.get(e.doc_id) if doc_texts else None
            if judge_relevant(e.doc_id, text, qid, judgments):
                first = e.rank
                break
        if first is not None:
            hits += 1
            rr_sum += 1.0 / first
    n = len(by_query)
    return MetricsReport(recall_at_k=hits / n, mrr_at_k=rr_sum / n, k=k, num_queries=n)


# --- file formats --------------------------------------------------------------


def write_run_file(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.query_id} {e.doc_id} {e.rank} {e.score!r} {e.tag}\n")


def read_run_file(path) -> list:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5:
                raise DataError(f"{path}:{ln}: expected 5 fields, got {len(parts)}")
            qid, did, rank, score, tag = parts
            try:
                entries.append(RunEntry(query_id=qid, doc_id=did, rank=int(rank),
                                        score=float(score), tag=tag))
            except ValueError as exc:
                raise DataError(f"{path}:{ln}: {exc}") from exc
    return entries


@dataclass
class QueryRecord:
    id: str
    features: np.ndarray
    positives: list
    answers: list

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise DataError(f"{where}: missing required field {key!r}")
    return doc[key]


def read_corpus_jsonl(path) -> list:
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{ln}"
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON: {exc}") from exc
            did = _require(doc, "id", where)
            if did in seen:
                raise DataError(f"{where}: duplicate doc id {did!r}")
            seen.add(did)
            docs.append(FeatureRecord(
                id=did,
                visual_features=_require(doc, "visual_features", where),
                text_features=doc.get("text_features"),
                text=doc.get("text"),
            ))
    if not docs:
        raise DataError(f"{path}: empty corpus")
    return docs


def write_corpus_jsonl(path, docs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            doc = {"id": d.id, "visual_features": d.visual_features.tolist()}
            if d.text_features is not None:
                doc["text_features"] = d.text_features.tolist()
            if d.text is not None:
                doc["text"] = d.text
            fh.write(json.dumps(doc) + "\n")


def read_queries_jsonl(path) -> list:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{ln}"
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON: {exc}") from exc
            queries.append(QueryRecord(
                id=_require(doc, "id", where),
                features=_require(doc, "features", where),
                positives=list(doc.get("positives") or []),
                answers=list(doc.get("answers") or []),
            ))
    if not queries:
        raise DataError(f"{path}: no queries")
    return queries


def write_queries_jsonl(path, queries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            doc = {"id": q.id, "features": q.features.tolist()}
            if q.positives:
                doc["positives"] = list(q.positives)
            if q.answers:
                doc["answers"] = list(q.answers)
            fh.write(json.dumps(doc) + "\n")


def save_index(index: CorpusIndex, path) -> None:
    """Persist an index as an npz archive with fixed zip metadata.

    Entry timestamps are pinned so identical indexes produce identical
    bytes.
    """
    arrays = {
        "doc_ids": np.array(index.doc_ids),
        "embeddings": index.embeddings,
        "norms": index.norms,
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.save(buf, arr)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_index(path) -> CorpusIndex:
    try:
        with np.load(path, allow_pickle=False) as npz:
            doc_ids = [str(x) for x in npz["doc_ids"]]
            embeddings = npz["embeddings"]
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise FormatError(f"cannot load index {path}: {exc}") from exc
    return CorpusIndex.from_embeddings(doc_ids, embeddings)
