"""End-to-end experiment orchestration shared by the CLI and the test rig.

A full run: generate (or load) a corpus and query splits, train teacher and
student independently, distill, index the corpus under both encoder views,
search, and score Recall@k / MRR@k for the teacher, the pre- and
post-distillation student, and the score-interpolated hybrid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .encoders import FeatureRecord
from .errors import DataError
from .losses import cosine_sim
from .retrieval import (
    CorpusIndex,
    MetricsReport,
    RelevanceJudgments,
    build_index,
    entries_from_scores,
    evaluate_run,
    full_scores,
    hybrid_interpolate,
    search_topk,
)
from .trainer import (
    ModelParams,
    TrainConfig,
    TrainingRun,
    TrainPair,
    distill,
    encode_docs,
    encode_queries,
    train_stage1,
)

DEFAULT_HYBRID_ALPHA = 0.5

ABLATION_VARIANTS = {
    # removals are incremental: reweighting goes first, then one of the
    # remaining two terms
    "full": dict(use_reweight=True, use_align=True, use_soft=True),
    "no_reweight": dict(use_reweight=False, use_align=True, use_soft=True),
    "no_align": dict(use_reweight=False, use_align=False, use_soft=True),
    "no_soft": dict(use_reweight=False, use_align=True, use_soft=False),
    "no_distill": None,
}


def train_pairs(corpus, queries) -> list:
    """Join queries to their positive documents."""
    by_id = {d.id: d for d in corpus}
    pairs = []
    for q in queries:
        if not q.positives:
            raise DataError(f"query {q.id} has no positive document")
        did = q.positives[0]
        if did not in by_id:
            raise DataError(f"query {q.id} references unknown doc {did}")
        pairs.append(TrainPair(query_id=q.id, query_features=q.features, doc=by_id[did]))
    return pairs


def search_run(index: CorpusIndex, model: ModelParams, queries, k: int = 10,
               tag: str = "run", workers: int = 1) -> list:
    """Encode each query and collect its top-k entries, in query order."""
    entries = []
    for q in queries:
        emb = encode_queries(model, q.features)[0]
        entries.extend(search_topk(index, emb, k, query_id=q.id, tag=tag,
                                   workers=workers))
    return entries


def hybrid_search_run(index_a: CorpusIndex, model_a: ModelParams,
                      index_b: CorpusIndex, model_b: ModelParams, queries,
                      alpha: float = DEFAULT_HYBRID_ALPHA, k: int = 10,
                      tag: str = "hybrid", workers: int = 1) -> list:
    """Interpolate the two retrievers' full score vectors per query."""
    entries = []
    for q in queries:
        ea = encode_queries(model_a, q.features)[0]
        eb = encode_queries(model_b, q.features)[0]
        sa = full_scores(index_a, ea, workers=workers)
        sb = full_scores(index_b, eb, workers=workers)
        entries.extend(hybrid_interpolate(index_a, sa, sb, alpha, k,
                                          query_id=q.id, tag=tag))
    return entries


def evaluate_entries(entries, queries, k: int = 10, mode: str = "gold_ids",
                     corpus=None) -> MetricsReport:
    judgments = RelevanceJudgments.from_queries(queries, mode)
    doc_texts = None
    if mode == "answer_strings":
        if corpus is None:
            raise DataError("answer_strings judging needs the corpus for doc text")
        doc_texts = {d.id: d.text for d in corpus}
    return evaluate_run(entries, judgments, k=k, doc_texts=doc_texts)


def mean_doc_alignment_cosine(student: ModelParams, teacher: ModelParams, docs,
                              sample_size: int = 200, seed: int = 0) -> float:
    """Mean cosine between student and teacher document embeddings on a sample."""
    docs = list(docs)
    rng = np.random.default_rng(np.random.SeedSequence(seed % (1 << 63)))
    if len(docs) > sample_size:
        picks = rng.choice(len(docs), size=sample_size, replace=False)
        docs = [docs[i] for i in picks]
    S = encode_docs(student, docs)
    T = encode_docs(teacher, docs)
    return float(np.mean([cosine_sim(S[i], T[i]) for i in range(len(docs))]))


@dataclass
class PipelineResult:
    seed: int
    teacher_run: TrainingRun
    student_run: TrainingRun
    distilled_run: TrainingRun
    metrics: dict  # model tag -> MetricsReport
    alignment_pre: float
    alignment_post: float


def run_pipeline(corpus, queries_train, queries_test, config: TrainConfig,
                 hidden_dims=(64,), embedding_dim: int = 32, k: int = 10,
                 alpha: float = DEFAULT_HYBRID_ALPHA, workers: int = 1,
                 alignment_sample: int = 200) -> PipelineResult:
    """Both training stages plus the four-way evaluation."""
    pairs = train_pairs(corpus, queries_train)
    teacher_run = train_stage1("teacher", pairs, config, hidden_dims=hidden_dims,
                               embedding_dim=embedding_dim)
    student_run = train_stage1("student", pairs, config, hidden_dims=hidden_dims,
                               embedding_dim=embedding_dim)
    distilled_run = distill(teacher_run.params, student_run.params, pairs, config)

    teacher_index = build_index(corpus, teacher_run.params)
    student_index = build_index(corpus, student_run.params)
    distilled_index = build_index(corpus, distilled_run.params)

    metrics = {}
    for tag, model, index in (
        ("teacher", teacher_run.params, teacher_index),
        ("student_pre", student_run.params, student_index),
        ("student_distilled", distilled_run.params, distilled_index),
    ):
        entries = search_run(index, model, queries_test, k=k, tag=tag, workers=workers)
        metrics[tag] = evaluate_entries(entries, queries_test, k=k)
    hybrid_entries = hybrid_search_run(teacher_index, teacher_run.params,
                                       student_index, student_run.params,
                                       queries_test, alpha=alpha, k=k, workers=workers)
    metrics["hybrid"] = evaluate_entries(hybrid_entries, queries_test, k=k)

    alignment_pre = mean_doc_alignment_cosine(student_run.params, teacher_run.params,
                                              corpus, alignment_sample, config.seed)
    alignment_post = mean_doc_alignment_cosine(distilled_run.params, teacher_run.params,
                                               corpus, alignment_sample, config.seed)
    return PipelineResult(seed=config.seed, teacher_run=teacher_run,
                          student_run=student_run, distilled_run=distilled_run,
                          metrics=metrics, alignment_pre=alignment_pre,
                          alignment_post=alignment_post)


def run_ablation(teacher: ModelParams, student_pre: ModelParams, corpus,
                 queries_train, queries_test, config: TrainConfig, seeds,
                 k: int = 10, workers: int = 1) -> list:
    """Distillation variants over shared seeds from fixed stage-1 checkpoints.

    Returns one row per (variant, seed) with Recall@k and MRR@k; no_distill
    rows repeat the pre-distillation student's metrics.
    """
    pairs = train_pairs(corpus, queries_train)
    pre_index = build_index(corpus, student_pre)
    pre_entries = search_run(pre_index, student_pre, queries_test, k=k,
                             tag="no_distill", workers=workers)
    pre_metrics = evaluate_entries(pre_entries, queries_test, k=k)
    rows = []
    for variant, flags in ABLATION_VARIANTS.items():
        for seed in seeds:
            if flags is None:
                report = pre_metrics
            else:
                cfg = config.with_overrides(seed=seed)
                run = distill(teacher, student_pre, pairs, cfg, **flags)
                index = build_index(corpus, run.params)
                entries = search_run(index, run.params, queries_test, k=k,
                                     tag=variant, workers=workers)
                report = evaluate_entries(entries, queries_test, k=k)
            rows.append({
                "variant": variant,
                "seed": int(seed),
                f"recall_at_{k}": report.recall_at_k,
                f"mrr_at_{k}": report.mrr_at_k,
            })
    return rows
