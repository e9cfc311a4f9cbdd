import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duet.encoders import FeatureRecord
from duet.errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateEmbeddingError,
    DimensionError,
)
from duet.retrieval import (
    CorpusIndex,
    MetricsReport,
    QueryRecord,
    RelevanceJudgments,
    RunEntry,
    build_index,
    entries_from_scores,
    evaluate_run,
    full_scores,
    hybrid_interpolate,
    judge_relevant,
    load_index,
    normalize_text,
    read_corpus_jsonl,
    read_queries_jsonl,
    read_run_file,
    save_index,
    search_topk,
    write_corpus_jsonl,
    write_queries_jsonl,
    write_run_file,
)
from duet.trainer import init_model


def random_index(rng, n, dim):
    ids = [f"doc-{i:05d}" for i in range(n)]
    emb = rng.normal(size=(n, dim))
    return CorpusIndex.from_embeddings(ids, emb)


def sort_oracle(index, q, k):
    """Naive full sort: cosine desc, doc id asc."""
    q = np.asarray(q, dtype=np.float64)
    scores = index.embeddings @ q / (index.norms * np.linalg.norm(q))
    order = sorted(range(index.size), key=lambda i:(-scores[i], index.doc_ids[i]))
    return [(index.doc_ids[i], r + 1) for r, i in enumerate(order[:k])]


# --- index -----------------------------------------------------------------

def test_index_rejects_empty_corpus():
    with pytest.raises(DataError, match="empty corpus"):
        CorpusIndex.from_embeddings([], np.zeros((0, 3)))


def test_index_rejects_duplicate_ids():
    with pytest.raises(DataError, match="unique"):
        CorpusIndex.from_embeddings(["a", "a"], np.ones((2, 2)))


def test_index_rejects_zero_norm_rows():
    with pytest.raises(DegenerateEmbeddingError, match="doc-b"):
        CorpusIndex.from_embeddings(["doc-a", "doc-b"], np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_index_norms_match_recomputation():
    rng = np.random.default_rng(0)
    index = random_index(rng, 100, 8)
    expected = np.sqrt((index.embeddings ** 2).sum(axis=1))
    assert np.max(np.abs(index.norms - expected)) < 1e-9


def test_build_index_student_ignores_text_views():
    rng = np.random.default_rng(1)
    model = init_model("student", 4, 6, 3, hidden_dims=(5,), seed=0)
    docs = [FeatureRecord(id=f"d{i}", visual_features=rng.normal(size=6),
                          text_features=rng.normal(size=6)) for i in range(10)]
    stripped = [FeatureRecord(id=d.id, visual_features=d.visual_features) for d in docs]
    a = build_index(docs, model)
    b = build_index(stripped, model)
    assert np.array_equal(a.embeddings, b.embeddings)


def test_build_index_teacher_requires_text_listing_ids():
    model = init_model("teacher", 4, 12, 3, hidden_dims=(5,), seed=0)
    rng = np.random.default_rng(2)
    docs = [FeatureRecord(id=f"d{i}", visual_features=rng.normal(size=6),
                          text_features=rng.normal(size=6) if i % 2 else None)
            for i in range(4)]
    with pytest.raises(DataError) as exc:
        build_index(docs, model)
    assert "d0" in str(exc.value) and "d2" in str(exc.value)


def test_build_index_empty():
    model = init_model("student", 4, 6, 3, hidden_dims=(5,), seed=0)
    with pytest.raises(DataError, match="empty corpus"):
        build_index([], model)


# --- search -----------------------------------------------------------------

def test_search_single_doc_corpus():
    index = CorpusIndex.from_embeddings(["only"], np.array([[1.0, 2.0]]))
    out = search_topk(index, np.array([2.0, 1.0]), k=10)
    assert len(out) == 1
    assert out[0].doc_id == "only" and out[0].rank == 1


def test_search_exact_match_ranks_first():
    rng = np.random.default_rng(3)
    index = random_index(rng, 50, 6)
    q = index.embeddings[17].copy()
    out = search_topk(index, q, k=5)
    assert out[0].doc_id == index.doc_ids[17]
    assert out[0].score == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("workers", [1, 4, 8])
def test_search_matches_full_sort_oracle(workers):
    rng = np.random.default_rng(4)
    index = random_index(rng, 1000, 16)
    q = rng.normal(size=16)
    got = [(e.doc_id, e.rank) for e in
           search_topk(index, q, k=10, workers=workers, chunk_size=128)]
    assert got == sort_oracle(index, q, 10)


def test_search_workers_bit_identical():
    rng = np.random.default_rng(5)
    index = random_index(rng, 3000, 24)
    q = rng.normal(size=24)
    runs = [search_topk(index, q, k=10, workers=w, chunk_size=256) for w in (1, 4, 8)]
    base = [(e.doc_id, e.rank, e.score) for e in runs[0]]
    for other in runs[1:]:
        assert [(e.doc_id, e.rank, e.score) for e in other] == base


def test_search_tie_break_by_doc_id():
    emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.5, 0.5]])
    index = CorpusIndex.from_embeddings(["zzz", "aaa", "mmm"], emb)
    out = search_topk(index, np.array([1.0, 0.0]), k=3)
    assert [e.doc_id for e in out] == ["aaa", "zzz", "mmm"]


def test_search_contract_errors():
    index = CorpusIndex.from_embeddings(["a"], np.array([[1.0, 0.0]]))
    with pytest.raises(ContractError):
        search_topk(index, np.array([1.0, 0.0]), k=0)
    with pytest.raises(DimensionError):
        search_topk(index, np.array([1.0, 0.0, 0.0]), k=1)
    with pytest.raises(DegenerateEmbeddingError):
        search_topk(index, np.array([0.0, 0.0]), k=1)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_search_property_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 400))
    dim = int(rng.integers(2, 24))
    k = int(rng.integers(1, 15))
    index = random_index(rng, n, dim)
    q = rng.normal(size=dim)
    got = [(e.doc_id, e.rank) for e in search_topk(index, q, k=k, chunk_size=64)]
    assert got == sort_oracle(index, q, k)


def test_full_scores_matches_direct_computation():
    rng = np.random.default_rng(6)
    index = random_index(rng, 500, 8)
    q = rng.normal(size=8)
    scores = full_scores(index, q, workers=4, chunk_size=64)
    direct = index.embeddings @ q / (index.norms * np.linalg.norm(q))
    assert np.array_equal(scores, full_scores(index, q, workers=1, chunk_size=64))
    assert np.max(np.abs(scores - direct)) < 1e-12


# --- hybrid -----------------------------------------------------------------

def test_hybrid_endpoints_reproduce_inputs():
    rng = np.random.default_rng(7)
    index = random_index(rng, 200, 6)
    qa = rng.normal(size=6)
    qb = rng.normal(size=6)
    sa = full_scores(index, qa)
    sb = full_scores(index, qb)
    run_a = entries_from_scores(index, sa, 10, "q1", "t")
    run_b = entries_from_scores(index, sb, 10, "q1", "t")
    got_a = hybrid_interpolate(index, sa, sb, alpha=1.0, k=10, query_id="q1", tag="t")
    got_b = hybrid_interpolate(index, sa, sb, alpha=0.0, k=10, query_id="q1", tag="t")
    assert [(e.doc_id, e.rank, e.score) for e in got_a] == \
        [(e.doc_id, e.rank, e.score) for e in run_a]
    assert [(e.doc_id, e.rank, e.score) for e in got_b] == \
        [(e.doc_id, e.rank, e.score) for e in run_b]


def test_hybrid_hand_example():
    index = CorpusIndex.from_embeddings(["d1", "d2"], np.eye(2))
    out = hybrid_interpolate(index, np.array([0.9, 0.1]), np.array([0.2, 0.8]),
                             alpha=0.5, k=2)
    assert out[0].doc_id == "d1"
    assert out[0].score == pytest.approx(0.55, abs=1e-12)
    assert out[1].score == pytest.approx(0.45, abs=1e-12)


def test_hybrid_rejects_alpha_out_of_range():
    index = CorpusIndex.from_embeddings(["d1"], np.array([[1.0]]))
    with pytest.raises(ConfigError):
        hybrid_interpolate(index, np.array([1.0]), np.array([1.0]), alpha=1.5, k=1)


# --- judging -----------------------------------------------------------------

def q(id, positives=(), answers=()):
    return QueryRecord(id=id, features=[0.0], positives=list(positives),
                       answers=list(answers))


def test_judge_gold_membership():
    j = RelevanceJudgments.from_queries([q("q1", positives=["d3"])], "gold_ids")
    assert judge_relevant("d3", None, "q1", j)
    assert not judge_relevant("d4", None, "q1", j)


def test_judge_answer_case_and_whitespace():
    j = RelevanceJudgments.from_queries([q("q1", answers=["Paris"])], "answer_strings")
    assert judge_relevant("d1", "then paris  is lovely", "q1", j)
    j2 = RelevanceJudgments.from_queries([q("q1", answers=["New York"])], "answer_strings")
    assert judge_relevant("d1", "New\n York", "q1", j2)
    assert not judge_relevant("d1", "Newark", "q1", j2)


def test_judge_answer_requires_text():
    j = RelevanceJudgments.from_queries([q("q1", answers=["x"])], "answer_strings")
    with pytest.raises(DataError):
        judge_relevant("d1", None, "q1", j)


def test_normalize_text():
    assert normalize_text("A \t B\n\nC") == "a b c"


# --- metrics -----------------------------------------------------------------

def run_of(ranks_by_query, tag="t"):
    entries = []
    for qid, relevant_rank, depth in ranks_by_query:
        for r in range(1, depth + 1):
            doc = f"{qid}-rel" if r == relevant_rank else f"{qid}-other-{r}"
            entries.append(RunEntry(query_id=qid, doc_id=doc, rank=r, score=1.0 - r * 0.01,
                                    tag=tag))
    return entries


def judgments_for(qids):
    return RelevanceJudgments(mode="gold_ids",
                              by_query={qid: frozenset([f"{qid}-rel"]) for qid in qids})


def test_evaluate_perfect_run():
    run = run_of([("q1", 1, 10), ("q2", 1, 10)])
    rep = evaluate_run(run, judgments_for(["q1", "q2"]), k=10)
    assert rep.recall_at_k == 1.0 and rep.mrr_at_k == 1.0


def test_evaluate_ranks_one_and_four():
    run = run_of([("q1", 1, 10), ("q2", 4, 10)])
    rep = evaluate_run(run, judgments_for(["q1", "q2"]), k=10)
    assert rep.recall_at_k == 1.0
    assert rep.mrr_at_k == pytest.approx(0.625, abs=1e-12)


def test_evaluate_one_miss():
    run = run_of([("q1", 2, 10), ("q2", 0, 10)])  # q2 has no relevant doc
    rep = evaluate_run(run, judgments_for(["q1", "q2"]), k=10)
    assert rep.recall_at_k == 0.5
    assert rep.mrr_at_k == pytest.approx(0.25, abs=1e-12)


def test_evaluate_respects_k_cutoff():
    run = run_of([("q1", 12, 15)])
    rep = evaluate_run(run, judgments_for(["q1"]), k=10)
    assert rep.recall_at_k == 0.0 and rep.mrr_at_k == 0.0
    rep15 = evaluate_run(run, judgments_for(["q1"]), k=15)
    assert rep15.recall_at_k == 1.0


def test_evaluate_missing_judgment_names_query():
    run = run_of([("q9", 1, 3)])
    with pytest.raises(DataError, match="q9"):
        evaluate_run(run, judgments_for(["q1"]), k=10)


def test_mrr_bounded_by_recall_random_runs():
    rng = np.random.default_rng(8)
    for _ in range(25):
        queries = []
        for i in range(int(rng.integers(1, 8))):
            rel = int(rng.integers(0, 12))
            queries.append((f"q{i}", rel, 10))
        run = run_of(queries)
        rep = evaluate_run(run, judgments_for([f"q{i}" for i in range(len(queries))]), k=10)
        assert 0.0 <= rep.mrr_at_k <= rep.recall_at_k <= 1.0


def test_metrics_report_dict_keys():
    rep = MetricsReport(recall_at_k=0.5, mrr_at_k=0.25, k=10, num_queries=4)
    d = rep.to_dict()
    assert d["recall_at_10"] == 0.5 and d["mrr_at_10"] == 0.25
    assert d["k"] == 10 and d["num_queries"] == 4


# --- files -----------------------------------------------------------------

def test_run_file_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    index = random_index(rng, 50, 4)
    entries = search_topk(index, rng.normal(size=4), k=10, query_id="q0", tag="student")
    path = tmp_path / "run.txt"
    write_run_file(path, entries)
    back = read_run_file(path)
    assert [(e.query_id, e.doc_id, e.rank, e.score, e.tag) for e in back] == \
        [(e.query_id, e.doc_id, e.rank, e.score, e.tag) for e in entries]


def test_run_file_rejects_malformed(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text("q1 d1 1 0.5\n")
    with pytest.raises(DataError, match="5 fields"):
        read_run_file(path)


def test_corpus_jsonl_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    docs = [FeatureRecord(id=f"d{i}", visual_features=rng.normal(size=4),
                          text_features=rng.normal(size=3) if i % 2 else None,
                          text=f"text {i}" if i % 3 else None) for i in range(6)]
    path = tmp_path / "corpus.jsonl"
    write_corpus_jsonl(path, docs)
    back = read_corpus_jsonl(path)
    for a, b in zip(docs, back):
        assert a.id == b.id
        assert np.array_equal(a.visual_features, b.visual_features)
        assert (a.text_features is None) == (b.text_features is None)
        assert a.text == b.text


def test_corpus_jsonl_rejects_missing_field(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"id": "d1"}\n')
    with pytest.raises(DataError, match="visual_features"):
        read_corpus_jsonl(path)


def test_queries_jsonl_roundtrip(tmp_path):
    recs = [QueryRecord(id="q1", features=[1.0, 2.0], positives=["d1"], answers=["x"]),
            QueryRecord(id="q2", features=[0.5, 0.1], positives=[], answers=[])]
    path = tmp_path / "queries.jsonl"
    write_queries_jsonl(path, recs)
    back = read_queries_jsonl(path)
    assert back[0].positives == ["d1"] and back[0].answers == ["x"]
    assert back[1].positives == [] and back[1].answers == []


def test_index_save_load_and_deterministic_bytes(tmp_path):
    rng = np.random.default_rng(11)
    index = random_index(rng, 40, 5)
    p1 = tmp_path / "a.npz"
    p2 = tmp_path / "b.npz"
    save_index(index, p1)
    save_index(index, p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_index(p1)
    assert back.doc_ids == index.doc_ids
    assert np.array_equal(back.embeddings, index.embeddings)
