"""Similarity and loss stack for contrastive training and distillation.

Everything here is a stateless pure function over float64 arrays, with
analytic gradients w.r.t. the embeddings. Batch conventions: n query-doc
pairs form a batch; the candidate set of every query is the n batch
documents, so similarity matrices are n x n with rows indexed by query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DegenerateEmbeddingError, DimensionError

KL_PROB_FLOOR = 1e-12  # clamp on the reference-side log argument


def _rows(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix of row vectors, got shape {arr.shape}")
    return arr


def _row_norms(X: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError(f"{name} contains a zero-norm embedding")
    return norms


def cosine_sim(q, d) -> float:
    """Cosine similarity of two embeddings; rejects zero-norm inputs."""
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if q.shape != d.shape:
        raise DimensionError(f"embedding shapes differ: {q.shape} vs {d.shape}")
    nq = np.linalg.norm(q)
    nd = np.linalg.norm(d)
    if nq == 0.0 or nd == 0.0:
        raise DegenerateEmbeddingError("cosine similarity of a zero-norm embedding is undefined")
    return float(q @ d / (nq * nd))


def cosine_sim_matrix(Q, D) -> np.ndarray:
    """All-pairs cosine similarities; rows follow Q, columns follow D."""
    Q = _rows(Q, "Q")
    D = _rows(D, "D")
    if Q.shape[1] != D.shape[1]:
        raise DimensionError(f"embedding dims differ: {Q.shape[1]} vs {D.shape[1]}")
    Qn = Q / _row_norms(Q, "Q")[:, None]
    Dn = D / _row_norms(D, "D")[:, None]
    return Qn @ Dn.T


def _positive_indices(positives, k: int) -> np.ndarray:
    idx = np.asarray(sorted(set(int(p) for p in positives)), dtype=np.intp)
    if idx.size == 0:
        raise ContractError("positive index set is empty")
    if idx.min() < 0 or idx.max() >= k:
        raise ContractError(f"positive index out of range for {k} candidates: {idx.tolist()}")
    return idx


def log_softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max()
    return shifted - np.log(np.exp(shifted).sum())


def infonce_loss(sim_row, positive_indices) -> float:
    """Contrastive loss of one query against its candidate row.

    -sum over positives p of log softmax(sim)[p], computed max-shifted.
    """
    sims = np.asarray(sim_row, dtype=np.float64)
    if sims.ndim != 1 or sims.size < 1:
        raise DimensionError(f"similarity row must be a nonempty vector, got shape {sims.shape}")
    idx = _positive_indices(positive_indices, sims.size)
    return float(-log_softmax(sims)[idx].sum())


def grad_infonce_sims(sim_row, positive_indices) -> np.ndarray:
    """Gradient of infonce_loss w.r.t. the similarity row."""
    sims = np.asarray(sim_row, dtype=np.float64)
    idx = _positive_indices(positive_indices, sims.size)
    p = np.exp(log_softmax(sims))
    g = float(idx.size) * p
    g[idx] -= 1.0
    return g


def infonce_batch(Q, D, positives) -> float:
    """Mean contrastive loss over a batch; query i's positives are positives[i]."""
    S = cosine_sim_matrix(Q, D)
    if len(positives) != S.shape[0]:
        raise ContractError(f"{len(positives)} positive sets for {S.shape[0]} queries")
    return float(np.mean([infonce_loss(S[i], positives[i]) for i in range(S.shape[0])]))


def _chain_cosine(Q, D, C) -> tuple:
    """Embedding gradients given C = dLoss/dSim for the cosine matrix of (Q, D)."""
    nq = _row_norms(Q, "Q")
    nd = _row_norms(D, "D")
    Qn = Q / nq[:, None]
    Dn = D / nd[:, None]
    S = Qn @ Dn.T
    CS = C * S
    grad_Q = (C @ Dn - CS.sum(axis=1)[:, None] * Qn) / nq[:, None]
    grad_D = (C.T @ Qn - CS.sum(axis=0)[:, None] * Dn) / nd[:, None]
    return grad_Q, grad_D


def grad_infonce_batch(Q, D, positives) -> tuple:
    """Analytic gradients of infonce_batch w.r.t. the query and doc embeddings."""
    Q = _rows(Q, "Q")
    D = _rows(D, "D")
    S = cosine_sim_matrix(Q, D)
    n = S.shape[0]
    if len(positives) != n:
        raise ContractError(f"{len(positives)} positive sets for {n} queries")
    C = np.stack([grad_infonce_sims(S[i], positives[i]) for i in range(n)]) / n
    return _chain_cosine(Q, D, C)


def align_loss(teacher_docs, student_docs, teacher_queries, student_queries,
               normalized: bool = False) -> float:
    """Mean squared distance between teacher and student embeddings, both views."""
    per = align_terms(teacher_docs, student_docs, teacher_queries, student_queries,
                      normalized=normalized)
    return float(per.mean())


def align_terms(teacher_docs, student_docs, teacher_queries, student_queries,
                normalized: bool = False) -> np.ndarray:
    """Per-pair alignment terms ||d_t - d_s||^2 + ||q_t - q_s||^2 (no averaging)."""
    Dt = _rows(teacher_docs, "teacher_docs")
    Ds = _rows(student_docs, "student_docs")
    Qt = _rows(teacher_queries, "teacher_queries")
    Qs = _rows(student_queries, "student_queries")
    if not (Dt.shape == Ds.shape == Qt.shape == Qs.shape):
        raise ContractError(
            f"embedding lists disagree: {Dt.shape}, {Ds.shape}, {Qt.shape}, {Qs.shape}"
        )
    if Dt.shape[0] < 1:
        raise ContractError("alignment needs at least one pair")
    if normalized:
        Dt = Dt / _row_norms(Dt, "teacher_docs")[:, None]
        Ds = Ds / _row_norms(Ds, "student_docs")[:, None]
        Qt = Qt / _row_norms(Qt, "teacher_queries")[:, None]
        Qs = Qs / _row_norms(Qs, "student_queries")[:, None]
    return ((Dt - Ds) ** 2).sum(axis=1) + ((Qt - Qs) ** 2).sum(axis=1)


def soft_distribution(sim_row, tau: float) -> np.ndarray:
    """Temperature-softened softmax over one similarity row."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    sims = np.asarray(sim_row, dtype=np.float64)
    if sims.ndim != 1 or sims.size < 1:
        raise DimensionError(f"similarity row must be a nonempty vector, got shape {sims.shape}")
    return np.exp(log_softmax(sims / tau))


def kl_divergence(t, s) -> float:
    """KL(t || s) with the reference distribution t; zero t entries contribute 0."""
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 1:
        raise ContractError(f"distribution shapes differ: {t.shape} vs {s.shape}")
    mask = t > 0.0
    tm = t[mask]
    return float((tm * (np.log(tm) - np.log(np.maximum(s[mask], KL_PROB_FLOOR)))).sum())


def adaptive_weights(kl_values, tau_weight: float) -> np.ndarray:
    """Softmax over per-instance KL divergences; large disagreement gets more weight.

    The weights are treated as constants downstream: no gradient flows
    through them.
    """
    if tau_weight <= 0:
        raise ConfigError(f"tau_weight must be positive, got {tau_weight}")
    kl = np.asarray(kl_values, dtype=np.float64)
    if kl.ndim != 1 or kl.size < 1:
        raise ContractError(f"kl_values must be a nonempty vector, got shape {kl.shape}")
    if np.any(~np.isfinite(kl)) or np.any(kl < 0):
        raise ContractError("kl_values must be finite and nonnegative")
    return np.exp(log_softmax(kl / tau_weight))


@dataclass
class LossBreakdown:
    """Per-batch distillation loss components.

    align and soft are already weighted sums over instances, so
    total == align + soft. hard carries the contrastive loss when one was
    computed (stage-1 objective, or for the distillation trace).
    """

    hard: float
    align: float
    soft: float
    weights: np.ndarray
    total: float


def _validate_sims(sims, n: int, name: str) -> np.ndarray:
    S = np.asarray(sims, dtype=np.float64)
    if S.shape != (n, n):
        raise ContractError(f"{name} must be {n}x{n} in-batch similarities, got {S.shape}")
    return S


def total_distill_loss(teacher_sims, student_sims, teacher_queries, student_queries,
                       teacher_docs, student_docs, tau_soft: float = 1.0,
                       tau_weight: float = 1.0, align_normalized: bool = False,
                       use_align: bool = True, use_soft: bool = True,
                       use_reweight: bool = True) -> LossBreakdown:
    """Adaptive-weighted sum of per-instance alignment and soft-label terms.

    Per instance i: the alignment term is the squared distance of the i-th
    doc and query embeddings across models; the soft term is
    KL(teacher_i || student_i) over the in-batch candidate distributions at
    tau_soft. Weights are a softmax over the per-instance KLs at tau_weight
    (or uniform when use_reweight is off). The use_* switches support
    ablations; with everything on, total = sum_i w_i (align_i + soft_i).
    """
    Qt = _rows(teacher_queries, "teacher_queries")
    n = Qt.shape[0]
    St = _validate_sims(teacher_sims, n, "teacher_sims")
    Ss = _validate_sims(student_sims, n, "student_sims")
    align_i = align_terms(teacher_docs, student_docs, teacher_queries, student_queries,
                          normalized=align_normalized)
    if align_i.shape[0] != n:
        raise ContractError(f"{align_i.shape[0]} embedding pairs for {n} similarity rows")
    soft_i = np.array([
        kl_divergence(soft_distribution(St[i], tau_soft), soft_distribution(Ss[i], tau_soft))
        for i in range(n)
    ])
    weights = adaptive_weights(soft_i, tau_weight) if use_reweight else np.full(n, 1.0 / n)
    align_w = float(weights @ align_i) if use_align else 0.0
    soft_w = float(weights @ soft_i) if use_soft else 0.0
    return LossBreakdown(hard=0.0, align=align_w, soft=soft_w, weights=weights,
                         total=align_w + soft_w)


def grad_total_distill_loss(teacher_sims, student_sims, teacher_queries, student_queries,
                            teacher_docs, student_docs, tau_soft: float = 1.0,
                            tau_weight: float = 1.0, align_normalized: bool = False,
                            use_align: bool = True, use_soft: bool = True,
                            use_reweight: bool = True) -> tuple:
    """Gradients of total_distill_loss w.r.t. student query and doc embeddings.

    Weights are held constant and teacher embeddings receive no gradient.
    Student similarities are recomputed from the student embeddings so the
    soft-term chain rule is exact.
    """
    Qt = _rows(teacher_queries, "teacher_queries")
    Qs = _rows(student_queries, "student_queries")
    Dt = _rows(teacher_docs, "teacher_docs")
    Ds = _rows(student_docs, "student_docs")
    n = Qt.shape[0]
    St = _validate_sims(teacher_sims, n, "teacher_sims")
    _validate_sims(student_sims, n, "student_sims")
    Ss = cosine_sim_matrix(Qs, Ds)

    T = np.stack([soft_distribution(St[i], tau_soft) for i in range(n)])
    S = np.stack([soft_distribution(Ss[i], tau_soft) for i in range(n)])
    soft_i = np.array([kl_divergence(T[i], S[i]) for i in range(n)])
    weights = adaptive_weights(soft_i, tau_weight) if use_reweight else np.full(n, 1.0 / n)

    grad_Qs = np.zeros_like(Qs)
    grad_Ds = np.zeros_like(Ds)
    if use_soft:
        C = weights[:, None] * (S - T) / tau_soft
        gq, gd = _chain_cosine(Qs, Ds, C)
        grad_Qs += gq
        grad_Ds += gd
    if use_align:
        if align_normalized:
            grad_Qs += _grad_normalized_sqdist(Qs, Qt) * weights[:, None]
            grad_Ds += _grad_normalized_sqdist(Ds, Dt) * weights[:, None]
        else:
            grad_Qs += 2.0 * weights[:, None] * (Qs - Qt)
            grad_Ds += 2.0 * weights[:, None] * (Ds - Dt)
    return grad_Qs, grad_Ds


def _grad_normalized_sqdist(X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """d/dX of ||X_hat - T_hat||^2 per row, with T held constant."""
    nx = _row_norms(X, "student embeddings")[:, None]
    Xh = X / nx
    Th = T / _row_norms(T, "teacher embeddings")[:, None]
    dot = (Xh * Th).sum(axis=1)[:, None]
    return 2.0 * (dot * Xh - Th) / nx
