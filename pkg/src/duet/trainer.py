"""Two-stage optimization driver.

Stage 1 trains a model (teacher or student) with the in-batch contrastive
objective. Stage 2 freezes the teacher and pulls the student toward it with
the weighted alignment + soft-label objective. All randomness flows from
the config seed, so a (data, config) pair fixes every parameter bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import losses
from .encoders import (
    EncoderGrads,
    EncoderParams,
    FeatureRecord,
    backward_batch,
    encoder_from_dict,
    encoder_to_dict,
    forward_batch,
    init_params,
)
from .errors import ConfigError, ContractError, DataError, DimensionError, FormatError, NumericError
from .jsonio import dump_exact, load_json
from .losses import LossBreakdown

CHECKPOINT_FORMAT_VERSION = 1
MODEL_KINDS = ("teacher", "student")
_SEED_MASK = (1 << 63) - 1


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 2
    learning_rate: float = 2e-5
    tau_soft: float = 1.0
    tau_weight: float = 1.0
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    align_normalized: bool = False
    include_hard_in_distill: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("tau_soft", "tau_weight", "adam_beta1", "adam_beta2", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        doc = load_json(path)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} must contain a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass
class ModelParams:
    """A full retrieval model: its kind, query encoder, and document encoder."""

    kind: str
    query_encoder: EncoderParams
    doc_encoder: EncoderParams
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")

    def copy(self) -> "ModelParams":
        return ModelParams(kind=self.kind, query_encoder=self.query_encoder.copy(),
                           doc_encoder=self.doc_encoder.copy(), seed=self.seed)


@dataclass
class TrainPair:
    """One training instance: a query feature vector and its positive document."""

    query_id: str
    query_features: np.ndarray
    doc: FeatureRecord

    def __post_init__(self):
        self.query_features = np.asarray(self.query_features, dtype=np.float64)


@dataclass
class TrainingRun:
    stage: str  # "independent" | "distill"
    trace: list  # LossBreakdown per step, in step order
    params: ModelParams


def derive_seed(root: int, *salts: int) -> int:
    """Stable child seed from a root seed and integer salts."""
    h = root & _SEED_MASK
    for s in salts:
        h = (h * 6364136223846793005 + (s & _SEED_MASK) + 1442695040888963407) & _SEED_MASK
    return h


def _doc_input(model_kind: str, doc) -> np.ndarray:
    if model_kind == "teacher":
        if doc.text_features is None:
            raise ContractError(f"teacher requires text view, doc {doc.id} has none")
        return np.concatenate([doc.visual_features, doc.text_features])
    return doc.visual_features


def doc_input_matrix(model_kind: str, docs) -> np.ndarray:
    return np.stack([_doc_input(model_kind, d) for d in docs])


def encode_docs(model: ModelParams, docs) -> np.ndarray:
    """Batch-encode documents with the model's own view of them."""
    X = doc_input_matrix(model.kind, docs)
    out, _ = forward_batch(model.doc_encoder, X)
    return out


def encode_queries(model: ModelParams, query_features) -> np.ndarray:
    X = np.asarray(query_features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    out, _ = forward_batch(model.query_encoder, X)
    return out


def init_model(kind: str, query_dim: int, doc_dim: int, embedding_dim: int,
               hidden_dims=(64,), seed: int = 0) -> ModelParams:
    """Fresh model with independent query/doc encoder initializations."""
    role = 0 if kind == "teacher" else 2
    q_dims = [query_dim, *hidden_dims, embedding_dim]
    d_dims = [doc_dim, *hidden_dims, embedding_dim]
    return ModelParams(
        kind=kind,
        query_encoder=init_params(derive_seed(seed, role), q_dims),
        doc_encoder=init_params(derive_seed(seed, role + 1), d_dims),
        seed=seed,
    )


def make_batches(pairs, batch_size: int, seed: int, epoch: int) -> list:
    """Shuffle pairs deterministically by (seed, epoch) and chunk them.

    A final batch of size 1 is dropped: a single pair has no in-batch
    negatives.
    """
    if not pairs:
        raise ContractError("cannot batch an empty pair list")
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    rng = np.random.default_rng(derive_seed(seed, 1000003, epoch))
    order = rng.permutation(len(pairs))
    batches = []
    for start in range(0, len(pairs), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        if len(chunk) >= 2:
            batches.append(chunk)
    return batches


# --- optimizer --------------------------------------------------------------


@dataclass
class OptState:
    """Adam moment accumulators for one encoder (unused for sgd)."""

    step: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: EncoderParams) -> "OptState":
        return cls(
            step=0,
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
        )


def optimizer_step(params: EncoderParams, grads: EncoderGrads,
                   state: Optional[OptState], config: TrainConfig):
    """One update in place; returns (params, state)."""
    if len(grads.weights) != len(params.weights):
        raise DimensionError("gradient structure does not match params")
    for gw, w in zip(grads.weights, params.weights):
        if gw.shape != w.shape:
            raise DimensionError(f"gradient shape {gw.shape} does not match weight {w.shape}")
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for w, gw in zip(params.weights, grads.weights):
            w -= lr * gw
        for b, gb in zip(params.biases, grads.biases):
            b -= lr * gb
        return params, state
    if state is None:
        state = OptState.for_params(params)
    state.step += 1
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for w, gw, m, v in zip(params.weights, grads.weights, state.m_w, state.v_w):
        m *= b1
        m += (1 - b1) * gw
        v *= b2
        v += (1 - b2) * gw * gw
        w -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    for b, gb, m, v in zip(params.biases, grads.biases, state.m_b, state.v_b):
        m *= b1
        m += (1 - b1) * gb
        v *= b2
        v += (1 - b2) * gb * gb
        b -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


# --- training stages ---------------------------------------------------------


def _check_finite(value: float, stage: str, epoch: int, batch_idx: int):
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite loss {value!r} in {stage} at epoch {epoch} batch {batch_idx}"
        )


def train_stage1(model_kind: str, pairs, config: TrainConfig,
                 hidden_dims=(64,), embedding_dim: int = 32) -> TrainingRun:
    """Contrastive training of one model over in-batch candidates."""
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {model_kind!r}")
    if not pairs:
        raise ContractError("training needs at least one pair")
    query_dim = pairs[0].query_features.shape[0]
    doc_dim = _doc_input(model_kind, pairs[0].doc).shape[0]
    model = init_model(model_kind, query_dim, doc_dim, embedding_dim,
                       hidden_dims=hidden_dims, seed=config.seed)
    q_state = OptState.for_params(model.query_encoder)
    d_state = OptState.for_params(model.doc_encoder)
    trace = []
    for epoch in range(config.epochs):
        for bi, batch in enumerate(make_batches(pairs, config.batch_size, config.seed, epoch)):
            n = len(batch)
            Qx = np.stack([p.query_features for p in batch])
            Dx = doc_input_matrix(model_kind, [p.doc for p in batch])
            Q, q_acts = forward_batch(model.query_encoder, Qx)
            D, d_acts = forward_batch(model.doc_encoder, Dx)
            positives = [{i} for i in range(n)]
            hard = losses.infonce_batch(Q, D, positives)
            _check_finite(hard, "stage1", epoch, bi)
            gq, gd = losses.grad_infonce_batch(Q, D, positives)
            q_grads, _ = backward_batch(model.query_encoder, q_acts, gq)
            d_grads, _ = backward_batch(model.doc_encoder, d_acts, gd)
            optimizer_step(model.query_encoder, q_grads, q_state, config)
            optimizer_step(model.doc_encoder, d_grads, d_state, config)
            trace.append(LossBreakdown(hard=hard, align=0.0, soft=0.0,
                                       weights=np.full(n, 1.0 / n), total=0.0))
    return TrainingRun(stage="independent", trace=trace, params=model)


def distill(teacher: ModelParams, student: ModelParams, pairs, config: TrainConfig,
            use_align: bool = True, use_soft: bool = True,
            use_reweight: bool = True) -> TrainingRun:
    """Optimize the student against the frozen teacher.

    The teacher is never written to; the returned params are a trained copy
    of the student. The use_* switches exist for component ablations.
    """
    if not pairs:
        raise ContractError("distillation needs at least one pair")
    student = student.copy()
    q_state = OptState.for_params(student.query_encoder)
    d_state = OptState.for_params(student.doc_encoder)
    trace = []
    for epoch in range(config.epochs):
        for bi, batch in enumerate(make_batches(pairs, config.batch_size, config.seed, epoch)):
            n = len(batch)
            Qx = np.stack([p.query_features for p in batch])
            docs = [p.doc for p in batch]
            Qt = encode_queries(teacher, Qx)
            Dt = encode_docs(teacher, docs)
            Qs, qs_acts = forward_batch(student.query_encoder, Qx)
            Ds, ds_acts = forward_batch(student.doc_encoder,
                                        doc_input_matrix(student.kind, docs))
            St = losses.cosine_sim_matrix(Qt, Dt)
            Ss = losses.cosine_sim_matrix(Qs, Ds)
            breakdown = losses.total_distill_loss(
                St, Ss, Qt, Qs, Dt, Ds, tau_soft=config.tau_soft,
                tau_weight=config.tau_weight, align_normalized=config.align_normalized,
                use_align=use_align, use_soft=use_soft, use_reweight=use_reweight)
            positives = [{i} for i in range(n)]
            hard = losses.infonce_batch(Qs, Ds, positives)
            breakdown.hard = hard
            _check_finite(breakdown.total, "distill", epoch, bi)
            _check_finite(hard, "distill", epoch, bi)
            gq, gd = losses.grad_total_distill_loss(
                St, Ss, Qt, Qs, Dt, Ds, tau_soft=config.tau_soft,
                tau_weight=config.tau_weight, align_normalized=config.align_normalized,
                use_align=use_align, use_soft=use_soft, use_reweight=use_reweight)
            if config.include_hard_in_distill:
                hq, hd = losses.grad_infonce_batch(Qs, Ds, positives)
                gq = gq + hq
                gd = gd + hd
            q_grads, _ = backward_batch(student.query_encoder, qs_acts, gq)
            d_grads, _ = backward_batch(student.doc_encoder, ds_acts, gd)
            optimizer_step(student.query_encoder, q_grads, q_state, config)
            optimizer_step(student.doc_encoder, d_grads, d_state, config)
            trace.append(breakdown)
    return TrainingRun(stage="distill", trace=trace, params=student)


# --- persistence --------------------------------------------------------------


def save_checkpoint(model: ModelParams, path) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "query_encoder": encoder_to_dict(model.query_encoder),
        "doc_encoder": encoder_to_dict(model.doc_encoder),
    }
    dump_exact(doc, path)


def load_checkpoint(path) -> ModelParams:
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: checkpoint must be a JSON object")
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {version!r}")
    kind = doc.get("kind")
    if kind not in MODEL_KINDS:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    for key in ("query_encoder", "doc_encoder"):
        if key not in doc:
            raise FormatError(f"{path}: missing field {key!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise FormatError(f"{path}: field 'seed' must be an integer")
    return ModelParams(
        kind=kind,
        query_encoder=encoder_from_dict(doc["query_encoder"]),
        doc_encoder=encoder_from_dict(doc["doc_encoder"]),
        seed=seed,
    )


def write_loss_csv(path, runs) -> None:
    """Persist loss traces as CSV rows (step, stage, hard, align, soft, total)."""
    if isinstance(runs, TrainingRun):
        runs = [runs]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "stage", "hard", "align", "soft", "total"])
        step = 0
        for run in runs:
            for row in run.trace:
                step += 1
                writer.writerow([step, run.stage, repr(row.hard), repr(row.align),
                                 repr(row.soft), repr(row.total)])


def read_loss_csv(path) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["step", "stage", "hard", "align", "soft", "total"]
        if reader.fieldnames != expected:
            raise DataError(f"{path}: expected columns {expected}, got {reader.fieldnames}")
        for rec in reader:
            rows.append({
                "step": int(rec["step"]),
                "stage": rec["stage"],
                "hard": float(rec["hard"]),
                "align": float(rec["align"]),
                "soft": float(rec["soft"]),
                "total": float(rec["total"]),
            })
    return rows
