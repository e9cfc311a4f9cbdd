"""Toy dual encoders: stacks of affine layers with tanh hidden activations.

Forward passes are pure functions of (params, input); the backward pass is
exact analytic backpropagation, so gradients can be verified against finite
differences. The document encoders come in two flavors: the student encodes
the visual feature vector alone, the teacher encodes the concatenation of
visual and text feature vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, FormatError

ACTIVATION = "tanh"
ENCODER_FORMAT_VERSION = 1


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    return arr


@dataclass
class FeatureRecord:
    """One document: id, visual feature vector, optional text views."""

    id: str
    visual_features: np.ndarray
    text_features: Optional[np.ndarray] = None
    text: Optional[str] = None

    def __post_init__(self):
        self.visual_features = _as_vector(self.visual_features, "visual_features")
        if self.text_features is not None:
            self.text_features = _as_vector(self.text_features, "text_features")


@dataclass
class EncoderParams:
    """Weights and biases of an affine stack; tanh between layers, identity on the last.

    weights[i] has shape (out_dim, in_dim) and biases[i] shape (out_dim,);
    consecutive layer dimensions must chain, and all entries must be finite.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("encoder needs matching, nonempty weight/bias lists")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} do not agree")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i} in_dim {w.shape[1]} does not chain with "
                    f"layer {i - 1} out_dim {self.weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ContractError(f"layer {i} contains non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_dims(self) -> list:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class EncoderGrads:
    """Gradients w.r.t. every weight and bias of an EncoderParams."""

    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> "EncoderGrads":
        return cls(
            weights=[np.zeros_like(w) for w in params.weights],
            biases=[np.zeros_like(b) for b in params.biases],
        )


def init_params(seed: int, layer_dims: Sequence[int]) -> EncoderParams:
    """Xavier-uniform weights in +/- sqrt(6 / (fan_in + fan_out)), zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ConfigError(f"layer_dims needs >= 2 positive entries, got {dims}")
    rng = np.random.default_rng(np.random.SeedSequence(seed % (1 << 63)))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights=weights, biases=biases)


def forward(params: EncoderParams, x) -> np.ndarray:
    """Forward pass for a single input vector."""
    return forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0][0]


def forward_batch(params: EncoderParams, X) -> tuple:
    """Forward pass for a batch (rows are inputs).

    Returns (outputs, activations) where activations[l] is the input to
    layer l; activations feed backward_batch.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionError(
            f"input shape {X.shape} does not match encoder input_dim {params.input_dim}"
        )
    acts = [X]
    h = X
    last = params.num_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if i == last else np.tanh(z)
        if i != last:
            acts.append(h)
    return h, acts


def backward_batch(params: EncoderParams, activations: list, grad_outputs) -> tuple:
    """Exact backprop through the stack.

    activations come from forward_batch on the same params; grad_outputs is
    the gradient of a scalar w.r.t. the batch outputs. Returns
    (EncoderGrads summed over the batch, gradient w.r.t. the batch inputs).
    """
    G = np.asarray(grad_outputs, dtype=np.float64)
    n = activations[0].shape[0]
    if G.shape != (n, params.embedding_dim):
        raise DimensionError(
            f"grad_outputs shape {G.shape} does not match ({n}, {params.embedding_dim})"
        )
    grads = EncoderGrads.zeros_like(params)
    g = G
    for i in range(params.num_layers - 1, -1, -1):
        a_in = activations[i]
        grads.weights[i] = g.T @ a_in
        grads.biases[i] = g.sum(axis=0)
        g = g @ params.weights[i]
        if i > 0:
            g = g * (1.0 - a_in * a_in)  # tanh' expressed via the stored activation
    return grads, g


def encoder_backward(params: EncoderParams, x, grad_output) -> tuple:
    """Single-vector backward pass; see backward_batch."""
    x = _as_vector(x, "input")
    g = _as_vector(grad_output, "grad_output")
    if g.shape[0] != params.embedding_dim:
        raise DimensionError(
            f"grad_output length {g.shape[0]} != embedding_dim {params.embedding_dim}"
        )
    _, acts = forward_batch(params, x[None, :])
    grads, gin = backward_batch(params, acts, g[None, :])
    return grads, gin[0]


def encode_query(params: EncoderParams, query_features) -> np.ndarray:
    """Embed a query feature vector."""
    q = _as_vector(query_features, "query_features")
    if q.shape[0] != params.input_dim:
        raise DimensionError(
            f"query length {q.shape[0]} != encoder input_dim {params.input_dim}"
        )
    return forward(params, q)


def encode_doc_student(params: EncoderParams, doc: FeatureRecord) -> np.ndarray:
    """Embed a document from its visual features only; text views are ignored."""
    v = doc.visual_features
    if v.shape[0] != params.input_dim:
        raise DimensionError(
            f"doc {doc.id}: visual length {v.shape[0]} != encoder input_dim {params.input_dim}"
        )
    return forward(params, v)


def encode_doc_teacher(params: EncoderParams, doc: FeatureRecord) -> np.ndarray:
    """Embed a document from the concatenated [visual || text] feature vector."""
    if doc.text_features is None:
        raise ContractError(f"teacher requires text view, doc {doc.id} has none")
    x = np.concatenate([doc.visual_features, doc.text_features])
    if x.shape[0] != params.input_dim:
        raise DimensionError(
            f"doc {doc.id}: visual+text length {x.shape[0]} != encoder input_dim {params.input_dim}"
        )
    return forward(params, x)


def encoder_to_dict(params: EncoderParams) -> dict:
    return {
        "format_version": ENCODER_FORMAT_VERSION,
        "layer_dims": params.layer_dims,
        "activation": ACTIVATION,
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def encoder_from_dict(doc: dict) -> EncoderParams:
    if not isinstance(doc, dict):
        raise FormatError("encoder section must be a JSON object")
    version = doc.get("format_version")
    if version != ENCODER_FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version!r} in encoder section")
    if doc.get("activation") != ACTIVATION:
        raise FormatError(f"unsupported activation {doc.get('activation')!r}")
    dims = doc.get("layer_dims")
    layers = doc.get("layers")
    if not isinstance(dims, list) or not isinstance(layers, list):
        raise FormatError("encoder section missing layer_dims or layers")
    if len(layers) != len(dims) - 1:
        raise FormatError(f"layers count {len(layers)} does not match layer_dims {dims}")
    weights, biases = [], []
    for i, layer in enumerate(layers):
        try:
            w = np.asarray(layer["weight"], dtype=np.float64)
            b = np.asarray(layer["bias"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"layer {i} is malformed: {exc}") from exc
        if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
            raise FormatError(
                f"layer {i} shape {w.shape}/{b.shape} does not match layer_dims {dims}"
            )
        weights.append(w)
        biases.append(b)
    return EncoderParams(weights=weights, biases=biases)
