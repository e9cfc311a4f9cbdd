import math

import numpy as np
import pytest

from duet.encoders import (
    EncoderParams,
    FeatureRecord,
    backward_batch,
    encode_doc_student,
    encode_doc_teacher,
    encode_query,
    encoder_backward,
    encoder_from_dict,
    encoder_to_dict,
    forward,
    forward_batch,
    init_params,
)
from duet.errors import ConfigError, ContractError, DimensionError

from oracle_utils import central_diff, forward_oracle, max_rel_err


def identity_params(dim=2):
    return EncoderParams(weights=[np.eye(dim)], biases=[np.zeros(dim)])


def test_identity_layer_passthrough():
    out = encode_query(identity_params(), [1.0, 2.0])
    assert np.array_equal(out, np.array([1.0, 2.0]))


def test_zero_hidden_weights_give_zero_output():
    params = EncoderParams(
        weights=[np.zeros((3, 2)), np.zeros((2, 3))],
        biases=[np.zeros(3), np.zeros(2)],
    )
    out = encode_query(params, [5.0, -7.0])
    assert np.array_equal(out, np.zeros(2))


def test_forward_matches_straightline_oracle():
    rng = np.random.default_rng(7)
    params = init_params(3, [4, 5, 4])
    for w in params.weights:
        w += rng.normal(scale=0.1, size=w.shape)
    for b in params.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=4)
    got = forward(params, x)
    assert np.max(np.abs(got - forward_oracle(params, x))) < 1e-12


def test_student_is_text_blind():
    params = init_params(0, [2, 3])
    doc_with = FeatureRecord(id="a", visual_features=[0.5, -0.5], text_features=[9.0, 9.0])
    doc_without = FeatureRecord(id="a", visual_features=[0.5, -0.5])
    assert np.array_equal(encode_doc_student(params, doc_with),
                          encode_doc_student(params, doc_without))


def test_student_identity_case():
    doc = FeatureRecord(id="d", visual_features=[0.5, -0.5])
    assert np.array_equal(encode_doc_student(identity_params(), doc),
                          np.array([0.5, -0.5]))


def test_teacher_concatenates_views():
    doc = FeatureRecord(id="d", visual_features=[1.0], text_features=[2.0])
    out = encode_doc_teacher(identity_params(2), doc)
    assert np.array_equal(out, np.array([1.0, 2.0]))


def test_teacher_zero_text_equals_padded_visual():
    params = init_params(1, [4, 3])
    doc = FeatureRecord(id="d", visual_features=[0.3, -0.2], text_features=[0.0, 0.0])
    padded = forward(params, [0.3, -0.2, 0.0, 0.0])
    assert np.array_equal(encode_doc_teacher(params, doc), padded)


def test_teacher_requires_text_view():
    doc = FeatureRecord(id="d", visual_features=[1.0, 2.0])
    with pytest.raises(ContractError, match="teacher requires text view"):
        encode_doc_teacher(identity_params(2), doc)


def test_teacher_matches_oracle_on_concat():
    rng = np.random.default_rng(11)
    params = init_params(5, [8, 6, 4])
    doc = FeatureRecord(id="d", visual_features=rng.normal(size=4),
                        text_features=rng.normal(size=4))
    x = np.concatenate([doc.visual_features, doc.text_features])
    assert np.max(np.abs(encode_doc_teacher(params, doc) - forward_oracle(params, x))) < 1e-12


def test_dimension_mismatch_rejected():
    params = init_params(0, [3, 2])
    with pytest.raises(DimensionError):
        encode_query(params, [1.0, 2.0])
    with pytest.raises(DimensionError):
        encode_doc_student(params, FeatureRecord(id="d", visual_features=[1.0]))


def test_backward_zero_upstream_gives_zero_grads():
    params = init_params(2, [3, 4, 2])
    grads, gin = encoder_backward(params, np.ones(3), np.zeros(2))
    assert all(np.all(w == 0) for w in grads.weights)
    assert all(np.all(b == 0) for b in grads.biases)
    assert np.all(gin == 0)


def test_backward_single_linear_layer_is_outer_product():
    params = EncoderParams(weights=[np.array([[2.0, -1.0], [0.5, 3.0]])],
                           biases=[np.zeros(2)])
    x = np.array([1.5, -0.5])
    g = np.array([2.0, -3.0])
    grads, gin = encoder_backward(params, x, g)
    assert np.array_equal(grads.weights[0], np.outer(g, x))
    assert np.array_equal(grads.biases[0], g)
    assert np.array_equal(gin, params.weights[0].T @ g)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    dims = [5, 6, 4]
    params = init_params(seed, dims)
    x = rng.normal(size=dims[0])
    g = rng.normal(size=dims[-1])

    grads, gin = encoder_backward(params, x, g)

    def scalar(theta):
        off = 0
        ws, bs = [], []
        for w, b in zip(params.weights, params.biases):
            ws.append(theta[off:off + w.size].reshape(w.shape))
            off += w.size
            bs.append(theta[off:off + b.size])
            off += b.size
        p = EncoderParams(weights=ws, biases=bs)
        return float(forward(p, x) @ g)

    theta0 = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in
                             zip(params.weights, params.biases)])
    fd = central_diff(scalar, theta0)
    analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in
                               zip(grads.weights, grads.biases)])
    assert max_rel_err(analytic, fd) < 1e-5

    fd_in = central_diff(lambda xv: float(forward(params, xv) @ g), x)
    assert max_rel_err(gin, fd_in) < 1e-5


def test_init_deterministic_and_zero_bias():
    a = init_params(42, [4, 3, 2])
    b = init_params(42, [4, 3, 2])
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert all(np.all(x == 0) for x in a.biases)


def test_init_respects_uniform_bound():
    params = init_params(9, [4, 3])
    bound = math.sqrt(6.0 / 7.0)
    assert np.all(np.abs(params.weights[0]) <= bound)


def test_init_rejects_bad_dims():
    with pytest.raises(ConfigError):
        init_params(0, [4])
    with pytest.raises(ConfigError):
        init_params(0, [4, 0, 2])


def test_forward_is_pure():
    params = init_params(5, [3, 3])
    before = [w.copy() for w in params.weights]
    x = np.array([1.0, 2.0, 3.0])
    out1 = forward(params, x)
    out2 = forward(params, x)
    assert np.array_equal(out1, out2)
    for w0, w1 in zip(before, params.weights):
        assert np.array_equal(w0, w1)


def test_batch_forward_agrees_with_single():
    # same math; tolerance because BLAS may associate sums differently per shape
    rng = np.random.default_rng(3)
    params = init_params(3, [4, 6, 3])
    X = rng.normal(size=(5, 4))
    out, _ = forward_batch(params, X)
    for i in range(5):
        assert np.max(np.abs(out[i] - forward(params, X[i]))) < 1e-12


def test_batch_backward_sums_per_example_grads():
    rng = np.random.default_rng(4)
    params = init_params(4, [3, 5, 2])
    X = rng.normal(size=(4, 3))
    G = rng.normal(size=(4, 2))
    _, acts = forward_batch(params, X)
    grads, gin = backward_batch(params, acts, G)
    acc = [np.zeros_like(w) for w in params.weights]
    for i in range(4):
        per, gi = encoder_backward(params, X[i], G[i])
        for a, w in zip(acc, per.weights):
            a += w
        assert np.max(np.abs(gin[i] - gi)) < 1e-12
    for a, w in zip(acc, grads.weights):
        assert np.max(np.abs(a - w)) < 1e-12


def test_encoder_dict_roundtrip_bit_exact():
    params = init_params(13, [4, 5, 3])
    doc = encoder_to_dict(params)
    back = encoder_from_dict(doc)
    for wa, wb in zip(params.weights, back.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(params.biases, back.biases):
        assert np.array_equal(ba, bb)
