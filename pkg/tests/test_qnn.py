"""Integer MLP semantics, quantisation, softmax and the model file format."""

import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from canlab import labels
from canlab.errors import (
    DimensionMismatch,
    InsufficientData,
    ValidationError,
)
from canlab.qnn import (
    QuantLayer,
    QuantMlpModel,
    float_infer,
    load_model,
    mlp_infer,
    quantise_layer,
    quantise_model,
    save_model,
    softmax,
    train_reference,
)


def _random_model(rng, dims=(40, 8, 8, 8, 8, 4), scale_pool=None):
    layers = []
    for i in range(5):
        w = rng.integers(-8, 8, size=(dims[i + 1], dims[i]), dtype=np.int64)
        b = rng.integers(-500, 500, size=dims[i + 1], dtype=np.int64)
        if scale_pool is None:
            scale = float(rng.uniform(0.01, 0.5))
        else:
            scale = float(rng.choice(scale_pool))
        layers.append(QuantLayer(weights=w.astype(np.int8),
                                 bias=b, scale=scale))
    return QuantMlpModel(layers=layers).validate()


def oracle_dequantised(model, features):
    """Independent check: run the dequantised float pipeline in exact
    rational arithmetic.  Real weights are scale x int weights; real biases
    are cumulative-scale x int biases.  The integer logits times the full
    cumulative scale must equal these real logits exactly."""
    acts = [Fraction(int(v)) for v in features]
    cumulative = Fraction(1)
    for i, layer in enumerate(model.layers):
        s = Fraction(layer.scale)      # exact binary rational of the float
        cumulative *= s
        out = []
        for row, b in zip(layer.weights, layer.bias):
            z = sum(s * Fraction(int(w)) * a for w, a in zip(row, acts))
            z += cumulative * Fraction(int(b))
            out.append(z)
        if i < len(model.layers) - 1:
            acts = [max(z, Fraction(0)) for z in out]
        else:
            acts = out
    return acts, cumulative


def test_integer_logits_match_exact_dequantised_oracle():
    rng = np.random.default_rng(21)
    for trial in range(10):
        model = _random_model(rng)
        feats = rng.integers(0, 256, size=40, dtype=np.int64)
        logits = mlp_infer(model, feats.astype(np.uint8))
        real, cumulative = oracle_dequantised(model, feats)
        for z_int, z_real in zip(logits, real):
            assert cumulative * Fraction(int(z_int)) == z_real, trial


def test_single_path_identity_model_passes_input_through():
    dims = (40, 8, 8, 8, 8, 4)
    layers = []
    for i in range(5):
        w = np.zeros((dims[i + 1], dims[i]), dtype=np.int8)
        w[0, 0] = 1
        layers.append(QuantLayer(weights=w,
                                 bias=np.zeros(dims[i + 1], dtype=np.int64),
                                 scale=1.0))
    model = QuantMlpModel(layers=layers).validate()
    feats = np.zeros(40, dtype=np.uint8)
    feats[0] = 173
    logits = mlp_infer(model, feats)
    assert list(logits) == [173, 0, 0, 0]


def test_all_zero_weights_yield_bias_logits():
    rng = np.random.default_rng(3)
    dims = (40, 8, 8, 8, 8, 4)
    layers = []
    for i in range(5):
        bias = rng.integers(-9, 10, size=dims[i + 1], dtype=np.int64)
        layers.append(QuantLayer(
            weights=np.zeros((dims[i + 1], dims[i]), dtype=np.int8),
            bias=bias, scale=0.25))
    model = QuantMlpModel(layers=layers).validate()
    logits = mlp_infer(model, np.full(40, 99, dtype=np.uint8))
    assert list(logits) == list(model.layers[-1].bias)


def test_feature_dimension_checked():
    rng = np.random.default_rng(5)
    model = _random_model(rng)
    with pytest.raises(DimensionMismatch):
        mlp_infer(model, np.zeros(39, dtype=np.uint8))


def test_huge_biases_take_exact_bignum_path():
    dims = (40, 64, 64, 64, 64, 4)
    layers = []
    for i in range(5):
        w = np.full((dims[i + 1], dims[i]), 7, dtype=np.int8)
        b = np.full(dims[i + 1], 2 ** 40, dtype=np.int64)
        layers.append(QuantLayer(weights=w, bias=b, scale=1.0))
    model = QuantMlpModel(layers=layers).validate()
    feats = np.full(40, 255, dtype=np.uint8)
    logits = mlp_infer(model, feats)

    # independent plain-Python forward pass with unbounded ints
    acts = [255] * 40
    for i in range(5):
        nxt = [sum(7 * a for a in acts) + 2 ** 40 for _ in range(dims[i + 1])]
        acts = [max(v, 0) for v in nxt] if i < 4 else nxt
    assert [int(v) for v in logits] == acts
    assert acts[0] > 2 ** 63  # would have wrapped in int64


def test_mlp_infer_is_bit_identical_across_runs():
    rng = np.random.default_rng(8)
    model = _random_model(rng)
    feats = rng.integers(0, 256, size=40, dtype=np.int64).astype(np.uint8)
    first = mlp_infer(model, feats)
    for _ in range(5):
        assert list(mlp_infer(model, feats)) == list(first)


# ------------------------------------------------------------------- softmax

def test_softmax_uniform_on_equal_logits():
    p = softmax([0, 0, 0, 0])
    assert np.allclose(p, 0.25, atol=1e-15)
    assert abs(p.sum() - 1.0) < 1e-9


def test_softmax_matches_arbitrary_precision_oracle():
    mpmath.mp.dps = 60
    for logits in ([1000, 0, 0, 0], [3, 1, -2, 5], [-40, -41, -39, -38]):
        p = softmax(logits)
        es = [mpmath.exp(v) for v in logits]
        total = sum(es)
        want = [float(e / total) for e in es]
        assert np.allclose(p, want, atol=1e-12), logits
        assert abs(p.sum() - 1.0) < 1e-9


def test_softmax_handles_huge_integer_logits():
    p = softmax([10 ** 50, 0, -10 ** 50, 5])
    assert p[0] == pytest.approx(1.0)
    assert p.sum() == pytest.approx(1.0)
    assert int(np.argmax(p)) == 0


def test_softmax_argmax_and_shift_invariance():
    rng = np.random.default_rng(13)
    for _ in range(100):
        x = rng.integers(-1000, 1000, size=4)
        p = softmax(x)
        assert int(np.argmax(p)) == int(np.argmax(x))
        q = softmax(x + 137)
        assert np.allclose(p, q, atol=1e-12)


# -------------------------------------------------------------- quantisation

def test_quantise_exact_multiples_have_zero_error():
    w = np.array([[0.5, -1.0], [3.5, 0.0]])   # multiples of scale 0.5
    q, scale, err = quantise_layer(w)
    assert scale == 0.5
    assert err == 0.0
    assert q.tolist() == [[1, -2], [7, 0]]


def test_quantise_clamps_at_int4_boundaries_with_given_scale():
    q, scale, _ = quantise_layer(np.array([[7.0, -8.0, -9.5]]), scale=1.0)
    assert q.tolist() == [[7, -8, -8]]
    assert scale == 1.0


def test_quantised_weights_stay_within_half_scale():
    rng = np.random.default_rng(17)
    for _ in range(20):
        w = rng.normal(size=(16, 16))
        q, scale, err = quantise_layer(w)
        assert err <= scale / 2 + 1e-12
        assert np.all(np.abs(w - scale * q) <= scale / 2 + 1e-12)


def test_quantise_model_reports_and_validates():
    rng = np.random.default_rng(19)
    dims = (40, 16, 16, 16, 16, 4)
    float_layers = [(rng.normal(size=(dims[i + 1], dims[i])),
                     rng.normal(size=dims[i + 1]))
                    for i in range(5)]
    model, report = quantise_model(float_layers)
    assert len(report) == 5
    for layer, entry in zip(model.layers, report):
        assert entry["max_weight_error"] <= entry["scale"] / 2 + 1e-12
        assert layer.weights.min() >= -8 and layer.weights.max() <= 7
    with pytest.raises(DimensionMismatch):
        quantise_model(float_layers[:4])


def test_model_validation_rejects_bad_shapes_and_ranges():
    rng = np.random.default_rng(23)
    model = _random_model(rng)
    model.layers[2].weights = model.layers[2].weights.astype(np.int16)
    model.layers[2].weights[0, 0] = 9
    with pytest.raises(ValidationError):
        model.validate()

    model = _random_model(rng)
    model.layers[3].weights = model.layers[3].weights[:, :5]
    with pytest.raises(DimensionMismatch):
        model.validate()


# ----------------------------------------------------------------- model IO

def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(29)
    model = _random_model(rng)
    model.meta["note"] = "round trip"
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.classes == model.classes
    assert loaded.meta == model.meta
    for a, b in zip(loaded.layers, model.layers):
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)
        assert a.scale == b.scale
    feats = rng.integers(0, 256, size=40).astype(np.uint8)
    assert list(mlp_infer(loaded, feats)) == list(mlp_infer(model, feats))


def test_model_load_rejects_bad_documents():
    with pytest.raises(ValidationError):
        load_model('{"kind": "other", "format_version": 1}')
    with pytest.raises(ValidationError):
        load_model('{"kind": "quant-mlp-int4", "format_version": 99}')


# ------------------------------------------------------------------ training

def _toy_set(rng, n=400):
    """Linearly separable two classes: byte 0 high vs low."""
    x = rng.integers(0, 40, size=(n, 40))
    y = rng.integers(0, 2, size=n)
    x[:, 0] = np.where(y == 1, rng.integers(200, 256, size=n),
                       rng.integers(0, 40, size=n))
    return x.astype(np.uint8), y


def test_training_fits_separable_toy_set():
    rng = np.random.default_rng(31)
    x, y = _toy_set(rng)
    layers = train_reference(x, y, epochs=12, seed=1, hidden=(8, 8, 8, 8))
    preds = [int(np.argmax(float_infer(layers, row))) for row in x]
    acc = float(np.mean(np.asarray(preds) == y))
    assert acc >= 0.99


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(37)
    x, y = _toy_set(rng, n=150)
    a = train_reference(x, y, epochs=3, seed=7, hidden=(8, 8, 8, 8))
    b = train_reference(x, y, epochs=3, seed=7, hidden=(8, 8, 8, 8))
    c = train_reference(x, y, epochs=3, seed=8, hidden=(8, 8, 8, 8))
    for (wa, ba), (wb, bb) in zip(a, b):
        assert np.array_equal(wa, wb) and np.array_equal(ba, bb)
    assert any(not np.array_equal(wa, wc) for (wa, _), (wc, _) in zip(a, c))


def test_training_needs_two_classes():
    rng = np.random.default_rng(41)
    x = rng.integers(0, 256, size=(50, 40)).astype(np.uint8)
    with pytest.raises(InsufficientData):
        train_reference(x, np.zeros(50, dtype=np.int64))


def test_trained_model_survives_quantisation():
    rng = np.random.default_rng(43)
    x, y = _toy_set(rng)
    layers = train_reference(x, y, epochs=30, seed=2, hidden=(8, 8, 8, 8))
    model, _report = quantise_model(layers)
    preds = [int(np.argmax(mlp_infer(model, row))) for row in x]
    acc = float(np.mean(np.asarray(preds) == y))
    assert acc >= 0.97
