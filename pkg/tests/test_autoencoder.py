import numpy as np
import pytest

from pathx.errors import InputFormatError
from pathx.ml.autoencoder import (
    AutoencoderParams,
    FeatureScaler,
    backprop,
    dataset_loss,
    decode,
    encode,
    encoder_input_gradient,
    init_params,
    load_autoencoder,
    loss_and_grads,
    reconstruct,
    save_autoencoder,
    train,
)
from pathx.ml.numeric import Rng, mae_loss, relu, sigmoid
from pathx.ml.vit import save_weights
from pathx.schemas.schemas import TrainConfig


def activation_pattern(x, params):
    """Signs of every ReLU pre-activation and of the reconstruction residual"""
    pattern = []
    h = np.atleast_2d(x)
    for weights, biases in ((params.encoder_weights, params.encoder_biases),
                            (params.decoder_weights, params.decoder_biases)):
        last = len(weights) - 1
        for i, (w, b) in enumerate(zip(weights, biases)):
            pre = h @ w + b
            if i == last:
                h = sigmoid(pre)
            else:
                pattern.append(pre > 0)
                h = relu(pre)
    pattern.append(np.sign(np.atleast_2d(x) - h))
    return np.concatenate([p.ravel() for p in pattern])


def test_zero_network_outputs_half():
    params = AutoencoderParams.zeros([6, 4, 2])
    np.testing.assert_array_equal(encode(np.ones(6), params), [0.5, 0.5])
    np.testing.assert_array_equal(decode(np.zeros(2), params), np.full(6, 0.5))


def test_default_sizes():
    params = AutoencoderParams.zeros([1024, 512, 256, 128])
    assert encode(np.zeros(1024), params).shape == (128,)
    assert decode(np.zeros(128), params).shape == (1024,)


def test_toy_forward_matches_hand_arithmetic():
    params = init_params([4, 3, 2], Rng(5))
    x = np.array([0.1, 0.7, 0.3, 0.9])
    hidden = np.maximum(x @ params.encoder_weights[0] + params.encoder_biases[0], 0.0)
    z = 1.0 / (1.0 + np.exp(-(hidden @ params.encoder_weights[1] + params.encoder_biases[1])))
    np.testing.assert_allclose(encode(x, params), z, atol=1e-15)

    hidden = np.maximum(z @ params.decoder_weights[0] + params.decoder_biases[0], 0.0)
    x_hat = 1.0 / (1.0 + np.exp(-(hidden @ params.decoder_weights[1] + params.decoder_biases[1])))
    np.testing.assert_allclose(decode(z, params), x_hat, atol=1e-15)


def test_dimension_mismatch():
    params = AutoencoderParams.zeros([4, 2])
    with pytest.raises(ValueError):
        encode(np.zeros(5), params)
    with pytest.raises(ValueError):
        decode(np.zeros(3), params)


def test_gradients_match_finite_differences():
    generator = np.random.default_rng(2024)
    h = 1e-5
    checked = 0
    for config_index in range(20):
        depth = int(generator.integers(1, 3))
        sizes = [int(generator.integers(3, 7))]
        for _ in range(depth):
            sizes.append(int(generator.integers(2, sizes[-1] + 1)))
        params = init_params(sizes, Rng(config_index))
        for tensor in params.encoder_biases + params.decoder_biases:
            tensor[...] = generator.normal(0.0, 0.1, size=tensor.shape)
        x = generator.uniform(0.05, 0.95, size=(int(generator.integers(1, 4)), sizes[0]))

        _, grads = loss_and_grads(x, params)
        analytic = grads.to_vector()
        vector = params.to_vector()
        base_pattern = activation_pattern(x, params)

        worst = 0.0
        for i in range(vector.size):
            plus, minus = vector.copy(), vector.copy()
            plus[i] += h
            minus[i] -= h
            params_plus = AutoencoderParams.from_vector(plus, sizes)
            params_minus = AutoencoderParams.from_vector(minus, sizes)
            if not (np.array_equal(activation_pattern(x, params_plus), base_pattern)
                    and np.array_equal(activation_pattern(x, params_minus), base_pattern)):
                continue
            numeric = (dataset_loss(x, params_plus) - dataset_loss(x, params_minus)) / (2 * h)
            scale = max(abs(analytic[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic[i] - numeric) / scale)
            checked += 1
        assert worst < 1e-4, f"configuration {config_index} ({sizes}) relative error {worst}"
    assert checked > 200


def test_gradients_vanish_at_perfect_reconstruction():
    params = AutoencoderParams.zeros([5, 3, 2])
    grads = backprop(np.full(5, 0.5), params)
    np.testing.assert_array_equal(grads.to_vector(), np.zeros(params.to_vector().size))


def test_duplicated_batch_gives_the_same_mean_gradient():
    params = init_params([4, 3, 2], Rng(8))
    x = np.array([[0.2, 0.4, 0.6, 0.8]])
    single = loss_and_grads(x, params)[1].to_vector()
    doubled = loss_and_grads(np.vstack([x, x]), params)[1].to_vector()
    np.testing.assert_allclose(doubled, single, atol=1e-15)


def test_encoder_input_gradient_matches_finite_differences():
    params = init_params([6, 4, 3], Rng(12))
    x = np.array([0.15, 0.8, 0.42, 0.63, 0.27, 0.91])
    cotangent = np.array([1.0, -0.5, 2.0])
    grad = encoder_input_gradient(x, params, cotangent)
    h = 1e-6
    for i in range(x.size):
        plus, minus = x.copy(), x.copy()
        plus[i] += h
        minus[i] -= h
        numeric = (encode(plus, params) @ cotangent - encode(minus, params) @ cotangent) / (2 * h)
        assert grad[i] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_reconstruction_stays_in_unit_interval():
    params = init_params([8, 6, 4], Rng(1))
    x_hat = reconstruct(np.random.default_rng(1).uniform(size=(10, 8)), params)
    assert np.all((x_hat > 0) & (x_hat < 1))


def test_initial_activations_are_not_saturated():
    sizes = [1024, 512, 256, 128]
    params = init_params(sizes, Rng(0))
    h = np.random.default_rng(0).uniform(size=(16, 1024))
    for i, (w, b) in enumerate(zip(params.encoder_weights, params.encoder_biases)):
        pre = h @ w + b
        assert np.mean(np.abs(pre)) < 3.0
        h = sigmoid(pre) if i == len(sizes) - 2 else relu(pre)


def test_zero_learning_rate_keeps_params():
    data = np.random.default_rng(3).uniform(size=(12, 6))
    config = TrainConfig(epochs=5, batch_size=4, learning_rate=0.0)
    initial = init_params([6, 4, 2], Rng(9).child(0))
    params, trace = train(data, config, [6, 4, 2], Rng(9))
    assert params.to_vector().tobytes() == initial.to_vector().tobytes()
    assert len(trace) == 6
    assert all(value == trace[0] for value in trace)


def test_identical_vectors_are_learned():
    target = np.linspace(0.2, 0.8, 8)
    data = np.tile(target, (32, 1))
    config = TrainConfig(epochs=300, batch_size=8, learning_rate=0.01)
    _, trace = train(data, config, [8, 6, 4], Rng(1))
    assert trace[-1] <= 0.5 * trace[0]


def test_training_is_deterministic():
    data = np.random.default_rng(4).uniform(size=(20, 6))
    config = TrainConfig(epochs=10, batch_size=6, learning_rate=0.01)
    first, trace_a = train(data, config, [6, 4, 2], Rng(77))
    second, trace_b = train(data, config, [6, 4, 2], Rng(77))
    assert first.to_vector().tobytes() == second.to_vector().tobytes()
    assert trace_a == trace_b


def test_default_layer_sizes():
    data = np.random.default_rng(6).uniform(size=(3, 1024))
    params, trace = train(data, TrainConfig(epochs=1, batch_size=3), rng=Rng(2))
    assert params.layer_sizes == [1024, 512, 256, 128]
    assert len(trace) == 2
    with pytest.raises(ValueError, match="expects 1024"):
        train(data[:, :10], TrainConfig(epochs=1))


def test_empty_dataset():
    with pytest.raises(ValueError, match="empty dataset"):
        train(np.zeros((0, 4)), TrainConfig(), [4, 2])


def test_scaler_clips_to_fitted_range():
    scaler = FeatureScaler().fit(np.array([[0.0, 10.0], [2.0, 20.0]]))
    np.testing.assert_allclose(scaler.transform(np.array([[1.0, 15.0], [3.0, 0.0]])), [[0.5, 0.5], [1.0, 0.0]])


def test_save_and_load(tmp_path):
    params = init_params([6, 4, 2], Rng(2))
    features = np.random.default_rng(2).normal(size=(10, 6))
    scaler = FeatureScaler().fit(features)
    path = str(tmp_path / "model.aenc")
    save_autoencoder(path, params, scaler, TrainConfig())

    loaded, loaded_scaler = load_autoencoder(path)
    assert loaded.layer_sizes == [6, 4, 2]
    assert loaded.to_vector().tobytes() == params.to_vector().tobytes()
    np.testing.assert_array_equal(loaded_scaler.transform(features), scaler.transform(features))
    assert mae_loss(encode(scaler.transform(features), params), encode(loaded_scaler.transform(features), loaded)) == 0.0


def test_load_rejects_vit_weights(tmp_path, toy_vit_weights):
    path = str(tmp_path / "toy.vitw")
    save_weights(path, toy_vit_weights)
    with pytest.raises(InputFormatError):
        load_autoencoder(path)
