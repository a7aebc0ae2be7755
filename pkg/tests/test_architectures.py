import numpy as np
import pytest

from conftest import tiny_deep_config, tiny_shallow_config, warm_up, with_input_length
from eeg_engine import numcore as nc
from eeg_engine.architectures import (
    build_deep,
    build_network,
    build_shallow,
    count_parameters,
    load_network,
    receptive_field,
    save_network,
)
from eeg_engine.errors import ConfigError, DimensionError, UninitializedStatisticsError
from eeg_engine.models import ArchitectureConfig


class TestDefaults:
    def test_deep(self):
        config = ArchitectureConfig.default_deep()
        assert receptive_field(config) == 601
        network = build_deep(config)
        assert network.receptive_field == 601
        assert network.n_parameters == 277427
        assert count_parameters(config) == 277427
        assert network.temporal_output_stride == 81

    def test_shallow(self):
        config = ArchitectureConfig.default_shallow()
        assert receptive_field(config) == 594
        network = build_shallow(config)
        assert network.n_parameters == count_parameters(config)
        kinds = [layer.kind for layer in network.layers]
        assert kinds.count("square") == 1
        assert kinds.count("safe_log") == 1
        assert kinds.index("square") < kinds.index("mean_pool") < kinds.index("safe_log")

    def test_linear(self):
        network = build_network(ArchitectureConfig.default_linear())
        assert network.receptive_field == 600
        assert network.n_parameters == 25202

    def test_same_seed_same_weights(self):
        a = build_network(tiny_deep_config(), seed=9)
        b = build_network(tiny_deep_config(), seed=9)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)


class TestValidation:
    def test_input_length_mismatch(self):
        config = tiny_deep_config().model_copy(update={"input_len_samples": 20})
        with pytest.raises(ConfigError, match="receptive field 19"):
            build_network(config)

    def test_ragged_block_lists(self):
        with pytest.raises(ConfigError):
            ArchitectureConfig(kind="deep", input_len_samples=10, n_filters=[4, 4], filter_lengths=[3])

    def test_wrong_builder(self):
        with pytest.raises(ConfigError):
            build_shallow(tiny_deep_config())

    def test_wrong_electrode_count(self, tiny_deep, rng):
        with pytest.raises(DimensionError):
            tiny_deep.predict_log_probs(rng.standard_normal((2, 1, 5, 19)))

    def test_wrong_length(self, tiny_deep, rng):
        with pytest.raises(DimensionError):
            tiny_deep.predict_log_probs(rng.standard_normal((2, 1, 4, 20)))

    def test_eval_before_training_batch(self, deep_config, rng):
        network = build_network(deep_config)
        with pytest.raises(UninitializedStatisticsError):
            network.predict_log_probs(rng.standard_normal((2, 1, 4, 19)))


class TestForward:
    def test_log_probs_normalized(self, tiny_deep, rng):
        log_probs = tiny_deep.predict_log_probs(rng.standard_normal((6, 1, 4, 19)))
        assert log_probs.shape == (6, 2)
        np.testing.assert_allclose(np.exp(log_probs).sum(axis=1), 1.0, atol=1e-12)

    def test_three_dimensional_input(self, tiny_deep, rng):
        x = rng.standard_normal((3, 4, 19))
        np.testing.assert_array_equal(tiny_deep.predict_log_probs(x), tiny_deep.predict_log_probs(x[:, None]))

    def test_trace_covers_every_stage(self, rng):
        network = build_network(tiny_shallow_config(), seed=1)
        warm_up(network)
        stages = network.trace(rng.standard_normal((2, 1, 4, 8)))
        assert [kind for kind, _ in stages] == [
            "conv_temporal", "conv_spatial", "batch_norm", "square",
            "mean_pool", "safe_log", "conv_temporal", "flatten", "log_softmax",
        ]
        squared = dict(stages)["square"]
        assert np.all(squared >= 0)
        assert stages[-1][1].shape == (2, 2)

    def test_dense_logits_match_crop_logits(self, tiny_deep, rng):
        x = rng.standard_normal((2, 1, 4, 31))
        dense = tiny_deep.dense_logits(x)
        assert dense.shape == (2, 2, 4)
        for j in range(4):
            start = j * tiny_deep.temporal_output_stride
            crop = tiny_deep.logits(x[..., start:start + 19])
            np.testing.assert_allclose(dense[:, :, j], crop, rtol=1e-10, atol=1e-10)

    def test_linear_dense_logits(self, rng):
        config = ArchitectureConfig(kind="linear", input_len_samples=6, n_electrodes=4, batch_norm=False)
        network = build_network(config, seed=2)
        x = rng.standard_normal((1, 1, 4, 9))
        dense = network.dense_logits(x)
        assert dense.shape == (1, 2, 4)
        np.testing.assert_allclose(dense[:, :, 3], network.logits(x[..., 3:9]))

    def test_training_step_changes_parameters(self, tiny_deep, rng):
        before = [p.data.copy() for p in tiny_deep.parameters()]
        loss = tiny_deep.train_step(rng.standard_normal((8, 1, 4, 19)), [0, 1] * 4, learning_rate=1e-2)
        assert np.isfinite(loss)
        assert any(not np.array_equal(b, p.data) for b, p in zip(before, tiny_deep.parameters()))


class TestConfigExtraction:
    def test_deep_round_trip(self, tiny_deep, deep_config):
        assert tiny_deep.extract_config() == deep_config

    def test_shallow_round_trip(self):
        config = tiny_shallow_config()
        assert build_network(config).extract_config() == config

    def test_max_pool_only_survives(self):
        config = with_input_length(
            tiny_deep_config(dropout=0.2).model_copy(update={"nonlinearities": ["max_pool_only", "elu"]})
        )
        network = build_network(config)
        kinds = [layer.kind for layer in network.layers]
        assert kinds.count("elu") == 1
        assert network.extract_config() == config

    def test_defaults_round_trip(self):
        for kind in ("deep", "shallow", "linear"):
            config = ArchitectureConfig.default_for(kind)
            assert build_network(config).extract_config() == config


class TestPersistence:
    def test_save_and_load(self, tiny_deep, tmp_path, rng):
        path = save_network(tiny_deep, str(tmp_path / "network"))
        assert path.endswith("network.npz")
        loaded = load_network(path)
        x = rng.standard_normal((5, 1, 4, 19))
        np.testing.assert_array_equal(loaded.predict_log_probs(x), tiny_deep.predict_log_probs(x))
        assert loaded.extract_config() == tiny_deep.extract_config()


def random_conv_config(rng: np.random.Generator) -> ArchitectureConfig:
    n_blocks = int(rng.integers(1, 4))
    config = ArchitectureConfig(
        kind="deep",
        input_len_samples=1,
        n_electrodes=3,
        n_filters=[int(rng.integers(1, 4)) for _ in range(n_blocks)],
        filter_lengths=[int(rng.integers(1, 6)) for _ in range(n_blocks)],
        conv_strides=[int(rng.integers(1, 4)) for _ in range(n_blocks)],
        pool_lengths=[int(rng.integers(1, 4)) for _ in range(n_blocks)],
        pool_strides=[int(rng.integers(1, 3)) for _ in range(n_blocks)],
        pool_modes=["mean"] * n_blocks,
        nonlinearities=["elu"] * n_blocks,
        batch_norm=False,
        final_filter_len=int(rng.integers(1, 4)),
    )
    return with_input_length(config)


class TestEmpiricalReceptiveField:
    @pytest.mark.parametrize("seed", range(20))
    def test_first_output_sees_exactly_the_receptive_field(self, seed):
        rng = np.random.default_rng(seed)
        config = random_conv_config(rng)
        network = build_network(config, seed=seed)
        rf = network.receptive_field
        x = rng.standard_normal((1, 1, 3, rf + 2 * network.temporal_output_stride + 1))
        base = network.dense_logits(x)[0, :, 0]

        def first_output_moves(sample: int) -> bool:
            bumped = x.copy()
            bumped[..., sample] += 1.0
            return not np.allclose(network.dense_logits(bumped)[0, :, 0], base, rtol=0, atol=1e-12)

        assert first_output_moves(0)
        assert first_output_moves(rf - 1)
        assert not first_output_moves(rf)
        assert not first_output_moves(x.shape[-1] - 1)

    @pytest.mark.parametrize("seed", range(20))
    def test_shorter_input_is_rejected(self, seed):
        network = build_network(random_conv_config(np.random.default_rng(100 + seed)))
        with pytest.raises(DimensionError):
            network.dense_logits(np.zeros((1, 1, 3, network.receptive_field - 1)))


def sampled_gradient_check(network, x, labels, rng, per_parameter: int = 3, h: float = 1e-6) -> None:
    """Tape gradients of the training loss against central differences at sampled entries.

    Biases followed by batch norm have a true gradient of zero, which the absolute tolerance covers.
    """
    loss = network.loss(x, labels)
    network.backward(loss)

    def loss_value() -> float:
        with nc.no_grad():
            return nc.nll_loss(network.forward(x, training=True), labels).item()

    for parameter in network.parameters():
        flat = parameter.data.reshape(-1)
        for index in rng.choice(flat.size, size=min(per_parameter, flat.size), replace=False):
            original = flat[index]
            flat[index] = original + h
            plus = loss_value()
            flat[index] = original - h
            minus = loss_value()
            flat[index] = original
            numeric = (plus - minus) / (2.0 * h)
            analytic = parameter.grad.reshape(-1)[index]
            assert abs(analytic - numeric) <= 1e-5 * abs(numeric) + 1e-8, (parameter.name, index)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["deep", "shallow"])
def test_default_architecture_gradients(kind):
    config = ArchitectureConfig.default_for(kind)
    network = build_network(config, seed=7)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 1, config.n_electrodes, network.receptive_field)) * 20.0
    sampled_gradient_check(network, x, [0, 1], rng)
