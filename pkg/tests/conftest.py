import numpy as np
import pytest

from eeg_engine import numcore as nc
from eeg_engine.architectures import build_network, receptive_field
from eeg_engine.models import ArchitectureConfig, SignatureConfig, TrainConfig
from eeg_engine.synthetic import synth_dataset

SMALL_MONTAGE = ["T3", "C3", "T4", "O1"]


def with_input_length(config: ArchitectureConfig) -> ArchitectureConfig:
    return config.model_copy(update={"input_len_samples": receptive_field(config)})


def tiny_deep_config(n_electrodes: int = 4, dropout: float = 0.0) -> ArchitectureConfig:
    """Two blocks, receptive field 19, temporal output stride 4."""
    config = ArchitectureConfig(
        kind="deep",
        input_len_samples=1,
        n_electrodes=n_electrodes,
        n_filters=[4, 6],
        filter_lengths=[5, 5],
        conv_strides=[2, 2],
        pool_lengths=[2, 2],
        pool_strides=[1, 1],
        pool_modes=["max", "max"],
        nonlinearities=["elu", "elu"],
        dropout=dropout,
        final_filter_len=1,
    )
    return with_input_length(config)


def tiny_shallow_config(n_electrodes: int = 4) -> ArchitectureConfig:
    """Square, mean pool 3/2, log; receptive field 8."""
    config = ArchitectureConfig(
        kind="shallow",
        input_len_samples=1,
        n_electrodes=n_electrodes,
        n_filters=[3],
        filter_lengths=[4],
        conv_strides=[1],
        pool_lengths=[3],
        pool_strides=[2],
        pool_modes=["mean"],
        nonlinearities=["square_log"],
        final_filter_len=2,
    )
    return with_input_length(config)


def warm_up(network, n_crops: int = 8, seed: int = 0) -> None:
    """One training-mode forward so batch-norm layers hold running statistics."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_crops, 1, network.config.n_electrodes, network.receptive_field))
    with nc.no_grad():
        network.forward(x, training=True)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_gradient(loss_value, array: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``loss_value()`` with respect to ``array``, edited in place."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + h
        plus = loss_value()
        array[idx] = original - h
        minus = loss_value()
        array[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def deep_config():
    return tiny_deep_config()


@pytest.fixture
def shallow_config():
    return tiny_shallow_config()


@pytest.fixture
def tiny_deep(deep_config):
    network = build_network(deep_config, seed=3)
    warm_up(network)
    return network


@pytest.fixture(scope="session")
def small_recordings():
    """Eight 30 s recordings on four electrodes, classes alternating, strong signature."""
    signature = SignatureConfig(delta_gain=3.0, theta_gain=3.0)
    return synth_dataset(4, 30.0, seed=11, signature=signature, electrodes=SMALL_MONTAGE)


@pytest.fixture
def quick_train_config():
    return TrainConfig(seed=5, epochs=2, batch_size=32, crop_stride=60)
