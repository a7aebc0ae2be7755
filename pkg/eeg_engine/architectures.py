"""Deep ConvNet, shallow ConvNet and linear baseline built on :mod:`eeg_engine.numcore`."""

from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from eeg_engine import numcore as nc
from eeg_engine.errors import ConfigError, DimensionError
from eeg_engine.models import ArchitectureConfig
from utils import flatconfig
from utils.logger import get_logger

logger = get_logger(__name__)

ArrayLike = Union[np.ndarray, nc.Tensor]


# Layers


class Layer:
    """One stage of a network. ``kernel_t``/``stride_t`` describe its footprint along time."""

    kind = "layer"
    kernel_t = 1
    stride_t = 1

    def parameters(self) -> List[nc.Parameter]:
        return []

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class TemporalConv(Layer):
    kind = "conv_temporal"

    def __init__(self, n_in: int, n_out: int, length: int, stride: int, rng: np.random.Generator, name: str):
        fan_in = n_in * length
        self.weight = nc.Parameter(nc.uniform_init(rng, (n_out, n_in, 1, length), fan_in), name=f"{name}.weight")
        self.bias = nc.Parameter(nc.uniform_init(rng, (n_out,), fan_in), name=f"{name}.bias")
        self.n_in, self.n_out = n_in, n_out
        self.kernel_t = length
        self.stride_t = stride

    def parameters(self) -> List[nc.Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        return nc.conv_temporal(x, self.weight, self.bias, stride_t=self.stride_t)

    def describe(self) -> str:
        return f"{self.kind}({self.n_in}->{self.n_out}, k={self.kernel_t}, stride={self.stride_t})"


class SpatialConv(Layer):
    kind = "conv_spatial"

    def __init__(self, n_in: int, n_out: int, n_electrodes: int, stride: int, rng: np.random.Generator, name: str):
        fan_in = n_in * n_electrodes
        self.weight = nc.Parameter(nc.uniform_init(rng, (n_out, n_in, n_electrodes, 1), fan_in), name=f"{name}.weight")
        self.bias = nc.Parameter(nc.uniform_init(rng, (n_out,), fan_in), name=f"{name}.bias")
        self.n_in, self.n_out = n_in, n_out
        self.stride_t = stride

    def parameters(self) -> List[nc.Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        return nc.conv_spatial(x, self.weight, self.bias, stride_t=self.stride_t)

    def describe(self) -> str:
        return f"{self.kind}({self.n_in}->{self.n_out}, stride={self.stride_t})"


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, n_channels: int, name: str):
        self.gamma = nc.Parameter(np.ones(n_channels), name=f"{name}.gamma")
        self.beta = nc.Parameter(np.zeros(n_channels), name=f"{name}.beta")
        self.stats = nc.RunningStats(n_channels)

    def parameters(self) -> List[nc.Parameter]:
        return [self.gamma, self.beta]

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        return nc.batch_norm(x, self.gamma, self.beta, self.stats, training)


class Activation(Layer):
    """Elementwise nonlinearity: ``elu``, ``square`` or ``safe_log``."""

    _FUNCTIONS = {"elu": nc.elu, "square": nc.square, "safe_log": nc.safe_log}

    def __init__(self, function: str):
        if function not in self._FUNCTIONS:
            raise ConfigError(f"Unknown activation: {function}")
        self.kind = function

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        return self._FUNCTIONS[self.kind](x)


class Pool(Layer):
    """Max or mean pooling along time.

    ``selector`` remembers the block nonlinearity that produced the pool so that
    ``max_pool_only`` blocks survive config extraction.
    """

    def __init__(self, mode: str, length: int, stride: int, selector: str):
        self.mode = mode
        self.kind = f"{mode}_pool"
        self.kernel_t = length
        self.stride_t = stride
        self.selector = selector

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        pool = nc.max_pool_t if self.mode == "max" else nc.mean_pool_t
        return pool(x, self.kernel_t, self.stride_t)

    def describe(self) -> str:
        return f"{self.kind}({self.kernel_t}, stride={self.stride_t})"


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = rng

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        return nc.dropout(x, self.p, self.rng, training)

    def describe(self) -> str:
        return f"dropout(p={self.p:g})"


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        return nc.flatten(x)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        self.weight = nc.Parameter(nc.uniform_init(rng, (n_out, n_in), n_in), name=f"{name}.weight")
        self.bias = nc.Parameter(nc.uniform_init(rng, (n_out,), n_in), name=f"{name}.bias")

    def parameters(self) -> List[nc.Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        return nc.dense(x, self.weight, self.bias)

    def describe(self) -> str:
        n_out, n_in = self.weight.shape
        return f"dense({n_in}->{n_out})"


class LogSoftmax(Layer):
    kind = "log_softmax"

    def forward(self, x: nc.Tensor, training: bool) -> nc.Tensor:
        return nc.log_softmax(x)


# Network


class Network:
    """Ordered layer list mapping ``[batch, 1, electrodes, time]`` crops to class log-probabilities."""

    def __init__(self, config: ArchitectureConfig, layers: List[Layer], receptive_field: Optional[int] = None):
        self.config = config
        self.layers = layers
        self.receptive_field = receptive_field or _receptive_field(layers)
        self.temporal_output_stride = int(np.prod([layer.stride_t for layer in layers]))
        self.tape = nc.ComputationTape()

    # Introspection

    def parameters(self) -> List[nc.Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    @property
    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def describe(self) -> List[str]:
        return [layer.describe() for layer in self.layers]

    def extract_config(self) -> ArchitectureConfig:
        """Rebuild the architecture configuration from the layer list."""
        return _extract_config(self)

    # Evaluation

    def _prepare(self, x: ArrayLike, exact_length: bool = True) -> nc.Tensor:
        tensor = x if isinstance(x, nc.Tensor) else nc.Tensor(x)
        if tensor.ndim == 3:
            tensor = nc.Tensor(tensor.data[:, None], requires_grad=tensor.requires_grad)
        if tensor.ndim != 4 or tensor.shape[1] != 1 or tensor.shape[2] != self.config.n_electrodes:
            raise DimensionError(
                f"Network expects [batch, 1, {self.config.n_electrodes}, time], got {tensor.shape}"
            )
        n_time = tensor.shape[3]
        if exact_length and n_time != self.receptive_field:
            raise DimensionError(f"Input has {n_time} samples, network takes {self.receptive_field}")
        if n_time < self.receptive_field:
            raise DimensionError(f"Input has {n_time} samples, shorter than receptive field {self.receptive_field}")
        return tensor

    def _run(self, x: nc.Tensor, layers: Sequence[Layer], training: bool) -> nc.Tensor:
        for layer in layers:
            x = layer.forward(x, training)
        return x

    def forward(self, x: ArrayLike, training: bool = False) -> nc.Tensor:
        """Class log-probabilities ``[batch, n_classes]``.

        Ops record on whatever tape is active; :meth:`loss` activates the network's own tape.
        """
        return self._run(self._prepare(x), self.layers, training)

    def predict_log_probs(self, x: ArrayLike) -> np.ndarray:
        with nc.no_grad():
            return self.forward(x, training=False).data

    def logits(self, x: ArrayLike) -> np.ndarray:
        """Pre-softmax outputs ``[batch, n_classes]`` in evaluation mode."""
        with nc.no_grad():
            return self._run(self._prepare(x), self.layers[:-1], training=False).data

    def dense_logits(self, x: ArrayLike) -> np.ndarray:
        """Logits ``[batch, n_classes, positions]`` for inputs at least one receptive field long.

        Position ``j`` sees input samples ``[j * temporal_output_stride, ... + receptive_field)``.
        """
        trunk = [layer for layer in self.layers if not isinstance(layer, (Flatten, LogSoftmax, Dense))]
        if len(trunk) != len(self.layers) - 2:
            return self._dense_logits_linear(x)
        with nc.no_grad():
            out = self._run(self._prepare(x, exact_length=False), trunk, training=False).data
        return out[:, :, 0, :]

    def _dense_logits_linear(self, x: ArrayLike) -> np.ndarray:
        tensor = self._prepare(x, exact_length=False)
        windows = np.lib.stride_tricks.sliding_window_view(tensor.data, self.receptive_field, axis=3)
        positions = windows.shape[3]
        per_position = [self.logits(np.ascontiguousarray(windows[:, :, :, j, :])) for j in range(positions)]
        return np.stack(per_position, axis=2)

    def trace(self, x: ArrayLike) -> List[Tuple[str, np.ndarray]]:
        """Evaluation-mode output of every layer, for inspecting intermediate stages."""
        outputs = []
        with nc.no_grad():
            h = self._prepare(x)
            for layer in self.layers:
                h = layer.forward(h, training=False)
                outputs.append((layer.kind, h.data))
        return outputs

    # Training

    def loss(self, x: ArrayLike, labels: Sequence[int]) -> nc.Tensor:
        """Training-mode mean NLL recorded on the network's tape."""
        with self.tape:
            log_probs = self.forward(x, training=True)
            return nc.nll_loss(log_probs, labels)

    def backward(self, loss: nc.Tensor) -> None:
        nc.backward(loss, self.parameters())

    def train_step(
        self,
        x: ArrayLike,
        labels: Sequence[int],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> float:
        loss = self.loss(x, labels)
        value = loss.item()
        self.backward(loss)
        nc.adam_step(self.parameters(), lr=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
        return value

    # Persistence helpers

    def batch_norms(self) -> List[BatchNorm]:
        return [layer for layer in self.layers if isinstance(layer, BatchNorm)]


def _receptive_field(layers: Sequence[Layer]) -> int:
    rf = 1
    for layer in reversed(layers):
        rf = (rf - 1) * layer.stride_t + layer.kernel_t
    return rf


# Builders


def _conv_layers(config: ArchitectureConfig, rng: np.random.Generator) -> List[Layer]:
    """Layer grammar shared by all convolutional architectures."""
    layers: List[Layer] = []
    n_in = 1
    for i in range(config.n_blocks):
        n_out = config.n_filters[i]
        selector = config.nonlinearities[i]
        if i > 0 and config.dropout > 0:
            layers.append(Dropout(config.dropout, rng))
        if i == 0:
            layers.append(TemporalConv(1, n_out, config.filter_lengths[0], 1, rng, name="block0.temporal"))
            layers.append(SpatialConv(n_out, n_out, config.n_electrodes, config.conv_strides[0], rng, name="block0.spatial"))
        else:
            layers.append(TemporalConv(n_in, n_out, config.filter_lengths[i], config.conv_strides[i], rng, name=f"block{i}.conv"))
        if config.batch_norm:
            layers.append(BatchNorm(n_out, name=f"block{i}.bn"))
        if selector == "elu":
            layers.append(Activation("elu"))
        elif selector == "square_log":
            layers.append(Activation("square"))
        mode = "max" if selector == "max_pool_only" else config.pool_modes[i]
        layers.append(Pool(mode, config.pool_lengths[i], config.pool_strides[i], selector))
        if selector == "square_log":
            layers.append(Activation("safe_log"))
        n_in = n_out

    if config.dropout > 0:
        layers.append(Dropout(config.dropout, rng))
    layers.append(TemporalConv(n_in, config.n_classes, config.final_filter_len, 1, rng, name="classifier"))
    layers.append(Flatten())
    layers.append(LogSoftmax())
    return layers


def _finish(config: ArchitectureConfig, layers: List[Layer]) -> Network:
    network = Network(config, layers)
    if network.receptive_field != config.input_len_samples:
        raise ConfigError(
            f"{config.kind} network has receptive field {network.receptive_field} samples "
            f"but input_len_samples is {config.input_len_samples}"
        )
    logger.debug(
        f"Built {config.kind} network: {network.n_parameters} parameters, "
        f"receptive field {network.receptive_field}, output stride {network.temporal_output_stride}"
    )
    return network


def _require_kind(config: ArchitectureConfig, *kinds: str) -> None:
    if config.kind not in kinds:
        raise ConfigError(f"Expected an architecture of kind {'/'.join(kinds)}, got {config.kind}")


def build_deep(config: ArchitectureConfig, seed: int = 0) -> Network:
    _require_kind(config, "deep")
    return _finish(config, _conv_layers(config, np.random.default_rng(seed)))


def build_shallow(config: ArchitectureConfig, seed: int = 0) -> Network:
    _require_kind(config, "shallow")
    return _finish(config, _conv_layers(config, np.random.default_rng(seed)))


def build_linear(config: ArchitectureConfig, seed: int = 0) -> Network:
    _require_kind(config, "linear")
    rng = np.random.default_rng(seed)
    n_features = config.n_electrodes * config.input_len_samples
    layers: List[Layer] = [Flatten(), Dense(n_features, config.n_classes, rng, name="linear"), LogSoftmax()]
    return Network(config, layers, receptive_field=config.input_len_samples)


def build_from_hpo(config: ArchitectureConfig, seed: int = 0) -> Network:
    """Any convolutional configuration, honoring per-block nonlinearity overrides."""
    _require_kind(config, "deep", "shallow")
    return _finish(config, _conv_layers(config, np.random.default_rng(seed)))


def build_network(config: ArchitectureConfig, seed: int = 0) -> Network:
    if config.kind == "linear":
        return build_linear(config, seed)
    return build_from_hpo(config, seed)


def receptive_field(config: ArchitectureConfig) -> int:
    """Receptive field the layer grammar derives from ``config``, without allocating weights."""
    if config.kind == "linear":
        return config.input_len_samples
    rf = config.final_filter_len
    for i in reversed(range(config.n_blocks)):
        rf = (rf - 1) * config.pool_strides[i] + config.pool_lengths[i]
        if i == 0:
            rf = (rf - 1) * config.conv_strides[0] + 1
            rf = rf - 1 + config.filter_lengths[0]
        else:
            rf = (rf - 1) * config.conv_strides[i] + config.filter_lengths[i]
    return rf


def _extract_config(network: Network) -> ArchitectureConfig:
    base = network.config
    if base.kind == "linear":
        return ArchitectureConfig(
            kind="linear",
            input_len_samples=network.receptive_field,
            n_electrodes=base.n_electrodes,
            n_classes=base.n_classes,
            batch_norm=False,
        )

    blocks: List[Dict] = []
    dropout = 0.0
    batch_norm = False
    convs = [layer for layer in network.layers if isinstance(layer, TemporalConv)]
    classifier = convs[-1]
    for layer in network.layers:
        if isinstance(layer, TemporalConv) and layer is not classifier:
            blocks.append({"n_filters": layer.n_out, "filter_length": layer.kernel_t, "stride": layer.stride_t})
        elif isinstance(layer, SpatialConv):
            blocks[-1]["stride"] = layer.stride_t
        elif isinstance(layer, BatchNorm):
            batch_norm = True
        elif isinstance(layer, Pool):
            blocks[-1].update(pool_length=layer.kernel_t, pool_stride=layer.stride_t, pool_mode=layer.mode, selector=layer.selector)
        elif isinstance(layer, Dropout):
            dropout = layer.p

    return ArchitectureConfig(
        kind=base.kind,
        input_len_samples=network.receptive_field,
        n_electrodes=network.layers[1].weight.shape[2],
        n_classes=classifier.n_out,
        n_filters=[b["n_filters"] for b in blocks],
        filter_lengths=[b["filter_length"] for b in blocks],
        conv_strides=[b["stride"] for b in blocks],
        pool_lengths=[b["pool_length"] for b in blocks],
        pool_strides=[b["pool_stride"] for b in blocks],
        pool_modes=[b["pool_mode"] for b in blocks],
        nonlinearities=[b["selector"] for b in blocks],
        batch_norm=batch_norm,
        dropout=dropout,
        final_filter_len=classifier.kernel_t,
    )


# Persistence


def save_network(network: Network, path: str) -> str:
    """Architecture text, parameters and batch-norm statistics in one ``.npz`` archive."""
    arrays: Dict[str, np.ndarray] = {
        "architecture": np.array(flatconfig.dumps(network.config.to_flat())),
    }
    for i, param in enumerate(network.parameters()):
        arrays[f"param_{i:03d}"] = param.data
    for i, bn in enumerate(network.batch_norms()):
        arrays[f"bn_{i:03d}_mean"] = bn.stats.mean
        arrays[f"bn_{i:03d}_var"] = bn.stats.var
        arrays[f"bn_{i:03d}_initialized"] = np.array(bn.stats.initialized)
    if not path.endswith(".npz"):
        path = f"{path}.npz"
    np.savez(path, **arrays)
    logger.info(f"Saved {network.config.kind} network ({network.n_parameters} parameters) to {path}")
    return path


def load_network(path: str) -> Network:
    with np.load(path, allow_pickle=False) as archive:
        config = ArchitectureConfig.from_flat(flatconfig.loads(str(archive["architecture"])))
        network = build_network(config)
        for i, param in enumerate(network.parameters()):
            stored = archive[f"param_{i:03d}"]
            if stored.shape != param.shape:
                raise ConfigError(f"{path}: parameter {param.name} has shape {stored.shape}, expected {param.shape}")
            param.data = stored.astype(nc.DTYPE)
        for i, bn in enumerate(network.batch_norms()):
            bn.stats.mean = archive[f"bn_{i:03d}_mean"].astype(nc.DTYPE)
            bn.stats.var = archive[f"bn_{i:03d}_var"].astype(nc.DTYPE)
            bn.stats.initialized = bool(archive[f"bn_{i:03d}_initialized"])
    return network


def count_parameters(config: ArchitectureConfig) -> int:
    """Closed-form parameter count of the network ``config`` builds."""
    if config.kind == "linear":
        return config.n_electrodes * config.input_len_samples * config.n_classes + config.n_classes
    total = 0
    n_in = 1
    for i in range(config.n_blocks):
        n_out = config.n_filters[i]
        if i == 0:
            total += n_out * config.filter_lengths[0] + n_out
            total += n_out * n_out * config.n_electrodes + n_out
        else:
            total += n_out * n_in * config.filter_lengths[i] + n_out
        if config.batch_norm:
            total += 2 * n_out
        n_in = n_out
    total += config.n_classes * n_in * config.final_filter_len + config.n_classes
    return total

