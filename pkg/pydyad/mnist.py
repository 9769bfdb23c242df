from __future__ import annotations

import gzip
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import log_softmax

from .exceptions import (
    CheckpointFormatError,
    CheckpointVersionError,
    DimensionMismatchError,
    EmptyDatasetError,
    IdxFormatError,
    PrecisionMismatchError,
    TrainingDivergedError,
)
from .layers import DenseLayer, DyadConfig, DyadLayer, Layer, LayersManager
from .tensor_core import Matrix, Tensor3, get_dtype

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
N_CLASSES = 10

CHECKPOINT_MAGIC = b"DYAD"
CHECKPOINT_VERSION = 1

METRICS_COLUMNS = ["epoch", "train_loss", "test_accuracy"]

MODEL_LAYERS = {"dense": "Dense", "dyad-it": "Dyad-IT"}

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

PathLike = Union[str, os.PathLike]


def _open(path: PathLike, mode: str = "rb"):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_bytes(path: PathLike) -> bytes:
    with _open(path, "rb") as stream:
        return stream.read()


def parse_idx_images(content: bytes) -> np.ndarray:
    """
    Images of an IDX file as an (count, rows, cols) uint8 array. The file holds a big-endian header
    (magic 0x00000803, count, rows, cols) followed by one byte per pixel.
    """
    if len(content) < 16:
        raise IdxFormatError(f"Truncated image file: {len(content)} bytes, the header alone needs 16")
    magic, count, rows, cols = struct.unpack(">IIII", content[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"Bad image file magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    expected = 16 + count * rows * cols
    if len(content) < expected:
        raise IdxFormatError(f"Truncated image file: {len(content)} bytes, expected {expected}")
    return np.frombuffer(content, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def parse_idx_labels(content: bytes) -> np.ndarray:
    if len(content) < 8:
        raise IdxFormatError(f"Truncated label file: {len(content)} bytes, the header alone needs 8")
    magic, count = struct.unpack(">II", content[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"Bad label file magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if len(content) < 8 + count:
        raise IdxFormatError(f"Truncated label file: {len(content)} bytes, expected {8 + count}")
    labels = np.frombuffer(content, dtype=np.uint8, count=count, offset=8)
    if count and labels.max() >= N_CLASSES:
        raise IdxFormatError(f"Label {int(labels.max())} is outside the classes 0..{N_CLASSES - 1}")
    return labels


def write_idx(images_path: PathLike, labels_path: PathLike, images: np.ndarray, labels: Sequence[int]) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be a (count, rows, cols) array")
    count, rows, cols = images.shape
    with _open(images_path, "wb") as stream:
        stream.write(struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols))
        stream.write(images.tobytes())
    with _open(labels_path, "wb") as stream:
        stream.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        stream.write(labels.tobytes())


class MnistDataset:
    """
    Images stored features-major, one column per example with pixels scaled to [0, 1], and their
    class labels.
    """

    def __init__(self, pixels: np.ndarray, labels: Sequence[int], split: str = "train", precision: str = "f32"):
        pixels = np.array(pixels, dtype=get_dtype(precision), copy=True)
        labels = np.array(labels, dtype=np.int64, copy=True)
        if pixels.ndim != 2:
            raise DimensionMismatchError("pixels must be a (n_pixels, count) array", axis="rows")
        if pixels.shape[1] != len(labels):
            raise DimensionMismatchError(
                f"{pixels.shape[1]} images against {len(labels)} labels", axis="cols"
            )
        if pixels.size and (pixels.min() < 0 or pixels.max() > 1):
            raise ValueError("Pixels must lie in [0, 1]")
        if len(labels) and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise ValueError(f"Labels must lie in 0..{N_CLASSES - 1}")
        pixels.flags.writeable = False
        labels.flags.writeable = False
        self.pixels: np.ndarray = pixels
        self.labels: np.ndarray = labels
        self.split: str = split
        self.precision: str = precision

    @classmethod
    def from_bytes(cls, images: np.ndarray, labels: np.ndarray, split: str = "train", precision: str = "f32"):
        if len(images) != len(labels):
            raise IdxFormatError(f"Count mismatch: {len(images)} images against {len(labels)} labels")
        count = images.shape[0]
        dtype = get_dtype(precision)
        pixels = images.reshape(count, images.shape[1] * images.shape[2]).T.astype(dtype) / dtype.type(255)
        return cls(pixels, labels, split, precision)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_pixels(self) -> int:
        return self.pixels.shape[0]

    @property
    def images(self) -> Matrix:
        if len(self) == 0:
            raise EmptyDatasetError(f"The {self.split} set holds no examples")
        return Matrix(self.pixels)

    def batch(self, indices: Sequence[int]) -> Tuple[Matrix, np.ndarray]:
        indices = np.asarray(indices)
        return Matrix(self.pixels[:, indices]), self.labels[indices]

    def subset(self, selection: Union[int, Sequence[int]]) -> MnistDataset:
        if isinstance(selection, (int, np.integer)):
            selection = np.arange(min(int(selection), len(self)))
        selection = np.asarray(selection, dtype=np.int64)
        return MnistDataset(self.pixels[:, selection], self.labels[selection], self.split, self.precision)

    def shuffled(self, seed: int = 0) -> MnistDataset:
        return self.subset(np.random.default_rng(seed).permutation(len(self)))

    def __repr__(self) -> str:
        return f"MnistDataset(split={self.split}, count={len(self)}, n_pixels={self.n_pixels})"


def load_idx(
    images_path: PathLike, labels_path: PathLike, split: str = "train", precision: str = "f32"
) -> MnistDataset:
    images = parse_idx_images(_read_bytes(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path))
    return MnistDataset.from_bytes(images, labels, split, precision)


def find_mnist_files(data_dir: PathLike, split: str) -> Tuple[str, str]:
    paths = []
    for name in MNIST_FILES[split]:
        candidates = [os.path.join(data_dir, name), os.path.join(data_dir, name + ".gz")]
        found = [c for c in candidates if os.path.exists(c)]
        if not found:
            raise FileNotFoundError(f"No {name}[.gz] in {data_dir}")
        paths.append(found[0])
    return paths[0], paths[1]


def load_mnist(data_dir: PathLike, split: str = "train", precision: str = "f32") -> MnistDataset:
    images_path, labels_path = find_mnist_files(data_dir, split)
    return load_idx(images_path, labels_path, split, precision)


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    test_accuracy: float


class MlpModel:
    """
    Two layer perceptron: layer1 (input -> hidden), ReLU, layer2 (hidden -> 10 classes).
    Only the hidden layer is swapped for a Dyad layer, the classifier head stays dense.
    """

    def __init__(self, layer1: Layer, layer2: Layer, layer: str = "dense"):
        if layer1.f_out != layer2.f_in:
            raise DimensionMismatchError(
                f"layer1 outputs {layer1.f_out} features, layer2 expects {layer2.f_in}", axis="rows"
            )
        if layer1.precision != layer2.precision:
            raise PrecisionMismatchError(f"layer1 is {layer1.precision}, layer2 is {layer2.precision}")
        self.layer1: Layer = layer1
        self.layer2: Layer = layer2
        self.layer: str = layer
        self.metadata: Dict[str, Union[int, float, None]] = {}

    @classmethod
    def build(
        cls,
        layer: str = "dense",
        hidden: int = 256,
        n_dyad: int = 4,
        seed: int = 0,
        precision: str = "f32",
        input_dim: int = 784,
        n_classes: int = N_CLASSES,
    ) -> MlpModel:
        if layer not in MODEL_LAYERS:
            raise ValueError(
                "Invalid layer '" + str(layer) + "', the available layers are: " + ", ".join(MODEL_LAYERS)
            )
        manager = LayersManager().initialize_layers(["Dense", MODEL_LAYERS[layer]])
        layer1 = manager.build(MODEL_LAYERS[layer], input_dim, hidden, seed, precision, n_dyad=n_dyad)
        layer2 = manager.build("Dense", hidden, n_classes, seed + 1, precision)
        return cls(layer1, layer2, layer)

    @property
    def input_dim(self) -> int:
        return self.layer1.f_in

    @property
    def hidden(self) -> int:
        return self.layer1.f_out

    @property
    def n_classes(self) -> int:
        return self.layer2.f_out

    @property
    def precision(self) -> str:
        return self.layer1.precision

    def forward(self, x: Matrix) -> Matrix:
        hidden = self.layer1.forward(x)
        return self.layer2.forward(Matrix(np.maximum(hidden.values, 0)))

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for prefix, layer in (("layer1", self.layer1), ("layer2", self.layer2)):
            for name, values in layer.parameters().items():
                params[prefix + "." + name] = values
        return params

    def __repr__(self) -> str:
        return f"MlpModel({self.layer1!r}, {self.layer2!r})"


def cross_entropy(logits: Matrix, labels: np.ndarray) -> Tuple[float, Matrix]:
    """
    Mean softmax cross-entropy over the batch columns and its gradient with respect to the logits.
    """
    log_probs = log_softmax(logits.values, axis=0)
    columns = np.arange(len(labels))
    loss = -float(np.mean(log_probs[labels, columns]))
    d_logits = np.exp(log_probs)
    d_logits[labels, columns] -= 1
    return loss, Matrix(d_logits / len(labels))


def _sgd_layer(layer: Layer, gradients, lr: float) -> Layer:
    bias = None
    if layer.bias is not None:
        bias = Matrix(layer.bias.values - lr * gradients.d_bias.values)
    if isinstance(layer, DenseLayer):
        return layer.replace(w=Matrix(layer.w.values - lr * gradients.d_w.values), bias=bias)
    return layer.replace(
        w1=Tensor3.from_numpy(layer.w1.values - lr * gradients.d_w1.values),
        w2=Tensor3.from_numpy(layer.w2.values - lr * gradients.d_w2.values),
        bias=bias,
    )


def sgd_step(model: MlpModel, x: Matrix, labels: np.ndarray, lr: float) -> Tuple[MlpModel, float]:
    hidden = model.layer1.forward(x)
    activations = Matrix(np.maximum(hidden.values, 0))
    logits = model.layer2.forward(activations)
    loss, d_logits = cross_entropy(logits, labels)

    grads2 = model.layer2.backward(activations, d_logits)
    d_hidden = Matrix(grads2.d_x.values * (hidden.values > 0))
    grads1 = model.layer1.backward(x, d_hidden, need_input_grad=False)

    updated = MlpModel(_sgd_layer(model.layer1, grads1, lr), _sgd_layer(model.layer2, grads2, lr), model.layer)
    return updated, loss


def evaluate(model: MlpModel, dataset: MnistDataset, batch_size: int = 1000) -> float:
    if len(dataset) == 0:
        raise EmptyDatasetError(f"Cannot evaluate on the empty {dataset.split} set")
    _check_dataset(model, dataset)
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x, labels = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
        # argmax returns the lowest class id among ties
        predictions = np.argmax(model.forward(x).values, axis=0)
        correct += int(np.sum(predictions == labels))
    return correct / len(dataset)


def _check_dataset(model: MlpModel, dataset: MnistDataset) -> None:
    if dataset.n_pixels != model.input_dim:
        raise DimensionMismatchError(
            f"Images have {dataset.n_pixels} pixels, the model expects {model.input_dim}", axis="rows"
        )
    if dataset.precision != model.precision:
        raise PrecisionMismatchError(f"Dataset is {dataset.precision}, the model is {model.precision}")


def train(
    model: MlpModel,
    dataset: MnistDataset,
    epochs: int = 2,
    lr: float = 0.1,
    batch_size: int = 64,
    seed: int = 0,
    test_set: Optional[MnistDataset] = None,
) -> Tuple[MlpModel, List[EpochMetrics]]:
    """
    Minibatch SGD on softmax cross-entropy. Each epoch visits the training set in an order drawn
    from a generator seeded once, so a run is reproducible from (seed, data, hyperparameters).
    Test accuracy is measured on test_set, or on the training set when none is given.
    """
    if lr < 0:
        raise ValueError(f"lr must not be negative, got {lr}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    if len(dataset) == 0:
        raise EmptyDatasetError("Cannot train on an empty dataset")
    _check_dataset(model, dataset)
    evaluation_set = test_set if test_set is not None else dataset

    rng = np.random.default_rng(seed)
    metrics: List[EpochMetrics] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(dataset))
        total_loss = 0.0
        for step, start in enumerate(range(0, len(dataset), batch_size)):
            indices = order[start:start + batch_size]
            x, labels = dataset.batch(indices)
            model, loss = sgd_step(model, x, labels, lr)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"Loss became {loss} at epoch {epoch}, step {step} (lr={lr}, batch_size={batch_size})"
                )
            total_loss += loss * len(indices)

        epoch_metrics = EpochMetrics(epoch, total_loss / len(dataset), evaluate(model, evaluation_set))
        metrics.append(epoch_metrics)
        logger.info(
            "epoch %d: train loss %.4f, test accuracy %.4f", epoch, epoch_metrics.train_loss,
            epoch_metrics.test_accuracy,
        )
    return model, metrics


def metrics_to_frame(metrics: Sequence[EpochMetrics]) -> pd.DataFrame:
    return pd.DataFrame([asdict(m) for m in metrics], columns=METRICS_COLUMNS)


def metrics_to_csv(metrics: Sequence[EpochMetrics], path: Optional[PathLike] = None) -> Optional[str]:
    return metrics_to_frame(metrics).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def _layer_config(layer: Layer) -> Dict[str, Union[str, int, bool]]:
    if isinstance(layer, DenseLayer):
        return {"kind": "dense", "f_out": layer.f_out, "f_in": layer.f_in, "has_bias": layer.has_bias}
    return {"kind": "dyad", **asdict(layer.config)}


def save_checkpoint(model: MlpModel, path: PathLike, metadata: Optional[Dict] = None) -> None:
    """
    Binary checkpoint: the magic bytes DYAD, the format version and the length of a JSON config
    block as little-endian u32, the config block, then every parameter as raw little-endian
    scalars in the order the config lists them.
    """
    params = model.parameters()
    config = {
        "layer": model.layer,
        "precision": model.precision,
        "layers": [_layer_config(model.layer1), _layer_config(model.layer2)],
        "buffers": [{"name": name, "shape": list(values.shape)} for name, values in params.items()],
        "metadata": dict(metadata or model.metadata),
    }
    block = json.dumps(config, sort_keys=True).encode("utf-8")
    little_endian = get_dtype(model.precision).newbyteorder("<")
    with open(path, "wb") as stream:
        stream.write(CHECKPOINT_MAGIC)
        stream.write(struct.pack("<II", CHECKPOINT_VERSION, len(block)))
        stream.write(block)
        for values in params.values():
            stream.write(np.ascontiguousarray(values, dtype=little_endian).tobytes())


def _build_layer(config: Dict, buffers: Dict[str, np.ndarray], prefix: str, precision: str) -> Layer:
    bias = Matrix(buffers[prefix + ".bias"]) if config["has_bias"] else None
    if config["kind"] == "dense":
        return DenseLayer(Matrix(buffers[prefix + ".w"]), bias)
    dyad_config = DyadConfig(**{k: v for k, v in config.items() if k != "kind"})
    if dyad_config.precision != precision:
        raise CheckpointFormatError(f"{prefix} is {dyad_config.precision}, the checkpoint is {precision}")
    return DyadLayer(
        dyad_config,
        Tensor3.from_numpy(buffers[prefix + ".w1"]),
        Tensor3.from_numpy(buffers[prefix + ".w2"]),
        bias,
    )


def load_checkpoint(path: PathLike) -> MlpModel:
    """
    Read a checkpoint written by save_checkpoint. The whole file is validated before any layer is
    built; a bad magic, an unknown version, a truncated or an oversized file raise.
    """
    content = _read_bytes(path)
    if len(content) < 12:
        raise CheckpointFormatError(f"Truncated checkpoint: {len(content)} bytes")
    if content[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"Bad checkpoint magic {content[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    version, block_length = struct.unpack("<II", content[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(version, CHECKPOINT_VERSION)
    if len(content) < 12 + block_length:
        raise CheckpointFormatError("Truncated checkpoint config block")
    try:
        config = json.loads(content[12:12 + block_length].decode("utf-8"))
        precision = config["precision"]
        buffer_specs = config["buffers"]
        layer_configs = config["layers"]
        dtype = get_dtype(precision).newbyteorder("<")
    except (ValueError, KeyError) as error:
        raise CheckpointFormatError(f"Unreadable checkpoint config block: {error}") from None

    offset = 12 + block_length
    buffers: Dict[str, np.ndarray] = {}
    for spec in buffer_specs:
        count = int(np.prod(spec["shape"]))
        end = offset + count * dtype.itemsize
        if end > len(content):
            raise CheckpointFormatError(f"Truncated checkpoint: buffer {spec['name']} ends past the file")
        values = np.frombuffer(content, dtype=dtype, count=count, offset=offset)
        buffers[spec["name"]] = values.astype(get_dtype(precision)).reshape(spec["shape"])
        offset = end
    if offset != len(content):
        raise CheckpointFormatError(f"Checkpoint holds {len(content) - offset} trailing bytes")

    try:
        layer1 = _build_layer(layer_configs[0], buffers, "layer1", precision)
        layer2 = _build_layer(layer_configs[1], buffers, "layer2", precision)
        model = MlpModel(layer1, layer2, config.get("layer", "dense"))
    except CheckpointFormatError:
        raise
    except (KeyError, TypeError, IndexError, ValueError) as error:
        raise CheckpointFormatError(f"Checkpoint config does not describe the buffers: {error}") from None
    model.metadata = config.get("metadata", {})
    return model
