import json
import math
import os
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from pydyad.exceptions import (
    CheckpointFormatError,
    CheckpointVersionError,
    DimensionMismatchError,
    EmptyDatasetError,
    IdxFormatError,
    PrecisionMismatchError,
    TrainingDivergedError,
)
from pydyad.layers import DenseLayer, DyadLayer
from pydyad.mnist import (
    IMAGES_MAGIC,
    EpochMetrics,
    MlpModel,
    MnistDataset,
    cross_entropy,
    evaluate,
    find_mnist_files,
    load_checkpoint,
    load_idx,
    load_mnist,
    metrics_to_csv,
    save_checkpoint,
    train,
    write_idx,
)
from pydyad.tensor_core import Matrix


def synthetic_images(count, seed=0, side=4):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(count, side, side), dtype=np.uint8), rng.integers(0, 10, size=count)


def synthetic_dataset(count=20, seed=0, precision="f32"):
    images, labels = synthetic_images(count, seed)
    return MnistDataset.from_bytes(images, labels, precision=precision)


class TestIdx:
    @pytest.fixture()
    def images(self):
        return synthetic_images(5)

    @pytest.mark.parametrize("suffix", ["", ".gz"])
    def test_write_and_load(self, tmp_path, images, suffix):
        pixels, labels = images
        images_path = tmp_path / ("images" + suffix)
        labels_path = tmp_path / ("labels" + suffix)
        write_idx(images_path, labels_path, pixels, labels)
        dataset = load_idx(images_path, labels_path)
        assert len(dataset) == 5
        assert dataset.n_pixels == 16
        assert dataset.pixels.dtype == np.float32
        assert_array_equal(dataset.labels, labels)
        for i in range(5):
            assert_array_equal(dataset.pixels[:, i], pixels[i].ravel().astype(np.float32) / np.float32(255))

    def test_normalization(self):
        pixels = np.array([[[0, 255], [51, 255]]], dtype=np.uint8)
        dataset = MnistDataset.from_bytes(pixels, np.array([1]), precision="f64")
        assert_array_equal(dataset.pixels[:, 0], [0.0, 1.0, 0.2, 1.0])

    def test_bad_magic(self, tmp_path, images):
        write_idx(tmp_path / "images", tmp_path / "labels", *images)
        content = (tmp_path / "images").read_bytes()
        (tmp_path / "images").write_bytes(struct.pack(">I", IMAGES_MAGIC + 1) + content[4:])
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx(tmp_path / "images", tmp_path / "labels")

    def test_swapped_files(self, tmp_path, images):
        write_idx(tmp_path / "images", tmp_path / "labels", *images)
        with pytest.raises(IdxFormatError):
            load_idx(tmp_path / "labels", tmp_path / "images")

    def test_truncated(self, tmp_path, images):
        write_idx(tmp_path / "images", tmp_path / "labels", *images)
        content = (tmp_path / "images").read_bytes()
        (tmp_path / "images").write_bytes(content[:-1])
        with pytest.raises(IdxFormatError, match="Truncated"):
            load_idx(tmp_path / "images", tmp_path / "labels")
        (tmp_path / "images").write_bytes(content[:10])
        with pytest.raises(IdxFormatError, match="Truncated"):
            load_idx(tmp_path / "images", tmp_path / "labels")

    def test_count_mismatch(self, tmp_path, images):
        pixels, labels = images
        write_idx(tmp_path / "images", tmp_path / "labels", pixels, labels[:4])
        with pytest.raises(IdxFormatError, match="Count mismatch"):
            load_idx(tmp_path / "images", tmp_path / "labels")

    def test_label_out_of_range(self, tmp_path, images):
        pixels, _ = images
        write_idx(tmp_path / "images", tmp_path / "labels", pixels, [0, 1, 2, 10, 3])
        with pytest.raises(IdxFormatError):
            load_idx(tmp_path / "images", tmp_path / "labels")

    def test_find_files(self, tmp_path, images):
        with pytest.raises(FileNotFoundError):
            find_mnist_files(tmp_path, "train")
        write_idx(
            tmp_path / "t10k-images-idx3-ubyte.gz", tmp_path / "t10k-labels-idx1-ubyte", *images
        )
        images_path, labels_path = find_mnist_files(tmp_path, "test")
        assert images_path == os.path.join(tmp_path, "t10k-images-idx3-ubyte.gz")
        assert labels_path == os.path.join(tmp_path, "t10k-labels-idx1-ubyte")
        assert load_mnist(tmp_path, "test").split == "test"


class TestMnistDataset:
    @pytest.fixture()
    def dataset(self):
        return synthetic_dataset(12)

    def test_read_only(self, dataset):
        with pytest.raises(ValueError):
            dataset.pixels[0, 0] = 0.5
        with pytest.raises(ValueError):
            dataset.labels[0] = 1

    def test_copies_inputs(self):
        pixels = np.zeros((4, 2))
        dataset = MnistDataset(pixels, [1, 2])
        pixels[0, 0] = 1.0
        assert dataset.pixels[0, 0] == 0.0

    @pytest.mark.parametrize("pixels, labels", [(np.full((4, 1), 1.5), [0]), (np.zeros((4, 1)), [10])])
    def test_invalid_values(self, pixels, labels):
        with pytest.raises(ValueError):
            MnistDataset(pixels, labels)

    def test_label_count(self):
        with pytest.raises(DimensionMismatchError):
            MnistDataset(np.zeros((4, 3)), [0, 1])

    def test_subset(self, dataset):
        assert len(dataset.subset(5)) == 5
        assert len(dataset.subset(100)) == 12
        assert_array_equal(dataset.subset([3, 1]).labels, dataset.labels[[3, 1]])

    def test_shuffled(self, dataset):
        shuffled = dataset.shuffled(seed=1)
        assert sorted(shuffled.labels) == sorted(dataset.labels)
        assert_array_equal(shuffled.labels, dataset.shuffled(seed=1).labels)

    def test_empty(self):
        empty = MnistDataset(np.zeros((16, 0)), [])
        assert len(empty) == 0
        with pytest.raises(EmptyDatasetError):
            empty.images


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss, d_logits = cross_entropy(Matrix(np.zeros((10, 2))), np.array([3, 7]))
        assert loss == pytest.approx(math.log(10))
        expected = np.full((10, 2), 0.1)
        expected[3, 0] -= 1
        expected[7, 1] -= 1
        np.testing.assert_allclose(d_logits.values, expected / 2, rtol=1e-12)

    def test_confident_logits(self):
        logits = np.zeros((10, 1))
        logits[4, 0] = 50.0
        loss, _ = cross_entropy(Matrix(logits), np.array([4]))
        assert 0 <= loss < 1e-12


class TestMlpModel:
    def test_build(self):
        model = MlpModel.build("dyad-it", hidden=8, n_dyad=4, input_dim=16)
        assert isinstance(model.layer1, DyadLayer)
        assert isinstance(model.layer2, DenseLayer)
        assert (model.input_dim, model.hidden, model.n_classes) == (16, 8, 10)
        assert sorted(model.parameters()) == [
            "layer1.bias", "layer1.w1", "layer1.w2", "layer2.bias", "layer2.w"
        ]

    def test_invalid_layer(self):
        with pytest.raises(ValueError):
            MlpModel.build("dyad-xt", hidden=8, input_dim=16)

    def test_forward_shape(self):
        model = MlpModel.build("dense", hidden=8, input_dim=16)
        assert model.forward(synthetic_dataset(3).images).shape == (10, 3)

    def test_mixed_precision(self):
        layer1 = DenseLayer.init_uniform(8, 16, precision="f32")
        layer2 = DenseLayer.init_uniform(10, 8, precision="f64")
        with pytest.raises(PrecisionMismatchError):
            MlpModel(layer1, layer2)


class TestEvaluate:
    @pytest.fixture()
    def dataset(self):
        return synthetic_dataset(30)

    def constant_model(self, bias_class=None):
        model = MlpModel.build("dense", hidden=8, input_dim=16)
        bias = np.zeros((10, 1), dtype=np.float32)
        if bias_class is not None:
            bias[bias_class] = 1.0
        return MlpModel(model.layer1, DenseLayer(Matrix.zeros(10, 8, "f32"), Matrix(bias)))

    def test_constant_predictor(self, dataset):
        accuracy = evaluate(self.constant_model(3), dataset)
        assert accuracy == np.mean(dataset.labels == 3)

    def test_ties_pick_lowest_class(self, dataset):
        assert evaluate(self.constant_model(), dataset) == np.mean(dataset.labels == 0)

    def test_order_and_batching_invariance(self, dataset):
        model = MlpModel.build("dyad-it", hidden=8, input_dim=16)
        accuracy = evaluate(model, dataset)
        assert evaluate(model, dataset.shuffled(seed=3)) == accuracy
        assert evaluate(model, dataset, batch_size=7) == accuracy

    def test_empty(self):
        model = MlpModel.build("dense", hidden=8, input_dim=16)
        with pytest.raises(EmptyDatasetError):
            evaluate(model, MnistDataset(np.zeros((16, 0)), []))

    def test_mismatches(self, dataset):
        with pytest.raises(DimensionMismatchError):
            evaluate(MlpModel.build("dense", hidden=8, input_dim=25), dataset)
        with pytest.raises(PrecisionMismatchError):
            evaluate(MlpModel.build("dense", hidden=8, input_dim=16, precision="f64"), dataset)


class TestTrain:
    @pytest.fixture()
    def dataset(self):
        return synthetic_dataset(16)

    def test_zero_learning_rate_keeps_weights(self, dataset):
        model = MlpModel.build("dyad-it", hidden=8, input_dim=16)
        trained, metrics = train(model, dataset, epochs=1, lr=0.0, batch_size=4)
        for name, values in model.parameters().items():
            assert_array_equal(trained.parameters()[name], values)
        assert len(metrics) == 1

    @pytest.mark.parametrize("layer", ["dense", "dyad-it"])
    def test_memorizes_one_example(self, dataset, layer):
        single = dataset.subset(1)
        model = MlpModel.build(layer, hidden=8, input_dim=16, precision="f32")
        trained, metrics = train(model, single, epochs=500, lr=1.0, batch_size=1)
        assert metrics[-1].train_loss < 0.01
        assert metrics[-1].test_accuracy == 1.0
        assert evaluate(trained, single) == 1.0

    def test_reproducible(self, dataset):
        runs = []
        for _ in range(2):
            model = MlpModel.build("dyad-it", hidden=8, input_dim=16, seed=5)
            runs.append(train(model, dataset, epochs=2, lr=0.1, batch_size=5, seed=7))
        assert runs[0][1] == runs[1][1]
        assert metrics_to_csv(runs[0][1]) == metrics_to_csv(runs[1][1])
        for name, values in runs[0][0].parameters().items():
            assert_array_equal(runs[1][0].parameters()[name], values)

    def test_metrics_per_epoch(self, dataset):
        model = MlpModel.build("dense", hidden=8, input_dim=16)
        _, metrics = train(model, dataset, epochs=3, lr=0.1, test_set=synthetic_dataset(5, seed=1))
        assert [m.epoch for m in metrics] == [1, 2, 3]
        assert all(m.test_accuracy in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0) for m in metrics)

    def test_invalid_arguments(self, dataset):
        model = MlpModel.build("dense", hidden=8, input_dim=16)
        with pytest.raises(ValueError):
            train(model, dataset, lr=-0.1)
        with pytest.raises(ValueError):
            train(model, dataset, batch_size=0)
        with pytest.raises(EmptyDatasetError):
            train(model, MnistDataset(np.zeros((16, 0)), []))

    def test_divergence(self, dataset):
        model = MlpModel.build("dense", hidden=8, input_dim=16)
        with np.errstate(all="ignore"):
            with pytest.raises(TrainingDivergedError):
                train(model, dataset, epochs=5, lr=1e30, batch_size=4)


class TestMetricsCsv:
    def test_format(self):
        content = metrics_to_csv([EpochMetrics(1, 0.5, 0.25), EpochMetrics(2, 0.125, 0.75)])
        assert content == "epoch,train_loss,test_accuracy\n1,0.500000,0.250000\n2,0.125000,0.750000\n"

    def test_to_file(self, tmp_path):
        metrics_to_csv([EpochMetrics(1, 0.5, 0.25)], tmp_path / "metrics.csv")
        assert (tmp_path / "metrics.csv").read_text().splitlines()[1] == "1,0.500000,0.250000"


class TestCheckpoint:
    @pytest.fixture()
    def model(self):
        return MlpModel.build("dyad-it", hidden=8, n_dyad=4, seed=2, input_dim=16)

    @pytest.fixture()
    def path(self, tmp_path, model):
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, {"epoch": 3, "seed": 2, "final_loss": 0.5})
        return path

    def test_round_trip(self, model, path):
        loaded = load_checkpoint(path)
        assert loaded.layer == "dyad-it"
        assert loaded.layer1.config == model.layer1.config
        assert loaded.metadata == {"epoch": 3, "seed": 2, "final_loss": 0.5}
        for name, values in model.parameters().items():
            assert_array_equal(loaded.parameters()[name], values)
        x = synthetic_dataset(4).images
        assert_array_equal(loaded.forward(x).values, model.forward(x).values)

    def test_dense_round_trip(self, tmp_path):
        model = MlpModel.build("dense", hidden=8, input_dim=16, precision="f64")
        save_checkpoint(model, tmp_path / "dense.ckpt")
        loaded = load_checkpoint(tmp_path / "dense.ckpt")
        assert loaded.precision == "f64"
        assert_array_equal(loaded.layer1.w.values, model.layer1.w.values)

    def test_bad_magic(self, path):
        content = path.read_bytes()
        path.write_bytes(b"DYAX" + content[4:])
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_unknown_version(self, path):
        content = path.read_bytes()
        path.write_bytes(content[:4] + struct.pack("<I", 2) + content[8:])
        with pytest.raises(CheckpointVersionError) as error:
            load_checkpoint(path)
        assert error.value.found == 2

    @pytest.mark.parametrize("cut", [1, 40])
    def test_truncated(self, path, cut):
        content = path.read_bytes()
        path.write_bytes(content[:-cut])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_trailing_bytes(self, path):
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointFormatError, match="trailing"):
            load_checkpoint(path)

    @pytest.mark.parametrize(
        "field, value",
        [("variant", "xt"), ("n_in", 3), ("n_dyad", 0), ("precision", "f16")],
    )
    def test_corrupted_layer_config(self, path, field, value):
        content = path.read_bytes()
        (block_length,) = struct.unpack("<I", content[8:12])
        config = json.loads(content[12:12 + block_length].decode("utf-8"))
        config["layers"][0][field] = value
        block = json.dumps(config, sort_keys=True).encode("utf-8")
        path.write_bytes(content[:8] + struct.pack("<I", len(block)) + block + content[12 + block_length:])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_unknown_checkpoint_precision(self, path):
        content = path.read_bytes()
        (block_length,) = struct.unpack("<I", content[8:12])
        config = json.loads(content[12:12 + block_length].decode("utf-8"))
        config["precision"] = "f16"
        block = json.dumps(config, sort_keys=True).encode("utf-8")
        path.write_bytes(content[:8] + struct.pack("<I", len(block)) + block + content[12 + block_length:])
        with pytest.raises(CheckpointFormatError, match="precision"):
            load_checkpoint(path)
