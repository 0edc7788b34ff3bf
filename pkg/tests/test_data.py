"""IDX parsing, task transforms, and synthetic corpora."""

import os
import struct

import numpy as np
import pytest

from ccnn import data as D
from ccnn.errors import FormatError, UsageError


def _write_pair(tmp_path, images, labels, tag="t"):
    ip = tmp_path / f"{tag}-images-idx3-ubyte"
    lp = tmp_path / f"{tag}-labels-idx1-ubyte"
    D.write_idx(ip, images)
    D.write_idx(lp, labels)
    return ip, lp


class TestIdxFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(2, 28, 28)).astype(np.uint8)
        labels = np.array([3, 7], dtype=np.uint8)
        ip, lp = _write_pair(tmp_path, images, labels)
        assert np.array_equal(D.read_idx(ip), images)
        assert np.array_equal(D.read_idx(lp), labels)
        # header encodes the published magics
        assert struct.unpack(">I", open(ip, "rb").read(4))[0] == D.IDX_MAGIC_IMAGES
        assert struct.unpack(">I", open(lp, "rb").read(4))[0] == D.IDX_MAGIC_LABELS

    def test_loader_values_and_standardization(self, tmp_path):
        images = np.zeros((2, 4, 4), dtype=np.uint8)
        images[0] = 255
        labels = np.array([1, 0], dtype=np.uint8)
        ip, lp = _write_pair(tmp_path, images, labels)
        ds, stats = D.load_mnist_idx(ip, lp)
        scaled = images.astype(np.float64)[:, None] / 255.0
        want = (scaled - stats[0]) / stats[1]
        np.testing.assert_array_equal(ds.inputs, want)
        np.testing.assert_array_equal(ds.labels, [1, 0])

    def test_stats_reused_across_splits(self, tmp_path):
        rng = np.random.default_rng(1)
        img1 = rng.integers(0, 256, (4, 4, 4)).astype(np.uint8)
        img2 = rng.integers(0, 256, (3, 4, 4)).astype(np.uint8)
        ip1, lp1 = _write_pair(tmp_path, img1, np.zeros(4, np.uint8), "a")
        ip2, lp2 = _write_pair(tmp_path, img2, np.zeros(3, np.uint8), "b")
        _, stats = D.load_mnist_idx(ip1, lp1)
        ds2, stats2 = D.load_mnist_idx(ip2, lp2, stats=stats)
        assert stats2 == stats
        want = (img2.astype(np.float64)[:, None] / 255.0 - stats[0]) / stats[1]
        np.testing.assert_array_equal(ds2.inputs, want)

    def test_wrong_image_magic_rejected(self, tmp_path):
        images = np.zeros((2, 4, 4), dtype=np.uint8)
        labels = np.zeros(2, dtype=np.uint8)
        ip, lp = _write_pair(tmp_path, images, labels)
        with pytest.raises(FormatError, match="magic"):
            D.load_mnist_idx(lp, lp)  # label file where images expected
        with pytest.raises(FormatError, match="magic"):
            D.load_mnist_idx(ip, ip)

    def test_count_mismatch_rejected(self, tmp_path):
        images = np.zeros((3, 4, 4), dtype=np.uint8)
        labels = np.zeros(2, dtype=np.uint8)
        ip, lp = _write_pair(tmp_path, images, labels)
        with pytest.raises(FormatError, match="count mismatch"):
            D.load_mnist_idx(ip, lp)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "bad-idx"
        with open(path, "wb") as fh:
            fh.write(struct.pack(">I", 0x00000803))
            fh.write(struct.pack(">III", 2, 4, 4))
            fh.write(b"\x00" * 10)  # needs 32
        with pytest.raises(FormatError, match="payload"):
            D.read_idx(path)

    @pytest.mark.skipif(
        not all(os.path.exists(os.path.join(
            os.environ.get("CCNN_DATA_DIR", "data"), f))
            for fs in D.MNIST_FILES.values() for f in fs),
        reason="real MNIST files not present")
    def test_real_mnist_split_sizes(self):
        root = os.environ.get("CCNN_DATA_DIR", "data")
        train, _ = D.load_mnist_idx(
            *[os.path.join(root, f) for f in D.MNIST_FILES["train"]])
        test, _ = D.load_mnist_idx(
            *[os.path.join(root, f) for f in D.MNIST_FILES["test"]])
        assert len(train) == 60000 and len(test) == 10000


def _image_dataset(n=4, h=6, w=6, seed=0):
    rng = np.random.default_rng(seed)
    return D.Dataset(inputs=rng.standard_normal((n, 1, h, w)),
                     labels=rng.integers(0, 3, n), name="toy",
                     resolution=float(h), split="train")


class TestToSequence:
    def test_length_784(self):
        ds = _image_dataset(2, 28, 28)
        seq = D.to_sequence(ds)
        assert seq.inputs.shape == (2, 1, 784)
        assert seq.resolution == 784.0

    def test_identity_permutation_is_plain_flatten(self):
        ds = _image_dataset()
        a = D.to_sequence(ds).inputs
        b = D.to_sequence(ds, np.arange(36)).inputs
        np.testing.assert_array_equal(a, b)

    def test_permutation_is_bijection(self):
        perm = D.permutation_for(784, seed=42)
        assert sorted(perm) == list(range(784))

    def test_permutation_fixed_per_seed(self):
        assert np.array_equal(D.permutation_for(100, 7), D.permutation_for(100, 7))
        assert not np.array_equal(D.permutation_for(100, 7),
                                  D.permutation_for(100, 8))

    def test_non_bijection_rejected(self):
        ds = _image_dataset()
        with pytest.raises(UsageError):
            D.to_sequence(ds, np.zeros(36, dtype=int))

    def test_flatten_unflatten_round_trip(self):
        ds = _image_dataset()
        back = D.from_sequence(D.to_sequence(ds))
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        assert back.resolution == ds.resolution


class TestDownsample:
    def test_factor_one_identity(self):
        ds = _image_dataset()
        assert D.downsample(ds, 1) is ds

    def test_constant_image_unchanged(self):
        ds = D.Dataset(inputs=np.full((1, 1, 28, 28), 0.7),
                       labels=np.zeros(1, dtype=int), name="const",
                       resolution=28.0, split="train")
        out = D.downsample(ds, 2)
        assert out.inputs.shape == (1, 1, 14, 14)
        np.testing.assert_allclose(out.inputs, 0.7)
        assert out.resolution == 14.0

    def test_block_mean_oracle(self):
        ds = _image_dataset(3, 8, 8, seed=5)
        out = D.downsample(ds, 2).inputs
        want = np.zeros_like(out)
        for u in range(4):
            for v in range(4):
                want[..., u, v] = ds.inputs[..., 2 * u:2 * u + 2,
                                            2 * v:2 * v + 2].mean(axis=(-2, -1))
        np.testing.assert_allclose(out, want, atol=1e-15)

    def test_non_divisible_rejected(self):
        ds = _image_dataset(2, 7, 7)
        with pytest.raises(UsageError):
            D.downsample(ds, 2)

    def test_downsample_then_flatten_matches_strided_block_mean(self):
        ds = _image_dataset(2, 6, 6, seed=9)
        a = D.to_sequence(D.downsample(ds, 2)).inputs
        flat = D.to_sequence(ds).inputs
        blocks = flat.reshape(2, 1, 3, 2, 3, 2)  # (n, c, u, du, v, dv)
        b = blocks.mean(axis=(3, 5)).reshape(2, 1, 9)
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_1d_downsample(self):
        ds = D.Dataset(inputs=np.arange(8.0).reshape(1, 1, 8),
                       labels=np.zeros(1, dtype=int), name="seq",
                       resolution=8.0, split="train")
        out = D.downsample(ds, 2)
        np.testing.assert_allclose(out.inputs[0, 0], [0.5, 2.5, 4.5, 6.5])


class TestSyntheticLongrange:
    def test_xor_truth_table(self):
        ds = D.synthetic_longrange(500, 64, seed=3)
        first = ds.inputs[:, 0, 0] > 0
        last = ds.inputs[:, 0, -1] > 0
        np.testing.assert_array_equal(ds.labels, first ^ last)
        # (1,1) -> 0 and (1,0) -> 1 specifically
        both = first & last
        assert both.any() and (ds.labels[both] == 0).all()
        onezero = first & ~last
        assert onezero.any() and (ds.labels[onezero] == 1).all()

    def test_class_balance(self):
        ds = D.synthetic_longrange(2000, 256, seed=0)
        frac = ds.labels.mean()
        assert abs(frac - 0.5) <= 0.05

    def test_token_amplitude_and_determinism(self):
        a = D.synthetic_longrange(50, 32, seed=1)
        b = D.synthetic_longrange(50, 32, seed=1)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        assert set(np.abs(a.inputs[:, 0, 0])) == {3.0}

    def test_min_length(self):
        with pytest.raises(UsageError):
            D.synthetic_longrange(10, 4, seed=0)


class TestTasksAndBatches:
    def test_synth_digits_corpus(self, tmp_path):
        D.make_synth_digits_idx(tmp_path, n_train=60, n_test=20, seed=0)
        train, val, test = D.load_digit_corpus(tmp_path)
        assert train.inputs.shape[1:] == (1, 28, 28)
        assert len(train) + len(val) == 60 and len(test) == 20
        assert set(np.unique(train.labels)) <= set(range(10))

    def test_desk_task_shapes(self, tmp_path):
        D.make_synth_digits_idx(tmp_path, n_train=120, n_test=40, seed=0)
        train, val, test = D.build_task("smnist-desk", tmp_path, seed=0)
        assert train.inputs.shape[1:] == (1, 196)
        assert test.inputs.shape[1:] == (1, 196)
        assert train.resolution == 196.0

    def test_permuted_task_uses_fixed_permutation(self, tmp_path):
        D.make_synth_digits_idx(tmp_path, n_train=60, n_test=20, seed=0)
        a = D.build_task("pmnist-desk", tmp_path, seed=0, perm_seed=5)[0]
        b = D.build_task("pmnist-desk", tmp_path, seed=0, perm_seed=5)[0]
        c = D.build_task("smnist-desk", tmp_path, seed=0)[0]
        np.testing.assert_array_equal(a.inputs, b.inputs)
        assert not np.array_equal(a.inputs, c.inputs)

    def test_unknown_task(self, tmp_path):
        with pytest.raises(UsageError):
            D.build_task("cifar100", tmp_path)

    def test_batch_iteration(self):
        ds = D.synthetic_longrange(10, 16, seed=0)
        batches = list(D.iterate_batches(ds, 4))
        assert [b[0].shape[0] for b in batches] == [4, 4, 2]
        assert batches[0][0].dtype == np.float32
        r1 = list(D.iterate_batches(ds, 4, rng=np.random.default_rng(3)))
        r2 = list(D.iterate_batches(ds, 4, rng=np.random.default_rng(3)))
        np.testing.assert_array_equal(r1[0][0].data, r2[0][0].data)
