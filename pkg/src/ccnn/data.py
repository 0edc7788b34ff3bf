"""Dataset ingestion and task construction.

Images and labels are read from IDX files (big-endian magic + dims +
raw bytes).  Task builders produce (train, val, test) triples of
immutable Dataset records: pixel values in [0, 1], standardized with
the train-split mean/std, optionally flattened to pixel sequences
(with a fixed seeded permutation for the permuted variant) and
average-pool downsampled for desk-scale runs.

When no real MNIST files are present, a procedurally rendered digit
corpus ("synthdigits") is generated and written through the same IDX
pipeline, so every loader code path stays exercised.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError, UsageError
from .tensor import Tensor

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray          # (N, C, spatial...)
    labels: np.ndarray          # (N,) int class indices
    name: str
    resolution: float           # samples per axis in the current layout
    split: str
    orig_spatial: tuple | None = None  # set by to_sequence for unflattening

    def __post_init__(self):
        if len(self.labels) != self.inputs.shape[0]:
            raise FormatError(
                f"{self.name}: {self.inputs.shape[0]} inputs vs "
                f"{len(self.labels)} labels")
        if not np.all(np.isfinite(self.inputs)):
            raise FormatError(f"{self.name}: non-finite input values")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1


# ------------------------------------------------------------------ IDX io

def read_idx(path) -> np.ndarray:
    """Read one IDX file (ubyte element type)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    ndim = magic & 0xFF
    if magic >> 8 != 0x08 or ndim < 1:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    expected = int(np.prod(dims))
    if data.size != expected:
        raise FormatError(
            f"{path}: payload holds {data.size} bytes, dims {dims} need {expected}")
    return data.reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x0800 | arr.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_mnist_idx(images_path, labels_path, name="mnist", split="train",
                   stats=None):
    """Load an image/label IDX pair.

    Pixels are scaled to [0, 1] and then standardized; ``stats`` is a
    (mean, std) pair from the train split, computed from this file when
    not given.  Returns (Dataset, stats).
    """
    with open(images_path, "rb") as fh:
        img_magic = struct.unpack(">I", fh.read(4))[0]
    if img_magic != IDX_MAGIC_IMAGES:
        raise FormatError(
            f"{images_path}: image magic 0x{img_magic:08x}, "
            f"expected 0x{IDX_MAGIC_IMAGES:08x}")
    with open(labels_path, "rb") as fh:
        lab_magic = struct.unpack(">I", fh.read(4))[0]
    if lab_magic != IDX_MAGIC_LABELS:
        raise FormatError(
            f"{labels_path}: label magic 0x{lab_magic:08x}, "
            f"expected 0x{IDX_MAGIC_LABELS:08x}")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected (N, H, W) images")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise FormatError(
            f"count mismatch: {images.shape[0]} images vs "
            f"{labels.shape[0]} labels")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    if stats is None:
        stats = (float(x.mean()), float(x.std()) or 1.0)
    x = (x - stats[0]) / stats[1]
    ds = Dataset(inputs=x, labels=labels.astype(np.int64), name=name,
                 resolution=float(images.shape[1]), split=split)
    return ds, stats


# ------------------------------------------------------- transformations

def permutation_for(length: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(length)


def to_sequence(d: Dataset, permutation: np.ndarray | None = None) -> Dataset:
    """Flatten (N, C, H, W) row-major into (N, C, H*W) pixel sequences."""
    if d.inputs.ndim != 4:
        raise UsageError(f"{d.name}: to_sequence expects (N, C, H, W) inputs")
    n, c, h, w = d.inputs.shape
    seq = d.inputs.reshape(n, c, h * w)
    if permutation is not None:
        if sorted(permutation) != list(range(h * w)):
            raise UsageError("permutation must be a bijection on pixel indices")
        seq = seq[:, :, permutation]
    return replace(d, inputs=seq, name=d.name + "-seq",
                   resolution=float(h * w), orig_spatial=(h, w))


def from_sequence(d: Dataset) -> Dataset:
    """Undo a permutation-free to_sequence using the recorded shape."""
    if d.orig_spatial is None:
        raise UsageError(f"{d.name}: no recorded spatial shape to unflatten to")
    n, c, _ = d.inputs.shape
    h, w = d.orig_spatial
    return replace(d, inputs=d.inputs.reshape(n, c, h, w),
                   name=d.name.removesuffix("-seq"), resolution=float(h),
                   orig_spatial=None)


def downsample(d: Dataset, factor: int) -> Dataset:
    """Average-pool each spatial axis by ``factor``; resolution divides."""
    if factor == 1:
        return d
    if factor < 1:
        raise UsageError(f"downsample factor must be >= 1, got {factor}")
    x = d.inputs
    spatial = x.shape[2:]
    if any(s % factor for s in spatial):
        raise UsageError(
            f"{d.name}: spatial extents {spatial} not divisible by {factor}")
    if len(spatial) == 1:
        n, c, l = x.shape
        x = x.reshape(n, c, l // factor, factor).mean(axis=3)
    else:
        n, c, h, w = x.shape
        x = x.reshape(n, c, h // factor, factor, w // factor, factor)
        x = x.mean(axis=(3, 5))
    return replace(d, inputs=x, name=f"{d.name}-ds{factor}",
                   resolution=d.resolution / factor)


def subset(d: Dataset, indices) -> Dataset:
    return replace(d, inputs=d.inputs[indices], labels=d.labels[indices])


# ------------------------------------------------------ synthetic tasks

def synthetic_longrange(n: int, length: int, seed: int,
                        split: str = "train") -> Dataset:
    """Binary task: label = XOR of two tokens at the sequence ends.

    Each token is a +-3 pulse (width length/32, one sample minimum)
    planted at position 0 and at position length-1, amid zero-mean
    noise.  No local window short of the full sequence contains both
    tokens, and the XOR structure makes every pooled statistic of
    single-token features identical across classes, so the task is
    unsolvable without a receptive field spanning the sequence.
    """
    if length < 8:
        raise UsageError(f"sequence length must be >= 8, got {length}")
    rng = np.random.default_rng(seed)
    width = max(1, length // 32)
    x = rng.normal(0.0, 0.1, size=(n, 1, length))
    bits = rng.integers(0, 2, size=(n, 2))
    x[:, 0, :width] = (3.0 * (2.0 * bits[:, 0] - 1.0))[:, None]
    x[:, 0, length - width:] = (3.0 * (2.0 * bits[:, 1] - 1.0))[:, None]
    labels = np.bitwise_xor(bits[:, 0], bits[:, 1]).astype(np.int64)
    return Dataset(inputs=x, labels=labels, name="synth-longrange",
                   resolution=float(length), split=split)


def _render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    from PIL import Image, ImageDraw, ImageFont

    # centered and size-normalized like the handwritten corpus it stands
    # in for, with mild geometric and intensity variation
    img = Image.new("L", (28, 28), 0)
    font = ImageFont.load_default()
    glyph = Image.new("L", (12, 14), 0)
    ImageDraw.Draw(glyph).text((2, 1), str(digit), fill=255, font=font)
    scale = rng.uniform(1.6, 2.0)
    glyph = glyph.resize((int(12 * scale), int(14 * scale)), Image.BILINEAR)
    glyph = glyph.rotate(rng.uniform(-12, 12), Image.BILINEAR, expand=True)
    ox = (28 - glyph.size[0]) // 2 + int(rng.integers(-2, 3))
    oy = (28 - glyph.size[1]) // 2 + int(rng.integers(-2, 3))
    img.paste(glyph, (max(0, ox), max(0, oy)))
    arr = np.asarray(img, dtype=np.float64)
    arr += rng.normal(0, 8.0, size=arr.shape)
    return np.clip(arr, 0, 255).astype(np.uint8)


def make_synth_digits_idx(data_dir, n_train=4000, n_test=1200, seed=0):
    """Render a digit-classification corpus and write it as IDX files."""
    os.makedirs(data_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    for split, n in (("train", n_train), ("test", n_test)):
        labels = rng.integers(0, 10, size=n).astype(np.uint8)
        images = np.stack([_render_digit(int(d), rng) for d in labels])
        write_idx(os.path.join(data_dir, f"synthdigits-{split}-images-idx3-ubyte"),
                  images)
        write_idx(os.path.join(data_dir, f"synthdigits-{split}-labels-idx1-ubyte"),
                  labels)


def _digits_paths(data_dir, allow_synth=True):
    """Prefer real MNIST files; otherwise the synthdigits corpus (generated
    on first use, desk-scale tasks only)."""
    mnist = {s: tuple(os.path.join(data_dir, f) for f in fs)
             for s, fs in MNIST_FILES.items()}
    if all(os.path.exists(p) for ps in mnist.values() for p in ps):
        return mnist, "mnist"
    if not allow_synth:
        raise FileNotFoundError(
            f"MNIST IDX files not found under {data_dir!r} "
            f"(need {[f for fs in MNIST_FILES.values() for f in fs]})")
    synth = {s: (os.path.join(data_dir, f"synthdigits-{s}-images-idx3-ubyte"),
                 os.path.join(data_dir, f"synthdigits-{s}-labels-idx1-ubyte"))
             for s in ("train", "test")}
    if not all(os.path.exists(p) for ps in synth.values() for p in ps):
        make_synth_digits_idx(data_dir)
    return synth, "synthdigits"


def load_digit_corpus(data_dir, val_size=5000, allow_synth=True):
    """(train, val, test) image datasets, standardized with train stats."""
    paths, corpus = _digits_paths(data_dir, allow_synth=allow_synth)
    full, stats = load_mnist_idx(*paths["train"], name=corpus, split="train")
    test, _ = load_mnist_idx(*paths["test"], name=corpus, split="test",
                             stats=stats)
    n = len(full)
    val_size = min(val_size, n // 6)
    train = replace(subset(full, np.arange(0, n - val_size)), split="train")
    val = replace(subset(full, np.arange(n - val_size, n)), split="val")
    return train, val, test


def build_task(task: str, data_dir, seed: int = 0,
               perm_seed: int = 42):
    """Assemble one of the named tasks into (train, val, test).

    smnist / pmnist: full-size pixel sequences (length 784 on MNIST).
    smnist-desk / pmnist-desk: 2x downsampled, 2000/500/1000 samples.
    digits2d-desk: the 2d variant of the desk preset.
    synth-longrange: XOR token task, length 256.
    """
    known = {"synth-longrange", "smnist", "smnist-desk", "pmnist",
             "pmnist-desk", "digits2d", "digits2d-desk"}
    if task not in known:
        raise UsageError(f"unknown task {task!r}; available: {sorted(known)}")
    if task == "synth-longrange":
        return (synthetic_longrange(2000, 256, seed, "train"),
                synthetic_longrange(500, 256, seed + 1, "val"),
                synthetic_longrange(1000, 256, seed + 2, "test"))
    desk = task.endswith("-desk")
    # full-size tasks require the real corpus; desk variants may fall
    # back to the generated digit corpus
    train, val, test = load_digit_corpus(data_dir, allow_synth=desk)
    if desk:
        rng = np.random.default_rng(seed)
        train = subset(train, rng.permutation(len(train))[:2000])
        val = subset(val, rng.permutation(len(val))[:500])
        test = subset(test, rng.permutation(len(test))[:1000])
        train, val, test = (downsample(d, 2) for d in (train, val, test))
    if task in ("smnist", "smnist-desk"):
        return tuple(to_sequence(d) for d in (train, val, test))
    if task in ("pmnist", "pmnist-desk"):
        length = int(np.prod(train.inputs.shape[2:]))
        perm = permutation_for(length, perm_seed)
        return tuple(to_sequence(d, perm) for d in (train, val, test))
    return train, val, test


# ------------------------------------------------------------- batching

def iterate_batches(ds: Dataset, batch_size: int, rng=None, dtype=np.float32):
    """Yield (inputs Tensor, labels array) batches, shuffled when rng given."""
    order = np.arange(len(ds)) if rng is None else rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield Tensor(ds.inputs[idx].astype(dtype)), ds.labels[idx]
