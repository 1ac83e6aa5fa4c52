"""Datasets: the synthetic 2-D task and IDX (MNIST-format) files."""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

MNIST_MEAN = 0.1307
MNIST_STD = 0.3081

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Normalized features ``(X - mean) / std`` with integer labels."""

    features: np.ndarray
    labels: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (n, D) with one label per row")
        if np.any(np.asarray(self.std) <= 0):
            raise ValueError("normalization std must be positive")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    @property
    def scale(self):
        """Scalar std used to report margins in raw data units (1 if per-feature)."""
        s = np.unique(self.std)
        return float(s[0]) if s.size == 1 else 1.0

    def denormalize(self, X=None):
        X = self.features if X is None else X
        return X * self.std + self.mean

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.mean, self.std)

    def split(self, n_first):
        n = len(self)
        return self.subset(np.arange(n_first)), self.subset(np.arange(n_first, n))


def normalize(raw, labels, mean, std):
    raw = np.asarray(raw, dtype=np.float64)
    D = raw.shape[1]
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (D,)).copy()
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (D,)).copy()
    return Dataset((raw - mean) / std, np.asarray(labels, dtype=np.int64), mean, std)


def fit_normalization(raw):
    """Scalar mean/std over all entries of the (training) array."""
    raw = np.asarray(raw, dtype=np.float64)
    std = raw.std()
    return float(raw.mean()), float(std if std > 0 else 1.0)


def gen_toy_2d(seed=0, n_per_blob=50, spread=0.35, gap=0.2):
    """Two-class XOR arrangement of four Gaussian blobs in the plane.

    Each class owns two diagonally opposite blobs centred at (+-1, +-1).
    Points closer than ``gap`` to either axis are redrawn, so the classes
    are separable by the axes and a perfect classifier exists.
    """
    rng = np.random.default_rng(seed)
    centres = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    labels = np.array([0, 0, 1, 1])
    xs, ys = [], []
    for c, lab in zip(centres, labels):
        pts = np.empty((0, 2))
        while len(pts) < n_per_blob:
            cand = c + spread * rng.standard_normal((n_per_blob, 2))
            ok = (np.sign(cand) == np.sign(c)).all(axis=1) & (np.abs(cand) > gap).all(axis=1)
            pts = np.concatenate([pts, cand[ok]])[:n_per_blob]
        xs.append(pts)
        ys.append(np.full(n_per_blob, lab))
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return normalize(X[order], y[order], 0.0, 1.0)


# ---------------------------------------------------------------------------
# IDX files


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path, magic):
    with _open(path) as fh:
        buf = fh.read()
    if len(buf) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = got & 0xFF
    hdr = 4 + 4 * ndim
    if len(buf) < hdr:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, buf[4:hdr])
    count = int(np.prod(dims))
    if len(buf) - hdr < count:
        raise IdxFormatError(f"{path}: truncated data ({len(buf) - hdr} of {count} bytes)")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=hdr).reshape(dims)


def write_idx(path, array):
    """Write a uint8 array as IDX: 3-D image stacks or 1-D label vectors."""
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 3:
        magic = IDX_IMAGES
    elif array.ndim == 1:
        magic = IDX_LABELS
    else:
        raise ValueError("IDX writer supports (n, rows, cols) images or (n,) labels")
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def load_idx(images_path, labels_path, mean=MNIST_MEAN, std=MNIST_STD):
    """Read an IDX image/label pair, scale pixels to [0, 1] and normalize."""
    images = read_idx(images_path, IDX_IMAGES)
    labels = read_idx(labels_path, IDX_LABELS)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    raw = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return normalize(raw, labels, mean, std)


def mnist_splits(train, test, n_val=5000):
    """Hold out the last ``n_val`` training rows for validation (55k/5k/10k on MNIST)."""
    if not 0 < n_val < len(train):
        raise ValueError("n_val must be positive and smaller than the training set")
    tr, va = train.split(len(train) - n_val)
    return tr, va, test
