"""Datasets, label splits, long-tail subsampling and batch streams.

File formats
------------
Vector text: one sample per line, comma separated features followed by an
integer label. Lines starting with ``#`` are comments; a ``# classes: C``
comment fixes the class count (otherwise ``max(label) + 1``).

Raster binary (little endian)::

    magic   4 bytes  b"EPR1"
    N, H, W, CH, C   five uint32
    labels  N uint32
    pixels  N*H*W*CH uint8, row-major (sample, row, column, channel)

Pixels are scaled to [0, 1] on load.
"""
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import augment
from .errors import EmptySet, InfeasibleSplit, InvalidLambda

RASTER_MAGIC = b"EPR1"


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""
    ids: np.ndarray = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        if self.ids is None:
            self.ids = np.arange(len(self.labels))
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    @property
    def kind(self):
        return "image" if self.inputs.ndim == 4 else "vector"

    def subset(self, idx, name=None):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes,
                       name or self.name, self.ids[idx])

    def one_hot(self, idx=None):
        labels = self.labels if idx is None else self.labels[idx]
        out = np.zeros((len(labels), self.num_classes))
        out[np.arange(len(labels)), labels] = 1.0
        return out


def gen_two_moons(n, noise=0.1, seed=0):
    """Two interleaved half circles, ``n // 2`` points each.

    Class 0 lies on ``(cos t, sin t)`` and class 1 on
    ``(1 - cos t, 0.5 - sin t)`` with ``t`` uniform in ``[0, pi]``.
    """
    if n % 2:
        raise ValueError("n must be even")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    half = n // 2
    t0 = rng.uniform(0.0, np.pi, half)
    t1 = rng.uniform(0.0, np.pi, half)
    outer = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    inner = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([outer, inner])
    y = np.concatenate([np.zeros(half, np.int64), np.ones(half, np.int64)])
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    perm = rng.permutation(n)
    return Dataset(x[perm], y[perm], 2, name="two_moons")


@dataclass(frozen=True)
class ImbalanceSpec:
    n_max: int
    ratio: float
    num_classes: int


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def class_counts(spec):
    """``N_k = N_max * ratio ** (-(k - 1) / (C - 1))`` for k = 1..C, rounded half up."""
    if spec.ratio < 1:
        raise InvalidLambda(f"imbalance ratio must be >= 1, got {spec.ratio}")
    C = spec.num_classes
    if C == 1:
        return [spec.n_max]
    return [_round_half_up(spec.n_max * spec.ratio ** (-(k - 1) / (C - 1))) for k in range(1, C + 1)]


def make_imbalanced(dataset, spec, seed=0):
    """Subsample ``dataset`` to the long-tailed class profile of ``spec``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    keep = []
    for c, n_c in enumerate(class_counts(spec)):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < n_c:
            raise InfeasibleSplit(f"class {c} has {len(idx)} samples, needs {n_c}")
        keep.append(rng.permutation(idx)[:n_c])
    return dataset.subset(np.sort(np.concatenate(keep)), dataset.name + "_lt")


@dataclass(frozen=True)
class SplitSpec:
    labels_per_class: int
    seed: int = 0


def split(dataset, spec):
    """Class-balanced labeled subset; the rest becomes the unlabeled set."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 13]))
    chosen = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < spec.labels_per_class:
            raise InfeasibleSplit(
                f"class {c} has {len(idx)} samples, fewer than {spec.labels_per_class}")
        chosen.append(rng.permutation(idx)[:spec.labels_per_class])
    labeled = np.sort(np.concatenate(chosen))
    rest = np.setdiff1d(np.arange(len(dataset)), labeled)
    return (dataset.subset(labeled, dataset.name + "_labeled"),
            dataset.subset(rest, dataset.name + "_unlabeled"))


@dataclass
class Batch:
    step: int
    x: np.ndarray            # weak view of the labeled samples
    y: np.ndarray            # integer labels
    labeled_idx: np.ndarray  # positions in the labeled set
    u_weak: np.ndarray
    u_strong: np.ndarray
    u_strong2: np.ndarray
    unlabeled_idx: np.ndarray
    u_labels: np.ndarray     # ground truth, for pseudo-label statistics only


class _Stream:
    """Endless per-epoch shuffled index stream; position ``i`` is random access."""

    def __init__(self, n, seed, stream):
        self.n = n
        self.seed = seed
        self.stream = stream
        self._cache = {}

    def _perm(self, epoch):
        if epoch not in self._cache:
            if len(self._cache) > 4:
                self._cache.clear()
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.stream, epoch]))
            self._cache[epoch] = rng.permutation(self.n)
        return self._cache[epoch]

    def take(self, start, size):
        out = np.empty(size, dtype=np.int64)
        for j, pos in enumerate(range(start, start + size)):
            epoch, offset = divmod(pos, self.n)
            out[j] = self._perm(epoch)[offset]
        return out


def batches(labeled, unlabeled, B, mu, seed, policy=None, start=0, two_strong=False):
    """Yield :class:`Batch` objects from step ``start`` onwards, forever.

    Batch ``k`` depends only on ``(seed, k)``, so a stream restarted at
    ``start=k`` continues exactly where an earlier one stopped.
    """
    if B < 1 or mu < 1:
        raise ValueError("need B >= 1 and mu >= 1")
    if len(labeled) == 0 or len(unlabeled) == 0:
        raise EmptySet("labeled and unlabeled sets must be non-empty")
    policy = policy or augment.AugmentPolicy(kind=labeled.kind)
    uB = int(mu * B)
    lab = _Stream(len(labeled), seed, 1)
    unl = _Stream(len(unlabeled), seed, 2)
    k = start
    while True:
        li = lab.take(k * B, B)
        ui = unl.take(k * uB, uB)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3, k]))
        x = augment.weak(labeled.inputs[li], rng, policy)
        u = unlabeled.inputs[ui]
        uw = augment.weak(u, rng, policy)
        us = augment.strong(u, rng, policy)
        us2 = augment.strong(u, rng, policy) if two_strong else None
        yield Batch(k, x, labeled.labels[li], li, uw, us, us2, ui, unlabeled.labels[ui])
        k += 1


# --- file formats -----------------------------------------------------------------

def save_vectors(dataset, path):
    with open(path, "w") as fh:
        fh.write(f"# classes: {dataset.num_classes}\n")
        for x, y in zip(dataset.inputs, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(y)}\n")


def load_vectors(path, name=None):
    rows, labels, classes = [], [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                if key.strip() == "classes":
                    classes = int(val)
                continue
            parts = line.split(",")
            try:
                rows.append([float(p) for p in parts[:-1]])
                labels.append(int(parts[-1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise EmptySet(f"{path} holds no samples")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have differing widths")
    if classes is None:
        classes = max(labels) + 1
    return Dataset(np.array(rows), np.array(labels), classes, name or str(path))


def save_raster(dataset, path):
    x = dataset.inputs
    if x.ndim != 4:
        raise ValueError("raster format needs (N, H, W, CH) inputs")
    N, H, W, CH = x.shape
    pixels = np.round(np.clip(x, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<5I", N, H, W, CH, dataset.num_classes))
        fh.write(dataset.labels.astype("<u4").tobytes())
        fh.write(pixels.tobytes())


def load_raster(path, name=None):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != RASTER_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    N, H, W, CH, C = struct.unpack_from("<5I", blob, 4)
    off = 4 + 20
    labels = np.frombuffer(blob, dtype="<u4", count=N, offset=off).astype(np.int64)
    off += 4 * N
    n_pix = N * H * W * CH
    if len(blob) - off != n_pix:
        raise ValueError(f"{path}: expected {n_pix} pixel bytes, found {len(blob) - off}")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=off).reshape(N, H, W, CH)
    return Dataset(pixels / 255.0, labels, C, name or str(path))


def load_dataset(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
    return load_raster(path) if head == RASTER_MAGIC else load_vectors(path)
