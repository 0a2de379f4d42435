"""Deterministic synthetic bimodal classification tasks.

Both modes place class prototypes in each modality's feature space and
emit Gaussian samples around them, with the prototype constellation
normalized to unit root-mean-square pairwise distance so noise levels
read as fractions of class separation.

Shared-signal mode makes the full label visible to both modalities, but
modality B can be handicapped: its prototypes are pushed through a fixed
random linear map followed by tanh (warping and compressing their
separation) and its noise level is typically set much higher, so a model
extracts reliable signal from A long before B becomes useful.  That is
the dominant-modality regime the schedulers are designed to repair.

Complementary-signal mode factorizes the label into two independent
factors, one per modality, so neither modality alone can exceed
factor-level accuracy while the pair pins the label exactly.

Generation is a pure function of the spec (seed included): the same
spec reproduces identical bits (PCG64 stream, fixed draw order).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError
from .rng import make_rng
from .tensor import Tensor

MAGIC = b"MILESDS1"
_MODE_CODES = {"shared": 0, "complementary": 1}
_MODE_NAMES = {code: name for name, code in _MODE_CODES.items()}

# Gain of the random linear map ahead of tanh; chosen so the warped
# prototypes keep a moderate separation relative to the unit scale.
_NONLINEAR_GAIN = 3.0


@dataclass
class SyntheticSpec:
    mode: str = "shared"
    classes: int = 10
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 1000
    d_a: int = 32
    d_b: int = 32
    sigma_a: float = 0.3
    sigma_b: float = 1.2
    nonlinear_b: bool = True
    seed: int = 0
    imbalance: float = 1.0  # largest/smallest class count ratio
    k_a: int | None = None  # complementary-mode factor sizes; None derives them
    k_b: int | None = None

    def __post_init__(self):
        if self.mode not in _MODE_CODES:
            raise ConfigError(f"mode must be one of {sorted(_MODE_CODES)}, got {self.mode!r}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.classes > 0xFFFF:
            raise ConfigError(f"class count {self.classes} exceeds the file format's u16 labels")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("every split needs at least one sample")
        if min(self.d_a, self.d_b) < 1:
            raise ConfigError("feature dims must be >= 1")
        if self.sigma_a < 0 or self.sigma_b < 0:
            raise ConfigError("noise levels must be >= 0")
        if self.imbalance < 1.0:
            raise ConfigError(f"imbalance ratio must be >= 1, got {self.imbalance}")
        if self.mode == "complementary":
            self.k_a, self.k_b = _resolve_factors(self.classes, self.k_a, self.k_b)


def _resolve_factors(classes: int, k_a: int | None, k_b: int | None) -> tuple[int, int]:
    if k_a is not None or k_b is not None:
        if k_a is None or k_b is None:
            raise ConfigError("specify both factor sizes or neither")
        if k_a < 2 or k_b < 2 or k_a * k_b != classes:
            raise ConfigError(
                f"factor sizes must be >= 2 with k_a * k_b = classes; got {k_a} * {k_b} != {classes}"
            )
        return k_a, k_b
    # most balanced factorization with the smaller factor first
    for k in range(int(classes**0.5), 1, -1):
        if classes % k == 0:
            return k, classes // k
    raise ConfigError(f"classes = {classes} has no factorization with both factors >= 2")


@dataclass
class DatasetSplit:
    features_a: Tensor
    features_b: Tensor
    labels: np.ndarray  # int64, values in [0, classes)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class BimodalDataset:
    train: DatasetSplit
    val: DatasetSplit
    test: DatasetSplit
    classes: int
    mode: str
    spec: SyntheticSpec | None = None  # None when loaded from a file

    @property
    def d_a(self) -> int:
        return self.train.features_a.data.shape[1]

    @property
    def d_b(self) -> int:
        return self.train.features_b.data.shape[1]

    def splits(self) -> dict[str, DatasetSplit]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _class_counts(n: int, classes: int, imbalance: float) -> np.ndarray:
    """Per-class sample counts: balanced to within one, or linearly tapered."""
    if imbalance == 1.0:
        base, extra = divmod(n, classes)
        counts = np.full(classes, base, dtype=np.int64)
        counts[:extra] += 1
        return counts
    weights = np.linspace(imbalance, 1.0, classes)
    raw = n * weights / weights.sum()
    counts = np.floor(raw).astype(np.int64)
    remainder = np.argsort(-(raw - counts))
    counts[remainder[: n - counts.sum()]] += 1
    if counts.min() < 1:  # tiny splits with harsh ratios still need every class
        counts[counts < 1] = 1
        while counts.sum() > n:
            counts[np.argmax(counts)] -= 1
    return counts


def _unit_scale_prototypes(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    # i.i.d. normal coordinates scaled so E||p_i - p_j||^2 = 1
    return rng.normal(0.0, 1.0, size=(count, dim)) / np.sqrt(2.0 * dim)


def generate(spec: SyntheticSpec) -> BimodalDataset:
    """Synthesize all three splits for the given spec."""
    rng = make_rng(spec.seed)
    if spec.mode == "shared":
        protos_a = _unit_scale_prototypes(rng, spec.classes, spec.d_a)
        protos_b = _unit_scale_prototypes(rng, spec.classes, spec.d_b)
    else:
        protos_a = _unit_scale_prototypes(rng, spec.k_a, spec.d_a)
        protos_b = _unit_scale_prototypes(rng, spec.k_b, spec.d_b)
    if spec.nonlinear_b:
        warp = rng.normal(0.0, _NONLINEAR_GAIN / np.sqrt(spec.d_b), size=(spec.d_b, spec.d_b))
        protos_b = np.tanh(protos_b @ warp.T)

    splits = {}
    for name, n in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        counts = _class_counts(n, spec.classes, spec.imbalance)
        labels = rng.permutation(np.repeat(np.arange(spec.classes), counts))
        if spec.mode == "shared":
            centers_a = protos_a[labels]
            centers_b = protos_b[labels]
        else:
            centers_a = protos_a[labels // spec.k_b]
            centers_b = protos_b[labels % spec.k_b]
        features_a = centers_a + rng.normal(0.0, spec.sigma_a, size=(n, spec.d_a))
        features_b = centers_b + rng.normal(0.0, spec.sigma_b, size=(n, spec.d_b))
        splits[name] = DatasetSplit(Tensor(features_a), Tensor(features_b), labels.astype(np.int64))
    return BimodalDataset(splits["train"], splits["val"], splits["test"], spec.classes, spec.mode, spec)


def save(dataset: BimodalDataset, path) -> None:
    """Write the dataset in the MILESDS1 binary layout.

    Layout: 8-byte magic, little-endian header (u32 classes, d_a, d_b,
    n_train, n_val, n_test; u8 mode code), per-split feature blocks
    (A then B, row-major little-endian float64, splits in train/val/test
    order), then per-split labels as little-endian u16.
    """
    splits = (dataset.train, dataset.val, dataset.test)
    header = struct.pack(
        "<6IB",
        dataset.classes,
        dataset.d_a,
        dataset.d_b,
        len(dataset.train),
        len(dataset.val),
        len(dataset.test),
        _MODE_CODES[dataset.mode],
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        for split in splits:
            fh.write(split.features_a.data.astype("<f8", copy=False).tobytes(order="C"))
            fh.write(split.features_b.data.astype("<f8", copy=False).tobytes(order="C"))
        for split in splits:
            fh.write(split.labels.astype("<u2").tobytes())


def load(path) -> BimodalDataset:
    """Read a MILESDS1 file back; the inverse of save, bit for bit."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: not a MILESDS1 file (bad magic {blob[:8]!r})")
    header_size = struct.calcsize("<6IB")
    if len(blob) < 8 + header_size:
        raise CorruptionError(f"{path}: truncated header")
    classes, d_a, d_b, n_train, n_val, n_test, mode_code = struct.unpack_from("<6IB", blob, 8)
    if mode_code not in _MODE_NAMES:
        raise FormatError(f"{path}: unknown mode code {mode_code}")
    sizes = (n_train, n_val, n_test)
    expected = 8 + header_size + sum(n * (d_a + d_b) * 8 + n * 2 for n in sizes)
    if len(blob) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes per header, found {len(blob)}")

    offset = 8 + header_size
    features = []
    for n in sizes:
        fa = np.frombuffer(blob, dtype="<f8", count=n * d_a, offset=offset).reshape(n, d_a)
        offset += n * d_a * 8
        fb = np.frombuffer(blob, dtype="<f8", count=n * d_b, offset=offset).reshape(n, d_b)
        offset += n * d_b * 8
        features.append((fa, fb))
    splits = []
    for (fa, fb), n in zip(features, sizes):
        labels = np.frombuffer(blob, dtype="<u2", count=n, offset=offset).astype(np.int64)
        offset += n * 2
        if labels.size and labels.max() >= classes:
            raise CorruptionError(f"{path}: label {labels.max()} out of range for {classes} classes")
        splits.append(DatasetSplit(Tensor(fa), Tensor(fb), labels))
    return BimodalDataset(splits[0], splits[1], splits[2], classes, _MODE_NAMES[mode_code])
