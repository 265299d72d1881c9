"""Datasets: CIFAR-10 binary ingestion, a synthetic desk-scale generator,
non-iid partitioning across server and clients, and backdoor poisoning.

All operations are pure functions of their inputs and seeds; Dataset arrays
are read-only so subsets can be shared without copying concerns.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import seeding

CIFAR_CLASSES = 10
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixel bytes
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"

SHARDED = "sharded"
DIRICHLET = "dirichlet"


class DataFormatError(ValueError):
    """Raised for malformed dataset files."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """images: [n, C, H, W] float64 in [0, 1]; labels: [n] int64 class indices."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be [n, C, H, W], got shape {images.shape}")
        if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
            raise ValueError(
                f"{images.shape[0]} images but {labels.shape[0]} labels"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "images", _readonly(images))
        object.__setattr__(self, "labels", _readonly(labels))

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.num_classes)

    def class_indices(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]


def _load_cifar_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    if not os.path.isfile(path):
        raise DataFormatError(f"missing CIFAR-10 batch file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: {raw.size} bytes is not a multiple of the {CIFAR_RECORD_BYTES}-byte record size"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    if labels.max() > CIFAR_CLASSES - 1:
        raise DataFormatError(f"{path}: label byte {int(labels.max())} exceeds 9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels.astype(np.int64)


def load_cifar10(directory: str) -> tuple[Dataset, Dataset]:
    """Read the six standard binary batch files: 50000 train / 10000 test samples.

    Each record is 3073 bytes: one label byte then 1024 red, 1024 green and
    1024 blue bytes in row-major 32x32 order. Pixels are scaled by 1/255.
    """
    train_parts = [_load_cifar_file(os.path.join(directory, name)) for name in CIFAR_TRAIN_FILES]
    test_images, test_labels = _load_cifar_file(os.path.join(directory, CIFAR_TEST_FILE))
    train_images = np.concatenate([p[0] for p in train_parts])
    train_labels = np.concatenate([p[1] for p in train_parts])
    if train_images.shape[0] != 50000:
        raise DataFormatError(
            f"expected 50000 training records, found {train_images.shape[0]}"
        )
    if test_images.shape[0] != 10000:
        raise DataFormatError(f"expected 10000 test records, found {test_images.shape[0]}")
    return (
        Dataset(train_images, train_labels, CIFAR_CLASSES),
        Dataset(test_images, test_labels, CIFAR_CLASSES),
    )


def gen_synthetic(
    num_classes: int,
    samples_per_class: int,
    image_shape: tuple[int, int, int],
    seed: int,
    noise: float = 0.08,
) -> Dataset:
    """Class c images are a class-specific mean intensity plus seeded Gaussian
    noise, clipped to [0, 1]. Easy enough that a small MLP separates the
    classes within a couple of epochs."""
    if num_classes < 1 or samples_per_class < 1 or any(d < 1 for d in image_shape):
        raise ValueError("num_classes, samples_per_class and image dims must be positive")
    rng = seeding.stream(seed, seeding.SYNTHETIC)
    n = num_classes * samples_per_class
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    base = (labels + 1.0) / (num_classes + 1.0)
    images = base[:, None, None, None] + noise * rng.standard_normal((n, *image_shape))
    images = np.clip(images, 0.0, 1.0)
    return Dataset(images, labels, num_classes)


@dataclass(frozen=True)
class PartitionPlan:
    scheme: str  # "sharded" | "dirichlet"
    num_clients: int
    server_share: float = 0.1
    shards_per_client: int = 2
    beta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in (SHARDED, DIRICHLET):
            raise ValueError(f"scheme must be '{SHARDED}' or '{DIRICHLET}', got {self.scheme!r}")
        if self.num_clients < 1:
            raise ValueError("num_clients must be positive")
        if not 0.0 <= self.server_share < 1.0:
            raise ValueError("server_share must lie in [0, 1)")
        if self.scheme == SHARDED and self.shards_per_client < 1:
            raise ValueError("shards_per_client must be positive")
        if self.scheme == DIRICHLET and self.beta <= 0:
            raise ValueError("beta must be positive")


def partition_indices(labels: np.ndarray, plan: PartitionPlan) -> tuple[np.ndarray, list[np.ndarray]]:
    """Index-level split: (server indices, one index array per client).

    The server share is drawn uniformly at random first; the remainder is
    split non-iid. Sharded: sort by label, cut into num_clients *
    shards_per_client contiguous shards, deal shards_per_client shuffled
    shards to each client. Dirichlet: per-class client proportions drawn
    from Dirichlet(beta).
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n == 0:
        raise ValueError("cannot partition an empty dataset")
    if n < plan.num_clients:
        raise ValueError(f"{n} samples cannot cover {plan.num_clients} clients")
    rng = seeding.stream(plan.seed, seeding.PARTITION)

    perm = rng.permutation(n)
    server_count = int(round(plan.server_share * n))
    server_idx = np.sort(perm[:server_count])
    rest = perm[server_count:]

    if plan.scheme == SHARDED:
        num_shards = plan.num_clients * plan.shards_per_client
        if rest.size < num_shards:
            raise ValueError(
                f"{rest.size} client samples cannot fill {num_shards} shards"
            )
        # Stable sort by label keeps the construction deterministic.
        order = rest[np.argsort(labels[rest], kind="stable")]
        shards = np.array_split(order, num_shards)
        deal = rng.permutation(num_shards)
        client_idx = [
            np.sort(np.concatenate([shards[s] for s in deal[c * plan.shards_per_client : (c + 1) * plan.shards_per_client]]))
            for c in range(plan.num_clients)
        ]
    else:
        per_client: list[list[np.ndarray]] = [[] for _ in range(plan.num_clients)]
        classes = np.unique(labels[rest])
        for cls in classes:
            members = rest[labels[rest] == cls]
            members = rng.permutation(members)
            props = rng.dirichlet(np.full(plan.num_clients, plan.beta))
            cuts = np.floor(np.cumsum(props) * members.size).astype(np.int64)[:-1]
            for c, chunk in enumerate(np.split(members, cuts)):
                per_client[c].append(chunk)
        client_idx = [
            np.sort(np.concatenate(chunks)) if chunks else np.zeros(0, dtype=np.int64)
            for chunks in per_client
        ]
    return server_idx, client_idx


def partition(dataset: Dataset, plan: PartitionPlan) -> tuple[Dataset, list[Dataset]]:
    """Disjoint cover of the dataset: (server subset, per-client subsets)."""
    server_idx, client_idx = partition_indices(dataset.labels, plan)
    return dataset.subset(server_idx), [dataset.subset(idx) for idx in client_idx]


@dataclass(frozen=True)
class TriggerPatch:
    """Rectangular pixel patch written over all channels."""

    row: int = 0
    col: int = 0
    height: int = 3
    width: int = 3
    fill: float = 1.0

    def __post_init__(self):
        if self.row < 0 or self.col < 0 or self.height < 1 or self.width < 1:
            raise ValueError("trigger patch offsets must be >= 0 and sizes >= 1")
        if not 0.0 <= self.fill <= 1.0:
            raise ValueError("trigger fill must lie in [0, 1]")

    def fits(self, image_shape: tuple[int, int, int]) -> bool:
        _, h, w = image_shape
        return self.row + self.height <= h and self.col + self.width <= w


@dataclass(frozen=True)
class BackdoorSpec:
    """Label-flip backdoor: triggered source-class samples relabeled to the target.

    malicious_rate is the single-malicious-client ratio of poisoned samples to
    all samples; with several malicious clients each runs at rate/num so the
    cumulative amount of poisoned data stays constant. trigger_fraction picks
    the seeded subpopulation of source-class samples that carries the trigger;
    copies of those samples replace clean ones until the rate is reached.
    """

    source_class: int = 1
    target_class: int = 2
    trigger: TriggerPatch = TriggerPatch()
    malicious_rate: Fraction = Fraction(1, 3)
    num_malicious_clients: int = 1
    trigger_fraction: float = 0.1

    def __post_init__(self):
        if self.source_class == self.target_class:
            raise ValueError("source_class and target_class must differ")
        rate = Fraction(self.malicious_rate)
        if not 0 < rate <= 1:
            raise ValueError(f"malicious_rate must lie in (0, 1], got {rate}")
        object.__setattr__(self, "malicious_rate", rate)
        if self.num_malicious_clients < 1:
            raise ValueError("num_malicious_clients must be positive")
        if not 0.0 < self.trigger_fraction <= 1.0:
            raise ValueError("trigger_fraction must lie in (0, 1]")

    @property
    def per_client_rate(self) -> Fraction:
        return self.malicious_rate / self.num_malicious_clients


def apply_trigger(images: np.ndarray, trigger: TriggerPatch) -> np.ndarray:
    """Return a copy with the patch written over every channel."""
    out = np.array(images, dtype=np.float64)
    out[..., trigger.row : trigger.row + trigger.height, trigger.col : trigger.col + trigger.width] = trigger.fill
    return out


def inject_backdoor(
    client_datasets: list[Dataset],
    spec: BackdoorSpec,
    malicious_client_ids,
    seed: int,
) -> tuple[list[Dataset], dict[int, np.ndarray]]:
    """Poison the named clients; everyone else is returned untouched.

    Per malicious client: a seeded trigger_fraction of its source-class
    samples is triggered and relabeled in place, then copies of those samples
    replace seeded clean samples until poisoned/total reaches the per-client
    rate within one sample. At rate 1/1 every clean sample is replaced.
    Returns the new datasets plus, per malicious client, the poisoned row
    indices.
    """
    malicious_ids = sorted(int(c) for c in malicious_client_ids)
    if not malicious_ids:
        raise ValueError("malicious_client_ids must not be empty")
    if malicious_ids[0] < 0 or malicious_ids[-1] >= len(client_datasets):
        raise ValueError(f"malicious client ids {malicious_ids} out of range")
    if spec.num_malicious_clients != len(malicious_ids):
        raise ValueError(
            f"spec expects {spec.num_malicious_clients} malicious clients, got {len(malicious_ids)} ids"
        )

    rate = spec.per_client_rate
    poisoned_index_sets: dict[int, np.ndarray] = {}
    out: list[Dataset] = list(client_datasets)
    for cid in malicious_ids:
        ds = client_datasets[cid]
        if not spec.trigger.fits(ds.image_shape):
            raise ValueError(
                f"trigger patch does not fit image shape {ds.image_shape}"
            )
        n = len(ds)
        sources = ds.class_indices(spec.source_class)
        if sources.size == 0:
            raise ValueError(
                f"malicious client {cid} holds no samples of source class {spec.source_class}"
            )
        target_count = int(round(float(rate) * n))
        if target_count == 0:
            poisoned_index_sets[cid] = np.zeros(0, dtype=np.int64)
            continue

        rng = seeding.stream(seed, seeding.TRIGGER, cid)
        subpop = max(1, int(round(spec.trigger_fraction * sources.size)))
        designated_count = min(subpop, target_count, sources.size)
        designated = np.sort(rng.choice(sources, size=designated_count, replace=False))

        images = np.array(ds.images)
        labels = np.array(ds.labels)
        images[designated] = apply_trigger(ds.images[designated], spec.trigger)
        labels[designated] = spec.target_class

        copies = target_count - designated_count
        poisoned = designated
        if copies > 0:
            # Cycle through the designated samples so copies are spread evenly,
            # and evict seeded clean rows to keep the client size constant.
            sources_of_copies = designated[np.arange(copies) % designated_count]
            clean = np.setdiff1d(np.arange(n), designated, assume_unique=False)
            evicted = np.sort(rng.choice(clean, size=copies, replace=False))
            images[evicted] = images[sources_of_copies]
            labels[evicted] = spec.target_class
            poisoned = np.sort(np.concatenate([designated, evicted]))

        out[cid] = Dataset(images, labels, ds.num_classes)
        poisoned_index_sets[cid] = poisoned
    return out, poisoned_index_sets


def make_backdoor_testset(test: Dataset, spec: BackdoorSpec) -> Dataset:
    """All source-class test samples, triggered and relabeled to the target class."""
    sources = test.class_indices(spec.source_class)
    if sources.size == 0:
        raise ValueError(f"test set holds no samples of source class {spec.source_class}")
    if not spec.trigger.fits(test.image_shape):
        raise ValueError(f"trigger patch does not fit image shape {test.image_shape}")
    images = apply_trigger(test.images[sources], spec.trigger)
    labels = np.full(sources.size, spec.target_class, dtype=np.int64)
    return Dataset(images, labels, test.num_classes)
