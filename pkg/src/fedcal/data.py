"""Dataset synthesis, CIFAR-10 binary IO, and non-IID client partitioning.

Synthetic data is a mixture of unit-variance Gaussian blobs with
axis-aligned means, sized so federated runs finish in seconds. Label
skew comes from a per-class Dirichlet draw over clients; quantity skew
from an explicit per-client proportion vector. All partitioners
conserve the source dataset exactly (no loss, no duplication) and are
pure functions of their seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_container, save_container
from .metrics import OOD_LABEL
from .rng import named_rng

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
CIFAR_CLASSES = 10

PROP_ATOL = 1e-9
MAX_PARTITION_ATTEMPTS = 100


@dataclass
class Dataset:
    """Feature matrix with integer labels.

    ``provenance`` is "synthetic", "file", or "ood"; OOD datasets carry
    the sentinel label on every row and are never fed to training.
    """

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = "synthetic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError(f"inputs must be a nonempty 2-D matrix, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.inputs.shape[0]} inputs")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.provenance == "ood":
            if not (self.labels == OOD_LABEL).all():
                raise ValueError("ood datasets must carry the sentinel label on every row")
        elif self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]")

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, indices):
        return Dataset(self.inputs[indices], self.labels[indices],
                       self.num_classes, self.provenance, dict(self.meta))


@dataclass
class ClientPartition:
    """One client's share of a source dataset, with the source rows kept."""

    client_id: int
    dataset: Dataset
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        if self.dataset.n < 1:
            raise ValueError(f"client {self.client_id} received an empty dataset")
        if self.indices.shape != (self.dataset.n,):
            raise ValueError(
                f"client {self.client_id}: {self.indices.shape[0]} indices for "
                f"{self.dataset.n} samples")

    @property
    def n_i(self):
        return self.dataset.n


@dataclass
class PartitionPlan:
    """How to split a dataset across clients.

    Exactly one skew may be active: ``alpha`` (label skew) or
    ``quantity_skew`` proportions; neither means an IID stratified split.
    """

    num_clients: int
    alpha: float | None = None
    quantity_skew: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.quantity_skew is not None:
            self.quantity_skew = np.ascontiguousarray(self.quantity_skew, dtype=np.float64)
            if self.quantity_skew.shape != (self.num_clients,):
                raise ValueError(
                    f"quantity_skew needs {self.num_clients} proportions, got "
                    f"shape {self.quantity_skew.shape}")
            if (self.quantity_skew <= 0).any():
                raise ValueError("quantity_skew proportions must all be positive")
            if abs(self.quantity_skew.sum() - 1.0) > PROP_ATOL:
                raise ValueError(
                    f"quantity_skew proportions must sum to 1, got {self.quantity_skew.sum()!r}")
        if self.alpha is not None and self.quantity_skew is not None:
            raise ValueError("alpha and quantity_skew are mutually exclusive")


def largest_remainder(targets, total):
    """Round nonnegative real targets to integers summing exactly to total.

    Floors first, then hands the remaining units to the largest
    fractional parts (ties to the lowest index).
    """
    targets = np.asarray(targets, dtype=np.float64)
    if (targets < 0).any():
        raise ValueError("targets must be nonnegative")
    floors = np.floor(targets).astype(np.int64)
    short = int(total) - int(floors.sum())
    if short < 0 or short > targets.shape[0]:
        raise ValueError(
            f"targets (sum {targets.sum()!r}) incompatible with total {total}")
    if short:
        frac = targets - floors
        order = np.lexsort((np.arange(targets.shape[0]), -frac))
        floors[order[:short]] += 1
    return floors


def gen_synthetic(num_classes, dim, n_per_class, class_separation, seed):
    """Isotropic unit-variance Gaussian blob per class, axis-aligned means.

    Class k is centered at class_separation * e_k, so any two means sit
    class_separation * sqrt(2) apart. Deterministic per seed.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if num_classes > dim:
        raise ValueError(
            f"axis-aligned means need dim >= num_classes, got {dim} < {num_classes}")
    if class_separation < 0:
        raise ValueError(f"class_separation must be >= 0, got {class_separation}")

    rng = named_rng(seed, "data.synthetic")
    means = np.zeros((num_classes, dim))
    means[np.arange(num_classes), np.arange(num_classes)] = class_separation
    inputs = np.vstack([
        means[k] + rng.standard_normal((n_per_class, dim))
        for k in range(num_classes)
    ])
    labels = np.repeat(np.arange(num_classes), n_per_class)
    order = rng.permutation(inputs.shape[0])
    meta = {
        "class_separation": float(class_separation),
        "n_per_class": int(n_per_class),
        "means": means.tolist(),
        "seed": int(seed),
    }
    return Dataset(inputs[order], labels[order], num_classes, "synthetic", meta)


def _check_partition_source(ds, num_clients):
    if ds.provenance == "ood":
        raise ValueError("ood datasets are evaluation-only and cannot be partitioned")
    if ds.n < ds.num_classes:
        raise ValueError(f"dataset has {ds.n} samples, fewer than its "
                         f"{ds.num_classes} classes")
    if num_clients > ds.n:
        raise ValueError(
            f"cannot give {num_clients} clients nonempty shares of {ds.n} samples")


def _class_indices(ds):
    return [np.flatnonzero(ds.labels == k) for k in range(ds.num_classes)]


def _build_partitions(ds, per_client_indices):
    parts = []
    for i, idx in enumerate(per_client_indices):
        idx = np.sort(np.concatenate(idx)) if idx else np.zeros(0, dtype=np.int64)
        if idx.shape[0] == 0:
            return None
        parts.append(ClientPartition(i, ds.subset(idx), idx))
    return parts


def dirichlet_partition(ds, plan):
    """Label-skew split: per class, proportions over clients ~ Dir(alpha).

    Largest-remainder rounding keeps per-class conservation exact. If
    any client ends up empty the whole draw is resampled from the next
    attempt's stream (up to 100 attempts), preserving the Dirichlet
    shape instead of patching counts.
    """
    if plan.alpha is None:
        raise ValueError("dirichlet_partition needs plan.alpha")
    n_clients = plan.num_clients
    _check_partition_source(ds, n_clients)
    by_class = _class_indices(ds)

    for attempt in range(MAX_PARTITION_ATTEMPTS):
        rng = named_rng(plan.seed, "partition.dirichlet", attempt)
        assignment = [[] for _ in range(n_clients)]
        for idx in by_class:
            if idx.shape[0] == 0:
                continue
            props = rng.dirichlet(np.full(n_clients, plan.alpha))
            quotas = largest_remainder(props * idx.shape[0], idx.shape[0])
            shuffled = idx[rng.permutation(idx.shape[0])]
            offset = 0
            for i in range(n_clients):
                assignment[i].append(shuffled[offset : offset + quotas[i]])
                offset += quotas[i]
        parts = _build_partitions(ds, assignment)
        if parts is not None:
            for p in parts:
                p.dataset.meta["partition"] = {
                    "kind": "dirichlet", "alpha": plan.alpha,
                    "seed": plan.seed, "attempt": attempt,
                }
            return parts
    raise ValueError(
        f"no nonempty assignment for alpha={plan.alpha}, N={n_clients} after "
        f"{MAX_PARTITION_ATTEMPTS} attempts; alpha is likely too small for N")


def quantity_skew_partition(ds, proportions, seed):
    """Size-skew split: client i gets its largest-remainder share of n,
    stratified so each client's label histogram tracks the global one.

    Cell counts start at floor(p_i * c_k) per class and the leftovers
    are placed by largest fractional part among clients that still have
    row capacity, so both client sizes and class totals come out exact.
    Cells never fall below their floor; capacity pressure on the last
    classes can push a cell a couple of samples above its exact share
    (bounded by the client's leftover capacity, which is below K+1).
    """
    plan = PartitionPlan(len(np.atleast_1d(proportions)),
                         quantity_skew=np.atleast_1d(proportions), seed=seed)
    props = plan.quantity_skew
    n_clients = plan.num_clients
    _check_partition_source(ds, n_clients)

    sizes = largest_remainder(props * ds.n, ds.n)
    if (sizes == 0).any():
        bad = int(np.flatnonzero(sizes == 0)[0])
        raise ValueError(
            f"client {bad} would receive 0 of {ds.n} samples "
            f"(proportion {props[bad]:g}); increase data or proportions")

    by_class = _class_indices(ds)
    counts = np.array([idx.shape[0] for idx in by_class])
    cells = np.floor(props[:, None] * counts[None, :]).astype(np.int64)
    capacity = sizes - cells.sum(axis=1)
    for k in range(ds.num_classes):
        deficit = int(counts[k] - cells[:, k].sum())
        remainder = props * counts[k] - cells[:, k]
        for _ in range(deficit):
            open_rows = capacity > 0
            pick = int(np.flatnonzero(open_rows)[np.argmax(remainder[open_rows])])
            cells[pick, k] += 1
            remainder[pick] -= 1.0
            capacity[pick] -= 1

    rng = named_rng(seed, "partition.quantity")
    assignment = [[] for _ in range(n_clients)]
    for k, idx in enumerate(by_class):
        if idx.shape[0] == 0:
            continue
        shuffled = idx[rng.permutation(idx.shape[0])]
        offset = 0
        for i in range(n_clients):
            assignment[i].append(shuffled[offset : offset + cells[i, k]])
            offset += cells[i, k]
    parts = _build_partitions(ds, assignment)
    assert parts is not None  # sizes >= 1 was checked above
    for p in parts:
        p.dataset.meta["partition"] = {
            "kind": "quantity", "proportions": props.tolist(), "seed": seed,
        }
    return parts


def iid_partition(ds, num_clients, seed):
    """Stratified near-equal split: every class dealt evenly to all clients.

    The +1 leftovers per class rotate across clients so no client is
    systematically larger.
    """
    _check_partition_source(ds, num_clients)
    rng = named_rng(seed, "partition.iid")
    assignment = [[] for _ in range(num_clients)]
    rotation = 0
    for idx in _class_indices(ds):
        if idx.shape[0] == 0:
            continue
        base, extra = divmod(idx.shape[0], num_clients)
        quotas = np.full(num_clients, base, dtype=np.int64)
        for j in range(extra):
            quotas[(rotation + j) % num_clients] += 1
        rotation += extra
        shuffled = idx[rng.permutation(idx.shape[0])]
        offset = 0
        for i in range(num_clients):
            assignment[i].append(shuffled[offset : offset + quotas[i]])
            offset += quotas[i]
    parts = _build_partitions(ds, assignment)
    if parts is None:
        raise ValueError(
            f"IID split of {ds.n} samples over {num_clients} clients left a "
            "client empty; reduce the client count")
    for p in parts:
        p.dataset.meta["partition"] = {"kind": "iid", "seed": seed}
    return parts


def make_partitions(ds, plan):
    """Dispatch on the plan: alpha -> Dirichlet, proportions -> quantity,
    neither -> IID."""
    if plan.alpha is not None:
        return dirichlet_partition(ds, plan)
    if plan.quantity_skew is not None:
        return quantity_skew_partition(ds, plan.quantity_skew, plan.seed)
    return iid_partition(ds, plan.num_clients, plan.seed)


def gen_ood(reference, mode, magnitude, seed):
    """Out-of-distribution companion set for a synthetic reference.

    mean_shift: the reference mixture translated by magnitude along the
    normalized all-ones direction (magnitude 0 reproduces the reference
    distribution, the degenerate control). fresh_classes: entirely new
    Gaussian blobs at random unit directions scaled by magnitude. All
    labels are the sentinel; sample counts per component match the
    reference.
    """
    if mode not in ("mean_shift", "fresh_classes"):
        raise ValueError(f"unknown ood mode {mode!r}")
    if magnitude < 0:
        raise ValueError(f"magnitude must be >= 0, got {magnitude}")
    if "means" not in reference.meta:
        raise ValueError("reference dataset has no generative means in its meta "
                         "(only synthetic datasets can seed an OOD set)")
    ref_means = np.asarray(reference.meta["means"], dtype=np.float64)
    counts = np.bincount(reference.labels, minlength=reference.num_classes)

    rng = named_rng(seed, f"data.ood.{mode}")
    if mode == "mean_shift":
        shift = magnitude * np.ones(reference.dim) / np.sqrt(reference.dim)
        means = ref_means + shift
    else:
        raw = rng.standard_normal((reference.num_classes, reference.dim))
        means = magnitude * raw / np.linalg.norm(raw, axis=1, keepdims=True)

    blocks = [
        means[k] + rng.standard_normal((int(counts[k]), reference.dim))
        for k in range(reference.num_classes)
        if counts[k] > 0
    ]
    inputs = np.vstack(blocks)
    order = rng.permutation(inputs.shape[0])
    meta = {
        "mode": mode, "magnitude": float(magnitude), "seed": int(seed),
        "means": means.tolist(),
    }
    labels = np.full(inputs.shape[0], OOD_LABEL, dtype=np.int64)
    return Dataset(inputs[order], labels, reference.num_classes, "ood", meta)


def train_test_split(ds, test_fraction=0.2, seed=0, salt=0):
    """Stratified per-dataset split into (train, test).

    The test set takes round(test_fraction * n) samples, at least 1 and
    at most n - 1, spread over classes by largest remainder. A
    single-sample dataset cannot spare a test sample: test comes back
    None and the caller should exclude the client from evaluation.
    ``salt`` decorrelates splits sharing one seed (e.g. per client id).
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if ds.provenance == "ood":
        raise ValueError("ood datasets are never split for training")
    if ds.n == 1:
        return ds.subset(np.array([0])), None

    target = int(np.clip(round(test_fraction * ds.n), 1, ds.n - 1))
    by_class = [idx for idx in _class_indices(ds) if idx.shape[0] > 0]
    quotas = largest_remainder(
        np.array([idx.shape[0] * target / ds.n for idx in by_class]), target)

    rng = named_rng(seed, "data.split", salt)
    test_parts, train_parts = [], []
    for idx, q in zip(by_class, quotas):
        shuffled = idx[rng.permutation(idx.shape[0])]
        test_parts.append(shuffled[:q])
        train_parts.append(shuffled[q:])
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.sort(np.concatenate(test_parts))
    return ds.subset(train_idx), ds.subset(test_idx)


def load_cifar10_binary(path):
    """Parse the standard CIFAR-10 binary layout.

    Each 3073-byte record is 1 label byte then 3072 pixel bytes (R, G, B
    planes, row-major 32x32); pixels scale to [0, 1] as byte/255.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise ValueError(
            f"{path}: length {len(raw)} is not a positive multiple of the "
            f"{CIFAR_RECORD}-byte record size (offset {len(raw) % CIFAR_RECORD} "
            f"into record {len(raw) // CIFAR_RECORD})")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.shape[0]:
        raise ValueError(
            f"{path}: record {int(bad[0])} has label byte {int(labels[bad[0]])}, "
            f"valid labels are 0-{CIFAR_CLASSES - 1}")
    inputs = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(inputs, labels, CIFAR_CLASSES, "file",
                   {"format": "cifar10-binary", "path": str(path)})


def save_cifar10_binary(ds, path):
    """Serialize back to the binary layout; round-trips bit-exactly."""
    if ds.dim != CIFAR_PIXELS:
        raise ValueError(f"dataset dim {ds.dim} != {CIFAR_PIXELS} pixels")
    if ds.provenance == "ood":
        raise ValueError("ood datasets have no class labels to serialize")
    if ds.num_classes > CIFAR_CLASSES:
        raise ValueError(f"dataset has {ds.num_classes} classes, format allows "
                         f"{CIFAR_CLASSES}")
    pixels = np.round(ds.inputs * 255.0)
    if (np.abs(ds.inputs * 255.0 - pixels) > 1e-6).any() or \
            (pixels < 0).any() or (pixels > 255).any():
        raise ValueError("inputs are not byte-scaled pixel values in [0, 1]")
    records = np.empty((ds.n, CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = ds.labels
    records[:, 1:] = pixels.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(records.tobytes())


def save_dataset(ds, path):
    """Persist to the array container (text header + raw arrays)."""
    save_container(path, "dataset", {
        "num_classes": ds.num_classes,
        "provenance": ds.provenance,
        "meta": ds.meta,
    }, {"inputs": ds.inputs, "labels": ds.labels})


def load_dataset(path):
    _, meta, arrays = load_container(path, expect_kind="dataset")
    return Dataset(arrays["inputs"], arrays["labels"], meta["num_classes"],
                   meta["provenance"], meta["meta"])


def save_partitions(parts, path):
    """Persist client index lists (the dataset itself is stored separately)."""
    meta = {"num_clients": len(parts),
            "partition": parts[0].dataset.meta.get("partition") if parts else None}
    arrays = {f"client_{p.client_id}": p.indices for p in parts}
    save_container(path, "partitions", meta, arrays)


def load_partitions(ds, path):
    _, meta, arrays = load_container(path, expect_kind="partitions")
    parts = []
    for i in range(meta["num_clients"]):
        idx = arrays[f"client_{i}"]
        parts.append(ClientPartition(i, ds.subset(idx), idx))
    return parts
