"""Synthetic heterogeneous data and non-IID partitioning.

The mixture generator produces grouped clients whose class-conditional
feature clusters sit on a circle with minimum pairwise distance equal to
``class_mean_separation`` (deterministic geometry; randomness enters only
through noise draws and label order).  With ``label_permutation_per_group``
the groups share the same feature clusters but relabel them by cyclic
shifts, so no single model can fit two groups at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .numerics import Rng


@dataclass
class Dataset:
    features: np.ndarray  # (n, p) float64
    labels: np.ndarray  # (n,) int64 in [0, class_count)
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty (n, p) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one integer per row")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")
        if np.any(self.labels < 0) or np.any(self.labels >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count)


@dataclass
class ClientDataset:
    client_id: int
    train: Dataset
    validation: Dataset
    # Held-out draw from the same distribution when the generator can make
    # one (mixture data); partitioned datasets have no natural test pool and
    # fall back to the validation split for test-accuracy reporting.
    test: Dataset | None = None
    group: int | None = None  # latent group label for mixture clients

    def __post_init__(self):
        if self.validation.n < 1:
            raise ValueError("validation split must be non-empty")

    @property
    def test_or_validation(self) -> Dataset:
        return self.test if self.test is not None else self.validation


@dataclass
class MixtureSpec:
    latent_groups: int
    clients_per_group: list[int] = field(default_factory=list)
    input_dim: int = 2
    classes: int = 2
    class_mean_separation: float = 1.0
    noise_std: float = 0.2
    samples_per_client: int = 100
    label_permutation_per_group: bool = False

    def __post_init__(self):
        if self.latent_groups < 1:
            raise ConfigError("latent_groups must be >= 1")
        if not self.clients_per_group:
            raise ConfigError("clients_per_group must be non-empty")
        if any(c < 1 for c in self.clients_per_group):
            raise ConfigError("clients_per_group entries must be positive")
        if len(self.clients_per_group) != self.latent_groups:
            raise ConfigError("clients_per_group must list one count per group")
        if self.input_dim < 1 or self.classes < 2:
            raise ConfigError("need input_dim >= 1 and classes >= 2")
        if self.class_mean_separation <= 0 or self.noise_std <= 0:
            raise ConfigError("separation and noise_std must be positive")
        if self.samples_per_client < 5:
            raise ConfigError("samples_per_client must be >= 5")
        if self.label_permutation_per_group and self.latent_groups > self.classes:
            raise ConfigError(
                "label permutations are cyclic shifts; need latent_groups <= classes"
            )

    @property
    def num_clients(self) -> int:
        return sum(self.clients_per_group)


def _circle_means(count: int, input_dim: int, separation: float) -> np.ndarray:
    """Cluster centers with minimum pairwise distance = separation."""
    means = np.zeros((count, input_dim))
    if count == 1:
        return means
    if input_dim == 1:
        means[:, 0] = separation * np.arange(count)
        return means
    radius = separation / (2.0 * math.sin(math.pi / count))
    angles = 2.0 * math.pi * np.arange(count) / count
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def _balanced_labels(n: int, classes: int, rng: Rng) -> np.ndarray:
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    labels = np.repeat(np.arange(classes), counts)
    return labels[rng.permutation(n)]


def gen_mixture(spec: MixtureSpec, rng: Rng, validation_fraction: float = 0.2) -> list[ClientDataset]:
    """Sample M grouped clients; clients within a group are i.i.d. draws."""
    C, p = spec.classes, spec.input_dim
    if spec.label_permutation_per_group:
        # shared feature clusters, per-group cyclic relabeling
        cluster_means = _circle_means(C, p, spec.class_mean_separation)
        def mean_for(group: int, label: int) -> np.ndarray:
            return cluster_means[(label - group) % C]
    else:
        all_means = _circle_means(spec.latent_groups * C, p, spec.class_mean_separation)
        def mean_for(group: int, label: int) -> np.ndarray:
            return all_means[group * C + label]

    clients: list[ClientDataset] = []
    client_id = 0
    for group, count in enumerate(spec.clients_per_group):
        label_means = np.stack([mean_for(group, label) for label in range(C)])

        def draw(n: int, stream: Rng) -> Dataset:
            labels = _balanced_labels(n, C, stream)
            feats = label_means[labels] + spec.noise_std * stream.normal(size=(n, p))
            return Dataset(feats, labels, C)

        for _ in range(count):
            crng = rng.split(client_id)
            full = draw(spec.samples_per_client, crng.split(0))
            train, val = split_train_validation(full, validation_fraction, crng.split(1))
            test = draw(spec.samples_per_client, crng.split(2))
            clients.append(ClientDataset(client_id, train, val, test=test, group=group))
            client_id += 1
    return clients


def _repair_small_clients(assignment: list[list[int]], minimum: int = 2) -> None:
    """Move single samples from the largest client until all have >= minimum."""
    sizes = [len(a) for a in assignment]
    while min(sizes) < minimum:
        donor = int(np.argmax(sizes))
        needy = int(np.argmin(sizes))
        if sizes[donor] <= minimum:
            raise ConfigError("base dataset too small to give every client 2 samples")
        assignment[needy].append(assignment[donor].pop())
        sizes = [len(a) for a in assignment]


_SPLIT_STREAM = 0xFFFF  # finalize-stream id, distinct from client ids


def _finalize_clients(
    base: Dataset,
    assignment: list[list[int]],
    rng: Rng,
    validation_fraction: float,
) -> list[ClientDataset]:
    _repair_small_clients(assignment)
    clients = []
    for i, idx in enumerate(assignment):
        local = base.subset(sorted(idx))
        train, val = split_train_validation(local, validation_fraction, rng.split(i))
        clients.append(ClientDataset(i, train, val))
    return clients


def dirichlet_partition(
    base: Dataset, alpha: float, M: int, rng: Rng, validation_fraction: float = 0.2
) -> list[ClientDataset]:
    """Per-class Dirichlet(alpha) split of a base dataset over M clients."""
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    if M < 1:
        raise ConfigError("M must be >= 1")
    if base.n < M * base.class_count:
        raise ConfigError("base dataset needs at least M * class_count samples")
    assignment: list[list[int]] = [[] for _ in range(M)]
    for c in range(base.class_count):
        idx = np.flatnonzero(base.labels == c)
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        proportions = rng.dirichlet(np.full(M, alpha))
        cuts = np.floor(np.cumsum(proportions) * idx.size).astype(int)[:-1]
        for client, part in enumerate(np.split(idx, cuts)):
            assignment[client].extend(part.tolist())
    return _finalize_clients(base, assignment, rng.split(_SPLIT_STREAM), validation_fraction)


def pathological_partition(
    base: Dataset, classes_per_client: int, M: int, rng: Rng, validation_fraction: float = 0.2
) -> list[ClientDataset]:
    """Give each client shards from exactly classes_per_client classes."""
    C = base.class_count
    if classes_per_client < 1 or classes_per_client >= C:
        raise ConfigError("need 1 <= classes_per_client < class_count")
    if classes_per_client * M < C:
        raise ConfigError("classes_per_client * M must cover every class")
    order = rng.permutation(C)
    wanted: list[list[int]] = [[] for _ in range(M)]
    for i in range(M):
        for j in range(classes_per_client):
            wanted[i].append(int(order[(i * classes_per_client + j) % C]))
    takers: dict[int, list[int]] = {c: [] for c in range(C)}
    for i in range(M):
        for c in wanted[i]:
            takers[c].append(i)
    assignment: list[list[int]] = [[] for _ in range(M)]
    for c in range(C):
        idx = np.flatnonzero(base.labels == c)
        if idx.size == 0 or not takers[c]:
            continue
        idx = idx[rng.permutation(idx.size)]
        for client, shard in zip(takers[c], np.array_split(idx, len(takers[c]))):
            assignment[client].extend(shard.tolist())
    return _finalize_clients(base, assignment, rng.split(_SPLIT_STREAM), validation_fraction)


def split_train_validation(d: Dataset, fraction: float, rng: Rng) -> tuple[Dataset, Dataset]:
    """Disjoint split; validation gets ceil(fraction * n) rows, at least one.

    Stratified by class whenever every present class has >= 2 samples.
    """
    if d.n < 2:
        raise ConfigError("cannot split a dataset with fewer than 2 samples")
    if not (0.0 < fraction < 1.0):
        raise ConfigError("fraction must lie in (0, 1)")
    v_total = min(max(1, math.ceil(fraction * d.n)), d.n - 1)
    present = np.unique(d.labels)
    counts = {int(c): int(np.sum(d.labels == c)) for c in present}
    stratified = all(v >= 2 for v in counts.values())
    if stratified:
        caps = {c: counts[c] - 1 for c in counts}
        take = {c: min(int(math.floor(fraction * counts[c])), caps[c]) for c in counts}
        remainders = sorted(
            counts, key=lambda c: (-(fraction * counts[c] - math.floor(fraction * counts[c])), c)
        )
        short = v_total - sum(take.values())
        while short > 0:
            progressed = False
            for c in remainders:
                if short == 0:
                    break
                if take[c] < caps[c]:
                    take[c] += 1
                    short -= 1
                    progressed = True
            if not progressed:
                break
        while short < 0:
            for c in reversed(remainders):
                if short == 0:
                    break
                if take[c] > 0:
                    take[c] -= 1
                    short += 1
        val_idx: list[int] = []
        for c in sorted(counts):
            idx = np.flatnonzero(d.labels == c)
            idx = idx[rng.permutation(idx.size)]
            val_idx.extend(idx[: take[c]].tolist())
    else:
        perm = rng.permutation(d.n)
        val_idx = perm[:v_total].tolist()
    val_mask = np.zeros(d.n, dtype=bool)
    val_mask[val_idx] = True
    return d.subset(np.flatnonzero(~val_mask)), d.subset(np.flatnonzero(val_mask))


def load_csv(path) -> Dataset:
    """Read a header-less CSV of p float columns plus a final integer label."""
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise ValueError(f"{path}: row {lineno}: need at least one feature and a label")
            elif len(parts) != width:
                raise ValueError(f"{path}: row {lineno}: expected {width} columns, got {len(parts)}")
            try:
                feats = [float(v) for v in parts[:-1]]
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: non-numeric feature") from exc
            raw_label = parts[-1].strip()
            try:
                label = int(raw_label)
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: non-integer label {raw_label!r}") from exc
            if label < 0:
                raise ValueError(f"{path}: row {lineno}: negative label")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise ValueError(f"{path}: empty file")
    return Dataset(np.array(rows), np.array(labels), class_count=max(labels) + 1)
