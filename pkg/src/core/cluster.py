"""
Connected components of the positive-conductance graph on the torus and the
giant-cluster density.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from ..models import FieldLaw
from .base import ValidationError, derive_seed, make_rng, run_replicas
from .env import ConductanceField, sample_field

logger = logging.getLogger(__name__)


class DisjointSet:
    """Union by size with path compression over integer nodes."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.size = [1] * size

    def find(self, node: int) -> int:
        root = node
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[node] != root:
            self.parent[node], node = root, self.parent[node]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """
    Component labels of G(ω); ``component_id`` is -1 off V(ω).

    Components are numbered by increasing minimal (row-major) site, so the
    first maximal-size component is also the tie-break winner.
    """

    component_id: np.ndarray
    component_sizes: Tuple[int, ...]
    giant_id: int
    giant_mask: np.ndarray
    m_hat: float

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.giant_mask.shape

    @property
    def n_components(self) -> int:
        return len(self.component_sizes)

    @property
    def giant_size(self) -> int:
        return self.component_sizes[self.giant_id] if self.giant_id >= 0 else 0

    @property
    def is_empty(self) -> bool:
        return self.giant_size == 0

    def giant_sites(self) -> np.ndarray:
        """Flat (row-major) indices of the giant sites in increasing order."""
        return np.flatnonzero(self.giant_mask)


class GiantBonds(NamedTuple):
    """Positive bonds of the giant as parallel arrays of flat endpoints."""

    tail: np.ndarray
    head: np.ndarray
    axis: np.ndarray
    rate: np.ndarray

    def __len__(self) -> int:
        return int(self.tail.size)


def flat_neighbors(shape: Tuple[int, ...], axis: int, step: int = 1) -> np.ndarray:
    """Site-shaped array holding the flat index of x + step * e_axis (periodic)."""
    ids = np.arange(int(np.prod(shape))).reshape(shape)
    return np.roll(ids, -step, axis=axis)


def positive_bonds(
    field: ConductanceField,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All bonds with ω(b) > 0 as (tail, head, axis) flat arrays."""
    tails, heads, axes = [], [], []
    ids = np.arange(field.n_sites).reshape(field.shape)
    for axis in range(field.dim):
        open_ = field.axis_weights(axis) > 0
        tails.append(ids[open_])
        heads.append(flat_neighbors(field.shape, axis)[open_])
        axes.append(np.full(int(open_.sum()), axis))
    return np.concatenate(tails), np.concatenate(heads), np.concatenate(axes)


def label_components(
    field: ConductanceField, shuffle_seed: Optional[int] = None
) -> ClusterLabeling:
    """
    Label the connected components of the positive-conductance graph.

    Args:
        field: Conductance field
        shuffle_seed: If given, bonds are merged in a seeded random order; the
            labeling does not depend on it

    Returns:
        ClusterLabeling: Components, giant mask and giant density m_hat
    """
    tail, head, _ = positive_bonds(field)
    if shuffle_seed is not None:
        order = make_rng(shuffle_seed, "bond-order").permutation(tail.size)
        tail, head = tail[order], head[order]

    forest = DisjointSet(field.n_sites)
    for a, b in zip(tail.tolist(), head.tolist()):
        forest.union(a, b)

    in_v = np.zeros(field.n_sites, dtype=bool)
    in_v[tail] = True
    in_v[head] = True
    sites = np.flatnonzero(in_v)

    component_id = np.full(field.n_sites, -1, dtype=np.int64)
    if sites.size == 0:
        logger.warning("Field has no positive bond; giant cluster is empty")
        return ClusterLabeling(
            component_id.reshape(field.shape),
            (),
            -1,
            np.zeros(field.shape, dtype=bool),
            0.0,
        )

    roots = np.fromiter((forest.find(s) for s in sites.tolist()), dtype=np.int64)
    # np.unique sorts by root; reorder components by their first (minimal) site.
    unique_roots, first, inverse = np.unique(
        roots, return_index=True, return_inverse=True
    )
    rank = np.empty(unique_roots.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(unique_roots.size)
    component_id[sites] = rank[inverse]

    sizes = np.bincount(component_id[sites], minlength=unique_roots.size)
    giant_id = int(np.argmax(sizes))
    giant_mask = (component_id == giant_id).reshape(field.shape)
    m_hat = float(sizes[giant_id]) / field.n_sites

    return ClusterLabeling(
        component_id.reshape(field.shape),
        tuple(int(s) for s in sizes),
        giant_id,
        giant_mask,
        m_hat,
    )


def giant_bonds(field: ConductanceField, labeling: ClusterLabeling) -> GiantBonds:
    """Positive bonds with both endpoints in the giant cluster."""
    if labeling.shape != field.shape:
        raise ValidationError(
            f"labeling shape {labeling.shape} does not match field {field.shape}"
        )
    tail, head, axis = positive_bonds(field)
    mask = labeling.giant_mask.ravel()
    keep = mask[tail] & mask[head]
    tail, head, axis = tail[keep], head[keep], axis[keep]
    rate = field.weights.reshape(-1, field.dim)[tail, axis]
    return GiantBonds(tail, head, axis, rate)


@dataclass(frozen=True)
class ClusterSample:
    seed: int
    side: int
    m_hat: float
    n_components: int
    giant_size: int

    def to_row(self) -> List:
        return [self.seed, self.side, self.m_hat, self.n_components, self.giant_size]


CLUSTER_COLUMNS = ["seed", "L", "m_hat", "n_components", "giant_size"]


def estimate_m(
    law: FieldLaw,
    dim: int,
    side: int,
    cap: float,
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> Tuple[float, float, List[ClusterSample]]:
    """
    Monte Carlo estimate of the giant density over independent replicas.

    Returns:
        Tuple: (mean m_hat, standard error, per-replica samples in index order)
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")

    def replica(index: int) -> ClusterSample:
        replica_seed = derive_seed(seed, "cluster", index)
        labeling = label_components(sample_field(law, dim, side, cap, replica_seed))
        return ClusterSample(
            replica_seed,
            side,
            labeling.m_hat,
            labeling.n_components,
            labeling.giant_size,
        )

    samples = run_replicas(replica, list(range(n_samples)), workers)
    values = np.array([s.m_hat for s in samples])
    stderr = float(values.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return float(values.mean()), stderr, samples
