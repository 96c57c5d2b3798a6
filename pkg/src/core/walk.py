"""
Random walk among random conductances on the giant cluster.

The walk waits an exponential time of rate λ_ω(z) = Σ_y ω(z, y) at z (sum over
giant neighbours) and then jumps to y with probability ω(z, y) / λ_ω(z). The
rescaled walk εX(ε^-2 t) is compared with the continuum semigroup of the pde
module, and the discrete resolvent (λ - ε^-2 Lap) u = f is solved by CG.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import expm_multiply

from .base import EmptyClusterError, ValidationError, make_rng, run_replicas
from .cluster import ClusterLabeling, flat_neighbors, giant_bonds
from .env import ConductanceField
from .pde import GridField, interpolate, pairing_integral, sample_on_cluster
from .solver import MaskedLaplacian, cg_solve

logger = logging.getLogger(__name__)

SEMIGROUP_COLUMNS = ["probe_x", "mc_estimate", "stderr", "continuum_value"]
RESOLVENT_COLUMNS = ["eps", "lambda", "weighted_L2_error", "cg_iters"]


@dataclass(frozen=True)
class EpsScale:
    """Lattice spacing ε = S / L relating x ↦ εx and t ↦ ε^-2 t."""

    epsilon: float
    physical_side: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValidationError(f"ε must lie in (0, 1], got {self.epsilon}")

    @classmethod
    def from_side(cls, side: int, physical_side: float = 1.0) -> "EpsScale":
        return cls(physical_side / side, physical_side)

    def micro_time(self, t: float) -> float:
        return t / self.epsilon**2

    def __float__(self) -> float:
        return self.epsilon


EpsLike = Union[EpsScale, float]


def _eps(eps: EpsLike) -> float:
    return float(eps)


@dataclass(frozen=True, eq=False)
class JumpKernel:
    """
    Jump structure of the walk restricted to the giant.

    Row z of ``neighbors``/``rates`` lists the 2d directions +e_0, -e_0, +e_1,
    ...; ``steps[k]`` is the unwrapped displacement of direction k.
    """

    shape: Tuple[int, ...]
    neighbors: np.ndarray
    rates: np.ndarray
    cumulative: np.ndarray
    total: np.ndarray
    steps: np.ndarray
    giant_mask: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.shape)


def build_kernel(field: ConductanceField, labeling: ClusterLabeling) -> JumpKernel:
    lap = MaskedLaplacian(field, labeling.giant_mask)
    neighbors, rates, steps = [], [], []
    for axis in range(field.dim):
        forward = lap.bond_weights[..., axis]
        for step in (1, -1):
            neighbors.append(flat_neighbors(field.shape, axis, step).ravel())
            weight = forward if step == 1 else np.roll(forward, 1, axis=axis)
            rates.append(weight.ravel())
            vec = np.zeros(field.dim, dtype=np.int64)
            vec[axis] = step
            steps.append(vec)
    rates = np.stack(rates, axis=1)
    return JumpKernel(
        shape=field.shape,
        neighbors=np.stack(neighbors, axis=1),
        rates=rates,
        cumulative=np.cumsum(rates, axis=1),
        total=rates.sum(axis=1),
        steps=np.stack(steps),
        giant_mask=labeling.giant_mask.ravel(),
    )


@dataclass(eq=False)
class WalkTrajectory:
    start: int
    times: np.ndarray
    sites: np.ndarray
    terminal_time: float
    displacement: np.ndarray

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    def site_at(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.start if k == 0 else int(self.sites[k - 1])


def _flat_site(x0: Union[int, Sequence[int]], shape: Tuple[int, ...]) -> int:
    if isinstance(x0, (int, np.integer)):
        return int(x0)
    return int(np.ravel_multi_index(tuple(int(c) for c in x0), shape))


def _check_start(kernel: JumpKernel, site: int) -> None:
    if not kernel.giant_mask[site]:
        raise ValidationError(f"start site {site} is not in the giant cluster")
    if kernel.total[site] <= 0:
        raise EmptyClusterError(f"giant site {site} has no positive bond")


def _pick_direction(kernel: JumpKernel, sites: np.ndarray, u: np.ndarray):
    # Directions with zero rate share the previous cumulative value and are skipped.
    target = u * kernel.cumulative[sites, -1]
    k = np.sum(kernel.cumulative[sites] <= target[:, None], axis=1)
    return np.minimum(k, 2 * kernel.dim - 1)


def simulate_walk(
    field: ConductanceField,
    labeling: ClusterLabeling,
    x0: Union[int, Sequence[int]],
    T: float,
    rng: np.random.Generator,
    kernel: Optional[JumpKernel] = None,
) -> WalkTrajectory:
    """
    Exact continuous-time simulation up to time T.

    Args:
        x0: Flat index or coordinates of the start site (must be in the giant)
        T: Terminal time
        rng: Random stream owned by this walker

    Returns:
        WalkTrajectory: Jump times, visited sites and the unwrapped displacement
    """
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T}")
    kernel = kernel or build_kernel(field, labeling)
    z = start = _flat_site(x0, field.shape)
    _check_start(kernel, start)

    times: List[float] = []
    sites: List[int] = []
    displacement = np.zeros(field.dim, dtype=np.int64)
    t = 0.0
    while True:
        t += rng.exponential(1.0 / kernel.total[z])
        if t > T:
            break
        k = int(_pick_direction(kernel, np.array([z]), np.array([rng.random()]))[0])
        z = int(kernel.neighbors[z, k])
        displacement += kernel.steps[k]
        times.append(t)
        sites.append(z)
    return WalkTrajectory(
        start, np.array(times), np.array(sites, dtype=np.int64), T, displacement
    )


class WalkerBatch(NamedTuple):
    final_sites: np.ndarray
    displacement: np.ndarray
    n_jumps: np.ndarray


def run_walkers(
    kernel: JumpKernel, starts: np.ndarray, T: float, rng: np.random.Generator
) -> WalkerBatch:
    """Advance independent walkers in lockstep until each passes time T."""
    sites = np.asarray(starts, dtype=np.int64).copy()
    for s in np.unique(sites):
        _check_start(kernel, int(s))
    n = sites.size
    clock = np.zeros(n)
    displacement = np.zeros((n, kernel.dim), dtype=np.int64)
    jumps = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)

    while alive.size:
        clock[alive] += rng.exponential(1.0 / kernel.total[sites[alive]])
        alive = alive[clock[alive] <= T]
        if not alive.size:
            break
        k = _pick_direction(kernel, sites[alive], rng.random(alive.size))
        sites[alive] = kernel.neighbors[sites[alive], k]
        displacement[alive] += kernel.steps[k]
        jumps[alive] += 1
    return WalkerBatch(sites, displacement, jumps)


def msd(walks: Union[Sequence[WalkTrajectory], WalkerBatch, np.ndarray]) -> float:
    """Mean squared unwrapped displacement."""
    if isinstance(walks, WalkerBatch):
        disp = walks.displacement
    elif isinstance(walks, np.ndarray):
        disp = walks
    else:
        disp = np.stack([w.displacement for w in walks])
    return float(np.mean(np.sum(disp.astype(np.float64) ** 2, axis=1)))


def choose_probes(labeling: ClusterLabeling, n_probes: int, seed: int) -> np.ndarray:
    """Sorted flat indices of up to ``n_probes`` distinct giant sites."""
    sites = labeling.giant_sites()
    if sites.size == 0:
        raise EmptyClusterError("no giant sites to probe")
    if n_probes >= sites.size:
        return sites
    picked = make_rng(seed, "probes").choice(sites, size=n_probes, replace=False)
    return np.sort(picked)


@dataclass(eq=False)
class SemigroupEstimate:
    probes: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    n_walkers: int


def mc_semigroup(
    field: ConductanceField,
    labeling: ClusterLabeling,
    eps: EpsLike,
    f: GridField,
    t: float,
    n_walkers: int,
    probe_sites: Sequence[int],
    seed: int,
    workers: int = 1,
) -> SemigroupEstimate:
    """
    Monte Carlo estimate of P^ε_t f(εx) = E f(ε X(ε^-2 t | x)) at each probe.

    Probe p draws its walkers from the stream (seed, "walkers", p), so the
    result does not depend on ``workers``.
    """
    if not t > 0:
        raise ValidationError(f"t must be positive, got {t}")
    if n_walkers < 1:
        raise ValidationError("n_walkers must be at least 1")
    e = _eps(eps)
    kernel = build_kernel(field, labeling)
    probes = np.asarray(probe_sites, dtype=np.int64)
    T = t / e**2

    def probe(index: int) -> Tuple[float, float]:
        rng = make_rng(seed, "walkers", index)
        starts = np.full(n_walkers, probes[index])
        batch = run_walkers(kernel, starts, T, rng)
        coords = np.stack(np.unravel_index(batch.final_sites, field.shape))
        values = interpolate(f, e * coords.astype(np.float64))
        spread = values.std(ddof=1) / np.sqrt(n_walkers) if n_walkers > 1 else 0.0
        return float(np.mean(values)), float(spread)

    results = run_replicas(probe, list(range(probes.size)), workers)
    logger.info(f"MC semigroup: {probes.size} probes x {n_walkers} walkers, T={T:g}")
    return SemigroupEstimate(
        probes,
        np.array([r[0] for r in results]),
        np.array([r[1] for r in results]),
        n_walkers,
    )


class GiantGraph(NamedTuple):
    """Giant sites with bonds expressed in local (0..n-1) indices."""

    sites: np.ndarray
    tail: np.ndarray
    head: np.ndarray
    rate: np.ndarray


def giant_graph(field: ConductanceField, labeling: ClusterLabeling) -> GiantGraph:
    sites = labeling.giant_sites()
    local = np.full(field.n_sites, -1, dtype=np.int64)
    local[sites] = np.arange(sites.size)
    bonds = giant_bonds(field, labeling)
    return GiantGraph(sites, local[bonds.tail], local[bonds.head], bonds.rate)


def generator_matrix(
    field: ConductanceField, labeling: ClusterLabeling, eps: EpsLike = 1.0
) -> Tuple[np.ndarray, sparse.csr_matrix]:
    """
    Sparse generator ε^-2 𝓛 of the walk on the giant.

    Returns:
        Tuple: (giant flat sites, CSR matrix indexed like the sites)
    """
    graph = giant_graph(field, labeling)
    n = graph.sites.size
    scale = 1.0 / _eps(eps) ** 2
    rows = np.concatenate([graph.tail, graph.head])
    cols = np.concatenate([graph.head, graph.tail])
    vals = scale * np.concatenate([graph.rate, graph.rate])
    off = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    diag = np.asarray(off.sum(axis=1)).ravel()
    return graph.sites, (off - sparse.diags(diag)).tocsr()


def exact_semigroup(
    field: ConductanceField,
    labeling: ClusterLabeling,
    eps: EpsLike,
    g: np.ndarray,
    t: float,
) -> np.ndarray:
    """P^ε_t g for a site-shaped ``g``; zero off the giant."""
    if t < 0:
        raise ValidationError(f"t must be nonnegative, got {t}")
    sites, Q = generator_matrix(field, labeling, eps)
    out = np.zeros(field.shape, dtype=np.float64)
    if sites.size == 0:
        return out
    values = np.asarray(g, dtype=np.float64).ravel()[sites]
    np.put(out, sites, expm_multiply(t * Q, values) if t > 0 else values)
    return out


def dense_semigroup(
    field: ConductanceField,
    labeling: ClusterLabeling,
    eps: EpsLike,
    t: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Dense transition matrix exp(t ε^-2 𝓛) for small giants."""
    sites, Q = generator_matrix(field, labeling, eps)
    if sites.size > 4096:
        raise ValidationError(f"giant of {sites.size} sites is too large for expm")
    return sites, linalg.expm(t * Q.toarray())


@dataclass(eq=False)
class ResolventSolution:
    u: np.ndarray
    residual: float
    iterations: int
    converged: bool = True


def solve_resolvent_discrete(
    field: ConductanceField,
    labeling: ClusterLabeling,
    eps: EpsLike,
    lam: float,
    f: GridField,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
    raise_on_failure: bool = True,
) -> ResolventSolution:
    """
    Solve λ u - ε^-2 Lap u = f(ε ·) on the giant (u = 0 elsewhere).

    Raises:
        ValidationError: If λ <= 0
        ConvergenceError: If CG misses the tolerance and ``raise_on_failure``
    """
    if not lam > 0:
        raise ValidationError(f"the resolvent needs λ > 0, got {lam}")
    if labeling.is_empty:
        raise EmptyClusterError("resolvent needs a nonempty giant cluster")
    e = _eps(eps)
    lap = MaskedLaplacian(field, labeling.giant_mask, scale=1.0 / e**2)
    mask = lap.mask

    def apply(u: np.ndarray) -> np.ndarray:
        return np.where(mask, lam * u - lap.apply(u), 0.0)

    result = cg_solve(
        apply,
        sample_on_cluster(f, e, labeling),
        tol=tol,
        max_iter=max_iter,
        gauge="none",
        raise_on_failure=raise_on_failure,
    )
    return ResolventSolution(
        result.x, result.residual_norm, result.iterations, result.converged
    )


def homogenization_error(
    u_eps: np.ndarray, u0: GridField, eps: EpsLike, labeling: ClusterLabeling
) -> float:
    """Squared L²(μ^ε) distance ε^d Σ_giant (u_eps(x) - u0(εx))^2."""
    e = _eps(eps)
    diff = (u_eps - sample_on_cluster(u0, e, labeling))[labeling.giant_mask]
    return float(e**u0.dim * np.sum(diff**2))


def semigroup_error(
    values: np.ndarray,
    continuum: GridField,
    eps: EpsLike,
    labeling: ClusterLabeling,
    probes: Optional[np.ndarray] = None,
    norm: Literal["l2", "l1"] = "l2",
) -> float:
    """
    Discrepancy between a lattice semigroup and the continuum one.

    With ``probes`` the values are per-probe and the μ^ε integral is estimated
    as m_hat times the probe average; otherwise ``values`` is site-shaped and
    the sum runs over the whole giant. ``l2`` is the squared norm.
    """
    e = _eps(eps)
    reference = sample_on_cluster(continuum, e, labeling).ravel()
    if probes is not None:
        diff = np.asarray(values) - reference[np.asarray(probes)]
        weight = labeling.m_hat / diff.size
    else:
        diff = (np.asarray(values) - reference.reshape(labeling.shape))[
            labeling.giant_mask
        ]
        weight = e**continuum.dim
    if norm == "l2":
        return float(weight * np.sum(diff**2))
    if norm == "l1":
        return float(weight * np.sum(np.abs(diff)))
    raise ValidationError(f"unknown norm {norm!r}")


class WeakPairing(NamedTuple):
    pairing_gap: float
    norm_gap: float


def weak_pairing_error(
    u_eps: np.ndarray,
    u0: GridField,
    phi: GridField,
    eps: EpsLike,
    labeling: ClusterLabeling,
) -> WeakPairing:
    """
    |∫ u_eps φ dμ^ε - m ∫ u0 φ dx| and |∫ u_eps^2 dμ^ε - m ∫ u0^2 dx|.

    Both vanish in the limit when u_eps converges strongly to u0.
    """
    e = _eps(eps)
    weight = e**u0.dim
    u = u_eps[labeling.giant_mask]
    phi_sites = sample_on_cluster(phi, e, labeling)[labeling.giant_mask]
    lattice = weight * np.sum(u * phi_sites)
    continuum = labeling.m_hat * pairing_integral(phi, u0)
    norm_lattice = weight * np.sum(u**2)
    norm_continuum = labeling.m_hat * pairing_integral(u0, u0)
    return WeakPairing(
        float(abs(lattice - continuum)), float(abs(norm_lattice - norm_continuum))
    )

