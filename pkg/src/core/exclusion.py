"""
Simple exclusion process among random conductances on the giant cluster.

Dynamics follow the Harris construction: a single exponential clock of rate
R = Σ_b ω(b) over giant bonds rings, an alias table selects bond b with
probability ω(b) / R and the occupancies at its endpoints are swapped. Swaps
between equal occupancies are performed too (they are no-ops).
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np

from ..models import HydroReport, PairingCheckReport, PairingStat
from .base import (
    ConservationError,
    EmptyClusterError,
    ValidationError,
    make_rng,
    run_replicas,
)
from .cluster import ClusterLabeling
from .env import ConductanceField
from .pde import (
    DiffusionMatrix,
    GridField,
    block_average,
    heat_evolve,
    interpolate,
    is_power_of_two,
    pairing_integral,
    sample_on_cluster,
)
from .solver import AliasTable, alias_sample_many, build_alias
from .walk import (
    EpsLike,
    _eps,
    choose_probes,
    dense_semigroup,
    exact_semigroup,
    giant_graph,
    mc_semigroup,
)

logger = logging.getLogger(__name__)

EVENT_CHUNK = 1 << 16
HYDRO_COLUMNS = ["run", "test_function", "lattice_pairing", "reference"]


@dataclass(eq=False)
class OccupancyConfig:
    """
    Exclusion state on the giant; ``occupied[i]`` belongs to flat site
    ``sites[i]``.
    """

    occupied: np.ndarray
    sites: np.ndarray
    shape: Tuple[int, ...]
    particle_count: int
    time_stamp: float = 0.0
    clamped: int = 0

    def check(self) -> None:
        actual = int(np.count_nonzero(self.occupied))
        if actual != self.particle_count:
            raise ConservationError(
                f"particle count {actual} != {self.particle_count} "
                f"at t={self.time_stamp:g}",
                expected=self.particle_count,
                actual=actual,
            )

    def site_array(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.int8)
        np.put(out, self.sites[self.occupied], 1)
        return out

    @classmethod
    def from_sites(
        cls, labeling: ClusterLabeling, occupied_sites: Sequence[int]
    ) -> "OccupancyConfig":
        """Deterministic configuration with particles on the given flat sites."""
        sites = labeling.giant_sites()
        occupied = np.isin(sites, np.asarray(occupied_sites, dtype=np.int64))
        if int(occupied.sum()) != len(set(occupied_sites)):
            raise ValidationError("occupied sites must lie in the giant cluster")
        return cls(occupied, sites, labeling.shape, int(occupied.sum()))


@dataclass(frozen=True, eq=False)
class ClockSchedule:
    """Global clock of rate R with alias selection over the giant bonds."""

    total_rate: float
    table: Optional[AliasTable]
    tail: np.ndarray
    head: np.ndarray

    @classmethod
    def from_field(
        cls, field: ConductanceField, labeling: ClusterLabeling
    ) -> "ClockSchedule":
        graph = giant_graph(field, labeling)
        total = float(np.sum(graph.rate))
        table = build_alias(graph.rate) if graph.rate.size else None
        return cls(total, table, graph.tail, graph.head)

    @property
    def n_bonds(self) -> int:
        return int(self.tail.size)

    def event_times(self, horizon: float, rng: np.random.Generator) -> np.ndarray:
        """Clock ring times in [0, horizon]."""
        chunks = [ts for ts, _ in self.events(horizon, rng, select=False)]
        return np.concatenate(chunks) if chunks else np.empty(0)

    def events(
        self, horizon: float, rng: np.random.Generator, select: bool = True
    ) -> Iterator[Tuple[np.ndarray, Optional[np.ndarray]]]:
        """Chunks of (event times, selected bonds) up to ``horizon``."""
        if self.total_rate <= 0 or horizon <= 0:
            return
        t = 0.0
        while True:
            expected = self.total_rate * (horizon - t)
            size = int(min(EVENT_CHUNK, expected + 6.0 * np.sqrt(expected) + 16))
            times = t + np.cumsum(rng.exponential(1.0 / self.total_rate, size))
            bonds = alias_sample_many(self.table, rng, size) if select else None
            stop = int(np.searchsorted(times, horizon, side="right"))
            if stop < size:
                yield times[:stop], None if bonds is None else bonds[:stop]
                return
            yield times, bonds
            t = float(times[-1])


def init_product_measure(
    labeling: ClusterLabeling,
    rho0: GridField,
    m_hat: float,
    eps: EpsLike,
    rng: np.random.Generator,
) -> OccupancyConfig:
    """
    Independent occupancies with P(η_x = 1) = ρ0(εx) / m_hat on the giant.

    Probabilities outside [0, 1] (ρ0 > m_hat somewhere) are clamped and
    counted in ``clamped``.
    """
    if labeling.is_empty or not m_hat > 0:
        raise EmptyClusterError("product measure needs a nonempty giant cluster")
    sites = labeling.giant_sites()
    prob = sample_on_cluster(rho0, eps, labeling).ravel()[sites] / m_hat
    outside = int(np.count_nonzero((prob < 0) | (prob > 1)))
    if outside:
        logger.warning(
            f"Initial profile leaves [0, m_hat] at {outside} sites; clamping"
        )
    prob = np.clip(prob, 0.0, 1.0)
    occupied = rng.random(sites.size) < prob
    return OccupancyConfig(
        occupied, sites, labeling.shape, int(occupied.sum()), 0.0, outside
    )


def product_measure_moments(
    labeling: ClusterLabeling,
    rho0: GridField,
    m_hat: float,
    eps: EpsLike,
    phi: GridField,
) -> Tuple[float, float]:
    """Mean and variance of ε^d Σ φ(εx) η_x under the product measure."""
    e = _eps(eps)
    mask = labeling.giant_mask
    p = np.clip(sample_on_cluster(rho0, e, labeling)[mask] / m_hat, 0.0, 1.0)
    f = sample_on_cluster(phi, e, labeling)[mask]
    w = e**rho0.dim
    return float(w * np.sum(f * p)), float(w**2 * np.sum(f**2 * p * (1.0 - p)))


@dataclass(eq=False)
class ExclusionTrajectory:
    """Snapshots at the requested times; ``frozen`` marks an empty bond set."""

    snapshots: List[OccupancyConfig]
    n_events: int
    frozen: bool = False

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, index: int) -> OccupancyConfig:
        return self.snapshots[index]

    def __iter__(self) -> Iterator[OccupancyConfig]:
        return iter(self.snapshots)


def _swap(state: List[bool], tails: List[int], heads: List[int]) -> None:
    for a, b in zip(tails, heads):
        state[a], state[b] = state[b], state[a]


def _snapshot(eta0: OccupancyConfig, state: List[bool], t: float) -> OccupancyConfig:
    snap = OccupancyConfig(
        np.array(state, dtype=bool),
        eta0.sites,
        eta0.shape,
        eta0.particle_count,
        t,
        eta0.clamped,
    )
    snap.check()
    return snap


def simulate_exclusion(
    field: ConductanceField,
    labeling: ClusterLabeling,
    eta0: OccupancyConfig,
    T_micro: float,
    record_times: Sequence[float],
    rng: np.random.Generator,
    schedule: Optional[ClockSchedule] = None,
) -> ExclusionTrajectory:
    """
    Kinetic Monte Carlo run of the exclusion process up to T_micro.

    Args:
        eta0: Initial configuration (not modified)
        T_micro: Microscopic horizon
        record_times: Sorted snapshot times within [0, T_micro]
        rng: Random stream owned by this run

    Returns:
        ExclusionTrajectory: One conserved-count snapshot per record time

    Raises:
        ConservationError: If a snapshot has a different particle count
    """
    if T_micro < 0:
        raise ValidationError(f"T_micro must be nonnegative, got {T_micro}")
    record = [float(r) for r in record_times]
    if any(b < a for a, b in zip(record, record[1:])):
        raise ValidationError("record_times must be sorted")
    if record and (record[0] < 0 or record[-1] > T_micro):
        raise ValidationError(f"record_times must lie in [0, {T_micro}]")
    eta0.check()
    schedule = schedule or ClockSchedule.from_field(field, labeling)

    state = eta0.occupied.tolist()
    snapshots: List[OccupancyConfig] = []
    pending = iter(record)
    next_record = next(pending, None)
    frozen = schedule.n_bonds == 0 and T_micro > 0
    if frozen:
        logger.warning("No giant bonds; exclusion configuration stays frozen")

    tails, heads = schedule.tail, schedule.head
    n_events = 0
    for times, bonds in schedule.events(T_micro, rng):
        a_all = tails[bonds].tolist()
        b_all = heads[bonds].tolist()
        start = 0
        # Records at or past the last event of the chunk wait for later chunks.
        while next_record is not None and times.size and next_record < times[-1]:
            cut = int(np.searchsorted(times, next_record, side="right"))
            _swap(state, a_all[start:cut], b_all[start:cut])
            start = cut
            snapshots.append(_snapshot(eta0, state, next_record))
            next_record = next(pending, None)
        _swap(state, a_all[start:], b_all[start:])
        n_events += times.size

    while next_record is not None:
        snapshots.append(_snapshot(eta0, state, next_record))
        next_record = next(pending, None)
    return ExclusionTrajectory(snapshots, n_events, frozen)


def empirical_profile(
    eta: OccupancyConfig, eps: EpsLike, cells_per_axis: int
) -> GridField:
    """Block density ε^d (particles in cell) / (cell volume) on a coarse grid."""
    side = eta.shape[0]
    if side % cells_per_axis or not is_power_of_two(cells_per_axis):
        raise ValidationError(f"{cells_per_axis} cells do not tile side {side}")
    dim = len(eta.shape)
    block = side // cells_per_axis
    coords = np.stack(np.unravel_index(eta.sites[eta.occupied], eta.shape))
    cells = np.ravel_multi_index(tuple(coords // block), (cells_per_axis,) * dim)
    counts = np.bincount(cells, minlength=cells_per_axis**dim).astype(np.float64)
    density = _eps(eps) ** dim * counts * cells_per_axis**dim
    values = density.reshape((cells_per_axis,) * dim)
    return GridField(dim, cells_per_axis, values, "density")


def empirical_pairing(eta: OccupancyConfig, phi: GridField, eps: EpsLike) -> float:
    """ε^d Σ_x φ(εx) η_x."""
    e = _eps(eps)
    occupied = eta.sites[eta.occupied]
    if occupied.size == 0:
        return 0.0
    points = e * np.stack(np.unravel_index(occupied, eta.shape)).astype(np.float64)
    return float(e**phi.dim * np.sum(interpolate(phi, points)))


def _stat(name: str, values: np.ndarray, reference: float) -> PairingStat:
    mean = float(np.mean(values))
    stderr = 0.0
    if values.size > 1:
        stderr = float(values.std(ddof=1) / np.sqrt(values.size))
    bias = mean - reference
    return PairingStat(
        test_function=name,
        mean=mean,
        reference=reference,
        stderr=stderr,
        bias=bias,
        passed=abs(bias) <= 3.0 * stderr + 1e-12,
    )


def hydro_experiment(
    field: ConductanceField,
    labeling: ClusterLabeling,
    Dcal: DiffusionMatrix,
    rho0: GridField,
    t_macro: float,
    eps: EpsLike,
    n_runs: int,
    seed: int,
    battery: Sequence[GridField],
    cells_per_axis: int = 8,
    workers: int = 1,
) -> HydroReport:
    """
    Compare the rescaled exclusion density with the heat flow of ρ0 under Dcal.

    Run k starts from the product measure of ρ0 drawn from the stream
    (seed, "hydro", k), evolves to micro time ε^-2 t_macro and is paired with
    every test function of ``battery`` (grids at the resolution of ``rho0``).
    """
    if t_macro < 0:
        raise ValidationError(f"t_macro must be nonnegative, got {t_macro}")
    if n_runs < 1:
        raise ValidationError("n_runs must be at least 1")
    e = _eps(eps)
    schedule = ClockSchedule.from_field(field, labeling)
    T_micro = t_macro / e**2
    m_hat = labeling.m_hat

    def run(k: int):
        rng = make_rng(seed, "hydro", k)
        eta0 = init_product_measure(labeling, rho0, m_hat, e, rng)
        traj = simulate_exclusion(
            field, labeling, eta0, T_micro, [0.0, T_micro], rng, schedule
        )
        final = traj[-1]
        pairings = [empirical_pairing(final, phi, e) for phi in battery]
        profile = empirical_profile(final, e, cells_per_axis).values.ravel()
        conserved = all(
            int(np.count_nonzero(s.occupied)) == eta0.particle_count for s in traj
        )
        return pairings, profile, eta0.particle_count, conserved, eta0.clamped

    logger.info(f"Hydro: {n_runs} runs, ε={e:g}, T_micro={T_micro:g}")
    results = run_replicas(run, list(range(n_runs)), workers)

    rho_t = heat_evolve(rho0, Dcal, t_macro)
    references = [pairing_integral(phi, rho_t) for phi in battery]
    reference_profile = block_average(rho_t, cells_per_axis).values.ravel()
    per_run = np.array([r[0] for r in results])
    profiles = np.stack([r[1] for r in results])

    stats = [
        _stat(phi.tag, per_run[:, j], ref)
        for j, (phi, ref) in enumerate(zip(battery, references))
    ]
    return HydroReport(
        eps=e,
        t_macro=t_macro,
        n_runs=n_runs,
        m_hat=m_hat,
        diffusion=Dcal.matrix.tolist(),
        pairings=stats,
        per_run_pairings=per_run.tolist(),
        profile_l1=np.mean(np.abs(profiles - reference_profile), axis=1).tolist(),
        reference_profile=reference_profile.tolist(),
        mean_profile=profiles.mean(axis=0).tolist(),
        particle_counts=[r[2] for r in results],
        conservation_ok=all(r[3] for r in results),
        clamped_sites=max(r[4] for r in results),
    )


PairingMethod = Literal["exact", "dense", "mc"]


def _semigroup_on_giant(
    field: ConductanceField,
    labeling: ClusterLabeling,
    eps: float,
    phi: GridField,
    t_macro: float,
    method: PairingMethod,
    seed: int,
    n_walkers: int,
    workers: int,
) -> np.ndarray:
    """Site-shaped P^ε_t φ on the giant."""
    phi_sites = sample_on_cluster(phi, eps, labeling)
    if t_macro == 0:
        return phi_sites
    if method == "exact":
        return exact_semigroup(field, labeling, eps, phi_sites, t_macro)
    if method == "dense":
        sites, P = dense_semigroup(field, labeling, eps, t_macro)
        out = np.zeros(field.shape)
        np.put(out, sites, P @ phi_sites.ravel()[sites])
        return out
    if method == "mc":
        probes = choose_probes(labeling, labeling.giant_size, seed)
        est = mc_semigroup(
            field, labeling, eps, phi, t_macro, n_walkers, probes, seed, workers
        )
        out = np.zeros(field.shape)
        np.put(out, est.probes, est.estimates)
        return out
    raise ValidationError(f"unknown method {method!r}")


def hydro_pairing_check(
    field: ConductanceField,
    labeling: ClusterLabeling,
    eps: EpsLike,
    phi: GridField,
    t_macro: float,
    n_runs: int,
    seed: int,
    rho0: Optional[GridField] = None,
    eta0: Optional[OccupancyConfig] = None,
    method: PairingMethod = "exact",
    n_walkers: int = 1000,
    workers: int = 1,
) -> PairingCheckReport:
    """
    Compare ε^d Σ φ(εx) η_x(ε^-2 t) with ε^d Σ η_x(0) P^ε_t φ(εx) per run.

    The start is ``eta0`` when given (the same in every run), otherwise the
    product measure of ``rho0`` (default: half of m_hat everywhere).
    """
    if t_macro < 0:
        raise ValidationError(f"t_macro must be nonnegative, got {t_macro}")
    if n_runs < 1:
        raise ValidationError("n_runs must be at least 1")
    e = _eps(eps)
    m_hat = labeling.m_hat
    if rho0 is None:
        rho0 = GridField(
            phi.dim,
            phi.resolution,
            np.full(phi.values.shape, 0.5 * m_hat),
            "density",
        )
    schedule = ClockSchedule.from_field(field, labeling)
    T_micro = t_macro / e**2
    evolved = _semigroup_on_giant(
        field, labeling, e, phi, t_macro, method, seed, n_walkers, workers
    ).ravel()
    weight = e**field.dim

    def run(k: int):
        rng = make_rng(seed, "pairing", k)
        if eta0 is not None:
            start = eta0
        else:
            start = init_product_measure(labeling, rho0, m_hat, e, rng)
        traj = simulate_exclusion(
            field, labeling, start, T_micro, [T_micro], rng, schedule
        )
        lattice = empirical_pairing(traj[-1], phi, e)
        semigroup = float(weight * np.sum(evolved[start.sites[start.occupied]]))
        final_count = int(np.count_nonzero(traj[-1].occupied))
        return lattice, semigroup, final_count == start.particle_count

    results = run_replicas(run, list(range(n_runs)), workers)
    lattice = np.array([r[0] for r in results])
    semigroup = np.array([r[1] for r in results])
    diff = lattice - semigroup
    mean = float(np.mean(diff))
    stderr = float(diff.std(ddof=1) / np.sqrt(n_runs)) if n_runs > 1 else 0.0
    return PairingCheckReport(
        eps=e,
        t_macro=t_macro,
        n_runs=n_runs,
        method=method,
        lattice_pairings=lattice.tolist(),
        semigroup_pairings=semigroup.tolist(),
        differences=diff.tolist(),
        mean=mean,
        stderr=stderr,
        passed=abs(mean) <= 3.0 * stderr + 1e-12,
        conservation_ok=all(r[2] for r in results),
    )


def exclusion_generator_matrix(
    n_sites: int,
    bonds: Sequence[Tuple[int, int, float]],
    n_particles: Optional[int] = None,
) -> Tuple[List[Tuple[int, ...]], np.ndarray]:
    """
    Dense generator of the exclusion process on a small graph.

    Args:
        n_sites: Number of sites (at most 16)
        bonds: (a, b, rate) triples in local site indices
        n_particles: Restrict to one particle-number sector; None keeps all 2^n

    Returns:
        Tuple: (states as 0/1 tuples, generator with zero row sums)
    """
    if n_sites > 16:
        raise ValidationError(f"{n_sites} sites is too many for a dense generator")
    states = [
        s
        for s in itertools.product((0, 1), repeat=n_sites)
        if n_particles is None or sum(s) == n_particles
    ]
    index = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for i, s in enumerate(states):
        for a, b, rate in bonds:
            if s[a] == s[b]:
                continue
            swapped = list(s)
            swapped[a], swapped[b] = s[b], s[a]
            Q[i, index[tuple(swapped)]] += rate
        Q[i, i] = -Q[i].sum()
    return states, Q


def local_bonds(
    field: ConductanceField, labeling: ClusterLabeling
) -> Tuple[np.ndarray, List[Tuple[int, int, float]]]:
    """Giant sites and bonds in the local indexing of the dense generators."""
    graph = giant_graph(field, labeling)
    bonds = [
        (int(a), int(b), float(r))
        for a, b, r in zip(graph.tail, graph.head, graph.rate)
    ]
    return graph.sites, bonds


def occupancy_index(
    snapshot: OccupancyConfig, states: Sequence[Tuple[int, ...]]
) -> int:
    """Position of ``snapshot`` in the state list of a dense generator."""
    key = tuple(int(v) for v in snapshot.occupied)
    try:
        return list(states).index(key)
    except ValueError:
        raise ValidationError(f"configuration {key} is not in the state list")
