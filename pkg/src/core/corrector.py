"""
Finite-volume corrector problem and effective diffusion estimates.

For a direction ξ the corrector ψ minimizes the periodic energy

    E_L(ψ) = Σ_x Σ_e ω(x, x+e) 1[x, x+e ∈ giant] (ξ_e + ψ(x+e) - ψ(x))^2

over mean-zero site functions on the giant; then (ξ, D ξ) = 2 E_L(ψ*) / L^d
and the effective matrix is D / (2 m_hat).
"""

import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..models import DominationReport, FieldLaw
from .base import EmptyClusterError, derive_seed, pairwise_sum, run_replicas
from .cluster import ClusterLabeling, label_components
from .env import ConductanceField, sample_field, threshold_indicator
from .solver import MaskedLaplacian, cg_solve

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class CorrectorSolution:
    direction: np.ndarray
    psi: np.ndarray
    residual: float
    iterations: int
    converged: bool
    dirichlet_energy: float


@dataclass(eq=False)
class DiffusionEstimate:
    D_hat: np.ndarray
    m_hat: float
    Dcal_hat: np.ndarray
    side: int
    seed: int
    residuals: List[float] = dataclass_field(default_factory=list)
    cg_iters: List[int] = dataclass_field(default_factory=list)
    converged: bool = True

    @property
    def dim(self) -> int:
        return self.D_hat.shape[0]


def corrector_energy(lap: MaskedLaplacian, xi: np.ndarray, psi: np.ndarray) -> float:
    """E_L(ψ) for the masked bonds of ``lap``."""
    return pairwise_sum(
        [
            np.sum(lap.bond_weights[..., e] * (xi[e] + lap.gradient(psi, e)) ** 2)
            for e in range(lap.dim)
        ]
    )


def trial_upper_bound(lap: MaskedLaplacian, xi: Sequence[float]) -> float:
    """(ξ, D ξ) at the trial corrector ψ = 0; the infimum cannot exceed it."""
    xi = np.asarray(xi, dtype=np.float64)
    energy = corrector_energy(lap, xi, np.zeros(lap.shape))
    return 2.0 * energy / lap.mask.size


def _divergence_rhs(lap: MaskedLaplacian, xi: np.ndarray) -> np.ndarray:
    b = np.zeros(lap.shape, dtype=np.float64)
    for e in range(lap.dim):
        w = lap.bond_weights[..., e]
        b += xi[e] * (w - np.roll(w, 1, axis=e))
    return b


def solve_corrector(
    field: ConductanceField,
    labeling: ClusterLabeling,
    xi: Sequence[float],
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
    lap: Optional[MaskedLaplacian] = None,
) -> CorrectorSolution:
    """
    Solve the cell problem -Lap ψ = div(ω ξ) on the giant cluster.

    Args:
        field: Conductance field
        labeling: Components of ``field``
        xi: Direction; non-unit vectors give quadratically scaled energies
        tol: CG relative tolerance

    Returns:
        CorrectorSolution: Mean-zero corrector and its energy; ``converged`` is
        False when CG hit the iteration cap
    """
    if labeling.is_empty:
        raise EmptyClusterError("corrector needs a nonempty giant cluster")
    xi = np.asarray(xi, dtype=np.float64)
    lap = lap or MaskedLaplacian(field, labeling.giant_mask)

    result = cg_solve(
        lambda g: -lap.apply(g),
        _divergence_rhs(lap, xi),
        tol=tol,
        max_iter=max_iter,
        gauge="mean_zero",
        mask=lap.mask,
    )
    energy = corrector_energy(lap, xi, result.x)
    return CorrectorSolution(
        xi, result.x, result.residual_norm, result.iterations, result.converged, energy
    )


def _directions(dim: int) -> List[Tuple[Tuple[int, int, int], np.ndarray]]:
    """Basis vectors and the unnormalized polarization pairs e_i ± e_j."""
    eye = np.eye(dim)
    out = [((i, i, 1), eye[i]) for i in range(dim)]
    for i in range(dim):
        for j in range(i + 1, dim):
            out.append(((i, j, 1), eye[i] + eye[j]))
            out.append(((i, j, -1), eye[i] - eye[j]))
    return out


def estimate_D(
    field: ConductanceField,
    labeling: ClusterLabeling,
    tol: float = 1e-10,
    workers: int = 1,
) -> DiffusionEstimate:
    """
    Estimate D_hat and Dcal_hat = D_hat / (2 m_hat) from corrector solves.

    Diagonal entries come from the basis directions and off-diagonal entries
    from polarization, D_ij = [q(e_i + e_j) - q(e_i - e_j)] / 4.
    """
    if labeling.is_empty:
        raise EmptyClusterError("diffusion estimate needs a nonempty giant cluster")
    lap = MaskedLaplacian(field, labeling.giant_mask)
    directions = _directions(field.dim)

    def solve(item):
        return solve_corrector(field, labeling, item[1], tol=tol, lap=lap)

    solutions = run_replicas(solve, directions, workers)
    q: Dict[Tuple[int, int, int], float] = {
        key: 2.0 * sol.dirichlet_energy / field.n_sites
        for (key, _), sol in zip(directions, solutions)
    }

    D = np.zeros((field.dim, field.dim))
    for i in range(field.dim):
        D[i, i] = q[(i, i, 1)]
        for j in range(i + 1, field.dim):
            D[i, j] = D[j, i] = (q[(i, j, 1)] - q[(i, j, -1)]) / 4.0

    converged = all(sol.converged for sol in solutions)
    if not converged:
        logger.warning(f"Corrector solves did not all converge (L={field.side})")
    return DiffusionEstimate(
        D_hat=D,
        m_hat=labeling.m_hat,
        Dcal_hat=D / (2.0 * labeling.m_hat),
        side=field.side,
        seed=field.seed,
        residuals=[sol.residual for sol in solutions],
        cg_iters=[sol.iterations for sol in solutions],
        converged=converged,
    )


def estimate_columns(dim: int) -> List[str]:
    entries = [f"{i + 1}{j + 1}" for i in range(dim) for j in range(dim)]
    return (
        ["law", "L", "seed", "m_hat"]
        + [f"D{ij}" for ij in entries]
        + [f"Dcal{ij}" for ij in entries]
        + ["residual_max", "cg_iters", "converged"]
    )


def estimate_row(law_kind: str, estimate: DiffusionEstimate) -> List:
    return (
        [law_kind, estimate.side, estimate.seed, estimate.m_hat]
        + estimate.D_hat.ravel().tolist()
        + estimate.Dcal_hat.ravel().tolist()
        + [max(estimate.residuals), sum(estimate.cg_iters), estimate.converged]
    )


@dataclass(eq=False)
class SweepSummary:
    side: int
    n_seeds: int
    mean_Dcal: np.ndarray
    stderr_Dcal: np.ndarray
    mean_m_hat: float


@dataclass(eq=False)
class SweepTable:
    estimates: List[DiffusionEstimate]
    summaries: List[SweepSummary]

    def summary_for(self, side: int) -> SweepSummary:
        return next(s for s in self.summaries if s.side == side)


def sweep_D(
    law: FieldLaw,
    dim: int,
    cap: float,
    sides: Sequence[int],
    n_seeds: int,
    seed: int = 0,
    tol: float = 1e-10,
    workers: int = 1,
) -> SweepTable:
    """
    Finite-size sweep of the diffusion estimate over sides and seeds.

    Replica (L, k) uses the field seed derive_seed(seed, "field-L", k), so a
    rerun with the same arguments reproduces every row.
    """
    jobs = [(side, k) for side in sides for k in range(n_seeds)]

    def replica(job):
        side, k = job
        field = sample_field(law, dim, side, cap, derive_seed(seed, f"field-{side}", k))
        labeling = label_components(field)
        return estimate_D(field, labeling, tol=tol)

    estimates = run_replicas(replica, jobs, workers)
    summaries = []
    for side in sides:
        block = [e for e in estimates if e.side == side]
        stack = np.stack([e.Dcal_hat for e in block])
        stderr = (
            stack.std(axis=0, ddof=1) / np.sqrt(len(block))
            if len(block) > 1
            else np.zeros_like(stack[0])
        )
        summaries.append(
            SweepSummary(
                side,
                len(block),
                stack.mean(axis=0),
                stderr,
                float(np.mean([e.m_hat for e in block])),
            )
        )
        diag = np.diag(summaries[-1].mean_Dcal)
        logger.info(f"Sweep L={side}: mean Dcal diagonal {diag}")
    return SweepTable(estimates, summaries)


def domination_bound(
    field: ConductanceField, c: float, tol: float = 1e-10
) -> DominationReport:
    """
    Compare D_hat(ω) with c * D_hat(ω̂_c) along the basis directions.

    Pointwise ω >= c ω̂_c makes the minimized energy monotone, so whenever the
    threshold giant sits inside the ω giant the diagonal must dominate.
    """
    labeling = label_components(field)
    indicator = threshold_indicator(field, c)
    indicator_labeling = label_components(indicator)
    nested = bool(np.all(labeling.giant_mask[indicator_labeling.giant_mask]))

    diag = np.diag(estimate_D(field, labeling, tol=tol).D_hat)
    if indicator_labeling.is_empty:
        threshold_diag = np.zeros(field.dim)
    else:
        threshold_diag = c * np.diag(
            estimate_D(indicator, indicator_labeling, tol=tol).D_hat
        )
    slack = 1e-8 * max(1.0, float(np.max(np.abs(diag))))
    passed = (not nested) or bool(np.all(diag >= threshold_diag - slack))
    return DominationReport(
        threshold=c,
        nested=nested,
        diagonal=diag.tolist(),
        threshold_diagonal=threshold_diag.tolist(),
        passed=passed,
    )
