"""
Numerical kernels shared by the corrector, walk and exclusion modules.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .base import ConvergenceError, ValidationError, pairwise_sum
from .env import ConductanceField

logger = logging.getLogger(__name__)

Gauge = Literal["none", "mean_zero"]


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Pairwise-summed inner product."""
    return pairwise_sum((a * b).ravel())


def masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    count = int(mask.sum())
    return float(np.sum(values[mask])) / count if count else 0.0


def project_mean_zero(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Subtract the mask mean on the mask; zero off the mask."""
    return np.where(mask, values - masked_mean(values, mask), 0.0)


class MaskedLaplacian:
    """
    Weighted graph Laplacian of ω restricted to the bonds inside ``mask``.

    (Lap g)(x) = scale * Σ_{y ~ x} ω(x, y) 1[x, y ∈ mask] (g(y) - g(x)),
    applied matrix-free with periodic shifts.
    """

    def __init__(self, field: ConductanceField, mask: np.ndarray, scale: float = 1.0):
        if mask.shape != field.shape:
            raise ValidationError(
                f"mask shape {mask.shape} does not match field {field.shape}"
            )
        self.field = field
        self.mask = mask.astype(bool)
        self.scale = float(scale)
        self.dim = field.dim
        inside = self.mask.astype(np.float64)
        self.bond_weights = np.stack(
            [
                field.axis_weights(e) * inside * np.roll(inside, -1, axis=e)
                for e in range(field.dim)
            ],
            axis=-1,
        )

    @property
    def shape(self):
        return self.mask.shape

    def _check(self, g: np.ndarray) -> None:
        if g.shape != self.shape:
            raise ValidationError(f"expected shape {self.shape}, got {g.shape}")

    def gradient(self, g: np.ndarray, axis: int) -> np.ndarray:
        """g(x + e_axis) - g(x)."""
        return np.roll(g, -1, axis=axis) - g

    def apply(self, g: np.ndarray) -> np.ndarray:
        self._check(g)
        out = np.zeros(self.shape, dtype=np.float64)
        for e in range(self.dim):
            flux = self.bond_weights[..., e] * self.gradient(g, e)
            out += flux - np.roll(flux, 1, axis=e)
        return self.scale * out

    __call__ = apply

    def degree(self) -> np.ndarray:
        """Total masked conductance at each site, λ_ω(x) restricted to the mask."""
        w = self.bond_weights
        return sum(w[..., e] + np.roll(w[..., e], 1, axis=e) for e in range(self.dim))

    def dirichlet_form(self, g: np.ndarray) -> float:
        """<g, -Lap g> = scale * Σ over masked bonds of ω(b) (∇_b g)^2."""
        self._check(g)
        total = sum(
            float(np.sum(self.bond_weights[..., e] * self.gradient(g, e) ** 2))
            for e in range(self.dim)
        )
        return self.scale * total


@dataclass
class CGResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def cg_solve(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
    gauge: Gauge = "none",
    mask: Optional[np.ndarray] = None,
    raise_on_failure: bool = False,
) -> CGResult:
    """
    Conjugate gradient for a symmetric positive (semi)definite operator.

    Args:
        apply_A: Matrix-free operator
        b: Right-hand side
        tol: Relative residual target, ||A x - b|| <= tol ||b||
        max_iter: Iteration cap (default 10 * b.size)
        gauge: ``mean_zero`` keeps every iterate mean-free on ``mask``
        mask: Sites carrying the gauge (default: all)
        raise_on_failure: Raise ConvergenceError instead of returning the flag

    Returns:
        CGResult: Solution (best iterate on failure), true residual norm,
        iteration count and convergence flag
    """
    if mask is None:
        mask = np.ones(b.shape, dtype=bool)
    max_iter = max_iter or 10 * b.size

    if gauge == "mean_zero":
        total = float(np.sum(b[mask]))
        scale = float(np.sum(np.abs(b[mask])))
        if abs(total) > 1e-12 * max(scale, np.finfo(float).tiny):
            raise ValidationError(
                f"right-hand side has nonzero mean ({total:.3e}) on the gauge set"
            )
        project = lambda v: project_mean_zero(v, mask)  # noqa: E731
        b = project(b)
    elif gauge == "none":
        project = lambda v: v  # noqa: E731
    else:
        raise ValidationError(f"unknown gauge {gauge!r}")

    b_norm = np.sqrt(inner(b, b))
    x = np.zeros_like(b, dtype=np.float64)
    if b_norm == 0.0:
        return CGResult(x, 0.0, 0, True)

    target = tol * b_norm
    r = b.copy()
    p = r.copy()
    rs = inner(r, r)
    best_x, best_res = x.copy(), b_norm
    iterations = 0
    converged = False

    while iterations < max_iter:
        iterations += 1
        Ap = project(apply_A(p))
        pAp = inner(p, Ap)
        if pAp <= 0.0:
            logger.warning(f"CG breakdown at iteration {iterations} (pAp={pAp:.3e})")
            break
        alpha = rs / pAp
        x = project(x + alpha * p)
        r = project(r - alpha * Ap)
        rs_new = inner(r, r)

        if np.sqrt(rs_new) <= target:
            # Residual replacement guards against recursive drift.
            r = project(b - apply_A(x))
            rs_new = inner(r, r)
            if np.sqrt(rs_new) <= target:
                converged = True
                best_x, best_res = x, np.sqrt(rs_new)
                break
            p = r.copy()
            rs = rs_new
            continue

        if np.sqrt(rs_new) < best_res:
            best_x, best_res = x.copy(), np.sqrt(rs_new)
        p = r + (rs_new / rs) * p
        rs = rs_new

    final = project(b - apply_A(best_x))
    residual = float(np.sqrt(inner(final, final)))
    if not converged:
        message = (
            f"CG did not converge in {iterations} iterations "
            f"(residual {residual:.3e}, target {target:.3e})"
        )
        logger.warning(message)
        if raise_on_failure:
            raise ConvergenceError(message, best_x, residual, iterations)
    return CGResult(best_x, residual, iterations, converged)


@dataclass(frozen=True, eq=False)
class AliasTable:
    """Walker/Vose alias table: column i keeps i w.p. prob[i], else alias[i]."""

    prob: np.ndarray
    alias: np.ndarray

    def __len__(self) -> int:
        return int(self.prob.size)


def build_alias(weights: Sequence[float]) -> AliasTable:
    """
    Build an alias table in O(n).

    Raises:
        ValidationError: For negative or all-zero weights
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValidationError("weights must be a nonempty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite and nonnegative")
    total = float(np.sum(w))
    if total <= 0:
        raise ValidationError("weights are all zero")

    n = w.size
    scaled = (w * (n / total)).tolist()
    prob = [1.0] * n
    alias = list(range(n))
    small = [i for i, p in enumerate(scaled) if p < 1.0]
    large = [i for i, p in enumerate(scaled) if p >= 1.0]

    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # Leftovers are 1 up to rounding.
    for i in small + large:
        prob[i] = 1.0
        alias[i] = i

    return AliasTable(np.array(prob), np.array(alias, dtype=np.int64))


def alias_sample(table: AliasTable, rng: np.random.Generator) -> int:
    i = int(rng.integers(len(table)))
    return i if rng.random() < table.prob[i] else int(table.alias[i])


def alias_sample_many(
    table: AliasTable, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Vectorized draws from the alias table."""
    i = rng.integers(len(table), size=size)
    keep = rng.random(size) < table.prob[i]
    return np.where(keep, i, table.alias[i])
