"""
Continuum reference solutions on the unit torus [0, 1)^d.

Both the heat semigroup exp(t div(D grad)) and the resolvent
(λ - div(D grad))^-1 are applied as exact Fourier multipliers.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, SupportsFloat, Union

import numpy as np
from scipy import ndimage

from ..models import FourierSpec
from .base import ValidationError, atomic_write_bytes
from .cluster import ClusterLabeling

logger = logging.getLogger(__name__)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True, eq=False)
class GridField:
    """Nodal values at k / resolution, k in {0, ..., resolution - 1}^dim."""

    dim: int
    resolution: int
    values: np.ndarray
    tag: str = "test_function"

    def __post_init__(self):
        if not is_power_of_two(self.resolution):
            raise ValidationError(f"resolution {self.resolution} is not a power of two")
        if self.values.shape != (self.resolution,) * self.dim:
            raise ValidationError(
                f"values shape {self.values.shape} does not match "
                f"{(self.resolution,) * self.dim}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("grid values must be finite")

    def with_values(self, values: np.ndarray, tag: Optional[str] = None) -> "GridField":
        return GridField(self.dim, self.resolution, values, tag or self.tag)


@dataclass(frozen=True, eq=False)
class DiffusionMatrix:
    """Symmetric positive-definite effective diffusion matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"diffusion matrix must be square, got {m.shape}")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
            raise ValidationError("diffusion matrix is not symmetric")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise ValidationError("diffusion matrix is not strictly positive")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, dim: int) -> "DiffusionMatrix":
        return cls(np.eye(dim))

    @classmethod
    def from_estimate(cls, Dcal: np.ndarray) -> "DiffusionMatrix":
        """Symmetrize an estimate before validation."""
        Dcal = np.asarray(Dcal, dtype=np.float64)
        return cls(0.5 * (Dcal + Dcal.T))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def grid_nodes(dim: int, resolution: int) -> np.ndarray:
    """Node coordinates with shape (dim, N, ..., N)."""
    axis = np.arange(resolution) / resolution
    return np.stack(np.meshgrid(*([axis] * dim), indexing="ij"))


def evaluate_fourier(spec: FourierSpec, points: np.ndarray) -> np.ndarray:
    """Evaluate ``spec`` at points of shape (dim, ...)."""
    dim = points.shape[0]
    out = np.full(points.shape[1:], spec.constant, dtype=np.float64)
    for term in spec.terms:
        if len(term.wavevector) > dim:
            raise ValidationError(f"wavevector {term.wavevector} exceeds dim {dim}")
        k = list(term.wavevector) + [0] * (dim - len(term.wavevector))
        arg = 2.0 * np.pi * np.tensordot(np.asarray(k, dtype=np.float64), points, 1)
        out += term.amplitude * (np.cos(arg) if term.phase == "cos" else np.sin(arg))
    return out


def fourier_field(
    dim: int, resolution: int, spec: FourierSpec, tag: str = "test_function"
) -> GridField:
    values = evaluate_fourier(spec, grid_nodes(dim, resolution))
    return GridField(dim, resolution, values, tag)


def _symbol(Dmat: DiffusionMatrix, dim: int, resolution: int) -> np.ndarray:
    """(2πn) · D (2πn) on the FFT frequency grid."""
    if Dmat.dim != dim:
        raise ValidationError(f"diffusion matrix dim {Dmat.dim} != field dim {dim}")
    k1 = 2.0 * np.pi * np.fft.fftfreq(resolution, d=1.0 / resolution)
    k = np.stack(np.meshgrid(*([k1] * dim), indexing="ij"))
    return np.einsum("i...,ij,j...->...", k, Dmat.matrix, k)


def heat_evolve(rho0: GridField, Dmat: DiffusionMatrix, t: float) -> GridField:
    """
    Exact periodic heat flow ∂_t ρ = div(D grad ρ) for time t.

    The zero mode is untouched, so the mean is conserved.
    """
    if t < 0:
        raise ValidationError(f"time must be nonnegative, got {t}")
    if t == 0:
        return rho0.with_values(rho0.values.copy(), "density")
    multiplier = np.exp(-t * _symbol(Dmat, rho0.dim, rho0.resolution))
    values = np.fft.ifftn(np.fft.fftn(rho0.values) * multiplier).real
    return rho0.with_values(values, "density")


def resolvent_continuum(f: GridField, Dmat: DiffusionMatrix, lam: float) -> GridField:
    """Solve λ u - div(D grad u) = f mode by mode."""
    if not lam > 0:
        raise ValidationError(f"resolvent needs λ > 0, got {lam}")
    divisor = lam + _symbol(Dmat, f.dim, f.resolution)
    values = np.fft.ifftn(np.fft.fftn(f.values) / divisor).real
    return f.with_values(values, "solution")


def interpolate(g: GridField, points: np.ndarray) -> np.ndarray:
    """
    Periodic multilinear interpolation.

    Args:
        g: Grid field
        points: Torus coordinates with shape (dim, n); wrapped modulo 1

    Returns:
        np.ndarray: Interpolated values of length n
    """
    coords = np.mod(points, 1.0) * g.resolution
    return ndimage.map_coordinates(g.values, coords, order=1, mode="grid-wrap")


def cluster_points(labeling: ClusterLabeling, eps: float) -> np.ndarray:
    """Points εx of the giant sites, shape (dim, n), in flat-index order."""
    coords = np.unravel_index(labeling.giant_sites(), labeling.shape)
    return float(eps) * np.stack(coords).astype(np.float64)


def sample_on_cluster(
    g: GridField, eps: SupportsFloat, labeling: ClusterLabeling
) -> np.ndarray:
    """Site-shaped array of g(εx) on the giant, zero elsewhere."""
    out = np.zeros(labeling.shape, dtype=np.float64)
    if labeling.is_empty:
        return out
    np.put(out, labeling.giant_sites(), interpolate(g, cluster_points(labeling, eps)))
    return out


def grid_integral(g: GridField) -> float:
    """∫ g dx over the unit torus (exact for band-limited nodal data)."""
    return float(np.mean(g.values))


def block_average(g: GridField, cells: int) -> GridField:
    """Average a field over ``cells`` equal blocks per axis."""
    if not is_power_of_two(cells) or g.resolution % cells:
        raise ValidationError(f"{cells} cells do not tile resolution {g.resolution}")
    block = g.resolution // cells
    shape = []
    for _ in range(g.dim):
        shape.extend([cells, block])
    values = g.values.reshape(shape).mean(axis=tuple(range(1, 2 * g.dim, 2)))
    return GridField(g.dim, cells, values, g.tag)


def write_grid_field(g: GridField, path: Union[str, Path]) -> None:
    """JSON header line followed by little-endian f64 nodal values."""
    header = json.dumps({"d": g.dim, "N": g.resolution, "tag": g.tag})
    payload = np.ascontiguousarray(g.values, dtype="<f8").tobytes(order="C")
    atomic_write_bytes(path, header.encode("utf-8") + b"\n" + payload)


def read_grid_field(path: Union[str, Path]) -> GridField:
    blob = Path(path).read_bytes()
    newline = blob.index(b"\n")
    header = json.loads(blob[:newline].decode("utf-8"))
    dim, resolution = int(header["d"]), int(header["N"])
    values = np.frombuffer(blob, dtype="<f8", offset=newline + 1)
    if values.size != resolution**dim:
        raise ValidationError(f"{path}: payload has {values.size} values")
    values = values.astype(np.float64).reshape((resolution,) * dim)
    return GridField(dim, resolution, values, header["tag"])


def pairing_integral(phi: GridField, rho: GridField) -> float:
    """∫ φ ρ dx on matching grids."""
    if phi.resolution != rho.resolution or phi.dim != rho.dim:
        raise ValidationError("pairing needs matching grids")
    return float(np.mean(phi.values * rho.values))
