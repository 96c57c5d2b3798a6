"""
Conductance fields on a periodic box: sampling, thresholding and the binary
field dump.
"""

import logging
import struct
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from ..models import (
    BernoulliLaw,
    ConstantLaw,
    FieldLaw,
    FieldManifest,
    LayeredLaw,
    MixtureLaw,
    UniformLaw,
)
from .base import FieldFormatError, ValidationError, atomic_write_bytes, make_rng

logger = logging.getLogger(__name__)

MAGIC = b"PCHM"
VERSION = 1
HEADER = struct.Struct("<4sHHId")
FOOTER = struct.Struct("<Q")


@dataclass(frozen=True, eq=False)
class ConductanceField:
    """
    Per-bond conductances on the torus (Z / side Z)^dim.

    ``weights[x..., e]`` is ω of the bond {x, x + e_e} with periodic wrap, so a
    single slot holds both orientations of an undirected bond.
    """

    dim: int
    side: int
    cap: float
    weights: np.ndarray
    law: Optional[FieldLaw] = None
    seed: int = 0
    origin: str = dataclass_field(default="sampled", compare=False)

    def __post_init__(self):
        expected = (self.side,) * self.dim + (self.dim,)
        if self.weights.shape != expected:
            raise ValidationError(
                f"weights shape {self.weights.shape} does not match {expected}"
            )
        self.weights.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.side**self.dim

    @property
    def n_bonds(self) -> int:
        return self.dim * self.n_sites

    def axis_weights(self, axis: int) -> np.ndarray:
        """ω(x, x + e_axis) as a site-shaped array."""
        return self.weights[..., axis]


def _check_box(dim: int, side: int, cap: float) -> None:
    if dim < 2:
        raise ValidationError(f"dim must be at least 2, got {dim}")
    if side < 2:
        raise ValidationError(f"side must be at least 2, got {side}")
    if not cap > 0:
        raise ValidationError(f"cap must be positive, got {cap}")


def _check_law(law: FieldLaw, dim: int, cap: float) -> None:
    bad = [v for v in law.bounds() if v < 0 or v > cap]
    if bad:
        raise ValidationError(f"law parameters {bad} outside [0, {cap}]")
    if isinstance(law, LayeredLaw):
        if len(law.axis_rules) != dim:
            raise ValidationError(
                f"layered law has {len(law.axis_rules)} rules for dim {dim}"
            )
        if any(rule.along >= dim for rule in law.axis_rules):
            raise ValidationError("layered rule refers to a missing coordinate")


def _bond_uniforms(seed: int, purpose: str, n_bonds: int) -> np.ndarray:
    # Philox output i belongs to bond i = flat_site * dim + axis.
    return make_rng(seed, purpose).random(n_bonds)


def _positive_draws(
    law: Union[UniformLaw, ConstantLaw], u: np.ndarray
) -> np.ndarray:
    if isinstance(law, ConstantLaw):
        return np.full_like(u, law.c)
    return law.lo + (law.hi - law.lo) * u


def sample_field(
    law: FieldLaw, dim: int, side: int, cap: float, seed: int
) -> ConductanceField:
    """
    Sample a conductance field.

    Args:
        law: Generating law
        dim: Lattice dimension d >= 2
        side: Sites per axis L >= 2
        cap: Upper bound c0 of the conductances
        seed: 64-bit seed; same (law, seed, dim, side) gives identical weights

    Returns:
        ConductanceField: Immutable field with weights in [0, cap]
    """
    _check_box(dim, side, cap)
    _check_law(law, dim, cap)
    shape = (side,) * dim + (dim,)
    n_bonds = dim * side**dim

    if isinstance(law, ConstantLaw):
        weights = np.full(shape, law.c, dtype=np.float64)
    elif isinstance(law, UniformLaw):
        weights = _positive_draws(law, _bond_uniforms(seed, "bond", n_bonds))
    elif isinstance(law, BernoulliLaw):
        u = _bond_uniforms(seed, "bond", n_bonds)
        weights = np.where(u < law.p, law.value, 0.0)
    elif isinstance(law, MixtureLaw):
        closed = _bond_uniforms(seed, "bond", n_bonds) < law.p_zero
        values = _positive_draws(law.positive, _bond_uniforms(seed, "value", n_bonds))
        weights = np.where(closed, 0.0, values)
    elif isinstance(law, LayeredLaw):
        coords = np.indices((side,) * dim)
        weights = np.empty(shape, dtype=np.float64)
        for axis, rule in enumerate(law.axis_rules):
            values = np.asarray(rule.values, dtype=np.float64)
            weights[..., axis] = values[coords[rule.along] % len(values)]
    else:
        raise ValidationError(f"Unsupported law: {law!r}")

    weights = np.ascontiguousarray(weights, dtype=np.float64).reshape(shape)
    logger.info(f"Sampled {law.kind} field d={dim} L={side} seed={seed}")
    return ConductanceField(dim, side, float(cap), weights, law=law, seed=seed)


def threshold_indicator(field: ConductanceField, c: float) -> ConductanceField:
    """Binary field with weight 1 exactly where ω(b) > c; the result has cap 1."""
    if c < 0 or c > field.cap:
        raise ValidationError(f"threshold {c} outside [0, {field.cap}]")
    weights = (field.weights > c).astype(np.float64)
    return ConductanceField(
        field.dim,
        field.side,
        1.0,
        weights,
        law=None,
        seed=field.seed,
        origin=f"threshold({c:g})",
    )


def field_checksum(weights: np.ndarray) -> int:
    """Sum of the raw little-endian weight bits modulo 2^64."""
    bits = np.ascontiguousarray(weights, dtype="<f8").view("<u8")
    return int(np.sum(bits, dtype=np.uint64))


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_field(field: ConductanceField, path: Union[str, Path]) -> int:
    """
    Write the binary dump and its sibling JSON manifest.

    Returns:
        int: Checksum stored in the footer
    """
    path = Path(path)
    payload = np.ascontiguousarray(field.weights, dtype="<f8")
    checksum = field_checksum(payload)
    blob = b"".join(
        [
            HEADER.pack(MAGIC, VERSION, field.dim, field.side, field.cap),
            payload.tobytes(order="C"),
            FOOTER.pack(checksum),
        ]
    )
    atomic_write_bytes(path, blob)

    manifest = FieldManifest(
        law=field.law,
        origin=field.origin,
        seed=field.seed,
        dim=field.dim,
        side=field.side,
        cap=field.cap,
        checksum=checksum,
    )
    atomic_write_bytes(
        manifest_path(path), manifest.model_dump_json(indent=2).encode("utf-8")
    )
    logger.info(f"Wrote field dump {path} (checksum {checksum})")
    return checksum


def read_field(path: Union[str, Path]) -> ConductanceField:
    """
    Read a binary dump, validating magic, version, checksum and weight range.

    Raises:
        FieldFormatError: If the file is malformed or fails validation
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER.size + FOOTER.size:
        raise FieldFormatError(f"{path}: file too short")

    magic, version, dim, side, cap = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FieldFormatError(f"{path}: unsupported version {version}")
    if dim < 2 or side < 2:
        raise FieldFormatError(f"{path}: invalid box dim={dim}, side={side}")
    if not (np.isfinite(cap) and cap > 0):
        raise FieldFormatError(f"{path}: invalid cap {cap}")

    n_bonds = dim * side**dim
    expected = HEADER.size + 8 * n_bonds + FOOTER.size
    if len(blob) != expected:
        raise FieldFormatError(f"{path}: expected {expected} bytes, got {len(blob)}")

    payload = np.frombuffer(blob, dtype="<f8", count=n_bonds, offset=HEADER.size)
    (stored,) = FOOTER.unpack_from(blob, HEADER.size + 8 * n_bonds)
    if field_checksum(payload) != stored:
        raise FieldFormatError(f"{path}: checksum mismatch")
    if not np.all(np.isfinite(payload)) or payload.min() < 0 or payload.max() > cap:
        raise FieldFormatError(f"{path}: weight outside [0, {cap}]")

    law, seed, origin = None, 0, "read"
    sibling = manifest_path(path)
    if sibling.exists():
        manifest = FieldManifest.model_validate_json(sibling.read_text())
        law, seed, origin = manifest.law, manifest.seed, manifest.origin or origin

    weights = payload.astype(np.float64).reshape((side,) * dim + (dim,))
    return ConductanceField(dim, side, cap, weights, law=law, seed=seed, origin=origin)
