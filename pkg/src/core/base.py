"""
Shared plumbing for the numerical modules: exceptions, seed derivation,
random streams and the replica pool.
"""

import hashlib
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, List, Optional, Sequence, TypeVar, Union

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)


class LabError(Exception):
    """Base exception for every failure raised by the laboratory."""

    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details = details


class ValidationError(LabError):
    """Parameters or preconditions rejected before any computation."""

    exit_code = 2


class FieldFormatError(LabError):
    """Binary field dump is malformed, corrupted or out of range."""


class EmptyClusterError(LabError):
    """The giant cluster is empty where a nonempty one is required."""


class ConservationError(LabError):
    """Particle count changed during an exclusion run."""


class ConvergenceError(LabError):
    """Conjugate gradient did not reach the requested tolerance."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        best: Optional[np.ndarray] = None,
        residual: float = float("nan"),
        iterations: int = 0,
    ):
        super().__init__(message, residual=residual, iterations=iterations)
        self.best = best
        self.residual = residual
        self.iterations = iterations


def derive_seed(master: int, purpose: str, index: int = 0) -> int:
    """
    Derive an independent 64-bit sub-stream seed.

    Args:
        master: Master seed of the run
        purpose: Short label of the consumer ("field", "walkers", "hydro", ...)
        index: Replica or block index

    Returns:
        int: First 8 bytes of sha256("master:purpose:index"), little endian
    """
    digest = hashlib.sha256(f"{master}:{purpose}:{index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(
    seed: int, purpose: str = "default", index: int = 0
) -> np.random.Generator:
    """Philox-backed generator for the derived sub-stream."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, purpose, index)))


def run_replicas(
    fn: Callable[[T], R], items: Sequence[T], workers: int = 1
) -> List[R]:
    """
    Evaluate ``fn`` over ``items`` and return results in index order.

    With ``workers > 1`` the calls are dispatched to a thread pool; the numpy
    kernels release the GIL for the heavy lifting.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.info(f"Dispatching {len(items)} replicas on {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def pairwise_sum(values: Iterable[float]) -> float:
    """Order-stable sum; numpy reduces float arrays pairwise."""
    if not isinstance(values, np.ndarray):
        values = list(values)
    return float(np.sum(np.asarray(values, dtype=np.float64)))


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    """Write ``data`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
