"""
Run outputs: CSV tables, JSON reports, field dumps, the run manifest and its
verification.
"""

import csv
import hashlib
import io
import json
import logging
import re
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from . import __version__
from .core.base import FieldFormatError, LabError, atomic_write_bytes
from .core.env import (
    ConductanceField,
    field_checksum,
    manifest_path,
    read_field,
    write_field,
)
from .core.pde import GridField, write_grid_field
from .models import ArtifactRecord, InvariantRecord, RunManifest, RunOptions

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
SYMMETRY_TOL = 1e-12
ENTRY = re.compile(r"^D\d\d$")


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class RunRecorder:
    """Writes the artifacts of one run and collects its invariant checks."""

    def __init__(
        self, out_dir: Union[str, Path], config: Dict[str, Any], options: RunOptions
    ):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.options = options
        self.artifacts: List[ArtifactRecord] = []
        self.invariants: List[InvariantRecord] = []

    def _record(self, path: Path, kind: str, checksum: Optional[int] = None) -> Path:
        self.artifacts.append(
            ArtifactRecord(
                path=path.relative_to(self.out_dir).as_posix(),
                kind=kind,
                sha256=sha256_file(path),
                checksum=checksum,
            )
        )
        return path

    def write_csv(
        self, name: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]
    ) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
        path = self.out_dir / name
        atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))
        return self._record(path, "csv")

    def write_json(self, name: str, payload: Union[BaseModel, Dict[str, Any]]) -> Path:
        if isinstance(payload, BaseModel):
            text = payload.model_dump_json(indent=2)
        else:
            text = json.dumps(payload, indent=2)
        path = self.out_dir / name
        atomic_write_bytes(path, text.encode("utf-8"))
        return self._record(path, "json")

    def write_field(self, name: str, field: ConductanceField) -> Path:
        path = self.out_dir / name
        checksum = write_field(field, path)
        self._record(path, "field", checksum)
        self._record(manifest_path(path), "field_manifest")
        return path

    def write_grid(self, name: str, grid: GridField) -> Path:
        path = self.out_dir / name
        write_grid_field(grid, path)
        return self._record(path, "grid")

    def check(
        self,
        name: str,
        passed: bool,
        value: Optional[float] = None,
        detail: Optional[str] = None,
    ) -> bool:
        if value is not None:
            value = float(value)
        self.invariants.append(
            InvariantRecord(name=name, passed=bool(passed), value=value, detail=detail)
        )
        if not passed:
            logger.warning(f"Invariant {name} failed (value={value}, {detail})")
        return bool(passed)

    def finalize(self) -> RunManifest:
        manifest = RunManifest(
            version=__version__,
            created_at=datetime.now(timezone.utc),
            config=self.config,
            options=self.options,
            artifacts=self.artifacts,
            invariants=self.invariants,
        )
        atomic_write_bytes(
            self.out_dir / MANIFEST_NAME,
            manifest.model_dump_json(indent=2).encode("utf-8"),
        )
        logger.info(f"Wrote manifest with {len(self.artifacts)} artifacts")
        return manifest


def _read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _matrix(row: Dict[str, str], prefix: str, dim: int) -> np.ndarray:
    return np.array(
        [
            [float(row[f"{prefix}{i + 1}{j + 1}"]) for j in range(dim)]
            for i in range(dim)
        ]
    )


def recheck_estimates(path: Path) -> List[InvariantRecord]:
    """Re-assert D_hat symmetry and Dcal_hat = D_hat / (2 m_hat) row by row."""
    rows = _read_csv(path)
    if not rows or "D11" not in rows[0]:
        return []
    dim = int(round(np.sqrt(sum(1 for key in rows[0] if ENTRY.match(key)))))
    worst_asym, worst_norm = 0.0, 0.0
    for row in rows:
        D = _matrix(row, "D", dim)
        Dcal = _matrix(row, "Dcal", dim)
        m_hat = float(row["m_hat"])
        scale = max(1.0, float(np.max(np.abs(D))))
        worst_asym = max(worst_asym, float(np.max(np.abs(D - D.T))) / scale)
        if m_hat > 0:
            expected = D / (2.0 * m_hat)
            gap = float(np.max(np.abs(Dcal - expected)))
            scale = max(1.0, float(np.max(np.abs(expected))))
            worst_norm = max(worst_norm, gap / scale)
    return [
        InvariantRecord(
            name=f"{path.name}:D_symmetric",
            passed=worst_asym <= SYMMETRY_TOL,
            value=worst_asym,
        ),
        InvariantRecord(
            name=f"{path.name}:Dcal_normalization",
            passed=worst_norm <= SYMMETRY_TOL,
            value=worst_norm,
        ),
    ]


def recheck_report(path: Path) -> List[InvariantRecord]:
    """Conservation flag of exclusion reports."""
    payload = json.loads(path.read_text())
    if not isinstance(payload, dict) or "conservation_ok" not in payload:
        return []
    return [
        InvariantRecord(
            name=f"{path.name}:conservation",
            passed=bool(payload["conservation_ok"]),
        )
    ]


def verify_manifest(manifest_file: Union[str, Path]) -> List[InvariantRecord]:
    """
    Re-check every artifact referenced by a manifest.

    Returns:
        List[InvariantRecord]: One record per check; the run verifies iff all pass

    Raises:
        LabError: If the manifest itself is missing or unreadable
    """
    manifest_file = Path(manifest_file)
    if not manifest_file.exists():
        raise LabError(f"manifest {manifest_file} not found")
    try:
        manifest = RunManifest.model_validate_json(manifest_file.read_text())
    except ValueError as e:
        raise LabError(f"manifest {manifest_file} is malformed: {e}")
    root = manifest_file.parent
    checks: List[InvariantRecord] = []

    for artifact in manifest.artifacts:
        path = root / artifact.path
        if not path.exists():
            checks.append(
                InvariantRecord(name=f"{artifact.path}:exists", passed=False)
            )
            continue
        digest_ok = sha256_file(path) == artifact.sha256
        checks.append(
            InvariantRecord(name=f"{artifact.path}:sha256", passed=digest_ok)
        )

        if artifact.kind == "field":
            try:
                field = read_field(path)
                ok = field_checksum(field.weights) == artifact.checksum
                detail = None
            except FieldFormatError as e:
                ok, detail = False, str(e)
            checks.append(
                InvariantRecord(
                    name=f"{artifact.path}:checksum", passed=ok, detail=detail
                )
            )
        elif artifact.kind == "csv":
            checks.extend(recheck_estimates(path))
        elif artifact.kind == "json":
            checks.extend(recheck_report(path))

    for record in manifest.invariants:
        checks.append(record)
    passed = sum(c.passed for c in checks)
    logger.info(f"Verified {manifest_file}: {passed}/{len(checks)} checks passed")
    return checks
