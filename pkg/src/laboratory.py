"""
Laboratory that runs configured experiments and records their outputs.
"""

import json
import logging
import os
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from .artifacts import MANIFEST_NAME, RunRecorder, verify_manifest
from .config import Config
from .core.base import ConvergenceError, LabError, ValidationError, derive_seed
from .core.cluster import CLUSTER_COLUMNS, estimate_m, label_components
from .core.corrector import (
    domination_bound,
    estimate_columns,
    estimate_D,
    estimate_row,
    sweep_D,
)
from .core.env import ConductanceField, sample_field, threshold_indicator
from .core.exclusion import HYDRO_COLUMNS, hydro_experiment, hydro_pairing_check
from .core.pde import (
    DiffusionMatrix,
    fourier_field,
    grid_integral,
    heat_evolve,
    interpolate,
    resolvent_continuum,
    sample_on_cluster,
)
from .core.walk import (
    RESOLVENT_COLUMNS,
    SEMIGROUP_COLUMNS,
    EpsScale,
    choose_probes,
    exact_semigroup,
    homogenization_error,
    mc_semigroup,
    semigroup_error,
    solve_resolvent_discrete,
    weak_pairing_error,
)
from .models import (
    ClusterStatsConfig,
    CorrectorConfig,
    ExclusionConfig,
    ExperimentConfig,
    FourierSpec,
    GenEnvConfig,
    HydroConfig,
    InvariantRecord,
    ResolventConfig,
    RunManifest,
    RunOptions,
    WalkConfig,
)

logger = logging.getLogger(__name__)

Row = List[Any]


@dataclass
class RunResult:
    """Manifest of a finished run plus a short table for the terminal."""

    kind: str
    out_dir: Path
    manifest: RunManifest
    headers: List[str]
    rows: List[Row]
    matrix: Optional[List[List[float]]] = None
    failures: List[str] = dataclass_field(default_factory=list)

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_NAME


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """
    Parse and validate an experiment file.

    Raises:
        ValidationError: If the file is not JSON or fails the schema
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})")
    try:
        return ExperimentConfig.model_validate(raw)
    except PydanticValidationError as e:
        raise ValidationError(
            f"{path}: invalid configuration", errors=e.errors(include_url=False)
        )


def resolve_options(
    experiment: ExperimentConfig,
    settings: Config,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    tol: Optional[float] = None,
) -> RunOptions:
    """Flags win over the config file, then PCHM_WORKERS, then user settings."""
    cfg = experiment.root
    env_workers = os.environ.get("PCHM_WORKERS")
    if workers is None:
        workers = cfg.workers
    if workers is None and env_workers:
        try:
            workers = int(env_workers)
        except ValueError:
            raise ValidationError(f"PCHM_WORKERS={env_workers!r} is not an integer")
    try:
        return RunOptions(
            out_dir=out or cfg.output_dir or str(Path("pchm-out") / cfg.kind),
            seed=seed,
            workers=settings.workers if workers is None else workers,
            tol=next(v for v in (tol, cfg.tol, settings.tol) if v is not None),
        )
    except PydanticValidationError as e:
        raise ValidationError("invalid run options", errors=e.errors(include_url=False))


def _diffusion_for(
    override: Optional[Any],
    field: ConductanceField,
    tol: float,
    workers: int,
    recorder: RunRecorder,
) -> DiffusionMatrix:
    if override is not None:
        return DiffusionMatrix(np.asarray(override.matrix, dtype=np.float64))
    estimate = estimate_D(field, label_components(field), tol=tol, workers=workers)
    recorder.check(f"diffusion_converged_L{field.side}", estimate.converged)
    return DiffusionMatrix.from_estimate(estimate.Dcal_hat)


def _profile(spec: FourierSpec, dim: int, side: int, scale: float = 1.0):
    grid = fourier_field(dim, side, spec, "density")
    return grid.with_values(scale * grid.values) if scale != 1.0 else grid


class Laboratory:
    """Runs experiments; one method per experiment kind."""

    def __init__(self, config: Optional[Config] = None):
        self.logger = logging.getLogger(__name__)
        self.config = config or Config()
        self._runners: Dict[str, Callable[..., RunResult]] = {
            "gen-env": self._gen_env,
            "cluster-stats": self._cluster_stats,
            "corrector": self._corrector,
            "resolvent": self._resolvent,
            "walk": self._walk,
            "exclusion": self._exclusion,
            "hydro": self._hydro,
        }

    def run(self, experiment: ExperimentConfig, options: RunOptions) -> RunResult:
        """
        Execute an experiment and write its manifest.

        Raises:
            ConvergenceError: After the outputs are written, if a CG solve failed
            LabError: For any other failure
        """
        cfg = experiment.root
        seed = options.seed if options.seed is not None else cfg.seed
        resolved = cfg.model_copy(
            update={
                "seed": seed,
                "tol": options.tol,
                "workers": options.workers,
                "output_dir": options.out_dir,
            }
        )
        recorder = RunRecorder(
            options.out_dir, resolved.model_dump(mode="json"), options
        )
        self.logger.info(f"Running {cfg.kind} experiment into {options.out_dir}")
        try:
            result = self._runners[cfg.kind](resolved, options, recorder, seed)
        except LabError as e:
            self.logger.error(f"{cfg.kind} experiment failed: {e}")
            raise
        self.logger.info(f"Finished {cfg.kind} experiment")

        failed = [inv.name for inv in result.manifest.invariants if not inv.passed]
        result.failures = failed
        if any("converged" in name for name in failed):
            raise ConvergenceError(
                f"{cfg.kind}: CG did not converge; outputs kept in {options.out_dir}"
            )
        return result

    def verify(self, manifest_path: Union[str, Path]) -> List[InvariantRecord]:
        self.logger.info(f"Verifying {manifest_path}")
        return verify_manifest(manifest_path)

    def _finish(self, kind, recorder, headers, rows, matrix=None) -> RunResult:
        manifest = recorder.finalize()
        return RunResult(kind, recorder.out_dir, manifest, headers, rows, matrix)

    def _gen_env(self, cfg: GenEnvConfig, options, recorder, seed) -> RunResult:
        field = sample_field(cfg.law, cfg.dim, cfg.side, cfg.cap, seed)
        recorder.write_field("field.bin", field)
        recorder.check(
            "weights_in_range",
            bool(np.all((field.weights >= 0) & (field.weights <= field.cap))),
        )
        open_fraction = float(np.mean(field.weights > 0))
        rows = [["field.bin", cfg.law.kind, cfg.side, open_fraction]]
        if cfg.threshold is not None:
            indicator = threshold_indicator(field, cfg.threshold)
            recorder.write_field("threshold.bin", indicator)
            rows.append(
                [
                    "threshold.bin",
                    indicator.origin,
                    cfg.side,
                    float(np.mean(indicator.weights)),
                ]
            )
        return self._finish("gen-env", recorder, ["file", "law", "L", "open"], rows)

    def _cluster_stats(self, cfg: ClusterStatsConfig, options, recorder, seed):
        rows, summary = [], []
        for side in cfg.sides:
            mean, stderr, samples = estimate_m(
                cfg.law,
                cfg.dim,
                side,
                cfg.cap,
                cfg.n_samples,
                derive_seed(seed, "cluster-side", side),
                options.workers,
            )
            rows.extend(s.to_row() for s in samples)
            summary.append([side, cfg.n_samples, mean, stderr])
            recorder.check(f"m_hat_in_unit_interval_L{side}", 0.0 <= mean <= 1.0, mean)
        recorder.write_csv("cluster.csv", CLUSTER_COLUMNS, rows)
        headers = ["L", "n_samples", "m_hat", "stderr"]
        recorder.write_csv("cluster_summary.csv", headers, summary)
        return self._finish("cluster-stats", recorder, headers, summary)

    def _corrector(self, cfg: CorrectorConfig, options, recorder, seed):
        table = sweep_D(
            cfg.law,
            cfg.dim,
            cfg.cap,
            cfg.sides,
            cfg.n_seeds,
            seed=seed,
            tol=options.tol,
            workers=options.workers,
        )
        recorder.write_csv(
            "corrector.csv",
            estimate_columns(cfg.dim),
            [estimate_row(cfg.law.kind, e) for e in table.estimates],
        )
        asym = max(float(np.max(np.abs(e.D_hat - e.D_hat.T))) for e in table.estimates)
        recorder.check("D_symmetric", asym <= 1e-12, asym)
        recorder.check("cg_converged", all(e.converged for e in table.estimates))

        entries = [(i, j) for i in range(cfg.dim) for j in range(i, cfg.dim)]
        headers = ["L", "n_seeds", "m_hat"]
        headers += [f"Dcal{i + 1}{j + 1}" for i, j in entries]
        headers += [f"stderr{i + 1}{j + 1}" for i, j in entries]
        rows = [
            [s.side, s.n_seeds, s.mean_m_hat]
            + [float(s.mean_Dcal[i, j]) for i, j in entries]
            + [float(s.stderr_Dcal[i, j]) for i, j in entries]
            for s in table.summaries
        ]
        recorder.write_csv("corrector_summary.csv", headers, rows)

        if cfg.domination_threshold is not None:
            field = sample_field(
                cfg.law,
                cfg.dim,
                cfg.sides[0],
                cfg.cap,
                derive_seed(seed, f"field-{cfg.sides[0]}", 0),
            )
            report = domination_bound(field, cfg.domination_threshold, options.tol)
            recorder.write_json("domination.json", report)
            recorder.check("domination_bound", report.passed)

        last = table.summaries[-1]
        return self._finish(
            "corrector", recorder, headers, rows, last.mean_Dcal.tolist()
        )

    def _resolvent(self, cfg: ResolventConfig, options, recorder, seed):
        rows = []
        errors: Dict[float, List[float]] = {lam: [] for lam in cfg.lambdas}
        for side in cfg.sides:
            eps = EpsScale.from_side(side)
            field = sample_field(
                cfg.law, cfg.dim, side, cfg.cap, derive_seed(seed, f"field-{side}")
            )
            labeling = label_components(field)
            Dmat = _diffusion_for(
                cfg.diffusion, field, options.tol, options.workers, recorder
            )
            f = fourier_field(cfg.dim, side, cfg.f, "test_function")
            f_norm = float(np.sqrt(grid_integral(f.with_values(f.values**2))))
            for lam in cfg.lambdas:
                solution = solve_resolvent_discrete(
                    field,
                    labeling,
                    eps,
                    lam,
                    f,
                    tol=options.tol,
                    raise_on_failure=False,
                )
                recorder.check(
                    f"cg_converged_L{side}_lambda{lam:g}",
                    solution.converged,
                    solution.residual,
                )
                u0 = resolvent_continuum(f, Dmat, lam)
                err = homogenization_error(solution.u, u0, eps, labeling)
                gaps = weak_pairing_error(solution.u, u0, f, eps, labeling)
                errors[lam].append(err)
                rows.append(
                    [
                        float(eps),
                        lam,
                        err,
                        solution.iterations,
                        gaps.pairing_gap,
                        gaps.norm_gap,
                    ]
                )
                mask = labeling.giant_mask
                u = solution.u[mask]
                energy_gap = lam * float(np.sum(u * u)) - float(
                    np.sum(u * sample_on_cluster(f, eps, labeling)[mask])
                )
                recorder.check(
                    f"energy_inequality_L{side}_lambda{lam:g}",
                    energy_gap <= 1e-9 * max(1.0, abs(float(np.sum(u * u)))),
                    energy_gap,
                )
        for lam, series in errors.items():
            decreasing = all(b < a for a, b in zip(series, series[1:]))
            recorder.check(f"error_decreasing_lambda{lam:g}", decreasing, series[-1])
            recorder.check(
                f"final_error_within_budget_lambda{lam:g}",
                np.sqrt(series[-1]) < 0.02 * f_norm,
                np.sqrt(series[-1]),
                f"budget 0.02 * {f_norm:.3e}",
            )
        headers = RESOLVENT_COLUMNS + ["pairing_gap", "norm_gap"]
        recorder.write_csv("resolvent.csv", headers, rows)
        return self._finish("resolvent", recorder, headers, rows)

    def _walk(self, cfg: WalkConfig, options, recorder, seed):
        eps = EpsScale.from_side(cfg.side)
        field = sample_field(
            cfg.law, cfg.dim, cfg.side, cfg.cap, derive_seed(seed, f"field-{cfg.side}")
        )
        labeling = label_components(field)
        Dmat = _diffusion_for(
            cfg.diffusion, field, options.tol, options.workers, recorder
        )
        f = fourier_field(cfg.dim, cfg.side, cfg.f, "test_function")
        probes = choose_probes(labeling, cfg.n_probes, seed)
        estimate = mc_semigroup(
            field, labeling, eps, f, cfg.t, cfg.n_walkers, probes, seed, options.workers
        )
        continuum = heat_evolve(f, Dmat, cfg.t)
        coords = np.stack(np.unravel_index(probes, field.shape)).astype(np.float64)
        continuum_values = interpolate(continuum, float(eps) * coords)
        exact = exact_semigroup(
            field, labeling, eps, sample_on_cluster(f, eps, labeling), cfg.t
        ).ravel()[probes]

        rows = [
            [" ".join(str(int(c)) for c in coords[:, k]), est, err, ref, ex]
            for k, (est, err, ref, ex) in enumerate(
                zip(estimate.estimates, estimate.stderr, continuum_values, exact)
            )
        ]
        headers = SEMIGROUP_COLUMNS + ["exact_value"]
        recorder.write_csv("semigroup.csv", headers, rows)

        discrepancy = np.sqrt(
            semigroup_error(estimate.estimates, continuum, eps, labeling, probes, "l2")
        )
        f_norm = np.sqrt(labeling.m_hat * grid_integral(f.with_values(f.values**2)))
        envelope = 3.0 * np.sqrt(labeling.m_hat * np.mean(estimate.stderr**2))
        recorder.check(
            "semigroup_within_envelope",
            discrepancy <= envelope + 0.02 * f_norm,
            discrepancy,
            f"envelope {envelope:.3e} + 0.02 * {f_norm:.3e}",
        )
        mc_gap = np.abs(estimate.estimates - exact)
        recorder.check(
            "mc_matches_exact_semigroup",
            bool(np.all(mc_gap <= 4.0 * estimate.stderr + 1e-12)),
            float(np.max(mc_gap)),
        )
        return self._finish("walk", recorder, headers, rows[:10])

    def _exclusion(self, cfg: ExclusionConfig, options, recorder, seed):
        eps = EpsScale.from_side(cfg.side)
        field = sample_field(
            cfg.law, cfg.dim, cfg.side, cfg.cap, derive_seed(seed, f"field-{cfg.side}")
        )
        labeling = label_components(field)
        scale = labeling.m_hat if cfg.relative_to_m else 1.0
        rho0 = _profile(cfg.rho0, cfg.dim, cfg.side, scale)
        phi = fourier_field(cfg.dim, cfg.side, cfg.phi, cfg.phi.label())
        report = hydro_pairing_check(
            field,
            labeling,
            eps,
            phi,
            cfg.t_macro,
            cfg.n_runs,
            seed,
            rho0=rho0,
            workers=options.workers,
        )
        recorder.write_json("exclusion_report.json", report)
        headers = ["run", "lattice_pairing", "semigroup_pairing", "difference"]
        rows = [
            [k, a, b, d]
            for k, (a, b, d) in enumerate(
                zip(
                    report.lattice_pairings,
                    report.semigroup_pairings,
                    report.differences,
                )
            )
        ]
        recorder.write_csv("exclusion.csv", headers, rows)
        recorder.check("particle_conservation", report.conservation_ok)
        recorder.check("pairing_within_3sigma", report.passed, report.mean)
        return self._finish("exclusion", recorder, headers, rows)

    def _hydro(self, cfg: HydroConfig, options, recorder, seed):
        eps = EpsScale.from_side(cfg.side)
        field = sample_field(
            cfg.law, cfg.dim, cfg.side, cfg.cap, derive_seed(seed, f"field-{cfg.side}")
        )
        labeling = label_components(field)
        Dmat = _diffusion_for(
            cfg.diffusion, field, options.tol, options.workers, recorder
        )
        scale = labeling.m_hat if cfg.relative_to_m else 1.0
        rho0 = _profile(cfg.rho0, cfg.dim, cfg.side, scale)
        battery = [
            fourier_field(cfg.dim, cfg.side, spec, spec.label()) for spec in cfg.battery
        ]
        report = hydro_experiment(
            field,
            labeling,
            Dmat,
            rho0,
            cfg.t_macro,
            eps,
            cfg.n_runs,
            seed,
            battery,
            cfg.cells_per_axis,
            options.workers,
        )
        recorder.write_json("hydro_report.json", report)
        recorder.write_grid("rho0.grid", rho0)
        recorder.write_grid("reference.grid", heat_evolve(rho0, Dmat, cfg.t_macro))

        headers = ["test_function", "mean", "reference", "stderr", "bias", "passed"]
        rows = [
            [p.test_function, p.mean, p.reference, p.stderr, p.bias, p.passed]
            for p in report.pairings
        ]
        recorder.write_csv("hydro.csv", headers, rows)
        recorder.write_csv(
            "hydro_runs.csv",
            HYDRO_COLUMNS,
            [
                [k, p.test_function, value, p.reference]
                for k, values in enumerate(report.per_run_pairings)
                for p, value in zip(report.pairings, values)
            ],
        )
        recorder.write_csv(
            "hydro_profile.csv",
            ["cell", "mean_profile", "reference_profile"],
            [
                [k, a, b]
                for k, (a, b) in enumerate(
                    zip(report.mean_profile, report.reference_profile)
                )
            ],
        )
        recorder.check("particle_conservation", report.conservation_ok)
        recorder.check(
            "initial_profile_within_m_hat",
            report.clamped_sites == 0,
            report.clamped_sites,
        )
        for p in report.pairings:
            recorder.check(f"pairing_{p.test_function}", p.passed, p.bias)
        return self._finish("hydro", recorder, headers, rows, report.diffusion)
