"""Acceptance-scale homogenization checks (marked slow)."""

import numpy as np
import pytest
from scipy.linalg import expm

from src.core.base import derive_seed, make_rng
from src.core.cluster import label_components
from src.core.corrector import estimate_D, sweep_D
from src.core.env import sample_field
from src.core.exclusion import (
    ClockSchedule,
    OccupancyConfig,
    exclusion_generator_matrix,
    hydro_experiment,
    hydro_pairing_check,
    local_bonds,
    occupancy_index,
    simulate_exclusion,
)
from src.core.pde import (
    DiffusionMatrix,
    fourier_field,
    grid_integral,
    heat_evolve,
    resolvent_continuum,
)
from src.core.walk import (
    build_kernel,
    choose_probes,
    dense_semigroup,
    homogenization_error,
    mc_semigroup,
    run_walkers,
    semigroup_error,
    solve_resolvent_discrete,
)
from src.models import (
    BernoulliLaw,
    ConstantLaw,
    FourierSpec,
    FourierTerm,
    UniformLaw,
)

BATTERY = [
    FourierSpec(name="one", constant=1.0),
    FourierSpec(name="cos_x1", terms=[FourierTerm(amplitude=1.0, wavevector=[1, 0])]),
    FourierSpec(
        name="sin_x1",
        terms=[FourierTerm(amplitude=1.0, wavevector=[1, 0], phase="sin")],
    ),
]
PROFILE = FourierSpec(
    constant=0.5, terms=[FourierTerm(amplitude=0.4, wavevector=[1, 0])]
)


def _unit(side):
    field = sample_field(ConstantLaw(c=1.0), 2, side, 1.0, 0)
    return field, label_components(field)


def _norm(g):
    return float(np.sqrt(grid_integral(g.with_values(g.values**2))))


def test_constant_field_identity_at_L32():
    """Test D_hat = 2I and Dcal_hat = I for ω ≡ 1 at L = 32."""
    field, labeling = _unit(32)
    estimate = estimate_D(field, labeling)
    assert labeling.m_hat == 1.0
    assert np.allclose(estimate.D_hat, 2 * np.eye(2), atol=1e-10, rtol=0)
    assert np.allclose(estimate.Dcal_hat, np.eye(2), atol=1e-10, rtol=0)


def test_layered_oracles_at_L64(parallel_layers, series_layers):
    """Test the arithmetic and harmonic mean oracles at L = 64."""
    for law, expected in [(parallel_layers, [2.0, 2.0]), (series_layers, [1.0, 1.5])]:
        field = sample_field(law, 2, 64, 3.0, 0)
        estimate = estimate_D(field, label_components(field), tol=1e-12)
        assert np.allclose(estimate.Dcal_hat, np.diag(expected), atol=1e-8, rtol=0)


@pytest.mark.slow
def test_percolation_diffusion_is_positive_and_isotropic():
    """Test Dcal_11 > 0.1 per seed and a vanishing cross term and anisotropy."""
    table = sweep_D(BernoulliLaw(p=0.7, value=1.0), 2, 1.0, [64], 20, seed=1)
    Dcal = np.stack([e.Dcal_hat for e in table.estimates])
    assert np.all(Dcal[:, 0, 0] > 0.1)
    summary = table.summaries[0]
    assert abs(summary.mean_Dcal[0, 1]) <= 3 * summary.stderr_Dcal[0, 1]

    uniform = sweep_D(UniformLaw(lo=0.0, hi=1.0), 2, 1.0, [32], 20, seed=2)
    gaps = np.array([e.Dcal_hat[0, 0] - e.Dcal_hat[1, 1] for e in uniform.estimates])
    assert abs(gaps.mean()) <= 3 * gaps.std(ddof=1) / np.sqrt(gaps.size)


@pytest.mark.slow
def test_percolation_giant_density_is_stable():
    """Test that m_hat concentrates and agrees between L = 32 and L = 64."""
    means = []
    for side in (32, 64):
        values = [
            label_components(
                sample_field(
                    BernoulliLaw(p=0.7, value=1.0),
                    2,
                    side,
                    1.0,
                    derive_seed(3, f"field-{side}", k),
                )
            ).m_hat
            for k in range(20)
        ]
        assert 0.5 < np.mean(values) < 1.0
        assert np.std(values) < 0.05
        means.append(np.mean(values))
    assert abs(means[1] - means[0]) <= 0.05


@pytest.mark.slow
def test_resolvent_error_decreases():
    """Test that the resolvent error shrinks with L and meets the budget."""
    spec = FourierSpec(
        terms=[
            FourierTerm(amplitude=1.0, wavevector=[1, 0]),
            FourierTerm(amplitude=0.5, wavevector=[0, 1]),
        ]
    )
    errors = []
    for side in (8, 16, 32):
        field, labeling = _unit(side)
        f = fourier_field(2, side, spec)
        solution = solve_resolvent_discrete(field, labeling, 1 / side, 1.0, f)
        u0 = resolvent_continuum(f, DiffusionMatrix.identity(2), 1.0)
        errors.append(homogenization_error(solution.u, u0, 1 / side, labeling))
    assert errors[0] > errors[1] > errors[2]
    assert np.sqrt(errors[-1]) < 0.02 * _norm(fourier_field(2, 32, spec))


@pytest.mark.slow
def test_semigroup_within_envelope():
    """Test the walk semigroup against heat flow within the MC envelope."""
    field, labeling = _unit(16)
    spec = FourierSpec(
        terms=[
            FourierTerm(amplitude=1.0, wavevector=[1, 0]),
            FourierTerm(amplitude=0.5, wavevector=[0, 1], phase="sin"),
        ]
    )
    f = fourier_field(2, 16, spec)
    t = 0.25
    probes = choose_probes(labeling, 64, seed=5)
    estimate = mc_semigroup(field, labeling, 1 / 16, f, t, 10_000, probes, seed=5)
    continuum = heat_evolve(f, DiffusionMatrix.identity(2), t)
    discrepancy = np.sqrt(
        semigroup_error(estimate.estimates, continuum, 1 / 16, labeling, probes)
    )
    envelope = 3 * np.sqrt(labeling.m_hat * np.mean(estimate.stderr**2))
    assert discrepancy <= envelope + 0.02 * _norm(f)


@pytest.mark.slow
def test_hydrodynamic_limit_on_unit_field():
    """Test every battery pairing within 3σ of heat flow on ω ≡ 1."""
    field, labeling = _unit(64)
    rho0 = fourier_field(2, 64, PROFILE, "density")
    battery = [fourier_field(2, 64, spec, spec.label()) for spec in BATTERY]
    report = hydro_experiment(
        field,
        labeling,
        DiffusionMatrix.identity(2),
        rho0,
        0.05,
        1 / 64,
        n_runs=20,
        seed=6,
        battery=battery,
        workers=4,
    )
    assert report.conservation_ok
    assert len(set(report.particle_counts)) > 1
    for stat in report.pairings:
        assert abs(stat.bias) <= 3 * stat.stderr


@pytest.mark.slow
def test_hydrodynamic_limit_on_percolation_reports_bias():
    """Test the 3σ battery pass on percolation with the estimated D."""
    field = sample_field(BernoulliLaw(p=0.7, value=1.0), 2, 64, 1.0, 8)
    labeling = label_components(field)
    Dcal = DiffusionMatrix.from_estimate(estimate_D(field, labeling).Dcal_hat)
    rho0 = fourier_field(2, 64, PROFILE, "density")
    rho0 = rho0.with_values(labeling.m_hat * rho0.values)
    battery = [fourier_field(2, 64, spec, spec.label()) for spec in BATTERY]
    report = hydro_experiment(
        field, labeling, Dcal, rho0, 0.05, 1 / 64, 20, 9, battery, workers=4
    )
    assert report.conservation_ok
    assert report.clamped_sites == 0
    for stat in report.pairings:
        assert np.isfinite(stat.bias)
        assert stat.bias == pytest.approx(stat.mean - stat.reference)
        assert stat.passed, stat


@pytest.mark.slow
def test_pairing_duality_on_unit_field():
    """Test that the two pairings agree within 3σ on ω ≡ 1."""
    field, labeling = _unit(32)
    phi = fourier_field(2, 32, BATTERY[1], "cos_x1")
    report = hydro_pairing_check(field, labeling, 1 / 32, phi, 0.05, 20, seed=10)
    assert report.conservation_ok
    assert abs(report.mean) <= 3 * report.stderr


def _small_giants(count, max_sites=12):
    found, k = [], 0
    while len(found) < count:
        field = sample_field(
            UniformLaw(lo=0.0, hi=1.0), 2, 4, 1.0, derive_seed(12, "small", k)
        )
        k += 1
        keep = make_rng(k, "mask").random(field.weights.shape) < 0.4
        weights = np.where(keep, field.weights, 0.0)
        small = type(field)(2, 4, 1.0, weights)
        labeling = label_components(small)
        if 3 <= labeling.giant_size <= max_sites:
            found.append((small, labeling))
    return found


def _tv_bound(law, n_runs, tail=1e-6):
    """Jensen bound on the mean total variation plus a bounded-differences tail."""
    p = np.clip(law, 0.0, 1.0)
    mean = 0.5 * np.sum(np.sqrt(p * (1.0 - p) / n_runs))
    return mean + np.sqrt(np.log(1.0 / tail) / (2.0 * n_runs))


@pytest.mark.slow
def test_walk_law_matches_dense_exponential_on_small_giants():
    """Test dense exponentials against walks and the exclusion generator."""
    t = 0.4
    for index, (field, labeling) in enumerate(_small_giants(50)):
        sites, P = dense_semigroup(field, labeling, 1.0, t)
        assert np.allclose(P, P.T, atol=1e-12)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)

        _, bonds = local_bonds(field, labeling)
        n = sites.size
        walk = np.zeros((n, n))
        for a, b, rate in bonds:
            walk[a, b] += rate
            walk[b, a] += rate
        walk -= np.diag(walk.sum(axis=1))
        for k in range(n + 1):
            states, Q = exclusion_generator_matrix(n, bonds, k)
            eta = np.array(states, dtype=float)
            assert np.allclose(Q @ eta, eta @ walk.T, atol=1e-12)

        kernel = build_kernel(field, labeling)
        starts = np.full(100_000, sites[0])
        batch = run_walkers(kernel, starts, t, make_rng(index, "oracle"))
        local = np.searchsorted(sites, batch.final_sites)
        empirical = np.bincount(local, minlength=n) / starts.size
        assert 0.5 * np.abs(empirical - P[0]).sum() <= 0.02, index


@pytest.mark.slow
def test_two_particle_law_matches_dense_exponential_on_small_giants():
    """Test the two-particle exclusion law against expm(tQ) on every small giant."""
    t = 0.4
    n_runs = 10_000
    for index, (field, labeling) in enumerate(_small_giants(50)):
        sites, bonds = local_bonds(field, labeling)
        states, Q = exclusion_generator_matrix(sites.size, bonds, 2)
        eta0 = OccupancyConfig.from_sites(labeling, sites[:2])
        law = expm(t * Q)[occupancy_index(eta0, states)]
        schedule = ClockSchedule.from_field(field, labeling)
        counts = np.zeros(len(states))
        rng = make_rng(13, "oracle", index)
        for _ in range(n_runs):
            traj = simulate_exclusion(field, labeling, eta0, t, [t], rng, schedule)
            counts[occupancy_index(traj[-1], states)] += 1
        tv = 0.5 * np.abs(counts / n_runs - law).sum()
        assert tv <= _tv_bound(law, n_runs), index
