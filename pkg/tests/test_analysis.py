import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from mobiflow.analysis import (
    action_derivative_check,
    bochner_gap,
    build_counterexample,
    classical_internal_hessian,
    convexity_scan,
    counterexample_scaling,
    cutoff,
    evi_check,
    hessian_h,
    interaction_hessian,
    internal_hessian,
    laplacian_h,
    potential_hessian,
    smooth_step,
)
from mobiflow.diffusion import run_diffusion
from mobiflow.errors import DegenerateDensity, MobilityLinear, UnresolvedEpsilon
from mobiflow.geodesic import SolverConfig
from mobiflow.grid import Domain
from mobiflow.mobility import Energy, Mobility, check_gmc

from conftest import smooth_positive


def flow_oracle(rho, psi, first_variation, mob, h, s=1e-4):
    """Second derivative from the first variation ``int m grad(dE) . grad psi``.

    ``rho`` moves by the continuity equation and ``psi`` by the Hamilton-Jacobi equation;
    the derivative of the first variation is taken by central differences in ``s``.
    """
    def first(r, p):
        dE = np.gradient(first_variation(r), h, edge_order=2)
        return np.sum(mob(r) * dE * np.gradient(p, h, edge_order=2)) * h

    g = np.gradient(psi, h, edge_order=2)
    drho = -np.gradient(mob(rho) * g, h, edge_order=2)
    dpsi = -0.5 * mob.d1(rho) * g**2
    return (first(rho + s * drho, psi + s * dpsi) - first(rho - s * drho, psi - s * dpsi)) / (2 * s)


def _profile(n=400):
    x = (np.arange(n) + 0.5) / n
    rho = 1 + 0.3 * np.cos(np.pi * x) + 0.2 * np.cos(2 * np.pi * x)
    psi = 0.5 * np.cos(np.pi * x) + 0.3 * np.cos(3 * np.pi * x)
    return x, 1.0 / n, rho, psi


def test_discrete_operators_exact_on_quadratics():
    d = Domain.box(12, 10, 1.0, 0.8)
    X, Y = d.mesh()
    u = 1.5 * X**2 - X * Y + 0.25 * Y**2 + X
    H = hessian_h(u, d.h)
    np.testing.assert_allclose(H[0][0], 3.0, atol=1e-9)
    np.testing.assert_allclose(H[0][1], -1.0, atol=1e-9)
    np.testing.assert_allclose(laplacian_h(u, d.h), 3.5, atol=1e-9)
    assert bochner_gap(0.5 * (X**2 + Y**2), d.h) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_bochner_gap_nonnegative(seed):
    psi = np.random.default_rng(seed).standard_normal((9, 7))
    assert bochner_gap(psi, (0.1, 0.2)) >= -1e-9 * np.sum(psi**2)


def test_affine_potential_leaves_only_curvature():
    x, h, rho, _ = _profile(64)
    energy = Energy.mobility_entropy(Mobility.saturating(1.0))
    rep = internal_hessian(rho, 2.0 * x - 1.0, energy, h)
    assert rep.terms["laplacian"] == pytest.approx(0.0, abs=1e-9)
    assert rep.terms["hessian"] == pytest.approx(0.0, abs=1e-9)
    assert rep.total == pytest.approx(rep.terms["curvature"])
    assert rep.terms["curvature"] > 0


@pytest.mark.parametrize("energy", [Energy.entropy(Mobility.power_law(1.0)),
                                    Energy.pressure_power(Mobility.power_law(1.0), 2.0)])
def test_linear_mobility_matches_classical_formula(energy):
    _, h, rho, psi = _profile()
    rep = internal_hessian(rho, psi, energy, h)
    ref = classical_internal_hessian(rho, psi, energy.U, energy.dU, h)
    assert rep.terms["curvature"] == 0.0
    for k in ("laplacian", "hessian"):
        assert rep.terms[k] == pytest.approx(ref[k], rel=1e-3, abs=1e-6)


@pytest.mark.parametrize("mob", [Mobility.saturating(1.0), Mobility.power_law(0.5), Mobility.logistic(4.0)])
def test_second_derivatives_match_flow_oracle(mob):
    x, h, rho, psi = _profile()
    V = x + x**2 / 8
    assert potential_hessian(rho, psi, V, mob, h).total == pytest.approx(
        flow_oracle(rho, psi, lambda r: V, mob, h), rel=1e-3)
    W = lambda z: np.cos(2 * z)  # noqa: E731
    conv = lambda r: np.array([np.sum(W(xi - x) * r) * h for xi in x])  # noqa: E731
    rep = interaction_hessian(rho, psi, (lambda z: -2 * np.sin(2 * z), lambda z: -4 * np.cos(2 * z)), mob, h)
    scale = sum(abs(v) for v in rep.terms.values())
    assert rep.total == pytest.approx(flow_oracle(rho, psi, conv, mob, h), abs=1e-3 * scale)
    energy = Energy.mobility_entropy(mob)
    assert internal_hessian(rho, psi, energy, h).total == pytest.approx(
        flow_oracle(rho, psi, energy.dU, mob, h), rel=1e-3)


def test_interaction_linear_mobility_oracle():
    x, h, rho, psi = _profile(120)
    px = np.gradient(psi, h, edge_order=2)
    Wxx = lambda z: 1.0 + z**2  # noqa: E731
    rep = interaction_hessian(rho, psi, (lambda z: z + z**3 / 3, Wxx), Mobility.power_law(1.0), h)
    diff = px[:, None] - px[None, :]
    ref = 0.5 * np.sum(rho[:, None] * rho[None, :] * diff**2 * Wxx(x[:, None] - x[None, :])) * h * h
    assert rep.total == pytest.approx(ref, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.2, 2.0), st.integers(0, 1000))
def test_gmc_gives_nonnegative_bochner_bound(alpha, gamma, seed):
    mob = Mobility.power_law(alpha)
    energy = Energy.pressure_power(mob, gamma, dimension=2)
    if not check_gmc(energy, samples=500).holds:
        return
    d = Domain.box(10, 10)
    rho = smooth_positive(d, seed)
    psi = np.random.default_rng(seed).standard_normal(d.cells)
    rep = internal_hessian(rho, psi, energy, d.h)
    assert rep.extra["bochner_bound"] >= -1e-9 * abs(rep.total)
    assert rep.total >= rep.extra["bochner_bound"] - 1e-9 * abs(rep.total)


def test_degenerate_density_rejected():
    x, h, rho, psi = _profile(32)
    rho = rho.copy()
    rho[3] = 0.0
    with pytest.raises(DegenerateDensity):
        internal_hessian(rho, psi, Energy.entropy(Mobility.power_law(1.0)), h)
    with pytest.raises(DegenerateDensity):
        potential_hessian(-rho, psi, x, Mobility.power_law(1.0), h)


def test_cutoff_and_step():
    x = np.linspace(-1, 1, 4001)
    c = cutoff(x)
    assert np.all(c[np.abs(x) <= 0.25] == 1.0) and np.all(c[np.abs(x) >= 0.75] == 0.0)
    assert trapezoid(c, x) == pytest.approx(1.0, abs=1e-9)
    t = np.linspace(0, 1, 11)
    np.testing.assert_allclose(smooth_step(t) + smooth_step(1 - t), 1.0)


def test_counterexample_signs_and_errors():
    rep = counterexample_scaling(eps_list=(0.1, 0.05))
    assert np.all(np.asarray(rep.I) > 0) and np.all(np.asarray(rep.II) < 0)
    assert rep.II[1] / rep.II[0] == pytest.approx(4.0, rel=0.1)
    with pytest.raises(UnresolvedEpsilon):
        build_counterexample(0.1, np.linspace(-2, 2, 200))
    with pytest.raises(MobilityLinear):
        counterexample_scaling(eps_list=(0.1, 0.05), mobility=Mobility.power_law(1.0))


def test_action_derivative_trivial_and_pairing():
    d = Domain.interval(64)
    e = Energy.entropy(Mobility.power_law(1.0))
    r = smooth_positive(d, 1)
    same = action_derivative_check(r, r, e, d, [0.5], [0.0])
    assert same["rows"][0]["A"] == 0.0
    rep = action_derivative_check(r, smooth_positive(d, 2), e, d, [0.3, 0.7], [0.0, 0.01])
    assert rep["max_pairing_gap"] <= 1e-6
    assert rep["max_residual"] <= 1e-3
    assert rep["inequality_holds"]
    with pytest.raises(NotImplementedError):
        action_derivative_check(smooth_positive(Domain.box(6, 6), 0), smooth_positive(Domain.box(6, 6), 1),
                                e, Domain.box(6, 6), [0.5], [0.0])


def test_convexity_scan_linear_mobility_entropy():
    d = Domain.interval(32)
    e = Energy.entropy(Mobility.power_law(1.0))
    out = convexity_scan(smooth_positive(d, 3), smooth_positive(d, 4), e, d, SolverConfig(n_s=8))
    assert out["converged"]
    assert out["max_violation"] <= 0.02 * out["energy_range"]


def test_evi_toward_uniform():
    d = Domain.interval(32)
    e = Energy.entropy(Mobility.power_law(1.0))
    traj = run_diffusion(smooth_positive(d, 5), e, d, 1e-3, t_end=0.02, every=10)
    out = evi_check(traj, np.ones(32), e, d, SolverConfig(n_s=8))
    assert out["passed"]
    # the uniform density minimizes the entropy, so the distance shrinks
    assert np.all(np.diff(out["D"]) < 0)
