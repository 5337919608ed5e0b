"""Fixed-seed property checks shared by the unit tests and the acceptance suite."""
import numpy as np

from mobiflow.geodesic import SolverConfig, solve_geodesic
from mobiflow.grid import Domain, convolve_smooth, discrete_action, mollify_field
from mobiflow.mobility import Mobility, action_density

from conftest import smooth_positive

# relative slack for comparing two independently converged solves
SOLVER_RTOL = 2e-3


def _dist(r0, r1, mob, domain, n_s=8):
    return solve_geodesic(r0, r1, mob, SolverConfig(n_s=n_s, tol_action=1e-9), domain).distance


def joint_convexity(seed=0, n=2000):
    """Worst midpoint-convexity defect of the action density over random pairs."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for mob in (Mobility.power_law(0.5), Mobility.logistic(1.0), Mobility.saturating(1.0)):
        hi = 1.0 if np.isfinite(mob.M) else 3.0
        r = rng.uniform(1e-3, hi, (2, n))
        w = rng.uniform(-2, 2, (2, n))
        lam = rng.uniform(0, 1, n)
        mid = action_density(mob, lam * r[0] + (1 - lam) * r[1], lam * w[0] + (1 - lam) * w[1])
        ends = lam * action_density(mob, r[0], w[0]) + (1 - lam) * action_density(mob, r[1], w[1])
        worst = max(worst, float(np.max(mid - ends - 1e-12 * (1 + np.abs(ends)))))
    return worst


def mobility_monotonicity(seed=0, pairs=3):
    """Worst relative excess of the distance under a pointwise larger mobility.

    Nonpositive means a larger mobility never gives a larger distance.
    """
    d = Domain.interval(32)
    orders = [(Mobility.saturating(1.0), Mobility.power_law(1.0)),
              (Mobility.power_law(0.5), Mobility.power_law(0.5, coef=1.5)),
              (Mobility.logistic(1.0), Mobility.power_law(1.0))]
    worst = -np.inf
    for k in range(pairs):
        r0 = 0.5 * smooth_positive(d, seed + 2 * k)
        r1 = 0.5 * smooth_positive(d, seed + 2 * k + 1)
        for small, large in orders:
            a = _dist(r0, r1, small, d)
            b = _dist(r0, r1, large, d)
            worst = max(worst, (b - a) / a - SOLVER_RTOL)
    return worst


def convolution_nonexpansion(seed=0, pairs=3, eps=0.1):
    """Worst relative increase of the distance or action after mollification."""
    d = Domain.interval(32)
    mob = Mobility.power_law(0.5)
    worst = -np.inf
    for k in range(pairs):
        r0 = smooth_positive(d, seed + 2 * k)
        r1 = smooth_positive(d, seed + 2 * k + 1)
        res = solve_geodesic(r0, r1, mob, SolverConfig(n_s=8, tol_action=1e-9), d)
        base = discrete_action(res.field, mob).total
        smoothed = discrete_action(mollify_field(res.field, eps), mob).total
        worst = max(worst, (smoothed - base) / base)
        a = _dist(convolve_smooth(r0, eps, d), convolve_smooth(r1, eps, d), mob, d)
        worst = max(worst, (a - res.distance) / res.distance - SOLVER_RTOL)
    return worst


def triangle(seed=0, triples=3):
    """Worst relative triangle-inequality defect on sampled triples."""
    d = Domain.interval(32)
    mob = Mobility.power_law(0.5)
    worst = -np.inf
    for k in range(triples):
        a, b, c = (smooth_positive(d, seed + 3 * k + j) for j in range(3))
        ab, bc, ac = _dist(a, b, mob, d), _dist(b, c, mob, d), _dist(a, c, mob, d)
        worst = max(worst, (ac - ab - bc) / ac - SOLVER_RTOL)
    return worst
