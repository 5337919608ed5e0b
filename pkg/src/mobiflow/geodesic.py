"""Transport distances with nonlinear mobility by primal-dual proximal splitting.

The discrete problem is ``min F(K x)`` over fields ``x = (rho, w)`` obeying the
continuity equation with prescribed endpoints.  ``K`` maps a field to its
face-averaged densities and face momenta, and ``F`` sums the kinetic action.  The
iteration alternates an exact projection onto the continuity constraint (cosine
transforms) with the pointwise proximal map of the action.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sp_fft

from .errors import InfiniteConstant, MassMismatch, NotConverged, ThresholdExceeded
from .grid import (
    ActionProfile,
    Domain,
    StaggeredField,
    face_average,
    interpolate_linear,
    neumann_eigenvalues,
)
from .mobility import action_density, finiteness_constant

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "GeodesicResult",
    "pointwise_prox",
    "project_continuity",
    "ContinuityProjector",
    "solve_geodesic",
    "wasserstein2_1d",
    "upper_bound_pushforward_1d",
]


@dataclass
class SolverConfig:
    """Parameters of the primal-dual iteration.

    ``tau`` and ``sigma`` default to ``0.99 / ||K||`` with the operator norm estimated
    by power iteration.  ``tol_constraint`` is relative to the total mass.
    """

    n_s: int = 32
    max_iter: int = 20000
    tau: float | None = None
    sigma: float | None = None
    tol_constraint: float = 1e-6
    tol_action: float = 1e-7
    theta: float = 1.0
    check_every: int = 50
    step_ratio: float = 1.0
    strict: bool = False
    workers: int | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class GeodesicResult:
    field: StaggeredField
    distance: float
    action_profile: ActionProfile
    constraint_residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "distance": self.distance,
            "action_profile": self.action_profile.per_slab.tolist(),
            "action_total": self.action_profile.total,
            "iterations": self.iterations,
            "constraint_residual": self.constraint_residual,
            "converged": self.converged,
        }


# ---------------------------------------------------------------------------
# pointwise proximal map
# ---------------------------------------------------------------------------


def pointwise_prox(rho_t, w_t, tau, mobility, max_iter=100):
    """Minimize ``(rho - rho_t)^2/2 + |w - w_t|^2/2 + tau |w|^2/m(rho)`` pointwise.

    The momentum is eliminated as ``w = w_t m / (m + 2 tau)``; the remaining convex
    scalar problem in ``rho`` is solved by Newton steps safeguarded by bisection on
    ``[0, M]``.  ``w_t`` may carry one trailing vector axis.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rho_t = np.asarray(rho_t, dtype=float)
    w_t = np.asarray(w_t, dtype=float)
    vector = w_t.ndim == rho_t.ndim + 1
    q = np.sum(w_t * w_t, axis=-1) if vector else w_t * w_t
    rho_t, q = np.broadcast_arrays(rho_t, q)
    M = mobility.M
    shape = rho_t.shape
    rho_t, q = np.atleast_1d(rho_t), np.atleast_1d(q)
    rho = np.clip(rho_t, 0.0, M).astype(float)
    active = q > 0
    if np.any(active):
        rho[active] = _reduced_root(rho_t[active], q[active], tau, mobility)
    rho = rho.reshape(shape)
    m = mobility(rho)
    scale = m / (m + 2.0 * tau)
    w = w_t * (scale[..., None] if vector else scale)
    if rho.ndim == 0:
        return float(rho), (w if vector else float(w))
    return rho, w


def _reduced_root(rt, q, tau, mob, max_iter=100):
    """Root of ``g'(r) = r - rt - tau q m'(r) / (m(r) + 2 tau)^2`` on ``[0, M]``."""
    M = mob.M

    def gp(r):
        m = mob(r)
        return r - rt_sub - tau * q_sub * mob.d1(r) / (m + 2 * tau) ** 2

    def gpp(r):
        m = mob(r)
        dm = mob.d1(r)
        return 1.0 + tau * q_sub * (2 * dm * dm - mob.d2(r) * (m + 2 * tau)) / (m + 2 * tau) ** 3

    n = rt.size
    out = np.empty(n)
    lo = np.zeros(n)
    rt_sub, q_sub = rt, q
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        g0 = gp(lo)
    at_zero = g0 >= 0
    out[at_zero] = 0.0
    if np.isfinite(M):
        hi = np.full(n, M)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            gM = gp(hi)
        at_top = (gM <= 0) & ~at_zero
        out[at_top] = M
    else:
        at_top = np.zeros(n, dtype=bool)
        hi = np.maximum(rt, 1.0)
        for _ in range(200):
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                pos = gp(hi) > 0
            if pos.all():
                break
            hi = np.where(pos, hi, 2.0 * hi)
    todo = ~(at_zero | at_top)
    idx = np.nonzero(todo)[0]
    lo, hi = lo[idx], hi[idx]
    rt_all, q_all = rt, q
    tol = 1e-12 * np.maximum(1.0, np.abs(rt_all[idx]))
    x = np.clip(rt_all[idx], lo, hi)
    x = np.where((x <= lo) | (x >= hi), 0.5 * (lo + hi), x)
    res = np.empty(idx.size)
    sub = np.arange(idx.size)
    for _ in range(max_iter):
        rt_sub, q_sub = rt_all[idx[sub]], q_all[idx[sub]]
        xs, los, his = x[sub], lo[sub], hi[sub]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            g = gp(xs)
            gg = gpp(xs)
        # tighten the bracket
        los = np.where(g < 0, xs, los)
        his = np.where(g > 0, xs, his)
        xn = xs - g / gg
        bad = ~np.isfinite(xn) | (xn <= los) | (xn >= his)
        xn = np.where(bad, 0.5 * (los + his), xn)
        exact = g == 0
        xn = np.where(exact, xs, xn)
        done = (np.abs(xn - xs) <= tol[sub]) | (his - los <= tol[sub]) | exact
        x[sub], lo[sub], hi[sub] = xn, los, his
        res[sub[done]] = xn[done]
        sub = sub[~done]
        if sub.size == 0:
            break
    if sub.size:
        res[sub] = x[sub]
    out[idx] = res
    return out


# ---------------------------------------------------------------------------
# projection onto the continuity constraint
# ---------------------------------------------------------------------------


class ContinuityProjector:
    """Euclidean projection onto fields with fixed endpoints obeying the continuity equation.

    The free variables are the interior density nodes and the interior face momenta.
    With ``B`` the constraint operator, ``B B^T`` is a sum of Neumann Laplacians in
    slab time and in space, so its pseudo-inverse is applied with cosine transforms.
    """

    def __init__(self, domain, n_s, workers=None):
        self.domain = domain
        self.n_s = int(n_s)
        self.ds = 1.0 / self.n_s
        self.workers = workers
        lam = neumann_eigenvalues(self.n_s, self.ds).reshape((-1,) + (1,) * domain.dim)
        for a in range(domain.dim):
            shape = [1] * (domain.dim + 1)
            shape[a + 1] = domain.cells[a]
            lam = lam + neumann_eigenvalues(domain.cells[a], domain.h[a]).reshape(shape)
        lam = np.array(np.broadcast_to(lam, (self.n_s,) + domain.cells))
        self._zero = lam == 0.0
        lam[self._zero] = 1.0
        self._inv = 1.0 / lam
        self._inv[self._zero] = 0.0

    def residual(self, rho, w):
        return np.diff(rho, axis=0) / self.ds + self.domain.div(w)

    def __call__(self, rho, w, rho0=None, rho1=None):
        """Project ``(rho, w)``; endpoints are reset to ``rho0``/``rho1`` when given."""
        rho = np.array(rho, dtype=float, copy=True)
        w = [np.array(wa, dtype=float, copy=True) for wa in w]
        if rho0 is not None:
            rho[0] = rho0
        if rho1 is not None:
            rho[-1] = rho1
        r = self.residual(rho, w)
        coef = sp_fft.dctn(r, type=2, norm="ortho", workers=self.workers)
        mu = sp_fft.idctn(coef * self._inv, type=2, norm="ortho", workers=self.workers)
        # B^T mu: interior densities get (mu_{k-1} - mu_k)/ds, momenta get -grad mu
        rho[1:-1] -= (mu[:-1] - mu[1:]) / self.ds
        for a, g in enumerate(self.domain.grad(mu)):
            w[a] += g
        return rho, w


def project_continuity(field, rho0, rho1, workers=None):
    """Project a candidate field onto the continuity constraint with given endpoints."""
    dom = field.domain
    m0, m1 = dom.mass(rho0), dom.mass(rho1)
    if abs(m0 - m1) > 1e-12 * max(abs(m0), abs(m1), 1e-300):
        raise MassMismatch(f"endpoint masses differ: {m0!r} vs {m1!r}")
    proj = ContinuityProjector(dom, field.n_s, workers)
    rho, w = proj(field.rho, field.w, rho0, rho1)
    return StaggeredField(dom, rho, w)


# ---------------------------------------------------------------------------
# primal-dual solver
# ---------------------------------------------------------------------------


def _K(rho, w, dom):
    return [face_average(rho, dom, a) for a in range(dom.dim)], list(w)


def _KT_rho(y_rho, dom, n_nodes):
    """Adjoint of the face-averaging map, summed over axes."""
    out = np.zeros((n_nodes,) + dom.cells)
    for a, ya in enumerate(y_rho):
        pad = [(0, 0)] * ya.ndim
        pad[1 + a] = (1, 1)
        cells = 0.5 * (np.pad(ya, pad)[tuple(_sl(ya.ndim, 1 + a, slice(None, -1)))]
                       + np.pad(ya, pad)[tuple(_sl(ya.ndim, 1 + a, slice(1, None)))])
        out[:-1] += 0.5 * cells
        out[1:] += 0.5 * cells
    return out


def _sl(ndim, axis, s):
    sl = [slice(None)] * ndim
    sl[axis] = s
    return sl


def _norm_K(dom, n_s, iters=50, seed=0):
    rng = np.random.default_rng(seed)
    rho = rng.standard_normal((n_s + 1,) + dom.cells)
    w = [rng.standard_normal((n_s,) + dom.face_shape(a)) for a in range(dom.dim)]
    est = 1.0
    for _ in range(iters):
        y_rho, y_w = _K(rho, w, dom)
        rho = _KT_rho(y_rho, dom, n_s + 1)
        w = y_w
        nrm = np.sqrt(np.sum(rho**2) + sum(np.sum(wa**2) for wa in w))
        est = np.sqrt(nrm)
        rho /= nrm
        w = [wa / nrm for wa in w]
    return float(est)


def _check_endpoints(rho0, rho1, domain, mobility):
    m0, m1 = domain.mass(rho0), domain.mass(rho1)
    if abs(m0 - m1) > 1e-12 * max(abs(m0), abs(m1), 1e-300):
        raise MassMismatch(f"endpoint masses differ: {m0!r} vs {m1!r}")
    if np.min(rho0) < 0 or np.min(rho1) < 0:
        raise ValueError("densities must be nonnegative")
    if max(np.max(rho0), np.max(rho1)) > mobility.M:
        raise ThresholdExceeded(f"endpoint density exceeds the threshold M = {mobility.M}")
    return m0


def solve_geodesic(rho0, rho1, mobility, config=None, domain=None):
    """Distance and minimizing curve between two densities.

    The per-slab action is evaluated on the proximal (domain-feasible) variable, and
    ``constraint_residual`` measures its mismatch with the face values of the
    continuity-feasible field, in the ``L^2(ds dx)`` norm.
    """
    cfg = config or SolverConfig()
    rho0 = np.asarray(rho0, dtype=float)
    rho1 = np.asarray(rho1, dtype=float)
    if domain is None:
        domain = Domain(tuple([1.0] * rho0.ndim), rho0.shape)
    mass = _check_endpoints(rho0, rho1, domain, mobility)
    n_s = int(cfg.n_s)
    ds = 1.0 / n_s
    weight = ds * domain.cell_volume

    init = interpolate_linear(rho0, rho1, n_s, domain)
    rho, w = init.rho, init.w
    proj = ContinuityProjector(domain, n_s, cfg.workers)

    if np.array_equal(rho0, rho1):
        zero_w = [np.zeros_like(wa) for wa in w]
        fld = StaggeredField(domain, rho, zero_w)
        prof = ActionProfile(np.zeros(n_s), ds)
        return GeodesicResult(fld, 0.0, prof, 0.0, 0, True)

    if cfg.tau is None or cfg.sigma is None:
        L = _norm_K(domain, n_s)
        tau = 0.99 / L * np.sqrt(cfg.step_ratio)
        sigma = 0.99 / L / np.sqrt(cfg.step_ratio)
    else:
        tau, sigma = float(cfg.tau), float(cfg.sigma)

    z_rho, z_w = _K(rho, w, domain)
    y_rho = [np.zeros_like(a) for a in z_rho]
    y_w = [np.zeros_like(a) for a in z_w]
    rho_bar, w_bar = rho, w
    history = []
    last_action = None
    converged = False
    resid = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # dual step: y <- prox_{sigma F*}(y + sigma K xbar)
        kr, kw = _K(rho_bar, w_bar, domain)
        for a in range(domain.dim):
            vr = y_rho[a] + sigma * kr[a]
            vw = y_w[a] + sigma * kw[a]
            zr, zw = pointwise_prox(vr / sigma, vw / sigma, 1.0 / sigma, mobility)
            y_rho[a] = vr - sigma * zr
            y_w[a] = vw - sigma * zw
            z_rho[a], z_w[a] = zr, zw
        # primal step: projection of x - tau K^T y
        rho_new, w_new = proj(rho - tau * _KT_rho(y_rho, domain, n_s + 1),
                              [wa - tau * ya for wa, ya in zip(w, y_w)], rho0, rho1)
        th = cfg.theta
        rho_bar = rho_new + th * (rho_new - rho)
        w_bar = [wn + th * (wn - wo) for wn, wo in zip(w_new, w)]
        rho, w = rho_new, w_new

        if it % cfg.check_every == 0 or it == cfg.max_iter:
            kr, kw = _K(rho, w, domain)
            sq = sum(np.sum((kr[a] - z_rho[a]) ** 2) + np.sum((kw[a] - z_w[a]) ** 2)
                     for a in range(domain.dim))
            resid = float(np.sqrt(weight * sq))
            action = _profile(z_rho, z_w, mobility, domain, n_s).total
            rel = abs(action - last_action) / max(abs(action), 1e-300) if last_action is not None else np.inf
            history.append((it, resid, action))
            log.debug("iter %d residual %.3e action %.10g rel %.2e", it, resid, action, rel)
            last_action = action
            if resid <= cfg.tol_constraint * mass and rel <= cfg.tol_action:
                converged = True
                break

    prof = _profile(z_rho, z_w, mobility, domain, n_s)
    fld = StaggeredField(domain, rho, w)
    res = GeodesicResult(fld, float(np.sqrt(prof.total)), prof, resid, it, converged, history)
    if not converged:
        msg = f"geodesic solver stopped after {it} iterations (residual {resid:.3e})"
        if cfg.strict:
            raise NotConverged(msg, res)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return res


def _profile(z_rho, z_w, mobility, domain, n_s):
    per = np.zeros(n_s)
    for a in range(domain.dim):
        phi = action_density(mobility, z_rho[a], z_w[a])
        per += np.sum(phi.reshape(n_s, -1), axis=1) * domain.cell_volume
    return ActionProfile(per, 1.0 / n_s)


# ---------------------------------------------------------------------------
# one-dimensional oracles and bounds
# ---------------------------------------------------------------------------


def _quantile(rho, h, u):
    """Generalized inverse of the piecewise-linear distribution function of a cell density."""
    cdf = np.concatenate([[0.0], np.cumsum(rho) * h])
    cdf /= cdf[-1]
    # cell j holds the quantiles in (cdf[j], cdf[j+1]]
    j = np.clip(np.searchsorted(cdf, u, side="left") - 1, 0, rho.size - 1)
    width = cdf[j + 1] - cdf[j]
    frac = np.divide(u - cdf[j], width, out=np.zeros_like(u), where=width > 0)
    return (j + frac) * h


def wasserstein2_1d(rho0, rho1, h, n_quad=200_000):
    """Quadratic Wasserstein distance of two 1D cell densities via quantile functions."""
    mass = float(np.sum(rho0) * h)
    u = (np.arange(n_quad) + 0.5) / n_quad
    q0 = _quantile(np.asarray(rho0, float), h, u)
    q1 = _quantile(np.asarray(rho1, float), h, u)
    return float(np.sqrt(mass * np.mean((q0 - q1) ** 2)))


def upper_bound_pushforward_1d(rho0, rho1, mobility, d_eff, h):
    """Displacement-interpolation bound on the distance for a 1D pair.

    With ``b = max rho0`` and the dilation profile ``z_s = b (1 - s)^(-d)`` the bound is
    ``W2 * int_0^1 (z_s / m(z_s))^(1/2) ds``; finiteness follows from the tail constant.
    """
    d = int(d_eff)
    b = float(np.max(rho0))
    if np.array_equal(np.asarray(rho0), np.asarray(rho1)):
        return 0.0
    if not np.isfinite(finiteness_constant(mobility, d, b)):
        raise InfiniteConstant("the tail constant diverges for this mobility and dimension")
    from .quadrature import integrate

    def f(s):
        z = b * np.power(1.0 - s, -float(d))
        return np.sqrt(z / mobility(z))

    factor = integrate(f, 0.0, 1.0, singular_hi=True)
    if not np.isfinite(factor):
        raise InfiniteConstant("the displacement bound integral diverges")
    return float(factor * wasserstein2_1d(rho0, rho1, h))
