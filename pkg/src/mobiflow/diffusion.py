"""Nonlinear diffusion ``d_t rho = Lap P(rho)`` with zero flux, and the weighted Neumann problem.

Space is discretized by cell-centered finite volumes on a box; time by implicit
Euler solved with damped Newton iterations.  The stencil is conservative and the
Jacobian is an M-matrix, which gives exact mass conservation, a discrete maximum
principle, L1 contraction and energy decay.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import fft as sp_fft
from scipy.sparse.linalg import splu

from .errors import (
    DegenerateWeight,
    InvariantViolated,
    NewtonDiverged,
    NonZeroMeanRHS,
)
from .grid import Domain, neumann_eigenvalues

log = logging.getLogger(__name__)

__all__ = [
    "FlowState",
    "PotentialField",
    "gradient_matrix",
    "dissipation",
    "flow_state",
    "step_diffusion",
    "run_diffusion",
    "energy_identity_residual",
    "l1_contraction_check",
    "heat_semigroup",
    "face_weights",
    "solve_weighted_neumann",
]


@dataclass(frozen=True)
class FlowState:
    rho: np.ndarray
    t: float
    energy: float
    dissipation: float
    domain: Domain

    @property
    def mass(self):
        return self.domain.mass(self.rho)


@dataclass(frozen=True)
class PotentialField:
    zeta: np.ndarray
    residual: float


_GRAD_CACHE: dict = {}


def gradient_matrix(domain):
    """Sparse map from cell values to interior-face difference quotients (all axes stacked)."""
    key = (domain.lengths, domain.cells)
    if key in _GRAD_CACHE:
        return _GRAD_CACHE[key]
    blocks = []
    for a in range(domain.dim):
        mats = []
        for b in range(domain.dim):
            n = domain.cells[b]
            if b == a:
                mats.append(sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / domain.h[a])
            else:
                mats.append(sp.identity(n))
        g = mats[0]
        for m in mats[1:]:
            g = sp.kron(g, m)
        blocks.append(g)
    G = sp.vstack(blocks).tocsr()
    _GRAD_CACHE[key] = G
    return G


def _faces(domain, v):
    """Split a stacked face vector back into per-axis arrays."""
    out, start = [], 0
    for a in range(domain.dim):
        shape = domain.face_shape(a)
        n = int(np.prod(shape))
        out.append(v[start:start + n].reshape(shape))
        start += n
    return out


def _face_pairs(domain, u):
    """Values of a cell array on both sides of every interior face, stacked over axes."""
    lo, hi = [], []
    for a in range(domain.dim):
        sl_lo = [slice(None)] * domain.dim
        sl_hi = [slice(None)] * domain.dim
        sl_lo[a] = slice(None, -1)
        sl_hi[a] = slice(1, None)
        lo.append(u[tuple(sl_lo)].ravel())
        hi.append(u[tuple(sl_hi)].ravel())
    return np.concatenate(lo), np.concatenate(hi)


def face_weights(rho, mobility, domain, kind="harmonic", energy=None):
    """Mobility on interior faces.

    ``kind`` is ``"harmonic"`` (0 when either side vanishes), ``"arithmetic"``, or
    ``"consistent"``: the ratio ``dP / dU'`` across the face, for which the discrete
    chain rule ``m grad U'(rho) = grad P(rho)`` holds exactly (needs ``energy``).
    """
    a, b = _face_pairs(domain, mobility(np.asarray(rho, float)))
    if kind == "arithmetic":
        return 0.5 * (a + b)
    if kind == "harmonic":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where((a > 0) & (b > 0), 2 * a * b / (a + b), 0.0)
    if kind == "consistent":
        ra, rb = _face_pairs(domain, np.asarray(rho, float))
        dP = energy.P(rb) - energy.P(ra)
        dU = energy.dU(rb) - energy.dU(ra)
        close = np.abs(rb - ra) <= 1e-8 * np.maximum(np.abs(ra), 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(close, 0.5 * (a + b), dP / np.where(close, 1.0, dU))
        return ratio
    raise ValueError(f"unknown face weight {kind!r}")


def dissipation(rho, energy, domain):
    """``sum |grad P(rho)|^2 / m_face`` with harmonic-mean face mobilities and ``0/0 = 0``."""
    G = gradient_matrix(domain)
    gp = G @ energy.P(np.asarray(rho, float)).ravel()
    mf = face_weights(rho, energy.mobility, domain, "harmonic")
    q = gp * gp
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(mf > 0, q / np.where(mf > 0, mf, 1.0), np.where(q == 0, 0.0, np.inf))
    return float(np.sum(val) * domain.cell_volume)


def flow_state(rho, t, energy, domain):
    rho = np.asarray(rho, dtype=float)
    return FlowState(rho, float(t), energy.functional(rho, domain.cell_volume),
                     dissipation(rho, energy, domain), domain)


def _newton(rho_old, dt, energy, domain, tol=1e-13, max_iter=60):
    G = gradient_matrix(domain)
    L = (G.T @ G).tocsc()
    n = rho_old.size
    I = sp.identity(n, format="csc")
    r_old = rho_old.ravel()
    scale = max(1.0, float(np.max(np.abs(r_old))))

    def resid(r):
        return r - r_old + dt * (L @ energy.P(r))

    r = r_old.copy()
    F = resid(r)
    fn = np.max(np.abs(F))
    for it in range(max_iter):
        if fn <= tol * scale:
            return r, it
        dP = energy.dP(r)
        dP = np.where(np.isfinite(dP), dP, 0.0)
        J = (I + dt * (L @ sp.diags(dP))).tocsc()
        delta = -splu(J).solve(F)
        lam = 1.0
        while lam >= 1e-8:
            cand = r + lam * delta
            if np.min(cand) >= 0.0 or np.min(r_old) < 0.0:
                Fc = resid(cand)
                fc = np.max(np.abs(Fc))
                if np.isfinite(fc) and fc < (1.0 - 1e-4 * lam) * fn:
                    break
            lam *= 0.5
        else:
            raise NewtonDiverged(f"line search failed at Newton iteration {it}; try a smaller time step")
        r, F, fn = cand, Fc, fc
    if fn <= 1e3 * tol * scale:
        return r, max_iter
    raise NewtonDiverged(f"Newton did not converge (residual {fn:.3e}); try a smaller time step")


def step_diffusion(state, dt, energy, check=True):
    """One implicit Euler step for ``d_t rho = Lap P(rho)`` with zero-flux boundary."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    dom = state.domain
    rho_old = np.asarray(state.rho, dtype=float)
    r, _ = _newton(rho_old, dt, energy, dom)
    rho = r.reshape(rho_old.shape)
    # roundoff-level negatives at degenerate fronts
    rho = np.where((rho < 0) & (rho > -1e-14 * max(1.0, np.max(rho_old))), 0.0, rho)
    new = flow_state(rho, state.t + dt, energy, dom)
    if check:
        _check_step(state, new)
    return new


def _check_step(old, new):
    scale = max(1.0, float(np.max(np.abs(old.rho))))
    m0, m1 = old.mass, new.mass
    if abs(m1 - m0) > 1e-12 * max(abs(m0), 1e-300):
        raise InvariantViolated(f"mass drift {m1 - m0:.3e}")
    if np.min(new.rho) < np.min(old.rho) - 1e-12 * scale or np.max(new.rho) > np.max(old.rho) + 1e-12 * scale:
        raise InvariantViolated("maximum principle violated")
    if new.energy > old.energy + 1e-12 * max(1.0, abs(old.energy)):
        raise InvariantViolated(f"energy increased by {new.energy - old.energy:.3e}")


def run_diffusion(rho0, energy, domain, dt, t_end=None, n_steps=None, check=True, every=1):
    """Trajectory of implicit Euler steps; returns every ``every``-th state (plus the last)."""
    if n_steps is None:
        if t_end is None:
            raise ValueError("give t_end or n_steps")
        n_steps = int(round(t_end / dt))
        if abs(n_steps * dt - t_end) > 1e-9 * max(t_end, dt):
            raise ValueError("t_end must be a multiple of dt")
    state = flow_state(rho0, 0.0, energy, domain)
    traj = [state]
    for k in range(1, n_steps + 1):
        state = step_diffusion(state, dt, energy, check=check)
        if k % every == 0 or k == n_steps:
            traj.append(state)
    return traj


def energy_identity_residual(trajectory):
    """``|U(rho_T) + int_0^T D dt - U(rho_0)|`` with trapezoidal time quadrature.

    The trajectory must contain every time step.
    """
    if len(trajectory) < 2:
        return 0.0
    t = np.array([s.t for s in trajectory])
    D = np.array([s.dissipation for s in trajectory])
    dissipated = float(np.sum(0.5 * (D[1:] + D[:-1]) * np.diff(t)))
    return abs(trajectory[-1].energy + dissipated - trajectory[0].energy)


def l1_contraction_check(rho0, rho0_tilde, T, energy, domain, dt):
    """``||S_T rho0 - S_T rho0~||_1 - ||rho0 - rho0~||_1``; nonpositive for a contraction."""
    a = run_diffusion(rho0, energy, domain, dt, t_end=T)[-1].rho
    b = run_diffusion(rho0_tilde, energy, domain, dt, t_end=T)[-1].rho
    vol = domain.cell_volume
    return float(np.sum(np.abs(a - b)) * vol - np.sum(np.abs(np.asarray(rho0) - rho0_tilde)) * vol)


def heat_semigroup(rho, t, domain, diffusivity=1.0):
    """Exact semi-discrete heat flow ``exp(t c Lap_h) rho`` via cosine transforms."""
    coef = sp_fft.dctn(np.asarray(rho, float), type=2, norm="ortho")
    lam = 0.0
    for a in range(domain.dim):
        shape = [1] * domain.dim
        shape[a] = domain.cells[a]
        lam = lam + neumann_eigenvalues(domain.cells[a], domain.h[a]).reshape(shape)
    return sp_fft.idctn(coef * np.exp(-diffusivity * t * lam), type=2, norm="ortho")


def solve_weighted_neumann(rho, rhs, mobility, domain, face_weight="arithmetic", energy=None):
    """Solve ``-div(m(rho) grad zeta) = rhs`` with zero flux and zero mean.

    The face mobility is chosen by ``face_weight`` (see :func:`face_weights`) or given
    directly as an array over interior faces.
    """
    rho = np.asarray(rho, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    vol = domain.cell_volume
    total = float(np.sum(rhs) * vol)
    if abs(total) > 1e-10 * max(1.0, float(np.sum(np.abs(rhs)) * vol)):
        raise NonZeroMeanRHS(f"right-hand side has mean {total:.3e}")
    if float(np.min(mobility(rho))) < 1e-12:
        raise DegenerateWeight("mobility below 1e-12 makes the problem degenerate")
    if not np.any(rhs):
        return PotentialField(np.zeros_like(rhs), 0.0)
    b = (rhs - rhs.mean()).ravel()
    G = gradient_matrix(domain)
    mf = face_weights(rho, mobility, domain, face_weight, energy) if isinstance(face_weight, str) \
        else np.asarray(face_weight, float).ravel()
    A = (G.T @ sp.diags(mf) @ G).tocsc()
    # pin the first cell, then restore the zero-mean normalization
    z = np.zeros(b.size)
    z[1:] = splu(A[1:, 1:].tocsc()).solve(b[1:])
    z -= z.mean()
    res = float(np.linalg.norm(A @ z - b))
    nb = float(np.linalg.norm(b))
    if res > 1e-10 * nb:
        raise InvariantViolated(f"weighted Neumann residual {res:.3e} exceeds 1e-10 |rhs|")
    return PotentialField(z.reshape(rhs.shape), res)
