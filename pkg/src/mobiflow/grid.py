"""Staggered space-time grids for densities and momenta on a box.

Densities live at time nodes ``s_k = k / n_s`` and cell centers; momenta live at
time midpoints and interior cell faces.  Boundary faces carry zero flux and are not
stored, so the discrete continuity equation is an exact linear constraint.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft
from scipy import ndimage

from .errors import MassMismatch
from .mobility import action_density

__all__ = [
    "Domain",
    "StaggeredField",
    "ActionProfile",
    "face_average",
    "discrete_action",
    "interpolate_linear",
    "convolve_smooth",
    "mollify_field",
    "bump_kernel",
    "neumann_eigenvalues",
    "solve_neumann_poisson",
    "read_density_csv",
    "write_density_csv",
    "save_field",
    "load_field",
]


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod [0, L_a]`` split into ``n_a`` equal cells per axis."""

    lengths: tuple
    cells: tuple

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        if len(lengths) != len(cells) or len(cells) not in (1, 2):
            raise ValueError("domain must be one- or two-dimensional")
        if any(v <= 0 for v in lengths):
            raise ValueError("extents must be positive")
        if any(n < 4 for n in cells):
            raise ValueError("need at least 4 cells per axis")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def interval(cls, n, length=1.0):
        return cls((length,), (n,))

    @classmethod
    def box(cls, nx, ny, lx=1.0, ly=1.0):
        return cls((lx, ly), (nx, ny))

    @property
    def dim(self):
        return len(self.cells)

    @property
    def h(self):
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def centers(self, axis=0):
        h = self.h[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def mesh(self):
        """Cell-center coordinates, one array per axis, with the field shape."""
        return np.meshgrid(*[self.centers(a) for a in range(self.dim)], indexing="ij")

    def mass(self, rho):
        return float(np.sum(rho) * self.cell_volume)

    def face_shape(self, axis):
        shape = list(self.cells)
        shape[axis] -= 1
        return tuple(shape)

    def to_dict(self):
        return {"lengths": list(self.lengths), "cells": list(self.cells)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["lengths"]), tuple(d["cells"]))

    # difference operators on interior faces -------------------------------
    def div(self, w):
        """Divergence of interior-face fluxes (zero flux on the boundary)."""
        out = 0.0
        for a, wa in enumerate(w):
            lead = wa.ndim - self.dim
            pad = [(0, 0)] * wa.ndim
            pad[lead + a] = (1, 1)
            out = out + np.diff(np.pad(wa, pad), axis=lead + a) / self.h[a]
        return out

    def grad(self, u):
        """Cell-to-face difference quotients; minus the adjoint of :meth:`div`."""
        lead = u.ndim - self.dim
        return [np.diff(u, axis=lead + a) / self.h[a] for a in range(self.dim)]


@dataclass
class StaggeredField:
    """Density at ``n_s + 1`` time nodes and momenta at ``n_s`` time midpoints.

    ``rho`` has shape ``(n_s + 1, *cells)``; ``w[a]`` has shape ``(n_s, *face_shape(a))``.
    """

    domain: Domain
    rho: np.ndarray
    w: list

    @property
    def n_s(self):
        return self.rho.shape[0] - 1

    @property
    def ds(self):
        return 1.0 / self.n_s

    def continuity_residual(self):
        """Per-slab defect ``(rho^{k+1} - rho^k) / ds + div w^{k+1/2}``."""
        return np.diff(self.rho, axis=0) / self.ds + self.domain.div(self.w)

    def masses(self):
        return np.sum(self.rho.reshape(self.rho.shape[0], -1), axis=1) * self.domain.cell_volume

    def copy(self):
        return StaggeredField(self.domain, self.rho.copy(), [wa.copy() for wa in self.w])


@dataclass
class ActionProfile:
    per_slab: np.ndarray
    ds: float

    @property
    def total(self):
        return float(self.ds * np.sum(self.per_slab))

    def to_dict(self):
        return {"per_slab": self.per_slab.tolist(), "total": self.total}


def face_average(rho, domain, axis):
    """Four-point mean of ``rho`` over adjacent time nodes and the two cells sharing a face."""
    lead = rho.ndim - domain.dim
    t = 0.5 * (rho[:-1] + rho[1:])
    sl_lo = [slice(None)] * rho.ndim
    sl_hi = [slice(None)] * rho.ndim
    sl_lo[lead + axis] = slice(None, -1)
    sl_hi[lead + axis] = slice(1, None)
    return 0.5 * (t[tuple(sl_lo)] + t[tuple(sl_hi)])


def discrete_action(field, mobility):
    """Per-slab action ``sum_faces phi(rho_face, w_face) * cell_volume``.

    Infinite when any density sample lies outside ``[0, M]``.
    """
    dom = field.domain
    rho = field.rho
    if np.any(rho < 0) or np.any(rho > mobility.M):
        return ActionProfile(np.full(field.n_s, np.inf), field.ds)
    per = np.zeros(field.n_s)
    for a in range(dom.dim):
        phi = action_density(mobility, face_average(rho, dom, a), field.w[a])
        per += np.sum(phi.reshape(field.n_s, -1), axis=1) * dom.cell_volume
    return ActionProfile(per, field.ds)


# ---------------------------------------------------------------------------
# Neumann Laplacian via cosine transforms
# ---------------------------------------------------------------------------


def neumann_eigenvalues(n, h):
    """Eigenvalues of the cell-centered Neumann ``-d^2/dx^2`` stencil (DCT-II modes)."""
    q = np.arange(n)
    return (2.0 - 2.0 * np.cos(np.pi * q / n)) / h**2


def solve_neumann_poisson(rhs, spacings, workers=None):
    """Least-squares solution of ``L u = rhs`` for the Neumann Laplacian tensor sum.

    ``spacings`` gives the grid step per axis of ``rhs``.  The constant mode is
    projected out, so the result has zero mean.
    """
    lam = 0.0
    for a, h in enumerate(spacings):
        shape = [1] * rhs.ndim
        shape[a] = rhs.shape[a]
        lam = lam + neumann_eigenvalues(rhs.shape[a], h).reshape(shape)
    coef = sp_fft.dctn(rhs, type=2, norm="ortho", workers=workers)
    lam = np.broadcast_to(lam, coef.shape).copy()
    zero = lam == 0.0
    lam[zero] = 1.0
    coef = coef / lam
    coef[zero] = 0.0
    return sp_fft.idctn(coef, type=2, norm="ortho", workers=workers)


def interpolate_linear(rho0, rho1, n_s, domain):
    """Linear density interpolation with the minimal-norm momentum in every slab."""
    rho0 = np.asarray(rho0, dtype=float)
    rho1 = np.asarray(rho1, dtype=float)
    m0, m1 = domain.mass(rho0), domain.mass(rho1)
    if abs(m0 - m1) > 1e-12 * max(abs(m0), abs(m1), 1e-300):
        raise MassMismatch(f"endpoint masses differ: {m0!r} vs {m1!r}")
    s = np.linspace(0.0, 1.0, n_s + 1).reshape((-1,) + (1,) * domain.dim)
    rho = (1.0 - s) * rho0 + s * rho1
    # slab constraint: div w = -(rho1 - rho0); take w = grad mu with -Lap mu = rho1 - rho0
    delta = rho1 - rho0
    delta = delta - delta.mean()
    mu = solve_neumann_poisson(delta, domain.h)
    g = domain.grad(mu)
    w = [np.broadcast_to(ga, (n_s,) + ga.shape).copy() for ga in g]
    return StaggeredField(domain, rho, w)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------


def bump_kernel(radius_cells):
    """Normalized samples of ``exp(-1 / (1 - t**2))`` at integer offsets within the radius."""
    R = float(radius_cells)
    n = int(np.ceil(R)) - 1
    if n < 1:
        return np.ones(1)
    t = np.arange(-n, n + 1) / R
    k = np.exp(-1.0 / (1.0 - t * t))
    return k / k.sum()


def _smooth_cells(u, k, axis):
    # half-sample even reflection preserves mass for a symmetric kernel
    return ndimage.correlate1d(u, k, axis=axis, mode="reflect")


def _smooth_faces(w, k, axis):
    # odd whole-sample reflection about the zero-flux boundary faces
    n = (len(k) - 1) // 2
    pad = [(0, 0)] * w.ndim
    pad[axis] = (1, 1)
    full = np.pad(w, pad)
    pad[axis] = (n, n)
    ext = np.pad(full, pad, mode="reflect", reflect_type="odd")
    out = ndimage.correlate1d(ext, k, axis=axis, mode="constant")
    sl = [slice(None)] * w.ndim
    sl[axis] = slice(n + 1, n + 1 + w.shape[axis])
    return out[tuple(sl)]


def convolve_smooth(rho, eps, domain):
    """Mollify a density with a separable bump kernel of physical radius ``eps``.

    Boundary handling by even reflection keeps the total mass exactly.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    out = np.asarray(rho, dtype=float).copy()
    lead = out.ndim - domain.dim
    for a in range(domain.dim):
        k = bump_kernel(eps / domain.h[a])
        if k.size > 1:
            out = _smooth_cells(out, k, lead + a)
    return out


def mollify_field(field, eps):
    """Mollify densities and momenta of a field consistently.

    The result still satisfies the discrete continuity equation with zero boundary
    flux, and by convexity its action does not exceed the original one.
    """
    dom = field.domain
    rho = convolve_smooth(field.rho, eps, dom)
    w = []
    for a, wa in enumerate(field.w):
        out = wa
        for b in range(dom.dim):
            k = bump_kernel(eps / dom.h[b])
            if k.size == 1:
                continue
            out = _smooth_faces(out, k, 1 + b) if b == a else _smooth_cells(out, k, 1 + b)
        w.append(np.array(out, copy=True))
    return StaggeredField(dom, rho, w)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_density_csv(path, rho, domain):
    """Row-major CSV with header ``# nx ny dx dy`` (``ny = 1`` and ``dy = 0`` in 1D)."""
    rho = np.asarray(rho, dtype=float)
    if domain.dim == 1:
        header = f"# {domain.cells[0]} 1 {domain.h[0]!r} 0.0"
        data = rho.reshape(-1, 1)
    else:
        header = f"# {domain.cells[0]} {domain.cells[1]} {domain.h[0]!r} {domain.h[1]!r}"
        data = rho
    with open(path, "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def read_density_csv(path):
    """Inverse of :func:`write_density_csv`; returns ``(rho, domain)``."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing '# nx ny dx dy' header")
        nx, ny, dx, dy = first[1:].split()
        nx, ny, dx, dy = int(nx), int(ny), float(dx), float(dy)
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if ny == 1:
        domain = Domain((nx * dx,), (nx,))
        rho = data.reshape(nx)
    else:
        domain = Domain((nx * dx, ny * dy), (nx, ny))
        rho = data.reshape(nx, ny)
    return rho, domain


def save_field(directory, field):
    """Write a field as per-node CSV files plus ``manifest.json``."""
    os.makedirs(directory, exist_ok=True)
    dom = field.domain
    files = {"rho": [], "w": [[] for _ in range(dom.dim)]}
    for k in range(field.n_s + 1):
        name = f"rho_{k:04d}.csv"
        write_density_csv(os.path.join(directory, name), field.rho[k], dom)
        files["rho"].append(name)
    for a in range(dom.dim):
        for k in range(field.n_s):
            name = f"w{a}_{k:04d}.csv"
            np.savetxt(os.path.join(directory, name), np.atleast_2d(field.w[a][k]).reshape(field.w[a][k].shape[0], -1),
                       delimiter=",", fmt="%.17g")
            files["w"][a].append(name)
    manifest = {"n_s": field.n_s, "domain": dom.to_dict(), "files": files}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_field(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    dom = Domain.from_dict(manifest["domain"])
    rho = np.stack([read_density_csv(os.path.join(directory, f))[0] for f in manifest["files"]["rho"]])
    w = []
    for a, names in enumerate(manifest["files"]["w"]):
        shape = dom.face_shape(a)
        w.append(np.stack([np.loadtxt(os.path.join(directory, f), delimiter=",", ndmin=2).reshape(shape)
                           for f in names]))
    return StaggeredField(dom, rho, w)
