"""Mobilities, energy densities and the analytic convexity checkers.

A mobility ``m`` is a concave function, positive on ``(0, M)``; ``M = inf`` is the
unbounded case ("case A") and a finite ``M`` caps the admissible densities ("case B").
An energy density ``U`` is described through its pressure ``P(r) = int_0^r m U''`` and
the auxiliary primitive ``H(r) = H0 + int_0^r P' m'``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate
from scipy.interpolate import PPoly

from . import quadrature as quad
from .errors import (
    CaseBUnsupported,
    DimensionOne,
    IncompatibleThreshold,
    NonConcaveMobility,
)

__all__ = [
    "Mobility",
    "Energy",
    "GmcVerdict",
    "check_gmc",
    "check_gmc_sufficient",
    "minimal_pressure",
    "finiteness_constant",
    "action_density",
    "sample_grid",
    "check_concavity",
    "load_spec",
]


def _arr(r):
    return np.asarray(r, dtype=float)


# ---------------------------------------------------------------------------
# mobility
# ---------------------------------------------------------------------------


class Mobility:
    """A concave mobility function on ``[0, M)``.

    Use the named constructors (:meth:`power_law`, :meth:`logistic`, ...) rather than
    the raw initializer.  Instances are immutable and evaluate elementwise on arrays.
    """

    def __init__(self, kind, params, M, m, dm, d2m, M_up=None):
        self.kind = kind
        self.params = dict(params)
        self.M = float(M)
        self._m, self._dm, self._d2m = m, dm, d2m
        self._M_up = M_up

    # evaluation -----------------------------------------------------------
    def __call__(self, r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._m(_arr(r))

    def d1(self, r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._dm(_arr(r))

    def d2(self, r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._d2m(_arr(r))

    # classification -------------------------------------------------------
    @property
    def case(self):
        return "A" if math.isinf(self.M) else "B"

    @property
    def M_up(self):
        """Largest ``r`` such that ``m`` is nondecreasing on ``[0, r]``."""
        if self._M_up is not None:
            return self._M_up
        r = sample_grid(self.M, 4001)
        dm = self.d1(r)
        neg = np.nonzero(dm < 0)[0]
        return float(self.M if neg.size == 0 else r[max(neg[0] - 1, 0)])

    @property
    def is_linear(self):
        """True when ``m''`` vanishes identically."""
        if self.kind == "power_law":
            return self.params["alpha"] in (0.0, 1.0)
        if self.kind in ("constant", "affine"):
            return True
        if self.kind in ("shifted", "scaled"):
            return self.params["base"].is_linear
        r = sample_grid(self.M, 257)
        return bool(np.all(np.abs(self.d2(r)) <= 1e-14 * max(1.0, np.max(np.abs(self.d1(r))))))

    @property
    def power_exponent(self):
        """``(coef, alpha)`` when ``m(r) = coef * r**alpha`` on ``[0, inf)``, else None."""
        if self.kind == "power_law":
            return self.params["coef"], self.params["alpha"]
        if self.kind == "constant" and self.case == "A":
            return self.params["c"], 0.0
        if self.kind == "scaled":
            inner = self.params["base"].power_exponent
            if inner is not None:
                return inner[0] * self.params["factor"], inner[1]
        return None

    def __repr__(self):
        shown = {k: v for k, v in self.params.items() if k not in ("base", "r", "m")}
        return f"Mobility({self.kind}, {shown}, M={self.M})"

    # constructors ---------------------------------------------------------
    @classmethod
    def power_law(cls, alpha, coef=1.0):
        """``m(r) = coef * r**alpha`` with ``0 <= alpha <= 1``."""
        alpha, coef = float(alpha), float(coef)
        if not 0.0 <= alpha <= 1.0 or coef <= 0:
            raise NonConcaveMobility(f"power law needs 0 <= alpha <= 1 and coef > 0, got {alpha}, {coef}")
        if alpha == 0.0:
            m = lambda r: coef * np.ones_like(r)
            dm = lambda r: np.zeros_like(r)
            d2m = dm
        else:
            m = lambda r: coef * np.power(np.maximum(r, 0.0), alpha)
            dm = lambda r: coef * alpha * np.power(r, alpha - 1.0)
            d2m = lambda r: coef * alpha * (alpha - 1.0) * np.power(r, alpha - 2.0)
        return cls("power_law", {"alpha": alpha, "coef": coef}, np.inf, m, dm, d2m, M_up=np.inf)

    @classmethod
    def logistic(cls, M=1.0):
        """``m(r) = r (M - r)`` on ``[0, M]``."""
        M = float(M)
        return cls(
            "logistic", {"M": M}, M,
            lambda r: r * (M - r),
            lambda r: M - 2.0 * r,
            lambda r: -2.0 * np.ones_like(r),
            M_up=0.5 * M,
        )

    @classmethod
    def power_product(cls, alpha0, alpha1, M=1.0):
        """``m(r) = r**alpha0 (M - r)**alpha1`` with exponents in ``[0, 1]``."""
        a0, a1, M = float(alpha0), float(alpha1), float(M)
        if not (0 <= a0 <= 1 and 0 <= a1 <= 1):
            raise NonConcaveMobility("power_product exponents must lie in [0, 1]")

        def m(r):
            return np.power(np.clip(r, 0, M), a0) * np.power(np.clip(M - r, 0, M), a1)

        def dm(r):
            return m(r) * (a0 / r - a1 / (M - r))

        def d2m(r):
            return m(r) * ((a0 / r - a1 / (M - r)) ** 2 - a0 / r**2 - a1 / (M - r) ** 2)

        M_up = M if a1 == 0 else (0.0 if a0 == 0 else a0 * M / (a0 + a1))
        return cls("power_product", {"alpha0": a0, "alpha1": a1, "M": M}, M, m, dm, d2m, M_up=M_up)

    @classmethod
    def constant(cls, c=1.0, M=np.inf):
        c = float(c)
        if c <= 0:
            raise NonConcaveMobility("constant mobility must be positive")
        return cls(
            "constant", {"c": c, "M": float(M)}, M,
            lambda r: c * np.ones_like(r),
            lambda r: np.zeros_like(r),
            lambda r: np.zeros_like(r),
            M_up=float(M),
        )

    @classmethod
    def affine(cls, a, b):
        """``m(r) = a + b r``; a negative slope yields the threshold ``M = -a/b``."""
        a, b = float(a), float(b)
        if a < 0 or (a == 0 and b <= 0):
            raise NonConcaveMobility("affine mobility must be positive on (0, M)")
        M = -a / b if b < 0 else np.inf
        return cls(
            "affine", {"a": a, "b": b}, M,
            lambda r: a + b * r,
            lambda r: b * np.ones_like(r),
            lambda r: np.zeros_like(r),
            M_up=np.inf if b >= 0 else 0.0,
        )

    @classmethod
    def saturating(cls, k=1.0):
        """``m(r) = r / (1 + k r)``: concave, nonlinear, bounded by ``1/k``."""
        k = float(k)
        if k < 0:
            raise NonConcaveMobility("saturating mobility needs k >= 0")
        return cls(
            "saturating", {"k": k}, np.inf,
            lambda r: r / (1.0 + k * r),
            lambda r: 1.0 / (1.0 + k * r) ** 2,
            lambda r: -2.0 * k / (1.0 + k * r) ** 3,
            M_up=np.inf,
        )

    @classmethod
    def tabulated(cls, r, m):
        """Concave ``C^1`` interpolation of sampled values after a concavity projection.

        Secant slopes are replaced by their running minimum so the projected samples
        are concave.  Between samples ``m`` is a two-piece quadratic whose derivative
        is piecewise linear and nonincreasing, so concavity also holds between
        samples.  If the last sample is 0 the mobility is of case B with ``M`` at the
        last abscissa; otherwise it is extended linearly with the end slope.
        """
        r = np.asarray(r, dtype=float)
        m = np.asarray(m, dtype=float)
        if r.ndim != 1 or r.size < 3 or np.any(np.diff(r) <= 0) or r[0] != 0.0:
            raise ValueError("tabulated mobility needs increasing abscissae starting at 0")
        if np.any(m[1:-1] <= 0) or m[0] < 0 or m[-1] < 0:
            raise NonConcaveMobility("tabulated mobility must be positive in the interior")
        slopes = np.minimum.accumulate(np.diff(m) / np.diff(r))
        proj = np.concatenate([[m[0]], m[0] + np.cumsum(slopes * np.diff(r))])
        if proj[-1] <= 0.0 and m[-1] == 0.0:
            proj[-1] = 0.0
            M = float(r[-1])
        elif proj[-1] <= 0.0 or slopes[-1] < 0.0:
            raise NonConcaveMobility("tabulated mobility without a zero endpoint must stay nondecreasing at the end")
        else:
            M = np.inf
        pp = _concave_spline(r, proj, slopes, clip_end=math.isinf(M))
        d1s, d2s = pp.derivative(1), pp.derivative(2)
        r_end, m_end, s_end = r[-1], proj[-1], float(d1s(r[-1]))

        def ev(fun, tail):
            def g(x):
                x = np.asarray(x, dtype=float)
                out = fun(np.clip(x, 0.0, r_end))
                return np.where(x > r_end, tail(x), out)
            return g

        m_f = ev(pp, lambda x: m_end + s_end * (x - r_end))
        dm_f = ev(d1s, lambda x: s_end * np.ones_like(x))
        d2m_f = ev(d2s, lambda x: np.zeros_like(x))
        return cls("tabulated", {"r": r.tolist(), "m": proj.tolist()}, M, m_f, dm_f, d2m_f)

    @classmethod
    def shifted(cls, base, shift):
        """``r -> m(r + shift)`` for a case-A mobility and ``shift >= 0``."""
        if base.case != "A":
            raise CaseBUnsupported("shifts are only defined for unbounded mobilities")
        s = float(shift)
        return cls(
            "shifted", {"base": base, "shift": s}, np.inf,
            lambda r: base(r + s), lambda r: base.d1(r + s), lambda r: base.d2(r + s),
            M_up=np.inf if base.M_up == np.inf else max(base.M_up - s, 0.0),
        )

    @classmethod
    def scaled(cls, base, factor):
        """``factor * m`` with ``factor > 0``."""
        c = float(factor)
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return cls(
            "scaled", {"base": base, "factor": c}, base.M,
            lambda r: c * base(r), lambda r: c * base.d1(r), lambda r: c * base.d2(r),
            M_up=base.M_up,
        )

    # serialization --------------------------------------------------------
    _KINDS = ("power_law", "logistic", "power_product", "constant", "affine",
              "saturating", "tabulated", "shifted", "scaled")

    def to_dict(self):
        out = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = v.to_dict() if isinstance(v, Mobility) else v
        if self.kind == "constant" and math.isinf(out["M"]):
            del out["M"]
        return out

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        kind = spec.pop("kind", None)
        if kind not in cls._KINDS:
            raise ValueError(f"unknown mobility kind {kind!r}")
        if kind in ("shifted", "scaled"):
            spec["base"] = cls.from_dict(spec["base"])
        if kind == "constant" and "M" in spec and spec["M"] is None:
            spec.pop("M")
        return getattr(cls, kind)(**spec)


def _concave_spline(x, y, secants, clip_end=False):
    """Shape-preserving quadratic spline through concave data.

    Knot slopes are averages of the adjacent secants.  Each interval gets one extra
    breakpoint where the slope equals the secant, placed so that the derivative is
    piecewise linear and nonincreasing.
    """
    d = np.empty(x.size)
    d[1:-1] = 0.5 * (secants[:-1] + secants[1:])
    d[0] = secants[0] + 0.5 * (secants[0] - secants[1])
    d[-1] = secants[-1] - 0.5 * (secants[-2] - secants[-1])
    if clip_end:
        d[-1] = max(d[-1], 0.0)
    bx, bs = [x[0]], [d[0]]
    for i in range(x.size - 1):
        e, f = d[i] - secants[i], secants[i] - d[i + 1]
        if e + f > 0:
            bx.append(x[i] + (x[i + 1] - x[i]) * f / (e + f))
            bs.append(secants[i])
        bx.append(x[i + 1])
        bs.append(d[i + 1])
    bx, bs = np.array(bx), np.array(bs)
    h = np.diff(bx)
    a2 = np.diff(bs) / (2 * h)
    vals = np.concatenate([[y[0]], y[0] + np.cumsum(h * (bs[:-1] + a2 * h))])
    # re-anchor at the data to remove roundoff drift
    at_data = np.isin(bx, x)
    vals[at_data] = y
    return PPoly(np.vstack([a2, bs[:-1], vals[:-1]]), bx)


def sample_grid(M, samples=10_000):
    """Sampling grid for checks on ``(0, M)``.

    Log-uniform on ``(1e-8, 1e6)`` for an unbounded mobility.  For a finite threshold
    the grid covers ``(1e-8 M, (1 - 1e-8) M)`` with half of the points log-uniform in
    the distance to ``M`` so that both endpoints are resolved.
    """
    samples = int(samples)
    if samples < 2:
        raise ValueError("need at least two samples")
    if math.isinf(M):
        return np.geomspace(1e-8, 1e6, samples)
    R = M * (1.0 - 1e-8)
    n_lo = samples // 2
    lo = np.geomspace(1e-8 * M, 0.5 * M, n_lo)
    hi = M - np.geomspace(M - R, 0.5 * M, samples - n_lo)
    return np.unique(np.concatenate([lo, hi]))


def check_concavity(mobility, r=None, rtol=1e-12):
    """Raise :class:`NonConcaveMobility` if sampled triples violate concavity."""
    if r is None:
        r = sample_grid(mobility.M, 2001)
    r = np.sort(np.asarray(r, dtype=float))
    m = mobility(r)
    if np.any(~np.isfinite(m)) or np.any(m <= 0):
        raise NonConcaveMobility("mobility must be finite and positive on (0, M)")
    scale = np.max(np.abs(m))
    r1, r2, r3 = r[:-2], r[1:-1], r[2:]
    lin = m[:-2] + (m[2:] - m[:-2]) * (r2 - r1) / (r3 - r1)
    gap = lin - m[1:-1]
    if np.any(gap > rtol * scale):
        i = int(np.argmax(gap))
        raise NonConcaveMobility(f"concavity fails near r={r2[i]:.6g} (gap {gap[i]:.3g})")


# ---------------------------------------------------------------------------
# action density
# ---------------------------------------------------------------------------


def action_density(mobility, rho, w):
    """Kinetic action ``|w|^2 / m(rho)`` with the conventions ``0/0 = 0`` and ``a/0 = inf``.

    ``w`` is either a scalar momentum with the shape of ``rho`` or a vector field with
    one trailing axis more than ``rho``.  Densities outside ``[0, M]`` give ``inf``.
    """
    rho = _arr(rho)
    w = _arr(w)
    q = np.sum(w * w, axis=-1) if w.ndim == rho.ndim + 1 else w * w
    outside = (rho < 0) | (rho > mobility.M)
    m = mobility(np.clip(rho, 0.0, mobility.M if np.isfinite(mobility.M) else None))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = np.where(m > 0, q / np.where(m > 0, m, 1.0), np.where(q == 0, 0.0, np.inf))
    val = np.where(outside, np.inf, val)
    return val if val.ndim else float(val)


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------


class Energy:
    """Internal energy density ``U`` bound to a mobility and a dimension.

    Holds closed forms where available and falls back to singularity-aware quadrature
    for the rest.  ``P`` is the pressure, ``H = H0 + int_0^r P' m'`` and
    ``G = P' m - H``.
    """

    def __init__(self, mobility, dimension, kind, params, *, U=None, dU=None, d2U=None,
                 P=None, dP=None, d2P=None, H=None, pressure_power=None, H0=None):
        if int(dimension) < 1:
            raise ValueError("dimension must be a positive integer")
        self.mobility = mobility
        self.dimension = int(dimension)
        self.kind = kind
        self.params = dict(params)
        self.pressure_power = pressure_power
        self._U, self._dU, self._d2U = U, dU, d2U
        self._P, self._dP, self._d2P = P, dP, d2P
        self._H = H
        self._H0_override = H0
        self._H0_cache = None
        if dP is None and d2U is None:
            raise ValueError("need either P' or U''")

    @property
    def M(self):
        return self.mobility.M

    # pressure ---------------------------------------------------------------
    def dP(self, r):
        r = _arr(r)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if self._dP is not None:
                return self._dP(r)
            return self.mobility(r) * self._d2U(r)

    def P(self, r):
        r = _arr(r)
        if self._P is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                return self._P(r)
        return quad.cumulative_integral(self.dP, r, 0.0, singular_hi=self.M)

    def d2P(self, r):
        r = _arr(r)
        if self._d2P is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                return self._d2P(r)
        h = 1e-6 * np.maximum(np.abs(r), 1e-8)
        return (self.dP(r + h) - self.dP(r - h)) / (2 * h)

    # density -----------------------------------------------------------------
    def d2U(self, r):
        r = _arr(r)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if self._d2U is not None:
                return self._d2U(r)
            return self.dP(r) / self.mobility(r)

    def _base(self):
        return 1.0 if math.isinf(self.M) else 0.5 * self.M

    def dU(self, r):
        r = _arr(r)
        if self._dU is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                return self._dU(r)
        return quad.cumulative_integral(self.d2U, r, self._base(), singular_hi=self.M)

    def U(self, r):
        """Energy density; without a closed form it is normalized by ``U(b) = U'(b) = 0``."""
        r = _arr(r)
        if self._U is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                return self._U(r)
        base = self._base()
        a = quad.cumulative_integral(self.d2U, r, base, singular_hi=self.M)
        b = quad.cumulative_integral(lambda z: z * self.d2U(z), r, base, singular_hi=self.M)
        with np.errstate(invalid="ignore"):
            return np.where(r == 0.0, -b, r * a - b)

    def functional(self, rho, cell_volume=1.0):
        """Total energy ``sum U(rho) * cell_volume``; ``+inf`` outside ``[0, M]``."""
        rho = _arr(rho)
        if np.any(rho < 0) or np.any(rho > self.M):
            return np.inf
        return float(np.sum(self.U(rho)) * cell_volume)

    # auxiliary primitives -------------------------------------------------------
    def _pm_prime(self, z):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return self.dP(z) * self.mobility.d1(z)

    @property
    def H0(self):
        if self._H0_override is not None:
            return float(self._H0_override)
        if self._H0_cache is None:
            if self.mobility.case == "A":
                self._H0_cache = 0.0
            else:
                total = quad.integrate(self._pm_prime, 0.0, self.M, singular_lo=True, singular_hi=True)
                self._H0_cache = float(max(0.0, -total)) if np.isfinite(total) else 0.0
        return self._H0_cache

    def H(self, r):
        r = _arr(r)
        if self._H is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                return self.H0 + self._H(r)
        return self.H0 + quad.cumulative_integral(self._pm_prime, r, 0.0, singular_hi=self.M)

    def G(self, r):
        r = _arr(r)
        with np.errstate(invalid="ignore"):
            return self.dP(r) * self.mobility(r) - self.H(r)

    def __repr__(self):
        return f"Energy({self.kind}, {self.params}, d={self.dimension}, {self.mobility!r})"

    # constructors ----------------------------------------------------------------
    @classmethod
    def pressure_power(cls, mobility, gamma, coef=1.0, dimension=1):
        """Energy whose pressure is ``coef * r**gamma`` (``gamma > 0``)."""
        g, c = float(gamma), float(coef)
        if g <= 0:
            raise ValueError("pressure exponent must be positive so that P(0) = 0")
        kw = dict(
            P=lambda r: c * np.power(np.maximum(r, 0.0), g),
            dP=lambda r: c * g * np.power(r, g - 1.0),
            d2P=lambda r: c * g * (g - 1.0) * np.power(r, g - 2.0),
        )
        pw = mobility.power_exponent
        if pw is not None:
            cm, a = pw
            k = c * g / cm
            beta = g - a + 1.0
            kw["d2U"] = lambda r: k * np.power(r, beta - 2.0)
            if beta == 1.0:
                kw["U"] = lambda r: k * _xlogx(r)
                kw["dU"] = lambda r: k * (np.log(r) + 1.0)
            elif beta == 0.0:
                kw["U"] = lambda r: -k * np.log(r)
                kw["dU"] = lambda r: -k / r
            else:
                kw["U"] = lambda r: k / (beta * (beta - 1.0)) * np.power(np.maximum(r, 0.0), beta)
                kw["dU"] = lambda r: k / (beta - 1.0) * np.power(r, beta - 1.0)
            ea = g + a - 1.0
            if a == 0.0:
                kw["H"] = lambda r: np.zeros_like(r)
            elif ea > 0:
                kw["H"] = lambda r: c * cm * g * a / ea * np.power(np.maximum(r, 0.0), ea)
            else:
                kw["H"] = lambda r: np.full_like(r, np.inf if c > 0 else -np.inf)
        return cls(mobility, dimension, "pressure_power", {"gamma": g, "coef": c},
                   pressure_power=(c, g), **kw)

    @classmethod
    def power(cls, mobility, beta, dimension=1):
        """``U = r**beta / (beta - 1)``, or ``r log r`` for ``beta = 1``."""
        b = float(beta)
        pw = mobility.power_exponent
        if pw is not None:
            cm, a = pw
            g = a + b - 1.0
            if g <= 0:
                raise ValueError("pressure would not vanish at 0 for this (mobility, beta) pair")
            e = cls.pressure_power(mobility, g, cm * b / g, dimension)
            e.kind, e.params = "power", {"beta": b}
            return e
        if b == 1.0:
            U, dU = _xlogx, lambda r: np.log(r) + 1.0
        else:
            U = lambda r: np.power(np.maximum(r, 0.0), b) / (b - 1.0)
            dU = lambda r: b / (b - 1.0) * np.power(r, b - 1.0)
        d2U = lambda r: b * np.power(r, b - 2.0)
        return cls(mobility, dimension, "power", {"beta": b}, U=U, dU=dU, d2U=d2U)

    @classmethod
    def entropy(cls, mobility, dimension=1):
        e = cls.power(mobility, 1.0, dimension)
        e.kind, e.params = "entropy", {}
        return e

    @classmethod
    def mobility_entropy(cls, mobility, dimension=1):
        """The energy with linear pressure ``P(r) = r``, i.e. ``U'' = 1/m``."""
        pw = mobility.power_exponent
        if pw is not None:
            e = cls.pressure_power(mobility, 1.0, 1.0, dimension)
            e.kind, e.params = "mobility_entropy", {}
            return e
        kw = dict(P=lambda r: r.copy(), dP=lambda r: np.ones_like(r), d2P=lambda r: np.zeros_like(r),
                  H=lambda r: mobility(r) - mobility(np.zeros(1))[0])
        if mobility.kind == "logistic":
            M = mobility.M
            kw["U"] = lambda r: (_xlogx(r) + _xlogx(M - r)) / M
            kw["dU"] = lambda r: (np.log(r) - np.log(M - r)) / M
            kw["d2U"] = lambda r: 1.0 / (r * (M - r))
        elif mobility.kind == "saturating":
            k = mobility.params["k"]
            kw["U"] = lambda r: _xlogx(r) + 0.5 * k * r * r
            kw["dU"] = lambda r: np.log(r) + 1.0 + k * r
            kw["d2U"] = lambda r: 1.0 / r + k
        return cls(mobility, dimension, "mobility_entropy", {}, **kw)

    @classmethod
    def from_pressure(cls, mobility, dP, dimension=1, P=None, d2P=None, kind="pressure", params=None):
        """Energy from an arbitrary pressure derivative (numerical primitives)."""
        return cls(mobility, dimension, kind, params or {}, P=P, dP=dP, d2P=d2P)

    @classmethod
    def combination(cls, terms, dimension=None):
        """Nonnegative linear combination ``sum w_i E_i`` of energies sharing a mobility."""
        terms = [(float(w), e) for w, e in terms]
        if not terms:
            raise ValueError("empty combination")
        mob = terms[0][1].mobility
        if any(e.mobility is not mob for _, e in terms):
            raise IncompatibleThreshold("combined energies must share one mobility")
        dim = dimension or terms[0][1].dimension

        def lin(name):
            return lambda r: sum(w * getattr(e, name)(r) for w, e in terms)

        e = cls(mob, dim, "combination", {"terms": [(w, e.kind, e.params) for w, e in terms]},
                U=lin("U"), dU=lin("dU"), d2U=lin("d2U"), P=lin("P"), dP=lin("dP"),
                d2P=lin("d2P"), H=lambda r: sum(w * (e.H(r) - e.H0) for w, e in terms),
                H0=sum(w * e.H0 for w, e in terms))
        e._terms = terms
        return e

    def with_dimension(self, d):
        """Copy of this energy bound to another dimension."""
        clone = Energy.__new__(Energy)
        clone.__dict__.update(self.__dict__)
        clone.dimension = int(d)
        return clone

    _KINDS = ("pressure_power", "power", "entropy", "mobility_entropy", "minimal_pressure")

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, spec, mobility, dimension):
        spec = dict(spec)
        kind = spec.pop("kind", None)
        if kind == "pressure_power":
            return cls.pressure_power(mobility, spec["gamma"], spec.get("coef", 1.0), dimension)
        if kind == "power":
            return cls.power(mobility, spec["beta"], dimension)
        if kind == "entropy":
            return cls.entropy(mobility, dimension)
        if kind == "mobility_entropy":
            return cls.mobility_entropy(mobility, dimension)
        if kind == "minimal_pressure":
            return minimal_pressure(mobility, dimension)
        raise ValueError(f"unknown energy kind {kind!r}")


def _xlogx(r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0)), 0.0)


def load_spec(spec):
    """Build ``(mobility, energy, d)`` from a ``{"mobility", "energy", "dimension"}`` dict."""
    d = int(spec.get("dimension", 1))
    mob = Mobility.from_dict(spec["mobility"])
    energy = Energy.from_dict(spec["energy"], mob, d) if "energy" in spec else None
    return mob, energy, d


# ---------------------------------------------------------------------------
# convexity conditions
# ---------------------------------------------------------------------------


@dataclass
class GmcVerdict:
    """Outcome of a GMC check.

    ``min_margin`` is the smallest sampled value of ``min(P'm - (1 - 1/d) H, H)``;
    ``inf_H`` is the smallest sampled ``H`` (should vanish when ``d > 1``).
    """

    holds: bool
    min_margin: float
    violation_points: list = field(default_factory=list)
    analytic: bool = False
    inf_H: float = 0.0
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "holds": bool(self.holds),
            "min_margin": float(self.min_margin),
            "violation_points": [float(v) for v in self.violation_points],
            "analytic": self.analytic,
            "inf_H": float(self.inf_H),
            "notes": list(self.notes),
        }


def _power_gmc_rule(c, gamma, alpha, d):
    """Closed-form GMC for ``P = c r**gamma`` and ``m proportional to r**alpha``."""
    if c == 0:
        return True
    if c < 0:
        return False
    if alpha == 0.0:
        return gamma > 0
    excess = gamma + alpha - 1.0
    if excess <= 0:  # P' m' not integrable at 0
        return False
    return excess >= (1.0 - 1.0 / d) * alpha


def check_gmc(energy, mobility=None, samples=10_000, dimension=None):
    """Test ``P' m >= (1 - 1/d) H >= 0`` on ``(0, M)``.

    For power-law pressure and mobility the verdict comes from the closed-form rule
    and the sampled margins are reported for information only.
    """
    mob = energy.mobility if mobility is None else mobility
    if mobility is not None and mobility.M != energy.M and not (math.isinf(mobility.M) and math.isinf(energy.M)):
        raise IncompatibleThreshold(f"energy threshold {energy.M} differs from mobility threshold {mobility.M}")
    d = energy.dimension if dimension is None else int(dimension)
    r = sample_grid(mob.M, samples)
    check_concavity(mob, r[:: max(1, len(r) // 2000)])

    with np.errstate(invalid="ignore", over="ignore"):
        pm = energy.dP(r) * mob(r)
        H = energy.H(r)
        expr = pm - (1.0 - 1.0 / d) * H
    finite_pm = pm[np.isfinite(pm)]
    tol = 1e-9 * (np.max(np.abs(finite_pm)) if finite_pm.size else 1.0)
    with np.errstate(invalid="ignore"):
        margin = np.minimum(expr, H)
    margin = np.where(np.isnan(margin), -np.inf, margin)
    bad = margin < -tol
    notes = []
    inf_H = float(min(energy.H0, np.min(H)))

    pw = mob.power_exponent
    if pw is not None and energy.pressure_power is not None:
        c, g = energy.pressure_power
        holds = _power_gmc_rule(c, g, pw[1], d)
        analytic = True
    else:
        holds = not bool(np.any(bad))
        analytic = False
    if d > 1 and np.isfinite(inf_H) and inf_H > tol:
        msg = f"inf H = {inf_H:.6g} > 0 for d = {d}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    if mob.case == "B":
        m_ends = mob(np.array([0.0, mob.M]))
        if np.all(m_ends == 0.0):
            total = quad.integrate(energy._pm_prime, 0.0, mob.M, singular_lo=True, singular_hi=True)
            if np.isfinite(total) and abs(total) > tol:
                notes.append(f"int_0^M P'm' = {total:.6g} is not zero")
    return GmcVerdict(
        holds=bool(holds),
        min_margin=float(np.min(margin)),
        violation_points=r[bad][:50].tolist(),
        analytic=analytic,
        inf_H=inf_H,
        notes=notes,
    )


def check_gmc_sufficient(energy, mobility=None, samples=10_000, dimension=None):
    """True when ``m**(1/d) P'`` is positive and nondecreasing on the sample grid."""
    mob = energy.mobility if mobility is None else mobility
    if mob.case != "A":
        raise CaseBUnsupported("the monotonicity criterion applies to unbounded mobilities only")
    d = energy.dimension if dimension is None else int(dimension)
    r = sample_grid(mob.M, samples)
    f = np.power(mob(r), 1.0 / d) * energy.dP(r)
    if not np.all(np.isfinite(f)) or np.any(f <= 0):
        return False
    return bool(np.all(np.diff(f) >= -1e-12 * np.max(np.abs(f))))


def minimal_pressure(mobility, d):
    """Energy with ``P_min' = m**(-1/d)``, the smallest pressure growth allowed by GMC."""
    d = int(d)
    if d == 1:
        raise DimensionOne("the minimal pressure is only defined for d > 1")
    if mobility.case != "A":
        raise CaseBUnsupported("minimal pressure needs an unbounded mobility")
    pw = mobility.power_exponent
    if pw is not None:
        cm, a = pw
        g0 = 1.0 - a / d
        e = Energy.pressure_power(mobility, g0, cm ** (-1.0 / d) / g0, d)
    else:
        e = Energy.from_pressure(
            mobility,
            dP=lambda r: np.power(mobility(r), -1.0 / d),
            d2P=lambda r: (-1.0 / d) * np.power(mobility(r), -1.0 / d - 1.0) * mobility.d1(r),
            dimension=d,
        )
    e.kind, e.params = "minimal_pressure", {}
    return e


def _tail_exponent(mobility, z1=1e10, z2=1e12):
    m1, m2 = mobility(np.array([z1, z2]))
    return float(np.log(m2 / m1) / np.log(z2 / z1))


def finiteness_constant(mobility, d, r_low):
    """``(1/d) int_{r_low}^inf (z**(1 + 1/d) m(z))**(-1/2) dz``, or ``inf`` if it diverges.

    Divergence is decided by comparing the growth exponent of ``m`` at infinity with
    the threshold ``1 - 1/d`` (ties count as divergent).
    """
    if mobility.case != "A":
        raise CaseBUnsupported("the finiteness constant is defined for unbounded mobilities")
    d = int(d)
    r_low = float(r_low)
    pw = mobility.power_exponent
    if pw is not None:
        cm, a = pw
        if a <= 1.0 - 1.0 / d:
            return np.inf
        e = 0.5 * (1.0 + 1.0 / d + a)
        if r_low == 0.0:  # z**(-e) with e > 1 is not integrable at 0
            return np.inf
        return float(cm ** -0.5 * r_low ** (1.0 - e) / (e - 1.0) / d)
    slope = _tail_exponent(mobility)
    if slope <= 1.0 - 1.0 / d + 1e-9:
        return np.inf

    def k(z):
        return np.power(np.power(z, 1.0 + 1.0 / d) * mobility(z), -0.5)

    head = 0.0
    start = r_low
    if r_low == 0.0:
        head = quad.integrate_from_singular(k, 1.0, "left")
        start = 1.0
    tail, _ = sp_integrate.quad(lambda z: float(k(np.array(z))), start, np.inf, limit=200)
    return float((head + tail) / d)
