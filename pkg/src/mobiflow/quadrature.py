"""Vectorized quadrature helpers for integrands with algebraic endpoint singularities.

The integrals needed by the energy and mobility algebra (pressures, primitives of
``P' m'``, minimal pressures) are one-dimensional but may blow up like ``z**p``
with ``p > -1`` at ``z = 0`` or at the threshold ``M``.  Near a singular endpoint the
interval is split into geometrically shrinking pieces and the remaining tail is
summed as a geometric series, which is exact for pure power behaviour.
"""
from __future__ import annotations

import numpy as np

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)

# geometric refinement towards a singular endpoint
_SHRINK = 0.25
_LEVELS = 60


def gauss_segments(f, a, b):
    """Integrate ``f`` over each segment ``[a_i, b_i]`` with 10-point Gauss-Legendre."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    z = mid[..., None] + half[..., None] * _GL_X
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = np.asarray(f(z), dtype=float)
    return half * (vals @ _GL_W)


def integrate_from_singular(f, length, side="left", anchor=0.0):
    """Integrate ``f`` over an interval of the given length touching a singular point.

    ``side="left"`` integrates over ``[anchor, anchor + length]`` with the singularity
    at ``anchor``; ``side="right"`` integrates over ``[anchor - length, anchor]``.
    Returns ``+inf``/``-inf`` when the pieces do not decay geometrically, i.e. when the
    singularity is not integrable.
    """
    length = float(length)
    if length <= 0.0:
        return 0.0
    hi = length * _SHRINK ** np.arange(_LEVELS)
    # stop before the pieces fall below the floating-point resolution at the anchor
    floor = 1e3 * np.finfo(float).eps * abs(anchor)
    hi = hi[: max(3, int(np.sum(hi * _SHRINK > floor)))]
    lo = hi * _SHRINK
    if side == "left":
        pieces = gauss_segments(f, anchor + lo, anchor + hi)
    else:
        pieces = gauss_segments(f, anchor - hi, anchor - lo)
    if not np.all(np.isfinite(pieces)):
        return _signed_inf(pieces)
    last, prev = pieces[-1], pieces[-2]
    if last == 0.0:
        return float(np.sum(pieces))
    ratio = last / prev if prev != 0.0 else np.inf
    if not (0.0 <= ratio < 1.0 - 1e-9):
        return _signed_inf(pieces)
    return float(np.sum(pieces) + last * ratio / (1.0 - ratio))


def _signed_inf(pieces):
    finite = pieces[np.isfinite(pieces)]
    s = np.sign(np.nansum(pieces[-5:])) if finite.size else 1.0
    return float(np.inf if s >= 0 else -np.inf)


def _refined_nodes(lo, hi, singular_hi=None, ratio=1.08):
    """Geometric refinement nodes between ``lo > 0`` and ``hi``.

    Nodes cluster near 0 (log spacing in r) and, when ``singular_hi`` is finite, also
    near that right endpoint (log spacing in ``singular_hi - r``).
    """
    nodes = [np.array([lo, hi])]
    if singular_hi is None or not np.isfinite(singular_hi):
        n = int(np.ceil(np.log(hi / lo) / np.log(ratio))) + 1
        nodes.append(np.geomspace(lo, hi, max(n, 2)))
    else:
        half = 0.5 * singular_hi
        if lo < half:
            top = min(hi, half)
            n = int(np.ceil(np.log(top / lo) / np.log(ratio))) + 1
            nodes.append(np.geomspace(lo, top, max(n, 2)))
        if hi > half:
            gap_lo = singular_hi - hi
            gap_hi = singular_hi - max(lo, half)
            if gap_lo > 0:
                n = int(np.ceil(np.log(gap_hi / gap_lo) / np.log(ratio))) + 1
                nodes.append(singular_hi - np.geomspace(gap_lo, gap_hi, max(n, 2)))
            else:
                nodes.append(np.array([max(lo, half), hi]))
    out = np.unique(np.concatenate(nodes))
    return out[(out >= lo) & (out <= hi)]


def cumulative_integral(f, r, base=0.0, singular_hi=None):
    """Signed integrals ``int_base^{r_i} f`` for every entry of ``r``.

    ``base`` may be 0 (treated as a possibly singular endpoint) or any positive point.
    Points equal to 0 when ``base > 0`` use the singular scheme.  ``singular_hi``
    marks a possibly singular right endpoint (the threshold ``M``).
    """
    r = np.asarray(r, dtype=float)
    flat = r.ravel()
    out = np.zeros_like(flat)
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = np.zeros_like(uniq)

    pos = uniq[uniq > 0.0]
    if pos.size:
        if base == 0.0:
            start = pos[0]
            head = integrate_from_singular(f, start, "left")
            nodes = _refined_nodes(start, pos[-1], singular_hi) if pos[-1] > start else np.array([start])
            vals_pos = _cum_on_nodes(f, nodes, pos) + head
        else:
            lo = min(pos[0], base)
            hi = max(pos[-1], base)
            nodes = _refined_nodes(lo, hi, singular_hi)
            nodes = np.unique(np.concatenate([nodes, [base]]))
            cum = _cum_on_nodes(f, nodes, pos)
            base_val = _cum_on_nodes(f, nodes, np.array([base]))[0]
            vals_pos = cum - base_val
        vals[uniq > 0.0] = vals_pos
    if np.any(uniq == 0.0):
        if base == 0.0:
            vals[uniq == 0.0] = 0.0
        else:
            start = min(base, pos[0]) if pos.size else base
            # int_base^0 = -(int_0^start + int_start^base)
            head = integrate_from_singular(f, start, "left")
            rest = 0.0
            if start < base:
                nodes = _refined_nodes(start, base, singular_hi)
                rest = _cum_on_nodes(f, nodes, np.array([base]))[0]
            vals[uniq == 0.0] = -(head + rest)
    out[:] = vals[inv]
    return out.reshape(r.shape)


def _cum_on_nodes(f, nodes, query):
    """Cumulative Gauss-Legendre integral from ``nodes[0]`` evaluated at ``query`` points."""
    nodes = np.unique(np.concatenate([nodes, query]))
    if nodes.size == 1:
        return np.zeros_like(query)
    seg = gauss_segments(f, nodes[:-1], nodes[1:])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    idx = np.searchsorted(nodes, query)
    return cum[idx]


def integrate(f, a, b, singular_lo=False, singular_hi=False):
    """Definite integral over a finite interval with optional singular endpoints."""
    a, b = float(a), float(b)
    if b <= a:
        return 0.0
    mid = 0.5 * (a + b)
    total = 0.0
    if singular_lo:
        total += integrate_from_singular(f, mid - a, "left", anchor=a)
    else:
        total += float(np.sum(gauss_segments(f, *_split(a, mid))))
    if singular_hi:
        total += integrate_from_singular(f, b - mid, "right", anchor=b)
    else:
        total += float(np.sum(gauss_segments(f, *_split(mid, b))))
    return total


def _split(a, b, n=64):
    x = np.linspace(a, b, n + 1)
    return x[:-1], x[1:]
