"""Deterministic rasterizers for the geometric primitives used in scenarios.

Membership is decided by node centers, so every primitive rasterizes the same
way on every run.  Balls are open; boxes are closed.  Thin primitives
(segments, the spine of a cusp) always include the nodes within half a
spacing of their skeleton so they never rasterize to nothing.
"""

from __future__ import annotations

import numpy as np

from .errors import PreconditionError
from .grid import GridDomain, NodeSet

__all__ = [
    "ball",
    "box",
    "halfspace",
    "segment",
    "cusp",
    "wedge",
    "point",
]


def ball(domain: GridDomain, center, radius: float) -> NodeSet:
    """Open ball {|x - c| < r}."""
    return domain.ball(center, radius)


def box(domain: GridDomain, lo, hi) -> NodeSet:
    """Closed box {lo <= x <= hi} (componentwise)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x = domain.coords
    mask = np.all((x >= lo[None, :]) & (x <= hi[None, :]), axis=1)
    return NodeSet(domain, mask)


def halfspace(domain: GridDomain, axis: int, value: float, side: str = "le") -> NodeSet:
    """Half-space {x_axis <= value} (side='le') or {x_axis >= value} ('ge')."""
    x = domain.coords[:, axis]
    if side == "le":
        mask = x <= value
    elif side == "ge":
        mask = x >= value
    else:
        raise PreconditionError(f"side must be 'le' or 'ge', got {side!r}")
    return NodeSet(domain, mask)


def segment(domain: GridDomain, a, b, width: float = 0.0) -> NodeSet:
    """Nodes within max(width, h)/2 of the segment from a to b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x = domain.coords
    d = b - a
    L2 = float(d @ d)
    if L2 == 0.0:
        dist = np.linalg.norm(x - a[None, :], axis=1)
    else:
        t = np.clip((x - a[None, :]) @ d / L2, 0.0, 1.0)
        proj = a[None, :] + t[:, None] * d[None, :]
        dist = np.linalg.norm(x - proj, axis=1)
    half = 0.5 * max(width, domain.h) * (1.0 + 1e-12)
    return NodeSet(domain, dist <= half)


def cusp(domain: GridDomain, tip, axis: int = 0, profile: str = "exp",
         beta: float = 2.0, length: float = 1.0, scale: float = 1.0) -> NodeSet:
    """Cusp spike from ``tip`` along +axis with width profile w(s).

    ``profile='exp'`` gives w(s) = scale * exp(-1/s); ``'power'`` gives
    w(s) = scale * s**beta.  A node belongs to the cusp when its along-axis
    offset s satisfies 0 <= s <= length and its transverse distance from the
    spine is at most w(s)/2.  The spine row itself is always included, so the
    rasterization degenerates to a one-node-wide segment where w falls below
    the grid spacing.
    """
    tip = np.asarray(tip, dtype=float)
    x = domain.coords
    s = x[:, axis] - tip[axis]
    perp = np.delete(x, axis, axis=1) - np.delete(tip, axis)[None, :]
    trans = np.linalg.norm(perp, axis=1) if perp.size else np.zeros(x.shape[0])
    with np.errstate(divide="ignore", over="ignore"):
        if profile == "exp":
            w = scale * np.exp(-1.0 / np.maximum(s, 1e-300))
        elif profile == "power":
            w = scale * np.maximum(s, 0.0) ** beta
        else:
            raise PreconditionError(f"unknown cusp profile {profile!r}")
    mask = (s >= -1e-12) & (s <= length) & (trans <= 0.5 * np.maximum(w, 0.0) + 1e-12)
    return NodeSet(domain, mask)


def wedge(domain: GridDomain, tip, axis: int = 0, length: float = 1.0) -> NodeSet:
    """Two-sided wedge {0 < |x_perp| < x_axis - tip_axis < length} from ``tip``.

    The transverse distance must be strictly positive (the spine is
    excluded) and strictly below the along-axis offset.
    """
    tip = np.asarray(tip, dtype=float)
    x = domain.coords
    s = x[:, axis] - tip[axis]
    perp = np.delete(x, axis, axis=1) - np.delete(tip, axis)[None, :]
    trans = np.linalg.norm(perp, axis=1) if perp.size else np.zeros(x.shape[0])
    mask = (trans > 1e-12) & (trans < s) & (s < length)
    return NodeSet(domain, mask)


def point(domain: GridDomain, at) -> NodeSet:
    """The single node nearest to ``at``."""
    return domain.point_set(at)
