"""Closed-form field constructors used as scenario data bindings.

Radial closed forms carry a distance floor (default h/2) so fields like
log|x| stay finite at nodes coinciding with their singular point; the floored
nodes only ever sit outside the solve regions that consume these fields.
"""

from __future__ import annotations

import numpy as np

from .grid import GridDomain, ScalarField

__all__ = [
    "constant",
    "log_abs",
    "power_abs",
    "distance_to",
    "coordinate",
    "linear",
    "cone",
]


def _floored_dist(domain: GridDomain, center, floor: float | None) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    r = np.linalg.norm(domain.coords - c[None, :], axis=1)
    return np.maximum(r, 0.5 * domain.h if floor is None else floor)


def constant(domain: GridDomain, value: float) -> ScalarField:
    return domain.field(float(value))


def log_abs(domain: GridDomain, center=None, floor: float | None = None) -> ScalarField:
    """log |x - c|, with |x - c| floored near the center."""
    center = center if center is not None else (0.0,) * domain.dim
    return domain.field(np.log(_floored_dist(domain, center, floor)))


def power_abs(domain: GridDomain, exponent: float, center=None,
              floor: float | None = None) -> ScalarField:
    """|x - c|^gamma, floored near the center for negative gamma."""
    center = center if center is not None else (0.0,) * domain.dim
    return domain.field(_floored_dist(domain, center, floor) ** exponent)


def distance_to(domain: GridDomain, to) -> ScalarField:
    """d(x, z), the distance-to-point data field."""
    z = np.asarray(to, dtype=float)
    return domain.field(np.linalg.norm(domain.coords - z[None, :], axis=1))


def coordinate(domain: GridDomain, axis: int) -> ScalarField:
    return domain.field(domain.coords[:, axis].copy())


def linear(domain: GridDomain, coeffs, offset: float = 0.0) -> ScalarField:
    """Affine field <coeffs, x> + offset."""
    c = np.asarray(coeffs, dtype=float)
    return domain.field(domain.coords @ c + float(offset))


def cone(domain: GridDomain, to, offset: float = 0.0, slope: float = -1.0) -> ScalarField:
    """offset + slope * d(x, z); slope < 0 gives a tent peaked at z."""
    z = np.asarray(to, dtype=float)
    d = np.linalg.norm(domain.coords - z[None, :], axis=1)
    return domain.field(float(offset) + float(slope) * d)
