"""Sobolev and variational p-capacities as convex minimizations.

The variational capacity of a condenser (E, A), E inside A, is

    cap_p(E, A) = min { E_p(f) : f = 1 on E, f = 0 off A, 0 <= f <= 1 },

the p-energy being assembled over the whole grid (the potential vanishes
off A, so only the densities inside A and in its one-node collar carry
energy; the collar term is the discrete counterpart of the gradient jump
across the condenser boundary).  The Sobolev capacity of E is

    Cap_p(E) = min { sum_i mu_i |f_i|^p  +  E_p(f) : f = 1 on E, 0 <= f <= 1 },

over the whole box; its value therefore depends on the ambient bounds, which
every result echoes.  The [0, 1] box constraints are justified by truncation
(clamping never increases either term) and keep the reported potential inside
the unit interval exactly.

Both solves restrict to the bounding box of A (plus a one-node collar) before
minimizing, which is an exact reduction since the potential vanishes outside.
Results are deterministic functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .grid import GridDomain, NodeSet, ScalarField, p_energy
from .minimize import minimize_p_energy

__all__ = ["CapacityResult", "variational_capacity", "sobolev_capacity", "strictness_modulus"]


@dataclass(eq=False)
class CapacityResult:
    """Capacity value with the minimizing potential and solver diagnostics."""

    value: float
    potential: ScalarField
    iterations: int
    kkt_residual: float
    eps_final: float
    ambient_bounds: tuple
    kind: str

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "eps_final": self.eps_final,
            "ambient_bounds": [list(b) for b in self.ambient_bounds],
        }


def _embed(domain: GridDomain, sub: GridDomain, slices, sub_values: np.ndarray) -> np.ndarray:
    full = np.zeros(domain.n_nodes)
    full.reshape(domain.shape)[slices] = sub_values.reshape(sub.shape)
    return full


def variational_capacity(E: NodeSet, A: NodeSet, p: float, tol: float = 1e-9) -> CapacityResult:
    """cap_p(E, A): minimal p-energy among potentials 1 on E, 0 outside A.

    Preconditions: E inside A, and A must leave a nonempty grid exterior so
    the zero boundary condition is meaningful.  E may be empty (capacity 0).
    """
    domain = E.domain
    if A.domain is not domain:
        raise PreconditionError("E and A belong to different domains")
    domain.weight.validate_for(domain.dim, p)
    if p <= 1.0:
        raise PreconditionError(f"p must exceed 1, got {p}")
    if not E.is_subset_of(A):
        raise PreconditionError("E must be contained in A")
    if A.count == domain.n_nodes:
        raise PreconditionError("no exterior: A covers every node")
    bounds_echo = tuple(map(tuple, domain.bounds))

    if E.is_empty:
        pot = domain.field(0.0)
        return CapacityResult(0.0, pot, 0, 0.0, 0.0, bounds_echo, "variational")

    slices = A.bbox_slices(margin=1)
    sub = domain.crop(slices)
    e_mask = E.mask.reshape(domain.shape)[slices].ravel()
    a_mask = A.mask.reshape(domain.shape)[slices].ravel()

    values0 = np.where(e_mask, 1.0, 0.0)
    free = a_mask & ~e_mask
    res = minimize_p_energy(sub, p, values0=values0, free_mask=free,
                            lower=0.0, upper=1.0, tol=tol)

    full_values = _embed(domain, sub, slices, res.values)
    potential = ScalarField(domain, full_values)
    value = p_energy(potential, domain.all_nodes(), p, eps=0.0).total
    return CapacityResult(value, potential, res.iterations, res.kkt_residual,
                          res.eps_final, bounds_echo, "variational")


def sobolev_capacity(E: NodeSet, p: float, tol: float = 1e-9) -> CapacityResult:
    """Cap_p(E): minimal full Newtonian norm ||f||^p among f = 1 on E.

    The value depends on the ambient box (echoed in the result); downstream
    logic consumes only zero/nonzero distinctions and refinement trends.
    """
    domain = E.domain
    domain.weight.validate_for(domain.dim, p)
    if p <= 1.0:
        raise PreconditionError(f"p must exceed 1, got {p}")
    bounds_echo = tuple(map(tuple, domain.bounds))

    if E.is_empty:
        return CapacityResult(0.0, domain.field(0.0), 0, 0.0, 0.0, bounds_echo, "sobolev")

    values0 = np.where(E.mask, 1.0, 0.0)
    free = ~E.mask
    if not free.any():
        potential = domain.field(1.0)
        return CapacityResult(domain.total_measure, potential, 0, 0.0, 0.0,
                              bounds_echo, "sobolev")
    res = minimize_p_energy(domain, p, values0=values0, free_mask=free,
                            lower=0.0, upper=1.0, mass=True, tol=tol)
    potential = ScalarField(domain, res.values)
    f = res.values
    value = float((domain.measures * np.abs(f) ** p).sum())
    value += p_energy(potential, domain.all_nodes(), p, eps=0.0).total
    return CapacityResult(value, potential, res.iterations, res.kkt_residual,
                          res.eps_final, bounds_echo, "sobolev")


def strictness_modulus(A: NodeSet, E_sub: NodeSet, p: float, tol: float = 1e-9) -> float:
    """Condenser capacity cap_p(E_sub, A) certifying strict-subset quality.

    A finite, refinement-stable value certifies that E_sub admits a finite
    energy cutoff equal to 1 on it and vanishing outside A, i.e. that E_sub
    is a p-strict subset of A at this resolution.  On a grid every value is
    finite; instability under refinement is the diagnostic for failure.
    """
    if not E_sub.is_subset_of(A):
        raise PreconditionError("E_sub must be contained in A")
    return variational_capacity(E_sub, A, p, tol=tol).value
