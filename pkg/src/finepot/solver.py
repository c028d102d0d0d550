"""Obstacle and Dirichlet p-energy problems, and (super)minimizer verification.

The obstacle problem on a node set U with data f and obstacle psi minimizes
the p-energy among fields v with v = f at every node outside U and
v >= psi on U.  The zero-boundary-class condition is discretized as exact
pinning off U; psi = -inf marks unconstrained nodes, and the Dirichlet
problem is the psi = -inf special case.  The regularized energy is strictly
convex on the pinned-complement subspace, so the discrete solution is unique
and two solves from different feasible starts agree to solver precision.

Verification uses two equivalent tests:

* energy comparison: random nonnegative bump perturbations phi supported in
  U never lower the p-energy over the influence region of their support
  (the support plus its backward stencil neighbors, the set of nodes whose
  densities can change; comparing over the bare support would flag exact
  minimizers, because a forward-difference density at i also reads i + e_a);
* weak form: the discrete pairings sum_j mu_j |grad u|^(p-2) grad u . grad
  hat_i are nonnegative for every nodal hat at i in U.

For superminimizers the bumps are nonnegative, for subminimizers
nonpositive, for minimizers signed; single-node hats at every node of U are
appended when U is small, which makes the energy test exhaustive there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, PreconditionError
from .grid import GridDomain, NodeSet, ScalarField, p_energy
from .minimize import minimize_p_energy, p_energy_gradient

__all__ = [
    "ObstacleProblem",
    "SolveReport",
    "VerifyReport",
    "solve_obstacle",
    "solve_dirichlet",
    "verify_superminimizer",
    "verify_weak_form",
    "comparison_check",
]

_HAT_LIMIT = 400  # exhaustive single-node hats when U has at most this many nodes


@dataclass(eq=False)
class ObstacleProblem:
    """Data of the obstacle problem on U: pinned data f, obstacle psi, exponent p.

    psi may carry -inf ("unconstrained node"); +inf values on U make the
    admissible class empty and are rejected.  psi=None means the trivial
    obstacle (-inf everywhere).
    """

    U: NodeSet
    f: ScalarField
    psi: ScalarField | None
    p: float
    tol: float = 1e-9

    def __post_init__(self):
        domain = self.U.domain
        if self.f.domain is not domain:
            raise PreconditionError("data field belongs to a different domain")
        if self.p <= 1.0:
            raise PreconditionError(f"p must exceed 1, got {self.p}")
        domain.weight.validate_for(domain.dim, self.p)
        if self.U.count == domain.n_nodes:
            raise PreconditionError("complement of U is empty")
        if self.U.is_empty:
            raise PreconditionError("U is empty")
        if not np.all(np.isfinite(self.f.values)):
            raise PreconditionError("data field must be finite")
        if self.psi is not None:
            if self.psi.domain is not domain:
                raise PreconditionError("obstacle belongs to a different domain")
            on_U = self.psi.values[self.U.mask]
            if np.any(np.isposinf(on_U)) or np.any(np.isnan(on_U)):
                raise InfeasibleError("obstacle is +inf or NaN on U: admissible class empty")

    @property
    def domain(self) -> GridDomain:
        return self.U.domain

    def feasible_start(self) -> np.ndarray:
        v = self.f.values.copy()
        if self.psi is not None:
            on_U = self.U.mask
            v[on_U] = np.maximum(v[on_U], self.psi.values[on_U])
        return v


@dataclass(eq=False)
class SolveReport:
    """Solution of an obstacle/Dirichlet problem with diagnostics.

    ``energy`` is the p-energy of the solution over U; ``contact_set`` holds
    the nodes where the solution touches the obstacle within tolerance.
    """

    solution: ScalarField
    energy: float
    contact_set: NodeSet
    kkt_residual: float
    iterations: int
    problem: ObstacleProblem

    def to_json(self) -> dict:
        return {
            "energy": self.energy,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "contact_count": self.contact_set.count,
        }


@dataclass(eq=False)
class VerifyReport:
    """Outcome of a (super/sub)minimizer verification."""

    kind: str
    passed: bool
    worst_margin: float
    n_tests: int
    witness: ScalarField | None

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "passed": bool(self.passed),
            "worst_margin": float(self.worst_margin),
            "n_tests": int(self.n_tests),
            "has_witness": self.witness is not None,
        }


def solve_obstacle(prob: ObstacleProblem, start: ScalarField | None = None) -> SolveReport:
    """Minimize the p-energy over {v : v = f off U, v >= psi on U}.

    ``start`` optionally overrides the default feasible start max(f, psi);
    the minimizer of the regularized energy is unique, so distinct feasible
    starts agree to solver precision (the uniqueness surrogate).
    """
    domain = prob.domain
    if start is not None:
        v0 = prob.f.values.copy()
        v0[prob.U.mask] = start.values[prob.U.mask]
        if prob.psi is not None:
            bad = prob.U.mask & (v0 < prob.psi.values - 0.0)
            v0[bad] = prob.psi.values[bad]
    else:
        v0 = prob.feasible_start()
    lower = prob.psi.values if prob.psi is not None else None
    res = minimize_p_energy(domain, prob.p, values0=v0, free_mask=prob.U.mask,
                            lower=lower, tol=prob.tol)
    solution = ScalarField(domain, res.values)
    energy = p_energy(solution, prob.U, prob.p, eps=0.0).total
    tol_eff = prob.tol * (1.0 + abs(energy))
    if prob.psi is not None:
        contact = prob.U.mask & (res.values <= prob.psi.values + 10.0 * tol_eff)
    else:
        contact = np.zeros(domain.n_nodes, dtype=bool)
    return SolveReport(
        solution=solution,
        energy=energy,
        contact_set=NodeSet(domain, contact),
        kkt_residual=res.kkt_residual,
        iterations=res.iterations,
        problem=prob,
    )


def solve_dirichlet(U: NodeSet, f: ScalarField, p: float, tol: float = 1e-9,
                    start: ScalarField | None = None) -> SolveReport:
    """Dirichlet problem: the obstacle problem with the trivial obstacle."""
    return solve_obstacle(ObstacleProblem(U, f, None, p, tol), start=start)


def _influence_energy(u_vals: np.ndarray, domain: GridDomain, support: np.ndarray,
                      p: float) -> float:
    region = domain.influence_mask(support)
    mu = domain.measures[region]
    field = ScalarField(domain, u_vals)
    qs = domain.axis_diffs(u_vals)
    G = np.zeros(domain.shape)
    for q in qs:
        G += q * q
    g = G.ravel()[region]
    return float((mu * g ** (p / 2.0)).sum())


def _bump(domain: GridDomain, center: np.ndarray, radius: float, amp: float,
          U_mask: np.ndarray) -> np.ndarray:
    dist = np.linalg.norm(domain.coords - center[None, :], axis=1)
    phi = amp * np.maximum(0.0, radius - dist)
    phi[~U_mask] = 0.0
    return phi


def compactly_contained_mask(domain: GridDomain, U_mask: np.ndarray) -> np.ndarray:
    """Nodes of U whose perturbation influences densities inside U only.

    The discrete counterpart of "compactly contained p-strict subset":
    perturbations are admissible where every density reading them sits in U,
    so the energy comparison never couples across the boundary of U (where
    a verified field may legitimately carry alien exterior values).
    """
    return U_mask & ~domain.reading_mask(~U_mask)


def verify_superminimizer(u: ScalarField, U: NodeSet, p: float, n_tests: int = 100,
                          seed: int = 0, *, kind: str = "superminimizer",
                          tol: float | None = None,
                          extra_fields: tuple = ()) -> VerifyReport:
    """Energy-comparison test of the (super/sub)minimizer property on U.

    Samples ``n_tests`` random cone bumps compactly supported in U
    (nonnegative for superminimizers, nonpositive for subminimizers, signed
    for minimizers), appends exhaustive single-node hats when the admissible
    core of U is small, and requires every perturbation to not lower the
    energy over the influence region of its support beyond tolerance.
    Supports keep one stencil ring away from the boundary of U, the discrete
    counterpart of quantifying over compactly contained p-strict subsets.
    Failures are reported, never raised; the worst margin and a failing
    witness (if any) come back in the report.  ``extra_fields`` lets callers
    inject specific perturbations (clipped to the admissible core).
    """
    if kind not in ("superminimizer", "subminimizer", "minimizer"):
        raise PreconditionError(f"unknown verification kind {kind!r}")
    domain = u.domain
    if U.domain is not domain:
        raise PreconditionError("field and region belong to different domains")
    reading = domain.reading_mask(domain.influence_mask(U.mask))
    if not u.is_finite_on(reading):
        raise PreconditionError("field must be finite on U and its stencil")

    base_energy = p_energy(u, U, p, eps=0.0).total
    tol_eff = (tol if tol is not None else 1e-8) * (1.0 + abs(base_energy))
    u_on = u.values[U.mask]
    scale = float(np.ptp(u_on)) if U.count else 0.0
    if scale <= 0.0:
        scale = 1.0

    core = compactly_contained_mask(domain, U.mask)
    idx_core = np.flatnonzero(core)
    if idx_core.size == 0:
        return VerifyReport(kind=kind, passed=True, worst_margin=0.0,
                            n_tests=0, witness=None)

    rng = np.random.default_rng(seed)
    diam = float(np.linalg.norm(domain.coords[idx_core].max(axis=0)
                                - domain.coords[idx_core].min(axis=0)))
    rho_hi = max(2.5 * domain.h, 0.25 * diam)

    perturbations = []
    for _ in range(n_tests):
        c = domain.coords[idx_core[rng.integers(idx_core.size)]]
        rho = rng.uniform(2.0 * domain.h, rho_hi)
        amp = rng.uniform(0.1, 10.0) * scale
        if kind == "subminimizer":
            amp = -amp
        elif kind == "minimizer":
            amp = amp if rng.integers(2) else -amp
        perturbations.append(_bump(domain, c, rho, amp, core))
    if idx_core.size <= _HAT_LIMIT:
        signs = {"superminimizer": (1.0,), "subminimizer": (-1.0,), "minimizer": (1.0, -1.0)}
        for i in idx_core:
            for s in signs[kind]:
                for delta in (1e-3 * scale, 1e-5 * scale):
                    phi = np.zeros(domain.n_nodes)
                    phi[i] = s * delta
                    perturbations.append(phi)
    for f in extra_fields:
        phi = np.asarray(f.values if isinstance(f, ScalarField) else f, dtype=float).copy()
        phi[~core] = 0.0
        perturbations.append(phi)

    worst = np.inf
    witness = None
    for phi in perturbations:
        support = phi != 0.0
        if not support.any():
            continue
        e0 = _influence_energy(u.values, domain, support, p)
        e1 = _influence_energy(u.values + phi, domain, support, p)
        margin = e1 - e0
        if margin < worst:
            worst = margin
            if margin < -tol_eff and witness is None:
                witness = ScalarField(domain, phi)
    passed = worst >= -tol_eff
    if witness is not None and passed:
        witness = None
    return VerifyReport(kind=kind, passed=passed, worst_margin=float(worst),
                        n_tests=len(perturbations), witness=witness)


def verify_weak_form(u: ScalarField, U: NodeSet, p: float, *,
                     kind: str = "superminimizer", tol: float | None = None) -> VerifyReport:
    """Derivative-form test: discrete p-Laplacian pairings against nodal hats.

    Computes, for every admissible node i of U (those whose hat influences
    densities inside U only, mirroring :func:`verify_superminimizer`), the
    pairing sum_j mu_j |grad u|^(p-2) grad u . grad hat_i (the energy
    gradient entry) and requires it >= -tol for superminimizers, <= tol for
    subminimizers, |.| <= tol for minimizers.  Thresholds are matched to the
    hat tests of :func:`verify_superminimizer` so the two verdicts agree on
    clear cases.  Meaningful on constant and power weights (the
    Euclidean-grid setting).
    """
    if kind not in ("superminimizer", "subminimizer", "minimizer"):
        raise PreconditionError(f"unknown verification kind {kind!r}")
    domain = u.domain
    region = domain.influence_mask(U.mask)
    reading = domain.reading_mask(region)
    if not u.is_finite_on(reading):
        raise PreconditionError("field must be finite on U and its stencil")
    core = compactly_contained_mask(domain, U.mask)
    g = p_energy_gradient(domain, u.values, p, region, eps=0.0)
    pairings = g[core]

    base_energy = p_energy(u, U, p, eps=0.0).total
    u_on = u.values[U.mask]
    scale = float(np.ptp(u_on)) if U.count else 0.0
    if scale <= 0.0:
        scale = 1.0
    # matched to the delta-hat energy threshold: tol_energy / hat height
    tol_eff = (tol if tol is not None else 1e-8) * (1.0 + abs(base_energy)) / (1e-3 * scale)

    if kind == "superminimizer":
        worst = float(pairings.min()) if pairings.size else 0.0
        passed = worst >= -tol_eff
        bad = int(np.argmin(pairings)) if pairings.size else None
    elif kind == "subminimizer":
        worst = -float(pairings.max()) if pairings.size else 0.0
        passed = worst >= -tol_eff
        bad = int(np.argmax(pairings)) if pairings.size else None
    else:
        worst = -float(np.abs(pairings).max()) if pairings.size else 0.0
        passed = worst >= -tol_eff
        bad = int(np.abs(pairings).argmax()) if pairings.size else None
    witness = None
    if not passed and bad is not None:
        phi = np.zeros(domain.n_nodes)
        phi[np.flatnonzero(core)[bad]] = 1.0
        witness = ScalarField(domain, phi)
    return VerifyReport(kind=kind, passed=passed, worst_margin=worst,
                        n_tests=int(pairings.size), witness=witness)


def comparison_check(r1: SolveReport, r2: SolveReport) -> bool:
    """Comparison principle check: ordered data give ordered solutions.

    Requires both reports to come from the same U and p, with f1 <= f2 off U
    and psi1 <= psi2 on U; returns True when solution1 <= solution2 + 10 tol
    everywhere.
    """
    p1, p2 = r1.problem, r2.problem
    if p1.domain is not p2.domain or p1.p != p2.p or not np.array_equal(p1.U.mask, p2.U.mask):
        raise PreconditionError("mismatched domains: reports come from different problems")
    off = ~p1.U.mask
    if np.any(p1.f.values[off] > p2.f.values[off] + 1e-12):
        raise PreconditionError("data are not ordered off U")
    psi1 = p1.psi.values if p1.psi is not None else np.full(p1.domain.n_nodes, -np.inf)
    psi2 = p2.psi.values if p2.psi is not None else np.full(p1.domain.n_nodes, -np.inf)
    on = p1.U.mask
    if np.any(psi1[on] > psi2[on] + 1e-12):
        raise PreconditionError("obstacles are not ordered on U")
    tol_eff = max(p1.tol * (1.0 + abs(r1.energy)), p2.tol * (1.0 + abs(r2.energy)))
    return bool(np.all(r1.solution.values <= r2.solution.values + 10.0 * tol_eff))
