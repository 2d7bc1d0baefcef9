"""L-derivatives over piecewise constant control variations and Jacobi curves.

Two independent routes are provided: a one-shot solve of the linear system
that characterizes the L-derivative at time t, and an incremental update that
adds one interval of constant variations at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .indices import LiftedPlane, lift_curve
from .linearization import MovingFrameFields, ProblemLinearization, moving_frame
from .symplectic import (
    DEFAULT_RTOL,
    LinearSubspace,
    NumericalDegeneracy,
    fiber_plane,
    is_lagrangian,
    null_space,
    pseudoinverse,
    standard_form,
)


class DegeneracyError(NumericalDegeneracy):
    """The computed L-derivative does not have the expected dimension."""


@dataclass(frozen=True)
class VariationBasis:
    """Piecewise constant variations with jumps on ``partition``.

    ``include_boundary`` toggles the variations of the initial point along
    the initial manifold; without them the initial point is fixed.
    """

    partition: Tuple[float, ...]
    include_boundary: bool = True

    def __post_init__(self):
        part = tuple(float(t) for t in self.partition)
        if len(part) < 1 or part[0] != 0.0 or any(b <= a for a, b in zip(part, part[1:])):
            raise ValueError("partition must start at 0 and increase strictly")
        object.__setattr__(self, "partition", part)

    @classmethod
    def uniform(cls, t: float, intervals: int, include_boundary: bool = True) -> "VariationBasis":
        return cls(tuple(np.linspace(0.0, t, intervals + 1)), include_boundary)


def prepare(prob: ProblemLinearization, basis: VariationBasis, order: int = 4) -> MovingFrameFields:
    """Moving frame fields for a problem over the partition of ``basis``."""
    fields = moving_frame(prob, basis.partition, order)
    if not basis.include_boundary:
        fields = replace(fields, boundary_plane=fiber_plane(fields.space),
                         N0_tangent=np.zeros((prob.n, 0)))
    return fields


@dataclass(frozen=True, eq=False)
class JacobiCurve:
    times: Tuple[float, ...]
    planes: Tuple[LinearSubspace, ...]
    lifts: Optional[Tuple[int, ...]] = None


def _plane_from_vectors(vectors: np.ndarray, n: int, what: str) -> LinearSubspace:
    from .symplectic import SymplecticSpace

    space = SymplecticSpace(n)
    if vectors.shape[1] == 0:
        raise DegeneracyError(f"{what}: no solutions")
    u, s, _ = np.linalg.svd(vectors, full_matrices=False)
    rank_hi = int(np.sum(s > 1e-6 * s[0]))
    rank_lo = int(np.sum(s > 1e-10 * s[0]))
    if rank_hi != n or rank_lo != n:
        raise DegeneracyError(
            f"{what}: solution vectors span dimension {rank_hi}..{rank_lo}, expected {n}; "
            f"singular values {np.array2string(s[: n + 2], precision=3)}")
    plane = LinearSubspace(space, u[:, :n])
    if not is_lagrangian(plane, 1e-8):
        raise DegeneracyError(f"{what}: result is not Lagrangian "
                              f"(max form entry {np.abs(plane.form_matrix()).max():.2e})")
    return plane


def galerkin_solutions(fields: MovingFrameFields, initial: np.ndarray, start: int = 0,
                       stop: Optional[int] = None, rtol: float = 1e-10):
    """Solve the defining linear system on intervals ``start .. stop-1``.

    Unknowns are the coefficients of the initial vector in the columns of
    ``initial`` followed by the constant controls interval by interval. Every
    test variation on the same intervals must annihilate the bilinear
    expression

        int [ sigma(eta0 + int_{t_start}^tau X v, X(tau) w) + b(v, w) ] d tau.

    Returns
    -------
    eta0, eta_end : ndarray
        Initial and final vectors for a basis of the solution space.
    coeffs : ndarray
        The solution basis itself, one column per solution.
    """
    stop = fields.intervals if stop is None else stop
    J = standard_form(fields.n)
    k = fields.k
    m0 = initial.shape[1]
    m = stop - start
    rows = np.zeros((m * k, m0 + m * k))
    for jj in range(m):
        j = start + jj
        h = fields.grid[j + 1] - fields.grid[j]
        Mj = fields.M[j]
        r = slice(jj * k, (jj + 1) * k)
        rows[r, :m0] = -Mj.T @ J @ initial
        for ii in range(jj):
            i = start + ii
            rows[r, m0 + ii * k: m0 + (ii + 1) * k] = -Mj.T @ J @ fields.M[i]
        rows[r, m0 + jj * k: m0 + (jj + 1) * k] = (fields.K[j] + fields.Bint[j]).T
        rows[r] /= h
    coeffs = null_space(rows, rtol) if rows.size else np.eye(m0 + m * k)
    eta0 = initial @ coeffs[:m0]
    eta_end = eta0.copy()
    for ii in range(m):
        eta_end += fields.M[start + ii] @ coeffs[m0 + ii * k: m0 + (ii + 1) * k]
    return eta0, eta_end, coeffs


def galerkin_lderivative(fields: MovingFrameFields, t_index: Optional[int] = None) -> LinearSubspace:
    """L-derivative at partition point ``t_index`` from a single linear solve.

    The initial vector ranges over the boundary plane of the fields.
    """
    t_index = fields.intervals if t_index is None else t_index
    _, eta_end, _ = galerkin_solutions(fields, fields.boundary_plane.basis, 0, t_index)
    return _plane_from_vectors(eta_end, fields.n, f"galerkin at t={fields.grid[t_index]:.6g}")


@dataclass(frozen=True)
class StepDiagnostics:
    dim_E: int
    dim_L_sub: int
    residual: float


def lderiv_step(plane: LinearSubspace, fields: MovingFrameFields, j: int,
                tol: float = DEFAULT_RTOL, return_diagnostics: bool = False):
    """Add constant variations on interval ``j`` to the L-derivative ``plane``.

    With Y the interval average of X, E the controls whose direction Y v is
    skew-orthogonal to ``plane`` and L_sub the part of ``plane`` skew-orthogonal
    to every Y w, the new plane is spanned by L_sub and the vectors
    eta_i + int X (v_i + e_i) for a basis v_i of the Euclidean complement of E.
    Here e_i in E solves the interval equations tested on E and
    eta_i = -A^+ Q v_i with Q the Schur complement of the interval form on E.
    When Q does not couple E to its complement, e_i = 0.
    """
    n = plane.space.n
    h = fields.grid[j + 1] - fields.grid[j]
    J = plane.space.form
    Mj = fields.M[j]
    Y = Mj / h
    L = plane.basis
    amat = L.T @ J @ Y
    u, s, vt = np.linalg.svd(amat, full_matrices=True)
    smax = s[0] if s.size else 0.0
    r = int(np.sum(s > tol * smax)) if smax > 0 else 0
    F = vt[:r].T
    E = vt[r:].T
    l_sub = L @ u[:, r:]
    if r == 0:
        out = plane
        resid = 0.0
    else:
        qfull = (fields.K[j] + fields.Bint[j]).T / h
        a_r = F.T @ amat.T
        if E.shape[1]:
            q_ee = E.T @ qfull @ E
            e_of_v = -pseudoinverse(q_ee, tol) @ (E.T @ qfull @ F)
            if np.linalg.norm(q_ee @ e_of_v + E.T @ qfull @ F) > 1e-8 * max(1.0, np.linalg.norm(qfull)):
                raise DegeneracyError(f"step {j}: interval form is singular on E")
        else:
            e_of_v = np.zeros((0, r))
        controls = F + E @ e_of_v
        q_r = F.T @ qfull @ controls
        eta = -pseudoinverse(a_r, tol) @ q_r
        resid = float(np.linalg.norm(a_r @ eta + q_r))
        if resid > 1e-8 * max(1.0, np.linalg.norm(q_r)):
            raise DegeneracyError(f"step {j}: interval equations inconsistent (residual {resid:.2e})")
        vectors = np.hstack([l_sub, L @ eta + Mj @ controls])
        try:
            out = _plane_from_vectors(vectors, n, f"step {j}")
        except DegeneracyError as exc:
            raise DegeneracyError(f"{exc}; dim E = {vt.shape[0] - r}, dim L_sub = {l_sub.shape[1]}") from None
    if return_diagnostics:
        return out, StepDiagnostics(vt.shape[0] - r, l_sub.shape[1], resid)
    return out


def jacobi_curve(fields: MovingFrameFields, lifts: bool = False, seed: int = 0,
                 tol: float = DEFAULT_RTOL) -> JacobiCurve:
    """Iterate :func:`lderiv_step` from the boundary plane over the partition."""
    planes = [fields.boundary_plane]
    for j in range(fields.intervals):
        try:
            planes.append(lderiv_step(planes[-1], fields, j, tol))
        except DegeneracyError as exc:
            raise DegeneracyError(f"interval {j}: {exc}") from None
    lift_values = None
    if lifts:
        pi = fiber_plane(fields.space)
        lifted = lift_curve(planes, LiftedPlane.at_base(pi), seed, tol)
        lift_values = tuple(lp.lift for lp in lifted[1:])
    return JacobiCurve(tuple(fields.grid), tuple(planes), lift_values)


def galerkin_curve(fields: MovingFrameFields) -> List[LinearSubspace]:
    """One-shot L-derivatives at every partition point."""
    return [fields.boundary_plane] + [galerkin_lderivative(fields, i) for i in range(1, fields.intervals + 1)]
