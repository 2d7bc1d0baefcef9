"""Pair L-derivatives on the doubled space and their composition.

A pair plane lives in R^{2n} x R^{2n} with the form (-sigma) + sigma, so the
graph of a symplectic map is Lagrangian. Vectors are stored as
(lambda_0, lambda_1) with each half in (p, x) ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from .lderiv import DegeneracyError, galerkin_solutions
from .linearization import MovingFrameFields, boundary_plane
from .symplectic import (
    DEFAULT_RTOL,
    LinearSubspace,
    NumericalDegeneracy,
    Reduction,
    SymplecticSpace,
    intersect,
    is_lagrangian,
    null_space,
    orthonormal_span,
    plane_distance,
    standard_form,
    symplectic_reduction,
)


class GlueingError(NumericalDegeneracy):
    """Dimension audit of a glued plane failed."""


def doubled_space(n: int) -> SymplecticSpace:
    J = standard_form(n)
    return SymplecticSpace(2 * n, sla.block_diag(-J, J))


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Splitting of a pair plane into (G1, 0) + graph(Phi) + (0, G2).

    ``phi`` maps reduced coordinates of ``red1`` to those of ``red2``.
    """

    gamma1: LinearSubspace
    gamma2: LinearSubspace
    red1: Reduction
    red2: Reduction
    phi: np.ndarray


@dataclass(frozen=True, eq=False)
class PairPlane:
    plane: LinearSubspace
    n: int
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_vectors(cls, vectors: np.ndarray, n: int) -> "PairPlane":
        return cls(LinearSubspace.span(doubled_space(n), vectors), n)

    @classmethod
    def graph(cls, matrix: np.ndarray) -> "PairPlane":
        matrix = np.asarray(matrix, dtype=float)
        n = matrix.shape[0] // 2
        return cls.from_vectors(np.vstack([np.eye(2 * n), matrix]), n)

    @classmethod
    def product(cls, first: LinearSubspace, second: LinearSubspace) -> "PairPlane":
        n = first.space.n
        top = np.hstack([first.basis, np.zeros((2 * n, second.dim))])
        bottom = np.hstack([np.zeros((2 * n, first.dim)), second.basis])
        return cls.from_vectors(np.vstack([top, bottom]), n)

    @property
    def first(self) -> np.ndarray:
        return self.plane.basis[: 2 * self.n]

    @property
    def second(self) -> np.ndarray:
        return self.plane.basis[2 * self.n:]

    def is_lagrangian(self, tol: float = 1e-8) -> bool:
        return is_lagrangian(self.plane, tol)

    def decomposition(self) -> Decomposition:
        if "dec" not in self._cache:
            self._cache["dec"] = decompose(self)
        return self._cache["dec"]


# -------------------------------------------------------------- building


def _doubled_fields(fields: MovingFrameFields, start: int, stop: int) -> MovingFrameFields:
    """Fields of the system extended by a frozen copy of the state.

    Phase coordinates are (p, p', x, y); the copy has no dynamics and no
    controls and the initial manifold is the diagonal {x = y}.
    """
    n, k = fields.n, fields.k

    def pad(mats):
        out = np.zeros(mats.shape[:-2] + (4 * n, k))
        out[..., :n, :] = mats[..., :n, :]
        out[..., 2 * n: 3 * n, :] = mats[..., n:, :]
        return out

    J = standard_form(n)
    J2 = standard_form(2 * n)
    M = pad(fields.M[start:stop])
    grid = fields.grid[start: stop + 1]
    diag = np.vstack([np.eye(n), np.eye(n)])
    return replace(fields, grid=grid, X=pad(fields.X[start: stop + 1]), b=fields.b[start: stop + 1],
                   M=M, K=fields.K[start:stop], Bint=fields.Bint[start:stop],
                   boundary_plane=boundary_plane(diag), N0_tangent=diag)


def pair_lderivative(fields: MovingFrameFields, start: int = 0, stop: Optional[int] = None) -> PairPlane:
    """Pair L-derivative over the partition intervals ``start .. stop-1``.

    Both endpoints are free. Computed as the L-derivative of the doubled
    system whose initial manifold is the diagonal, then rearranged into
    (lambda_start, lambda_stop) pairs.
    """
    stop = fields.intervals if stop is None else stop
    n = fields.n
    doubled = _doubled_fields(fields, start, stop)
    _, eta_end, _ = galerkin_solutions(doubled, doubled.boundary_plane.basis, 0, stop - start)
    p, pc, x, y = eta_end[:n], eta_end[n:2 * n], eta_end[2 * n:3 * n], eta_end[3 * n:]
    # the frozen copy carries (-p0, x0)
    vectors = np.vstack([-pc, y, p, x])
    pair = PairPlane.from_vectors(vectors, n)
    if pair.plane.dim != 2 * n or not pair.is_lagrangian():
        raise DegeneracyError(f"pair plane has dimension {pair.plane.dim}, expected {2 * n}")
    return pair


def to_original_frame(pair: PairPlane, G0: np.ndarray, G1: np.ndarray) -> PairPlane:
    """Push a pair plane from the fixed frame to the frames at its two endpoints."""
    T = sla.block_diag(G0, G1)
    return PairPlane.from_vectors(T @ pair.plane.basis, pair.n)


# ---------------------------------------------------------- decomposition


def _solve_through(basis_part: np.ndarray, targets: np.ndarray, tol: float) -> np.ndarray:
    """Coefficients c with basis_part @ c = targets (least squares, checked)."""
    coeffs, *_ = np.linalg.lstsq(basis_part, targets, rcond=None)
    resid = np.linalg.norm(basis_part @ coeffs - targets)
    if resid > 1e-7 * max(1.0, np.linalg.norm(targets)):
        raise GlueingError(f"middle component not reachable (residual {resid:.2e})")
    return coeffs


def decompose(p: PairPlane, tol: float = DEFAULT_RTOL) -> Decomposition:
    """Split a pair plane into its isotropic parts and a symplectic graph."""
    n = p.n
    space = SymplecticSpace(n)
    first, second = p.first, p.second
    k2 = null_space(second, 1e-10)  # coefficients with zero second half
    k1 = null_space(first, 1e-10)
    g1 = LinearSubspace.span(space, first @ k2) if k2.size else LinearSubspace.zero(space)
    g2 = LinearSubspace.span(space, second @ k1) if k1.size else LinearSubspace.zero(space)
    red1 = symplectic_reduction(g1, max(tol, 1e-8))
    red2 = symplectic_reduction(g2, max(tol, 1e-8))
    if red1.complement.shape[1]:
        coeffs = _solve_through(first, red1.complement, tol)
        phi = red2.project(second @ coeffs)
    else:
        phi = np.zeros((red2.complement.shape[1], 0))
    dec = Decomposition(g1, g2, red1, red2, phi)
    rebuilt = reconstruct(dec, n)
    if rebuilt.plane.dim != p.plane.dim or plane_distance(rebuilt.plane, p.plane) > 1e-7:
        raise NumericalDegeneracy("decomposition does not reconstruct the pair plane")
    return dec


def reconstruct(dec: Decomposition, n: int) -> PairPlane:
    zeros = lambda c: np.zeros((2 * n, c))
    g1, g2 = dec.gamma1.basis, dec.gamma2.basis
    r1 = dec.red1.complement
    graph = np.vstack([r1, dec.red2.lift(dec.phi)])
    vectors = np.hstack([np.vstack([g1, zeros(g1.shape[1])]), graph,
                         np.vstack([zeros(g2.shape[1]), g2])])
    return PairPlane.from_vectors(vectors, n)


# ----------------------------------------------------------------- glueing


def _kernel_part(g: LinearSubspace, kernel: LinearSubspace, common: LinearSubspace) -> np.ndarray:
    """Representative of ((kernel & g) / common) inside g, orthogonal to common."""
    from .symplectic import orthogonal_complement_in

    inter = intersect(kernel, g, 1e-8)
    return orthogonal_complement_in(intersect(common, inter, 1e-8), inter).basis


def glue(p01: PairPlane, p12: PairPlane, tol: float = DEFAULT_RTOL) -> PairPlane:
    """Compose two consecutive pair planes.

    With p01 = (G0, 0) + gr F01 + (0, G1) and p12 = (H1, 0) + gr F12 + (0, G2)
    the result is spanned by G0, F01^{-1}(H_ker), the graph of F12 o F01 over
    (G1 + H1)^skew, F12(G_ker) and G2, where G_ker and H_ker represent the
    parts of G1 and H1 in the kernel of sigma on G1 + H1 modulo G1 & H1.
    """
    from .symplectic import skew_complement, subspace_sum

    n = p01.n
    space = SymplecticSpace(n)
    d01, d12 = p01.decomposition(), p12.decomposition()
    g0, g1 = d01.gamma1, d01.gamma2
    h1, g2 = d12.gamma1, d12.gamma2
    total = subspace_sum(g1, h1)
    # kernel of sigma restricted to G1 + H1
    form = total.form_matrix()
    kern = LinearSubspace.span(space, total.basis @ null_space(form, 1e-9)) if total.dim else total
    common = intersect(g1, h1, 1e-8)
    g_ker = _kernel_part(g1, kern, common)
    h_ker = _kernel_part(h1, kern, common)

    first01, second01 = p01.first, p01.second
    first12, second12 = p12.first, p12.second
    pieces = []
    z = np.zeros((2 * n, 0))
    pieces.append(np.vstack([g0.basis, np.zeros_like(g0.basis)]))
    if h_ker.shape[1]:
        c = _solve_through(second01, h_ker, tol)
        pieces.append(np.vstack([first01 @ c, np.zeros((2 * n, h_ker.shape[1]))]))
    middle = skew_complement(total, 1e-9).basis if total.dim else np.eye(2 * n)
    if middle.shape[1]:
        c01 = _solve_through(second01, middle, tol)
        c12 = _solve_through(first12, middle, tol)
        pieces.append(np.vstack([first01 @ c01, second12 @ c12]))
    if g_ker.shape[1]:
        c = _solve_through(first12, g_ker, tol)
        pieces.append(np.vstack([np.zeros((2 * n, g_ker.shape[1])), second12 @ c]))
    pieces.append(np.vstack([np.zeros_like(g2.basis), g2.basis]))
    vectors = np.hstack(pieces) if pieces else z
    out = PairPlane.from_vectors(vectors, n)
    if out.plane.dim != 2 * n or not out.is_lagrangian(1e-7):
        raise GlueingError(
            f"glued plane has dimension {out.plane.dim}, expected {2 * n}; dims: G0={g0.dim}, "
            f"G1={g1.dim}, H1={h1.dim}, G2={g2.dim}, ker={kern.dim}, G_ker={g_ker.shape[1]}, "
            f"H_ker={h_ker.shape[1]}")
    return out


def compose(p01: PairPlane, p12: PairPlane) -> PairPlane:
    """Composition of the two planes as linear relations."""
    n = p01.n
    coeffs = null_space(np.hstack([p01.second, -p12.first]), 1e-10)
    a = p01.plane.dim
    vectors = np.vstack([p01.first @ coeffs[:a], p12.second @ coeffs[a:]])
    return PairPlane.from_vectors(vectors, n)


def chain_rule_check(p01: PairPlane, p12: PairPlane, p02: PairPlane, samples: int = 100,
                     seed: int = 0, tol: float = 1e-7) -> bool:
    """Sample matching pairs and test that their outer components lie in p02."""
    rng = np.random.default_rng(seed)
    coeffs = null_space(np.hstack([p01.second, -p12.first]), 1e-10)
    if coeffs.size == 0:
        return True
    a = p01.plane.dim
    for _ in range(samples):
        c = coeffs @ rng.standard_normal(coeffs.shape[1])
        x01 = p01.plane.basis @ c[:a]
        x12 = p12.plane.basis @ c[a:]
        if np.linalg.norm(x01[2 * p01.n:] - x12[: 2 * p01.n]) > tol * max(1.0, np.linalg.norm(x01)):
            return False
        point = np.concatenate([x01[: 2 * p01.n], x12[2 * p01.n:]])
        if not p02.plane.contains(point, tol):
            return False
    return True


def restrict_boundary(p: PairPlane, N0_tangent: np.ndarray) -> LinearSubspace:
    """Second components of pair vectors whose first component lies in the boundary plane."""
    n = p.n
    space = SymplecticSpace(n)
    bp = boundary_plane(np.asarray(N0_tangent, dtype=float).reshape(n, -1))
    ann = null_space(bp.basis.T, 1e-12)
    coeffs = null_space(ann.T @ p.first, 1e-10)
    if coeffs.size == 0:
        raise DegeneracyError("restriction is empty")
    plane = LinearSubspace(space, orthonormal_span(p.second @ coeffs, 1e-8))
    if not is_lagrangian(plane, 1e-7):
        raise DegeneracyError(f"restricted plane has dimension {plane.dim}, expected {n}")
    return plane
