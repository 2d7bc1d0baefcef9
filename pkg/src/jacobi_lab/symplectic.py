"""Linear symplectic algebra on R^{2n} with numerically robust subspace arithmetic.

Vectors are ordered as z = (p, x) with the covector block first. The default
form is sigma(u, v) = u^T J v with J = [[0, I], [-I, 0]].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import total_ordering
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

#: Relative rank threshold used when no tolerance is passed explicitly.
DEFAULT_RTOL = 1e-8


class DimensionError(ValueError):
    """Raised when vectors or subspaces live in incompatible spaces."""


class NumericalDegeneracy(RuntimeError):
    """Raised when a computation produces a result of unexpected rank."""


class ChartDomainError(NumericalDegeneracy):
    """Raised when a plane is outside the affine chart requested."""


def standard_form(n: int) -> np.ndarray:
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass(frozen=True, eq=False)
class SymplecticSpace:
    """A real symplectic vector space of dimension ``2n``.

    Parameters
    ----------
    n : int
        Half dimension.
    form : ndarray, optional
        Antisymmetric invertible ``2n x 2n`` matrix. Defaults to the
        standard block form.
    """

    n: int
    form: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.n < 0:
            raise DimensionError("half dimension must be non-negative")
        form = standard_form(self.n) if self.form is None else np.asarray(self.form, dtype=float)
        if form.shape != (2 * self.n, 2 * self.n):
            raise DimensionError(f"form has shape {form.shape}, expected {(2 * self.n, 2 * self.n)}")
        scale = max(1.0, np.abs(form).max(initial=0.0))
        if not np.allclose(form, -form.T, atol=1e-10 * scale):
            raise ValueError("symplectic form must be antisymmetric")
        if self.n > 0 and np.linalg.matrix_rank(form) < 2 * self.n:
            raise ValueError("symplectic form must be nondegenerate")
        form = form.copy()
        form.setflags(write=False)
        object.__setattr__(self, "form", form)

    @property
    def dim(self) -> int:
        return 2 * self.n

    @classmethod
    def standard(cls, n: int) -> "SymplecticSpace":
        return cls(n)

    def compatible(self, other: "SymplecticSpace") -> bool:
        return self is other or (self.n == other.n and np.array_equal(self.form, other.form))


def symplectic_product(space: SymplecticSpace, u, v) -> float:
    """Return sigma(u, v) = u^T form v."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (space.dim,) or v.shape != (space.dim,):
        raise DimensionError(f"vectors must have length {space.dim}")
    return float(u @ space.form @ v)


# ---------------------------------------------------------------- bases


def orthonormal_span(vectors: np.ndarray, rtol: float = DEFAULT_RTOL, atol: float = 0.0) -> np.ndarray:
    """Orthonormal basis of the column span, with a relative rank cut."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2:
        raise DimensionError("expected a matrix of column vectors")
    if vectors.shape[1] == 0:
        return np.zeros((vectors.shape[0], 0))
    u, s, _ = np.linalg.svd(vectors, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((vectors.shape[0], 0))
    rank = int(np.sum(s > max(rtol * s[0], atol)))
    return u[:, :rank]


def null_space(matrix: np.ndarray, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Orthonormal basis of the right null space with a relative rank cut."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    m, k = matrix.shape
    if k == 0:
        return np.zeros((0, 0))
    if m == 0:
        return np.eye(k)
    _, s, vt = np.linalg.svd(matrix, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * smax)) if smax > 0 else 0
    return vt[rank:].T.copy()


@dataclass(frozen=True, eq=False)
class LinearSubspace:
    """A subspace held as an orthonormal basis matrix of shape ``(2n, d)``."""

    space: SymplecticSpace
    basis: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != self.space.dim:
            raise DimensionError(f"basis must have {self.space.dim} rows, got shape {basis.shape}")
        basis = basis.copy()
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def span(cls, space: SymplecticSpace, vectors, rtol: float = DEFAULT_RTOL) -> "LinearSubspace":
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        if vectors.shape[0] != space.dim:
            raise DimensionError(f"vectors must have {space.dim} rows, got {vectors.shape[0]}")
        return cls(space, orthonormal_span(vectors, rtol))

    @classmethod
    def zero(cls, space: SymplecticSpace) -> "LinearSubspace":
        return cls(space, np.zeros((space.dim, 0)))

    @classmethod
    def whole(cls, space: SymplecticSpace) -> "LinearSubspace":
        return cls(space, np.eye(space.dim))

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def contains(self, v, tol: float = 1e-8) -> bool:
        v = np.asarray(v, dtype=float)
        r = v - self.basis @ (self.basis.T @ v)
        return bool(np.linalg.norm(r) <= tol * max(1.0, np.linalg.norm(v)))

    def form_matrix(self) -> np.ndarray:
        """Gram matrix of the symplectic form on the stored basis."""
        return self.basis.T @ self.space.form @ self.basis

    def __repr__(self) -> str:
        return f"LinearSubspace(dim={self.dim}, ambient={self.space.dim})"


def _check_same(a: LinearSubspace, b: LinearSubspace) -> None:
    if not a.space.compatible(b.space):
        raise DimensionError("subspaces live in different symplectic spaces")


def subspace_sum(a: LinearSubspace, b: LinearSubspace, rtol: float = DEFAULT_RTOL) -> LinearSubspace:
    _check_same(a, b)
    return LinearSubspace.span(a.space, np.hstack([a.basis, b.basis]), rtol)


def intersect(a: LinearSubspace, b: LinearSubspace, tol: float = DEFAULT_RTOL) -> LinearSubspace:
    """Intersection via the null space of the stacked system [A, -B].

    A singular value of the stacked system counts as zero when it is below
    ``tol`` times the largest one.
    """
    _check_same(a, b)
    if a.dim == 0 or b.dim == 0:
        return LinearSubspace.zero(a.space)
    stacked = np.hstack([a.basis, -b.basis])
    _, s, vt = np.linalg.svd(stacked, full_matrices=True)
    smax = s[0]
    sv = np.zeros(stacked.shape[1])
    sv[: s.size] = s
    mask = sv <= tol * smax
    coeffs = vt[mask].T
    if coeffs.shape[1] == 0:
        return LinearSubspace.zero(a.space)
    vecs = a.basis @ coeffs[: a.dim]
    return LinearSubspace(a.space, orthonormal_span(vecs, 1e-6))


def intersect_many(subspaces, tol: float = DEFAULT_RTOL) -> LinearSubspace:
    subspaces = list(subspaces)
    if not subspaces:
        raise ValueError("need at least one subspace")
    out = subspaces[0]
    for s in subspaces[1:]:
        if out.dim == 0:
            break
        out = intersect(out, s, tol)
    return out


def orthogonal_complement(a: LinearSubspace) -> LinearSubspace:
    """Euclidean orthogonal complement inside the ambient space."""
    return LinearSubspace(a.space, null_space(a.basis.T) if a.dim else np.eye(a.space.dim))


def orthogonal_complement_in(sub: LinearSubspace, outer: LinearSubspace) -> LinearSubspace:
    """Euclidean complement of ``sub`` inside ``outer`` (sub assumed contained)."""
    _check_same(sub, outer)
    if sub.dim == 0:
        return outer
    reduced = outer.basis.T @ sub.basis
    comp = null_space(reduced.T)
    if comp.size == 0:
        return LinearSubspace.zero(outer.space)
    return LinearSubspace(outer.space, orthonormal_span(outer.basis @ comp))


def skew_complement(g: LinearSubspace, rtol: float = DEFAULT_RTOL) -> LinearSubspace:
    """Skew-orthogonal complement {l : sigma(l, m) = 0 for all m in g}."""
    if g.dim == 0:
        return LinearSubspace.whole(g.space)
    constraint = g.basis.T @ g.space.form
    return LinearSubspace(g.space, null_space(constraint, rtol))


def is_isotropic(g: LinearSubspace, tol: float = DEFAULT_RTOL) -> bool:
    if g.dim == 0:
        return True
    return bool(np.abs(g.form_matrix()).max() <= tol * max(1.0, np.abs(g.space.form).max()))


def is_lagrangian(plane: LinearSubspace, tol: float = DEFAULT_RTOL) -> bool:
    return plane.dim == plane.space.n and is_isotropic(plane, tol)


@dataclass(frozen=True, eq=False)
class Reduction:
    """Symplectic reduction of an isotropic subspace.

    ``complement`` is an orthonormal basis of the Euclidean complement of the
    isotropic subspace inside its skew complement; ``project`` sends vectors of
    the skew complement to coordinates on the reduced space.
    """

    isotropic: LinearSubspace
    complement: np.ndarray
    space: SymplecticSpace

    def project(self, vectors: np.ndarray) -> np.ndarray:
        return self.complement.T @ np.asarray(vectors, dtype=float)

    def lift(self, coords: np.ndarray) -> np.ndarray:
        return self.complement @ np.asarray(coords, dtype=float)


def symplectic_reduction(g: LinearSubspace, tol: float = DEFAULT_RTOL) -> Reduction:
    """Reduce by an isotropic subspace, returning the quotient space data."""
    if not is_isotropic(g, max(tol, 1e-8)):
        raise ValueError("symplectic reduction needs an isotropic subspace")
    outer = skew_complement(g, tol)
    comp = orthogonal_complement_in(g, outer).basis
    form = comp.T @ g.space.form @ comp
    form = 0.5 * (form - form.T)
    half = comp.shape[1] // 2
    return Reduction(g, comp, SymplecticSpace(half, form))


# ------------------------------------------------------- quadratic forms


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.size == 0:
            m = np.zeros((0, 0))
        if m.shape[0] != m.shape[1]:
            raise DimensionError("quadratic form matrix must be square")
        scale = max(1.0, np.abs(m).max(initial=0.0))
        if not np.allclose(m, m.T, atol=1e-8 * scale):
            raise ValueError("quadratic form matrix must be symmetric")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def signature(q, tol: float = DEFAULT_RTOL) -> Tuple[int, int, int]:
    """Return (n_plus, n_minus, n_zero) with an absolute eigenvalue threshold."""
    m = q.matrix if isinstance(q, QuadraticForm) else np.asarray(q, dtype=float)
    if m.size == 0:
        return 0, 0, 0
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    n_plus = int(np.sum(w > tol))
    n_minus = int(np.sum(w < -tol))
    return n_plus, n_minus, int(w.size - n_plus - n_minus)


def pseudoinverse(a, tol: float = DEFAULT_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse with a relative singular value cut."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    return sla.pinv(a, atol=0.0, rtol=tol)


# ------------------------------------------------------------ charts


def _pair_matrix(delta: LinearSubspace, pi: LinearSubspace) -> np.ndarray:
    # sigma(pi_i, delta_j); invertible exactly when the two planes are transversal
    return pi.basis.T @ pi.space.form @ delta.basis


def chart_coordinates(plane: LinearSubspace, delta: LinearSubspace, pi: LinearSubspace, tol: float = DEFAULT_RTOL) -> np.ndarray:
    """Symmetric matrix S with plane = {d(x) + pi(S x)} in the splitting pi + delta.

    ``x`` are coordinates on ``delta`` and ``S x`` coordinates on ``pi`` taken
    in the basis of ``pi`` dual to the basis of ``delta`` under sigma, which
    makes S symmetric exactly when the plane is Lagrangian.
    """
    _check_same(plane, delta)
    _check_same(plane, pi)
    basis = np.hstack([delta.basis, pi.basis])
    s = np.linalg.svd(basis, compute_uv=False)
    if s[-1] <= tol * s[0]:
        raise ChartDomainError("delta and pi are not complementary")
    coeffs = np.linalg.solve(basis, plane.basis)
    n = delta.dim
    x_part, y_part = coeffs[:n], coeffs[n:]
    sx = np.linalg.svd(x_part, compute_uv=False)
    if sx.size == 0 or sx[-1] <= tol * max(1.0, sx[0]):
        raise ChartDomainError("plane is not transversal to pi")
    # pairing the pi-part against delta turns the slope into a symmetric matrix
    m = _pair_matrix(delta, pi)
    s_mat = (m.T @ y_part) @ np.linalg.inv(x_part)
    if np.allclose(s_mat, s_mat.T, atol=1e-6 * max(1.0, np.abs(s_mat).max())):
        s_mat = 0.5 * (s_mat + s_mat.T)
    return s_mat


def plane_from_graph(s_mat, delta: LinearSubspace, pi: LinearSubspace) -> LinearSubspace:
    """Inverse of :func:`chart_coordinates`."""
    s_mat = np.atleast_2d(np.asarray(s_mat, dtype=float))
    m = _pair_matrix(delta, pi)
    y_part = np.linalg.solve(m.T, s_mat)
    vecs = delta.basis + pi.basis @ y_part
    return LinearSubspace.span(delta.space, vecs)


def plane_distance(a: LinearSubspace, b: LinearSubspace) -> float:
    """Frobenius norm of the difference of the orthogonal projectors."""
    _check_same(a, b)
    if a.dim != b.dim:
        raise DimensionError(f"planes have different dimensions {a.dim} and {b.dim}")
    return float(np.linalg.norm(a.projector() - b.projector()))


def fiber_plane(space: SymplecticSpace) -> LinearSubspace:
    """The plane {(xi, 0)} spanned by the covector coordinates."""
    n = space.n
    return LinearSubspace(space, np.vstack([np.eye(n), np.zeros((n, n))]))


def base_plane(space: SymplecticSpace) -> LinearSubspace:
    """The plane {(0, x)} spanned by the state coordinates."""
    n = space.n
    return LinearSubspace(space, np.vstack([np.zeros((n, n)), np.eye(n)]))


def random_lagrangian(space: SymplecticSpace, rng: Optional[np.random.Generator] = None) -> LinearSubspace:
    """Lagrangian plane drawn from the unitarily invariant distribution.

    Only valid for the standard form.
    """
    rng = np.random.default_rng(rng)
    n = space.n
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return LinearSubspace(space, np.vstack([q.real, q.imag]))


# ---------------------------------------------------------- half integers


@total_ordering
@dataclass(frozen=True)
class HalfInteger:
    """Exact half-integer stored as twice its value."""

    doubled: int

    def __post_init__(self):
        if not isinstance(self.doubled, (int, np.integer)):
            raise TypeError("doubled value must be an integer")
        object.__setattr__(self, "doubled", int(self.doubled))

    @classmethod
    def from_int(cls, k: int) -> "HalfInteger":
        return cls(2 * int(k))

    @property
    def value(self) -> float:
        return self.doubled / 2

    def is_integer(self) -> bool:
        return self.doubled % 2 == 0

    def floor(self) -> int:
        return self.doubled // 2

    def _coerce(self, other) -> "HalfInteger":
        if isinstance(other, HalfInteger):
            return other
        if isinstance(other, (int, np.integer)):
            return HalfInteger(2 * int(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return HalfInteger(self.doubled + other.doubled)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return HalfInteger(self.doubled - other.doubled)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return HalfInteger(other.doubled - self.doubled)

    def __neg__(self):
        return HalfInteger(-self.doubled)

    def __eq__(self, other):
        if isinstance(other, float):
            return self.value == other
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self.doubled == other.doubled

    def __lt__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self.doubled < other.doubled

    def __hash__(self):
        return hash(("HalfInteger", self.doubled))

    def __int__(self):
        if not self.is_integer():
            raise ValueError(f"{self} is not an integer")
        return self.doubled // 2

    def __float__(self):
        return self.value

    def __repr__(self):
        if self.is_integer():
            return f"HalfInteger({self.doubled // 2})"
        return f"HalfInteger({self.doubled}/2)"
