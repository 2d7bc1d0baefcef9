"""Linearized extremal data and its pullback to a fixed symplectic frame.

A problem is described by time dependent matrices C(t) (linearized Hamiltonian
system), D(t) (control injection directions) and b(t) (second derivative of
the Hamiltonian in the control). The moving frame removes the drift so that
Jacobi fields satisfy d(eta)/dt = X(t) v(t).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .symplectic import (
    LinearSubspace,
    NumericalDegeneracy,
    SymplecticSpace,
    null_space,
    standard_form,
)

MatrixField = Union[np.ndarray, Callable[[float], np.ndarray]]


class IntegrationError(NumericalDegeneracy):
    """The fundamental matrix lost symplecticity beyond tolerance."""


def _as_field(value: MatrixField) -> Callable[[float], np.ndarray]:
    if callable(value):
        return value
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return lambda t, _a=arr: _a


@dataclass(frozen=True, eq=False)
class ProblemLinearization:
    """Linearization of an extremal.

    Parameters
    ----------
    n : int
        State dimension; phase vectors have length ``2n`` ordered as (p, x).
    k : int
        Control dimension.
    C, D, b : ndarray or callable
        Constant matrices or callables ``t -> matrix`` of shapes
        ``(2n, 2n)``, ``(2n, k)`` and ``(k, k)``.
    T : float
        Horizon.
    N0_tangent : ndarray, optional
        ``(n, d)`` basis of the tangent space of the initial manifold;
        empty means a fixed initial point.
    P : ndarray or callable, optional
        Orthogonal projector onto admissible two-sided control variations.
    """

    n: int
    k: int
    C: MatrixField
    D: MatrixField
    b: MatrixField
    T: float = 1.0
    N0_tangent: np.ndarray = field(default=None)  # type: ignore[assignment]
    P: Optional[MatrixField] = None
    name: str = "custom"

    def __post_init__(self):
        tangent = np.zeros((self.n, 0)) if self.N0_tangent is None else np.asarray(self.N0_tangent, dtype=float)
        if tangent.size == 0:
            tangent = np.zeros((self.n, 0))
        if tangent.ndim != 2 or tangent.shape[0] != self.n:
            raise ValueError(f"N0 tangent basis must have {self.n} rows")
        object.__setattr__(self, "N0_tangent", tangent)
        for label, value, shape in (("C", self.C, (2 * self.n, 2 * self.n)),
                                    ("D", self.D, (2 * self.n, self.k)),
                                    ("b", self.b, (self.k, self.k))):
            probe = np.asarray(_as_field(value)(0.0), dtype=float)
            if probe.shape != shape:
                raise ValueError(f"{label} has shape {probe.shape}, expected {shape}")
        # structural invariants, probed at t = 0
        c0, b0 = self.C_at(0.0), self.b_at(0.0)
        J = standard_form(self.n)
        if np.abs(c0.T @ J + J @ c0).max(initial=0.0) > 1e-8 * max(1.0, np.abs(c0).max(initial=0.0)):
            raise ValueError("C is not infinitesimally symplectic")
        if not np.allclose(b0, b0.T, atol=1e-8 * max(1.0, np.abs(b0).max(initial=0.0))):
            raise ValueError("b must be symmetric")
        p0 = self.P_at(0.0)
        if p0 is not None:
            if p0.shape != (self.k, self.k):
                raise ValueError(f"P has shape {p0.shape}, expected {(self.k, self.k)}")
            if not (np.allclose(p0 @ p0, p0, atol=1e-8) and np.allclose(p0, p0.T, atol=1e-8)):
                raise ValueError("P must be an orthogonal projector")
        if self.T <= 0:
            raise ValueError("horizon must be positive")

    @property
    def space(self) -> SymplecticSpace:
        return SymplecticSpace(self.n)

    @property
    def constant(self) -> bool:
        return not callable(self.C)

    def C_at(self, t: float) -> np.ndarray:
        return np.asarray(_as_field(self.C)(t), dtype=float)

    def D_at(self, t: float) -> np.ndarray:
        return np.asarray(_as_field(self.D)(t), dtype=float)

    def b_at(self, t: float) -> np.ndarray:
        return np.asarray(_as_field(self.b)(t), dtype=float)

    def P_at(self, t: float) -> Optional[np.ndarray]:
        if self.P is None:
            return None
        return np.asarray(_as_field(self.P)(t), dtype=float)

    def boundary_plane(self) -> LinearSubspace:
        return boundary_plane(self.N0_tangent)


def boundary_plane(N0_tangent: np.ndarray) -> LinearSubspace:
    """The plane (annihilator of T N0) x (T N0) inside R^{2n}."""
    tangent = np.asarray(N0_tangent, dtype=float)
    n = tangent.shape[0]
    space = SymplecticSpace(n)
    if tangent.size == 0:
        tangent = np.zeros((n, 0))
    ann = null_space(tangent.T) if tangent.shape[1] else np.eye(n)
    tan = np.linalg.qr(tangent)[0] if tangent.shape[1] else np.zeros((n, 0))
    top = np.hstack([ann, np.zeros((n, tan.shape[1]))])
    bottom = np.hstack([np.zeros((n, ann.shape[1])), tan])
    plane = LinearSubspace.span(space, np.vstack([top, bottom]))
    if plane.dim != n:
        raise ValueError("N0 tangent basis is rank deficient")
    return plane


# ------------------------------------------------------------ quadrature


def gauss_legendre(order: int):
    if not 1 <= order <= 10:
        raise ValueError("quadrature order must lie in [1, 10]")
    return np.polynomial.legendre.leggauss(order)


def _mapped(nodes: np.ndarray, weights: np.ndarray, a: float, b: float):
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), half * weights


@dataclass(frozen=True, eq=False)
class MovingFrameFields:
    """Pulled back control directions and interval integrals on a partition.

    For interval ``j`` with endpoints ``grid[j], grid[j+1]``:

    * ``M[j]`` is the integral of X over the interval,
    * ``K[j]`` is the integral of (int_{t_j}^tau X)^T J X(tau) d tau,
    * ``Bint[j]`` is the integral of b.

    ``K`` is stored with its antisymmetric part fixed to ``M^T J M / 2``,
    which is the exact value for any X; only the symmetric part carries
    quadrature error.
    """

    grid: np.ndarray
    X: np.ndarray
    b: np.ndarray
    M: np.ndarray
    K: np.ndarray
    Bint: np.ndarray
    boundary_plane: LinearSubspace
    N0_tangent: np.ndarray
    order: int = 4

    @property
    def n(self) -> int:
        return self.boundary_plane.space.n

    @property
    def k(self) -> int:
        return self.M.shape[2]

    @property
    def space(self) -> SymplecticSpace:
        return self.boundary_plane.space

    @property
    def intervals(self) -> int:
        return len(self.grid) - 1

    def restrict(self, stop: int) -> "MovingFrameFields":
        """Fields on the first ``stop`` intervals."""
        return replace(self, grid=self.grid[: stop + 1], X=self.X[: stop + 1], b=self.b[: stop + 1],
                       M=self.M[:stop], K=self.K[:stop], Bint=self.Bint[:stop])


def _fundamental(prob: ProblemLinearization, times: np.ndarray) -> np.ndarray:
    """G(t) with G' = C G, G(0) = I at sorted unique times."""
    dim = 2 * prob.n
    if prob.constant:
        c = prob.C_at(0.0)
        return sla.expm(c[None] * times[:, None, None])
    def rhs(t, y):
        return (prob.C_at(t) @ y.reshape(dim, dim)).ravel()
    sol = solve_ivp(rhs, (0.0, float(times[-1]) if times.size else 0.0), np.eye(dim).ravel(),
                    method="DOP853", t_eval=times, rtol=1e-12, atol=1e-12)
    if not sol.success:
        raise IntegrationError(sol.message)
    return sol.y.T.reshape(-1, dim, dim)


def _check_symplectic(G: np.ndarray, tol: float = 1e-7) -> None:
    J = standard_form(G.shape[1] // 2)
    err = np.max(np.linalg.norm(np.einsum("tji,jk,tkl->til", G, J, G) - J, axis=(1, 2)))
    if err > tol * max(1.0, np.max(np.linalg.norm(G, axis=(1, 2))) ** 2):
        raise IntegrationError(f"fundamental matrix lost symplecticity (error {err:.2e})")


def frame_matrices(prob: ProblemLinearization, times) -> np.ndarray:
    """Fundamental matrices G(t) at the requested times."""
    times = np.asarray(times, dtype=float)
    uniq, inv = np.unique(times, return_inverse=True)
    G = _fundamental(prob, uniq)
    _check_symplectic(G)
    return G[inv]


def _pullback(prob: ProblemLinearization, times: np.ndarray):
    """X(t) = G(t)^{-1} D(t) P(t) and b(t) = P b P at the given times."""
    G = frame_matrices(prob, times)
    J = standard_form(prob.n)
    # G is symplectic, so its inverse is -J G^T J
    ginv = -np.einsum("ab,tcb,cd->tad", J, G, J)
    if prob.constant and not callable(prob.D) and not callable(prob.b) and not callable(prob.P):
        D, bt, proj = prob.D_at(0.0), prob.b_at(0.0), prob.P_at(0.0)
        if proj is not None:
            D, bt = D @ proj, proj.T @ bt @ proj
        X = ginv @ D
        B = np.broadcast_to(0.5 * (bt + bt.T), (times.size, prob.k, prob.k)).copy()
        return X, B
    X = np.empty((times.size, 2 * prob.n, prob.k))
    B = np.empty((times.size, prob.k, prob.k))
    for i, t in enumerate(times):
        x = ginv[i] @ prob.D_at(t)
        bt = prob.b_at(t)
        proj = prob.P_at(t)
        if proj is not None:
            x = x @ proj
            bt = proj.T @ bt @ proj
        X[i] = x
        B[i] = 0.5 * (bt + bt.T)
    return X, B


def moving_frame(prob: ProblemLinearization, grid, order: int = 4) -> MovingFrameFields:
    """Sample the pulled back fields and their interval integrals.

    Parameters
    ----------
    prob : ProblemLinearization
        Problem data.
    grid : array_like
        Strictly increasing partition of ``[0, t]`` starting at zero.
    order : int
        Number of Gauss-Legendre nodes per interval.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid[0] != 0.0:
        raise ValueError("grid must start at 0")
    if grid[-1] > prob.T * (1 + 1e-12):
        raise ValueError("grid exceeds the horizon")
    nodes, weights = gauss_legendre(order)
    nint = grid.size - 1
    outer = np.empty((nint, order))
    outer_w = np.empty((nint, order))
    inner = np.empty((nint, order, order))
    inner_w = np.empty((nint, order, order))
    for j in range(nint):
        a, b = grid[j], grid[j + 1]
        outer[j], outer_w[j] = _mapped(nodes, weights, a, b)
        for q in range(order):
            inner[j, q], inner_w[j, q] = _mapped(nodes, weights, a, outer[j, q])
    all_times = np.concatenate([grid, outer.ravel(), inner.ravel()])
    X_all, b_all = _pullback(prob, all_times)
    ng = grid.size
    X_grid, b_grid = X_all[:ng], b_all[:ng]
    X_out = X_all[ng: ng + outer.size].reshape(nint, order, 2 * prob.n, prob.k)
    b_out = b_all[ng: ng + outer.size].reshape(nint, order, prob.k, prob.k)
    X_in = X_all[ng + outer.size:].reshape(nint, order, order, 2 * prob.n, prob.k)

    J = standard_form(prob.n)
    M = np.einsum("jq,jqak->jak", outer_w, X_out)
    F = np.einsum("jqr,jqrak->jqak", inner_w, X_in)
    K = np.einsum("jq,jqak,ab,jqbl->jkl", outer_w, F, J, X_out)
    anti = 0.5 * np.einsum("jak,ab,jbl->jkl", M, J, M)
    K = 0.5 * (K + np.transpose(K, (0, 2, 1))) + anti
    Bint = np.einsum("jq,jqkl->jkl", outer_w, b_out)
    return MovingFrameFields(grid=grid, X=X_grid, b=b_grid, M=M, K=K, Bint=Bint,
                             boundary_plane=prob.boundary_plane(), N0_tangent=prob.N0_tangent,
                             order=order)


# --------------------------------------------------------------- problems


def lq(A, B, W, R, T: float = 1.0, N0=None, name: str = "lq") -> ProblemLinearization:
    """Linear-quadratic problem x' = A x + B u with running cost (u R u + x W x)/2.

    The Hamiltonian system in (p, x) ordering has C = [[-A^T, W], [0, A]],
    the control directions are D = [[0], [B]] and b = -R.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, k = B.shape
    if A.shape != (n, n) or W.shape != (n, n) or R.shape != (k, k):
        raise ValueError("inconsistent LQ matrix shapes")
    if not np.allclose(W, W.T) or not np.allclose(R, R.T):
        raise ValueError("W and R must be symmetric")
    if np.linalg.eigvalsh(R).min() <= 0:
        raise ValueError("R must be positive definite")
    C = np.block([[-A.T, W], [np.zeros((n, n)), A]])
    D = np.vstack([np.zeros((n, k)), B])
    return ProblemLinearization(n=n, k=k, C=C, D=D, b=-R, T=T, N0_tangent=N0, name=name)


def free_particle(T: float = 10.0) -> ProblemLinearization:
    return lq(0.0, 1.0, 0.0, 1.0, T=T, name="free_particle")


def harmonic_oscillator(T: float = 10.0) -> ProblemLinearization:
    return lq(0.0, 1.0, -1.0, 1.0, T=T, name="harmonic_oscillator")


def isotropic_oscillator_2d(T: float = 10.0) -> ProblemLinearization:
    return lq(np.zeros((2, 2)), np.eye(2), -np.eye(2), np.eye(2), T=T, name="isotropic_oscillator_2d")


BUILTINS = {
    "free_particle": free_particle,
    "harmonic_oscillator": harmonic_oscillator,
    "isotropic_oscillator_2d": isotropic_oscillator_2d,
    "lq": lq,
}


def builtin(name: str, **params) -> ProblemLinearization:
    """Instantiate a named example problem."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)


def augment_time(prob: ProblemLinearization) -> ProblemLinearization:
    """Add the clock as a state with dynamics t' = 1 + u0 and u0 as a control.

    The reference control u0 = 0 leaves the extremal unchanged. Phase
    coordinates become (p, p_t, x, t) and controls (u, u0). The new control
    direction is the Hamiltonian vector field of p_t, i.e. d/dt, and the
    clock carries no second order cost.
    """
    n, k = prob.n, prob.k
    n2, k2 = n + 1, k + 1

    def embed_C(c):
        out = np.zeros((2 * n2, 2 * n2))
        idx = list(range(n)) + list(range(n2, n2 + n))
        out[np.ix_(idx, idx)] = c
        return out

    def embed_D(d):
        out = np.zeros((2 * n2, k2))
        out[:n, :k] = d[:n]
        out[n2:n2 + n, :k] = d[n:]
        out[2 * n2 - 1, k] = 1.0
        return out

    def embed_b(b):
        out = np.zeros((k2, k2))
        out[:k, :k] = b
        return out

    def embed_P(p):
        out = np.zeros((k2, k2))
        out[:k, :k] = p
        out[k, k] = 1.0
        return out

    def lift(fn, f):
        if callable(f):
            return lambda t: fn(np.asarray(f(t), dtype=float))
        return fn(np.asarray(f, dtype=float))

    tangent = np.zeros((n2, prob.N0_tangent.shape[1]))
    tangent[:n] = prob.N0_tangent
    P = None if prob.P is None else lift(embed_P, prob.P)
    return ProblemLinearization(n=n2, k=k2, C=lift(embed_C, prob.C), D=lift(embed_D, prob.D),
                                b=lift(embed_b, prob.b), T=prob.T, N0_tangent=tangent, P=P,
                                name=prob.name + "+time")
