"""Second variation on piecewise constant variations and Morse-type index formulas."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from .indices import LiftedPlane, _triple_form, form_signature, leray, lift_curve, positive_maslov
from .lderiv import JacobiCurve, jacobi_curve
from .linearization import MovingFrameFields
from .symplectic import (
    DEFAULT_RTOL,
    HalfInteger,
    LinearSubspace,
    NumericalDegeneracy,
    fiber_plane,
    intersect,
    intersect_many,
    null_space,
    orthogonal_complement_in,
    orthonormal_span,
    signature,
    standard_form,
    subspace_sum,
)


#: Relative rank tolerance for intersections of curve samples. Step planes
#: carry round-off near 1e-14, while samples close to the start of a weakly
#: controlled curve sit only about 1e-8 away from pi.
INDEX_RTOL = 1e-13


@dataclass(frozen=True, eq=False)
class DiscretizedHessian:
    """Bilinear data of the second variation on V_D.

    ``Q`` is the symmetric matrix of the quadratic form
    int [ sigma(zeta + int X v, X v) + b(v, v) ]; the Hessian is ``-Q`` restricted to the kernel of ``A``. Variables
    are the tangent coordinates of the initial point followed by the constant
    controls on each interval. ``weights`` holds the L2 norms of the unit
    variations and is used to normalize before counting eigenvalues.
    """

    Q: np.ndarray
    A: np.ndarray
    partition: np.ndarray
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.Q.shape[0]


def hessian_assemble(fields: MovingFrameFields, stop: Optional[int] = None) -> DiscretizedHessian:
    """Assemble the second variation on the first ``stop`` intervals."""
    stop = fields.intervals if stop is None else stop
    n, k = fields.n, fields.k
    J = standard_form(n)
    tangent = fields.N0_tangent
    tangent = np.linalg.qr(tangent)[0] if tangent.shape[1] else np.zeros((n, 0))
    d0 = tangent.shape[1]
    Z = np.vstack([np.zeros((n, d0)), tangent])
    dim = d0 + stop * k
    Q = np.zeros((dim, dim))
    A = np.zeros((n, dim))
    A[:, :d0] = tangent
    weights = np.ones(dim)

    ctrl = slice(d0, dim)
    if stop:
        M = np.asarray(fields.M[:stop])
        JM = np.einsum("ab,jbl->jal", J, M)
        # pairwise blocks M_i^T J M_j, kept for i < j only
        pair = np.einsum("iak,jal->ikjl", M, JM).reshape(stop * k, stop * k)
        upper = np.kron(np.triu(np.ones((stop, stop)), 1), np.ones((k, k)))
        Q[ctrl, ctrl] = pair * upper
        Q[ctrl, ctrl] += sla.block_diag(*(fields.K[:stop] + fields.Bint[:stop]))
        Q[:d0, ctrl] = (Z.T @ JM.transpose(1, 0, 2).reshape(2 * n, stop * k))
        A[:, ctrl] = M[:, n:].transpose(1, 0, 2).reshape(n, stop * k)
        weights[ctrl] = np.repeat(np.sqrt(np.diff(fields.grid[: stop + 1])), k)
    # only pairs i <= j were filled, so the symmetric part is the form
    Q = 0.5 * (Q + Q.T)
    return DiscretizedHessian(Q, A, np.asarray(fields.grid[: stop + 1]), weights)


def restricted_hessian(h: DiscretizedHessian) -> np.ndarray:
    """Symmetric matrix of -Q on an orthonormal basis of ker A (L2-normalized)."""
    scale = 1.0 / h.weights
    a = h.A * scale
    ker = null_space(a, DEFAULT_RTOL) if a.size else np.eye(h.dim)
    basis = scale[:, None] * ker
    hess = -basis.T @ h.Q @ basis
    return 0.5 * (hess + hess.T)


def brute_force_index(h: DiscretizedHessian, tol: float = DEFAULT_RTOL) -> Tuple[int, int]:
    """Negative index and kernel dimension of the Hessian by eigenvalue counting.

    Eigenvalues are compared with ``tol`` times the spectral radius.
    """
    m = restricted_hessian(h)
    if m.size == 0:
        return 0, 0
    w = np.linalg.eigvalsh(m)
    thr = tol * max(np.abs(w).max(), 1e-300)
    return int(np.sum(w < -thr)), int(np.sum(np.abs(w) <= thr))


def constraint_codim(h: DiscretizedHessian) -> int:
    """Codimension of the image of the end-point differential."""
    if h.A.size == 0:
        return h.A.shape[0]
    s = np.linalg.svd(h.A * (1.0 / h.weights), compute_uv=False)
    rank = int(np.sum(s > DEFAULT_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return h.A.shape[0] - rank


# ------------------------------------------------------------ formulas


def extended_planes(curve: JacobiCurve, pi: LinearSubspace,
                    boundary_plane: Optional[LinearSubspace] = None) -> List[LinearSubspace]:
    """Curve samples padded by pi before the start and after the end.

    The sample at time zero is replaced by ``boundary_plane`` when given.
    """
    first = curve.planes[0] if boundary_plane is None else boundary_plane
    return [pi, first] + list(curve.planes[1:]) + [pi]


def _as_int(value: HalfInteger, what: str) -> int:
    if not value.is_integer():
        raise NumericalDegeneracy(f"{what} produced the half-integer {value}")
    return int(value)


def morse_index_piecewise(curve: JacobiCurve, pi: LinearSubspace, boundary_plane: LinearSubspace,
                          tol: float = DEFAULT_RTOL) -> int:
    """Negative index of the Hessian from consecutive positive Maslov indices."""
    planes = extended_planes(curve, pi, boundary_plane)
    total = HalfInteger(0)
    for a, b in zip(planes, planes[1:]):
        total = total + positive_maslov(a, pi, b, tol)
    common = intersect_many(planes, tol).dim
    return _as_int(total + common - pi.space.n, "piecewise index formula")


def lift_extended(curve: JacobiCurve, pi: LinearSubspace, boundary_plane: LinearSubspace,
                  seed: int = 0, tol: float = DEFAULT_RTOL) -> List[LiftedPlane]:
    """Lift the padded curve starting from the base lift of pi."""
    planes = extended_planes(curve, pi, boundary_plane)
    return lift_curve(planes[1:], LiftedPlane.at_base(pi), seed, tol)


def morse_index_leray(lifted: Sequence[LiftedPlane], pi: LinearSubspace,
                      tol: float = DEFAULT_RTOL) -> int:
    """Negative index from the Leray indices of the endpoints of the padded lift.

    ``lifted`` runs from the lift of pi before the start to the lift of pi
    after the end; the samples in between are the curve.
    """
    if len(lifted) < 2:
        raise ValueError("missing lifts")
    base = LiftedPlane.at_base(pi)
    diff = leray(lifted[0], base, tol) - leray(lifted[-1], base, tol)
    if diff % 2:
        raise NumericalDegeneracy(f"odd Leray difference {diff}")
    common = intersect_many([lp.plane for lp in lifted[1:-1]] + [pi], tol).dim
    return diff // 2 + common - pi.space.n


def conjugate_points(curve: JacobiCurve, pi: LinearSubspace,
                     tol: float = DEFAULT_RTOL) -> List[Tuple[float, int]]:
    """Times where the curve meets pi, with multiplicities.

    A sample lying on the Maslov train contributes its intersection dimension.
    Crossings strictly between samples are detected through the positive
    inertia of the triple form of consecutive samples. Events at adjacent
    samples or intervals are merged into one event at the midpoint.
    """
    times, planes = curve.times, curve.planes
    events = []  # (slot, time, multiplicity); slot 2i for sample i, 2i+1 for interval i
    hits = [intersect(p, pi, tol).dim for p in planes]
    for i, (t, d) in enumerate(zip(times, hits)):
        if d and i > 0:
            events.append((2 * i, t, d))
    for i in range(len(planes) - 1):
        a, b = planes[i], planes[i + 1]
        domain = intersect(subspace_sum(a, b, tol), pi, tol)
        common = intersect_many([a, b, pi], tol)
        quotient = orthogonal_complement_in(common, domain)
        n_plus, _, _ = form_signature(_triple_form(a, b, quotient.basis))
        if n_plus:
            events.append((2 * i + 1, 0.5 * (times[i] + times[i + 1]), n_plus))
    events.sort()
    merged: List[Tuple[float, int]] = []
    run: list = []
    for ev in events:
        if run and ev[0] - run[-1][0] > 1:
            merged.append(_merge(run))
            run = []
        run.append(ev)
    if run:
        merged.append(_merge(run))
    return merged


def _merge(run) -> Tuple[float, int]:
    t = 0.5 * (run[0][1] + run[-1][1])
    return float(t), int(max(ev[2] for ev in run))


def kernel_dim_via_curve(plane_t: LinearSubspace, pi: LinearSubspace, degeneracy_correction: int = 0,
                         tol: float = DEFAULT_RTOL) -> int:
    """Kernel dimension of the Hessian from the intersection of the endpoint plane with pi."""
    return intersect(plane_t, pi, tol).dim + int(degeneracy_correction)


def index_jump_check(plane_1: LinearSubspace, plane_2: LinearSubspace, pi: LinearSubspace,
                     ind1: int, ind2: int, tol: float = DEFAULT_RTOL) -> bool:
    """Check ind2 - ind1 >= ind_pi(L(V1), L(V2)) for nested variation spaces."""
    return ind2 - ind1 >= positive_maslov(plane_1, pi, plane_2, tol).floor()


class Verdict(str, enum.Enum):
    NOT_OPTIMAL = "NOT_OPTIMAL"
    INCONCLUSIVE = "INCONCLUSIVE"


def optimality_certificate(neg_index: int, codim_image: int) -> Verdict:
    """Necessary-condition verdict from the negative index of the Hessian.

    ``codim_image`` is the codimension of the image of the differential of
    the pair (end-point map, cost). A vanishing index never certifies
    anything, so (0, 0) is inconclusive.
    """
    if neg_index > 0 and neg_index >= codim_image:
        return Verdict.NOT_OPTIMAL
    return Verdict.INCONCLUSIVE


# ---------------------------------------------- quadratic form identities


def positive_index(Q: np.ndarray, tol: float = 1e-9) -> int:
    if Q.size == 0:
        return 0
    w = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    return int(np.sum(w > tol * max(1.0, np.abs(w).max())))


def _restrict(Q: np.ndarray, V: np.ndarray) -> np.ndarray:
    return V.T @ Q @ V


def _kernel(m: np.ndarray, scale: float, rtol: float = 1e-10) -> np.ndarray:
    """Null space of ``m`` with singular values cut at ``rtol * scale``.

    Products such as V^T Q can vanish up to round-off, so the cut is taken
    against the size of the factors rather than of the product.
    """
    if m.shape[0] == 0:
        return np.eye(m.shape[1])
    _, s, vt = np.linalg.svd(m)
    rank = int(np.sum(s > rtol * max(scale, 1e-300)))
    return vt[rank:].T


def _scale(*mats: np.ndarray) -> float:
    return float(np.prod([max(np.linalg.norm(m, 2), 1.0) if m.size else 1.0 for m in mats]))


def q_orthogonal(Q: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Orthonormal basis of {x : Q(x, y) = 0 for all y in span V}."""
    if V.shape[1] == 0:
        return np.eye(Q.shape[0])
    return _kernel(V.T @ Q.T, _scale(Q))


def _intersect_cols(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] == 0 or b.shape[1] == 0:
        return np.zeros((a.shape[0], 0))
    ns = null_space(np.hstack([a, -b]), 1e-10)
    return orthonormal_span(a @ ns[: a.shape[1]], 1e-8) if ns.size else np.zeros((a.shape[0], 0))


def index_split_terms(Q: np.ndarray, V: np.ndarray) -> Tuple[int, int]:
    """Both sides of ind+ Q = ind+ Q|V + ind+ Q|V' + dim(V & V') - dim(V & ker Q).

    V' is the Q-orthogonal complement of V.
    """
    Q = 0.5 * (Q + Q.T)
    V = orthonormal_span(V)
    Vp = q_orthogonal(Q, V)
    kerQ = null_space(Q, 1e-10)
    rhs = (positive_index(_restrict(Q, V)) + positive_index(_restrict(Q, Vp))
           + _intersect_cols(V, Vp).shape[1] - _intersect_cols(V, kerQ).shape[1])
    return positive_index(Q), rhs


def _preimage(A: np.ndarray, N: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Basis of V & A^{-1}(N) given column bases V and N."""
    if V.shape[1] == 0:
        return V
    ann = null_space(N.T, 1e-12) if N.shape[1] else np.eye(A.shape[0])
    cons = ann.T @ A @ V
    coeff = null_space(cons, 1e-10) if cons.size else np.eye(V.shape[1])
    return orthonormal_span(V @ coeff) if coeff.size else np.zeros((V.shape[0], 0))


def complement_direct(Q, A, N, V1, V2) -> np.ndarray:
    """Q-orthogonal complement of V1^N inside V2^N by direct computation."""
    v1n = _preimage(A, N, V1)
    v2n = _preimage(A, N, V2)
    if v1n.shape[1] == 0:
        return v2n
    coeff = _kernel(v1n.T @ Q.T @ v2n, _scale(Q))
    return orthonormal_span(v2n @ coeff) if coeff.size else np.zeros((Q.shape[0], 0))


def complement_via_annihilator(Q, A, N, V1, V2) -> np.ndarray:
    """Vectors v of V2^N admitting xi in the annihilator of N with
    xi(A w) + Q(v, w) = 0 for every w in V1."""
    v2n = _preimage(A, N, V2)
    ann = null_space(N.T, 1e-12) if N.shape[1] else np.eye(A.shape[0])
    if v2n.shape[1] == 0:
        return v2n
    # unknowns: coordinates of v in v2n, then of xi in ann
    system = np.hstack([V1.T @ Q.T @ v2n, V1.T @ A.T @ ann])
    sol = _kernel(system, _scale(Q) + _scale(A))
    if sol.size == 0:
        return np.zeros((Q.shape[0], 0))
    return orthonormal_span(v2n @ sol[: v2n.shape[1]], 1e-8)


# ------------------------------------------------------------- reports


@dataclass
class MorseReport:
    piecewise: int
    leray: int
    brute: int
    kernel_brute: int
    kernel_curve: int
    conjugate: List[Tuple[float, int]]
    codim_image: int
    certificate: Verdict
    timing: dict

    def as_dict(self) -> dict:
        return {
            "indices": {"piecewise": self.piecewise, "leray": self.leray, "brute_force": self.brute},
            "kernel": {"brute_force": self.kernel_brute, "curve": self.kernel_curve},
            "conjugate": [{"t": t, "mult": m} for t, m in self.conjugate],
            "codim_image": self.codim_image,
            "certificate": self.certificate.value,
            "timing": self.timing,
        }


def morse_verify(fields: MovingFrameFields, seed: int = 0, tol: float = DEFAULT_RTOL,
                 degeneracy_correction: int = 0, rank_tol: float = INDEX_RTOL) -> MorseReport:
    """Compute the three index values, kernel dimensions and conjugate times.

    ``tol`` is the relative threshold for the step rank decisions and the
    Hessian eigenvalues; ``rank_tol`` decides intersection dimensions of
    curve samples, which are accurate to round-off.
    """
    timing = {}
    t0 = time.perf_counter()
    curve = jacobi_curve(fields, tol=tol)
    timing["curve"] = time.perf_counter() - t0
    pi = fiber_plane(fields.space)
    bp = fields.boundary_plane

    t0 = time.perf_counter()
    piecewise = morse_index_piecewise(curve, pi, bp, rank_tol)
    timing["piecewise"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lifted = lift_extended(curve, pi, bp, seed, rank_tol)
    via_leray = morse_index_leray(lifted, pi, rank_tol)
    timing["leray"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    hess = hessian_assemble(fields)
    brute, kernel = brute_force_index(hess, tol)
    timing["brute_force"] = time.perf_counter() - t0

    conj = conjugate_points(curve, pi, rank_tol)
    # at a normal Lagrange point the cost differential adds one codimension
    codim = constraint_codim(hess) + 1
    return MorseReport(piecewise, via_leray, brute, kernel,
                       kernel_dim_via_curve(curve.planes[-1], pi, degeneracy_correction, rank_tol),
                       conj, codim, optimality_certificate(brute, codim), timing)
