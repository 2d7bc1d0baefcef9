"""Intersection indices of Lagrangian planes and lifts to the universal cover."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .symplectic import (
    DEFAULT_RTOL,
    HalfInteger,
    chart_coordinates,
    LinearSubspace,
    NumericalDegeneracy,
    DimensionError,
    intersect,
    intersect_many,
    orthogonal_complement_in,
    random_lagrangian,
    signature,
    subspace_sum,
)

#: Eigenvalue threshold for the triple forms. Bases are orthonormal, so the
#: forms are of order one unless the planes nearly coincide.
FORM_TOL = 1e-9


class SearchExhausted(NumericalDegeneracy):
    """No admissible transversal plane was found within the draw budget."""


def _check(*planes: LinearSubspace) -> None:
    space = planes[0].space
    for p in planes[1:]:
        if not space.compatible(p.space):
            raise DimensionError("planes live in different symplectic spaces")


def _triple_form(l1: LinearSubspace, l3: LinearSubspace, domain: np.ndarray) -> np.ndarray:
    """Matrix of q(l) = sigma(l1, l3) for l = l1 + l3 on the given domain basis."""
    if domain.shape[1] == 0:
        return np.zeros((0, 0))
    stacked = np.hstack([l1.basis, l3.basis])
    coeffs, *_ = np.linalg.lstsq(stacked, domain, rcond=None)
    part1 = l1.basis @ coeffs[: l1.dim]
    part3 = l3.basis @ coeffs[l1.dim:]
    m = part1.T @ l1.space.form @ part3
    return 0.5 * (m + m.T)


def form_signature(m: np.ndarray) -> Tuple[int, int, int]:
    """Inertia of a triple form with threshold FORM_TOL relative to its size.

    Nearly coincident planes make the decomposition l = l1 + l3 ill
    conditioned and inflate the form, so round-off scales with its norm.
    """
    if m.size == 0:
        return 0, 0, 0
    scale = max(1.0, float(np.abs(np.linalg.eigvalsh(m)).max()))
    return signature(m, FORM_TOL * scale)


def kashiwara_form(l1: LinearSubspace, l2: LinearSubspace, l3: LinearSubspace,
                   tol: float = DEFAULT_RTOL) -> int:
    """Kashiwara index Ki(l1, l2, l3) straight from its defining form.

    Signature of q(l) = sigma(l1, l3) on (l1 + l3) & l2, where l = l1 + l3
    is any decomposition with l1, l3 in the outer planes.
    """
    _check(l1, l2, l3)
    domain = intersect(subspace_sum(l1, l3, tol), l2, tol)
    p, m, _ = form_signature(_triple_form(l1, l3, domain.basis))
    return p - m


#: Threshold for eigenvalues of chart slope differences, relative to the
#: slopes. Slopes are of order one in a well transversal chart.
CHART_TOL = 1e-12


def _sym_signature(m: np.ndarray, thr: float) -> int:
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    return int(np.sum(w > thr)) - int(np.sum(w < -thr))


class _Chart:
    """Affine chart of planes transversal to a vertical plane, with cached slopes.

    The vertical plane is the best of a few seeded draws for the planes given
    at construction; further planes are accepted while they stay well
    transversal to it.
    """

    def __init__(self, planes: Sequence[LinearSubspace], draws: int = 8, good: float = 0.2):
        space = planes[0].space
        rng = np.random.default_rng(12345)
        best, best_gap = None, -1.0
        for _ in range(draws):
            cand = random_lagrangian(space, rng)
            gap = min(_gap(cand, p) for p in planes)
            if gap > best_gap:
                best, best_gap = cand, gap
            if gap > good:
                break
        self.vertical = best
        self.delta = LinearSubspace.span(space, space.form @ best.basis)
        self.gap = best_gap
        # keyed by id; the plane is stored alongside so the id stays valid
        self._slopes = {}
        self._covered = {}

    def covers(self, plane: LinearSubspace) -> bool:
        if id(plane) not in self._covered:
            self._covered[id(plane)] = (plane, _gap(self.vertical, plane) > 0.1 * self.gap)
        return self._covered[id(plane)][1]

    def slope(self, plane: LinearSubspace) -> np.ndarray:
        key = id(plane)
        if key not in self._slopes:
            self._slopes[key] = (plane, chart_coordinates(plane, self.delta, self.vertical))
        return self._slopes[key][1]

    def kashiwara(self, l1: LinearSubspace, l2: LinearSubspace, l3: LinearSubspace) -> int:
        s1, s2, s3 = self.slope(l1), self.slope(l2), self.slope(l3)
        thr = CHART_TOL * max(1.0, np.abs(s1).max(), np.abs(s2).max(), np.abs(s3).max())
        return _sym_signature(s1 - s2, thr) + _sym_signature(s2 - s3, thr) + _sym_signature(s3 - s1, thr)


def _gap(a: LinearSubspace, b: LinearSubspace) -> float:
    """Smallest singular value of [a, b]; zero exactly when the planes meet."""
    if a.dim + b.dim > a.space.dim:
        return 0.0
    return float(np.linalg.svd(np.hstack([a.basis, b.basis]), compute_uv=False)[-1])


def _chart_kashiwara(chart: Optional[_Chart], l1, l2, l3) -> int:
    if chart is not None and all(chart.covers(p) for p in (l1, l2, l3)):
        return chart.kashiwara(l1, l2, l3)
    return _Chart([l1, l2, l3]).kashiwara(l1, l2, l3)


def kashiwara(l1: LinearSubspace, l2: LinearSubspace, l3: LinearSubspace,
              tol: float = DEFAULT_RTOL) -> int:
    """Kashiwara index Ki(l1, l2, l3).

    Evaluated as sgn(S1 - S2) + sgn(S2 - S3) + sgn(S3 - S1) with S_i the
    slopes of the planes in a chart transversal to all three. This agrees
    with :func:`kashiwara_form` and stays well conditioned when planes
    nearly meet, where the decomposition l = l1 + l3 degenerates.
    """
    _check(l1, l2, l3)
    return _Chart([l1, l2, l3]).kashiwara(l1, l2, l3)


def positive_maslov(l1: LinearSubspace, pi: LinearSubspace, l2: LinearSubspace,
                    tol: float = DEFAULT_RTOL) -> HalfInteger:
    """Positive Maslov index ind_pi(l1, l2) as an exact half-integer.

    The triple form lives on ((l1 + l2) & pi) modulo l1 & l2 & pi. Its positive
    inertia is combined with the intersection dimensions of l1, l2 with pi.
    """
    _check(l1, pi, l2)
    domain = intersect(subspace_sum(l1, l2, tol), pi, tol)
    a = intersect(l1, pi, tol)
    b = intersect(l2, pi, tol)
    common = intersect(a, l2, tol)
    quotient = orthogonal_complement_in(common, domain)
    n_plus, _, _ = form_signature(_triple_form(l1, l2, quotient.basis))
    return HalfInteger(2 * n_plus + a.dim + b.dim - 2 * common.dim)


def positive_maslov_kernel_form(l1: LinearSubspace, pi: LinearSubspace, l2: LinearSubspace,
                                tol: float = DEFAULT_RTOL) -> HalfInteger:
    """Same index computed as ind+ q + dim(ker q)/2 on the explicit quotient."""
    domain = intersect(subspace_sum(l1, l2, tol), pi, tol)
    common = intersect_many([l1, l2, pi], tol)
    quotient = orthogonal_complement_in(common, domain)
    n_plus, _, n_zero = form_signature(_triple_form(l1, l2, quotient.basis))
    return HalfInteger(2 * n_plus + n_zero)


@dataclass(frozen=True)
class SampledCurve:
    times: Tuple[float, ...]
    planes: Tuple[LinearSubspace, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        planes = tuple(self.planes)
        if len(times) != len(planes):
            raise ValueError("times and planes must have the same length")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "planes", planes)


def partition_index(planes: Sequence[LinearSubspace], pi: LinearSubspace,
                    tol: float = DEFAULT_RTOL) -> HalfInteger:
    """Sum of ind_pi over consecutive samples of a curve."""
    if isinstance(planes, SampledCurve):
        planes = planes.planes
    planes = list(planes)
    total = HalfInteger(0)
    for a, b in zip(planes, planes[1:]):
        total = total + positive_maslov(a, pi, b, tol)
    return total


def _transversal_to_all(delta: LinearSubspace, planes: Sequence[LinearSubspace], tol: float) -> bool:
    return all(_gap(delta, p) > tol for p in planes)


def _monotone_candidates(a: LinearSubspace, b: LinearSubspace, rng: np.random.Generator, tol: float):
    """Planes off the straight joins between two transversal planes.

    With a symplectic pairing basis e of a and f of b, the graphs
    {e x + f S x} with S definite avoid one of the two chart segments
    joining a and b, so one sign always avoids the monotone join.
    """
    if intersect(a, b, tol).dim != 0:
        return
    pairing = a.basis.T @ a.space.form @ b.basis
    f = b.basis @ np.linalg.inv(pairing).T
    n = a.dim
    for _ in range(8):
        g = rng.standard_normal((n, n))
        s_mat = g @ g.T + 0.1 * np.eye(n)
        for sign in (1.0, -1.0):
            yield LinearSubspace.span(a.space, a.basis + f @ (sign * s_mat))


def _rotated_candidates(a: LinearSubspace, b: LinearSubspace):
    """Endpoints turned slightly by the rotation exp(t J), with the turn size.

    The rotation moves every plane monotonically, so a plane just behind
    ``a`` or just ahead of ``b`` avoids the monotone join. When the join
    nearly closes up the free window is narrow, hence the range of turns.
    """
    n = a.space.n
    eye = np.eye(n)
    for eps in np.geomspace(0.3, 1e-8, 16):
        for sign in (1.0, -1.0):
            c, s = np.cos(sign * eps), np.sin(sign * eps)
            rot = np.block([[c * eye, s * eye], [-s * eye, c * eye]])
            yield LinearSubspace.span(a.space, rot @ a.basis), eps
            yield LinearSubspace.span(a.space, rot @ b.basis), eps


def find_transversal(planes: Sequence[LinearSubspace],
                     constraint: Optional[Tuple[LinearSubspace, LinearSubspace]] = None,
                     seed: int = 0, budget: int = 4000,
                     tol: float = DEFAULT_RTOL, _chart: Optional[_Chart] = None) -> LinearSubspace:
    """Lagrangian plane transversal to every listed plane.

    If ``constraint = (a, b)`` is given the result also satisfies
    ind_delta(a, b) = 0, i.e. a monotone join from a to b avoids it. The
    constraint is tested as Ki(a, delta, b) = dim(a & b) - n, which is
    equivalent for delta transversal to a and b and stays well conditioned
    when a and b nearly meet. Deterministic in ``seed``; raises
    :class:`SearchExhausted` after ``budget`` random draws.
    """
    planes = list(planes)
    if constraint is not None:
        planes = planes + [constraint[0], constraint[1]]
    if not planes:
        raise ValueError("need at least one plane")
    space = planes[0].space
    rng = np.random.default_rng(seed)
    if constraint is not None:
        a, b = constraint
        target = intersect(a, b, tol).dim - space.n

    def admissible(delta: LinearSubspace, gap: float = 1e-6) -> bool:
        if not _transversal_to_all(delta, planes, gap):
            return False
        if constraint is not None:
            return _chart_kashiwara(_chart, a, delta, b) == target
        return True

    if constraint is not None:
        for cand, eps in _rotated_candidates(a, b):
            if admissible(cand, 0.1 * eps):
                return cand
        for cand in _monotone_candidates(a, b, rng, tol):
            if admissible(cand):
                return cand
    for _ in range(budget):
        cand = random_lagrangian(space, rng)
        if admissible(cand):
            return cand
    raise SearchExhausted(f"no admissible transversal plane after {budget} draws")


@dataclass(frozen=True, eq=False)
class LiftedPlane:
    """Lagrangian plane with the integer Li(plane~, base~) for a fixed base lift."""

    plane: LinearSubspace
    lift: int
    base: LinearSubspace

    @classmethod
    def at_base(cls, base: LinearSubspace) -> "LiftedPlane":
        return cls(base, 0, base)


def lift_extend(current: LiftedPlane, next_plane: LinearSubspace, seed: int = 0,
                tol: float = DEFAULT_RTOL, _chart: Optional[_Chart] = None) -> LiftedPlane:
    """Carry a lift along the monotone join from ``current.plane`` to ``next_plane``."""
    a, b, base = current.plane, next_plane, current.base
    if a.dim == b.dim and np.linalg.norm(a.projector() - b.projector()) < 1e-13:
        return LiftedPlane(b, current.lift, base)
    chart = _chart if _chart is not None and all(map(_chart.covers, (a, b, base))) else _Chart([a, b, base])
    delta = find_transversal([a, b, base], constraint=(a, b), seed=seed, tol=tol, _chart=chart)
    step = _chart_kashiwara(chart, a, delta, base) - _chart_kashiwara(chart, b, delta, base)
    return LiftedPlane(b, current.lift + step, base)


def lift_curve(planes: Sequence[LinearSubspace], start: LiftedPlane, seed: int = 0,
               tol: float = DEFAULT_RTOL) -> list:
    """Lift a sampled curve by joining consecutive samples monotonically.

    One chart is shared by consecutive steps while it covers their planes.
    """
    rng = np.random.default_rng(seed)
    out = [start]
    chart = None
    for plane in planes:
        a = out[-1].plane
        if chart is None or not all(map(chart.covers, (a, plane, start.base))):
            chart = _Chart([a, plane, start.base])
        out.append(lift_extend(out[-1], plane, int(rng.integers(2**31)), tol, chart))
    return out


def leray(a: LiftedPlane, b: LiftedPlane, tol: float = DEFAULT_RTOL) -> int:
    """Leray index Li(a~, b~) from the stored lifts and one Kashiwara index."""
    if not a.base.space.compatible(b.base.space) or np.linalg.norm(
            a.base.projector() - b.base.projector()) > 1e-9:
        raise ValueError("lifts are expressed against different base planes")
    return kashiwara(a.plane, b.plane, a.base, tol) + a.lift - b.lift
