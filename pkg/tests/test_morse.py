import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from conftest import builtin_fields, sweep_problem
from jacobi_lab.lderiv import JacobiCurve, jacobi_curve
from jacobi_lab.linearization import (
    ProblemLinearization,
    free_particle,
    harmonic_oscillator,
    isotropic_oscillator_2d,
    moving_frame,
)
from jacobi_lab.morse import (
    Verdict,
    brute_force_index,
    complement_direct,
    complement_via_annihilator,
    conjugate_points,
    constraint_codim,
    hessian_assemble,
    index_jump_check,
    index_split_terms,
    kernel_dim_via_curve,
    lift_extended,
    morse_index_leray,
    morse_index_piecewise,
    morse_verify,
    optimality_certificate,
    restricted_hessian,
)
from jacobi_lab.symplectic import fiber_plane, orthonormal_span, plane_distance

seeds = st.integers(0, 2**32 - 1)


def fields_on(factory, T, intervals):
    return moving_frame(factory(T=T + 1.0), np.linspace(0.0, T, intervals + 1))


def smallest_eigenvalue(factory, T, intervals):
    w = np.linalg.eigvalsh(restricted_hessian(hessian_assemble(fields_on(factory, T, intervals))))
    return w[np.argmin(np.abs(w))]


def discrete_conjugate_time(factory, intervals, near=np.pi):
    """Horizon where the Hessian on a uniform grid of ``intervals`` steps is singular."""
    return brentq(lambda T: smallest_eigenvalue(factory, T, intervals), near - 0.05, near + 0.05, xtol=1e-14)


def indices(fields, seed=0):
    curve = jacobi_curve(fields)
    pi = fiber_plane(fields.space)
    bp = fields.boundary_plane
    return (morse_index_piecewise(curve, pi, bp, 1e-13),
            morse_index_leray(lift_extended(curve, pi, bp, seed, 1e-13), pi, 1e-13),
            brute_force_index(hessian_assemble(fields))[0])


# ------------------------------------------------------------- assembly


def test_free_particle_hessian_is_positive():
    h = hessian_assemble(fields_on(free_particle, 10.0, 4))
    assert h.Q.shape == (4, 4)
    assert np.all(np.linalg.eigvalsh(restricted_hessian(h)) > 0)


def test_oscillator_hessian_has_one_negative_direction():
    h = hessian_assemble(fields_on(harmonic_oscillator, 4.0, 100))
    assert np.sum(np.linalg.eigvalsh(restricted_hessian(h)) < 0) == 1


def test_hessian_without_controls():
    prob = ProblemLinearization(n=2, k=0, C=np.zeros((4, 4)), D=np.zeros((4, 0)), b=np.zeros((0, 0)),
                                T=1.0, N0_tangent=np.eye(2))
    h = hessian_assemble(moving_frame(prob, [0.0, 0.5, 1.0]))
    assert np.array_equal(h.Q, np.zeros((2, 2)))
    assert np.allclose(np.abs(h.A), np.eye(2))


def test_hessian_is_symmetric():
    h = hessian_assemble(moving_frame(sweep_problem(3), np.linspace(0, 1, 9)))
    assert np.allclose(h.Q, h.Q.T, atol=1e-12)
    assert h.A.shape[0] == sweep_problem(3).n


# --------------------------------------------------------- brute force


def test_brute_force_examples():
    assert brute_force_index(hessian_assemble(builtin_fields("free_particle", T=3.0, intervals=30))) == (0, 0)
    assert brute_force_index(hessian_assemble(builtin_fields("harmonic_oscillator"))) == (3, 0)


@pytest.mark.parametrize("factory,mult", [(harmonic_oscillator, 1), (isotropic_oscillator_2d, 2)])
def test_kernel_at_discrete_conjugate_time(factory, mult):
    intervals = 80
    t_star = discrete_conjugate_time(factory, intervals)
    # piecewise constant controls shift the conjugate time by O(h^2)
    assert abs(t_star - np.pi) < (np.pi / intervals) ** 2
    fields = fields_on(factory, t_star, intervals)
    neg, kernel = brute_force_index(hessian_assemble(fields))
    assert (neg, kernel) == (0, mult)
    plane = jacobi_curve(fields).planes[-1]
    assert kernel_dim_via_curve(plane, fiber_plane(fields.space)) == mult


def test_hessian_at_pi_degenerates_at_second_order():
    values = [abs(smallest_eigenvalue(harmonic_oscillator, np.pi, n)) for n in (50, 100, 200)]
    assert all(3.5 <= a / b <= 4.5 for a, b in zip(values, values[1:]))


# -------------------------------------------------------- index formulas


def test_constant_fiber_curve_has_index_zero():
    fields = builtin_fields("free_particle", intervals=4)
    pi = fiber_plane(fields.space)
    curve = JacobiCurve(tuple(fields.grid), (pi,) * 5)
    assert morse_index_piecewise(curve, pi, pi) == 0


@pytest.mark.parametrize("name,expected", [("free_particle", 0), ("harmonic_oscillator", 3),
                                           ("isotropic_oscillator_2d", 6)])
def test_builtin_indices(name, expected):
    assert indices(builtin_fields(name)) == (expected,) * 3


@pytest.mark.parametrize("T", [0.5, 2.0, 3.0])
def test_oscillator_before_first_conjugate_point(T):
    assert indices(fields_on(harmonic_oscillator, T, 60)) == (0, 0, 0)


def test_leray_formula_needs_lifts():
    with pytest.raises(ValueError):
        morse_index_leray([], fiber_plane(free_particle().space))


def test_index_grows_by_steps_at_conjugate_times():
    horizons = np.linspace(0.5, 10.0, 39)
    counts = [brute_force_index(hessian_assemble(fields_on(harmonic_oscillator, T, 100)))[0] for T in horizons]
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    jumps = [0.5 * (horizons[i] + horizons[i + 1]) for i in range(len(counts) - 1) if counts[i + 1] > counts[i]]
    step = horizons[1] - horizons[0]
    assert len(jumps) == 3
    assert all(abs(t - k * np.pi) <= step for t, k in zip(jumps, (1, 2, 3)))


# ------------------------------------------------------------ conjugate


def test_conjugate_points_examples():
    fields = builtin_fields("free_particle")
    assert conjugate_points(jacobi_curve(fields), fiber_plane(fields.space)) == []
    fields = builtin_fields("harmonic_oscillator", intervals=400)
    found = conjugate_points(jacobi_curve(fields), fiber_plane(fields.space))
    h = fields.grid[1]
    assert [m for _, m in found] == [1, 1, 1]
    assert all(abs(t - k * np.pi) <= h for (t, _), k in zip(found, (1, 2, 3)))
    fields = builtin_fields("isotropic_oscillator_2d")
    found = conjugate_points(jacobi_curve(fields), fiber_plane(fields.space))
    assert [m for _, m in found] == [2, 2, 2]


def test_conjugate_point_on_a_sample():
    intervals = 60
    t_star = discrete_conjugate_time(harmonic_oscillator, intervals)
    fields = fields_on(harmonic_oscillator, t_star, intervals)
    found = conjugate_points(jacobi_curve(fields), fiber_plane(fields.space))
    assert len(found) == 1 and found[0][1] == 1 and abs(found[0][0] - t_star) <= t_star / intervals


def test_kernel_via_curve_examples():
    fields = builtin_fields("free_particle", intervals=20)
    pi = fiber_plane(fields.space)
    assert all(kernel_dim_via_curve(p, pi) == 0 for p in jacobi_curve(fields).planes[1:])
    assert kernel_dim_via_curve(pi, pi, degeneracy_correction=2) == 3


# ------------------------------------------------------------ index jumps


def test_index_jump_trivial():
    fields = builtin_fields("harmonic_oscillator", intervals=20)
    plane = jacobi_curve(fields).planes[-1]
    assert index_jump_check(plane, plane, fiber_plane(fields.space), 3, 3)


def test_index_jump_on_oscillator_refinement():
    pi = fiber_plane(harmonic_oscillator().space)
    data = []
    for intervals in (50, 100):
        fields = builtin_fields("harmonic_oscillator", intervals=intervals)
        data.append((jacobi_curve(fields).planes[-1], brute_force_index(hessian_assemble(fields))[0]))
    (p1, i1), (p2, i2) = data
    assert index_jump_check(p1, p2, pi, i1, i2)


# ------------------------------------------------------------ certificate


def test_certificate_examples():
    assert optimality_certificate(3, 0) is Verdict.NOT_OPTIMAL
    assert optimality_certificate(0, 0) is Verdict.INCONCLUSIVE
    assert optimality_certificate(1, 2) is Verdict.INCONCLUSIVE
    report = morse_verify(builtin_fields("harmonic_oscillator"))
    assert report.certificate is Verdict.NOT_OPTIMAL
    assert constraint_codim(hessian_assemble(builtin_fields("harmonic_oscillator"))) == 0


def test_report_contents():
    report = morse_verify(builtin_fields("isotropic_oscillator_2d"))
    out = report.as_dict()
    assert out["indices"] == {"piecewise": 6, "leray": 6, "brute_force": 6}
    assert out["kernel"] == {"brute_force": 0, "curve": 0}
    assert set(out["timing"]) == {"curve", "piecewise", "leray", "brute_force"}


# ------------------------------------------------- quadratic form identities


@given(seeds, st.integers(1, 7), st.data())
def test_index_splitting_identity(seed, dim, data):
    rng = np.random.default_rng(seed)
    rank = data.draw(st.integers(0, dim))
    u = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
    Q = u[:, :rank] @ np.diag(rng.choice([-1.0, 1.0], rank) * rng.uniform(0.5, 2, rank)) @ u[:, :rank].T
    v = rng.standard_normal((dim, data.draw(st.integers(0, dim))))
    if data.draw(st.booleans()) and rank < dim and v.shape[1]:
        v[:, 0] = u[:, -1]  # make V meet the kernel
    lhs, rhs = index_split_terms(Q, v)
    assert lhs == rhs


@given(seeds, st.integers(2, 6), st.data())
def test_annihilator_characterization(seed, dim, data):
    rng = np.random.default_rng(seed)
    n = data.draw(st.integers(1, 3))
    Q = rng.standard_normal((dim, dim))
    Q = Q + Q.T
    A = rng.standard_normal((n, dim))
    N = rng.standard_normal((n, data.draw(st.integers(0, n))))
    V2 = np.eye(dim)[:, : data.draw(st.integers(1, dim))]
    V1 = V2[:, : data.draw(st.integers(0, V2.shape[1]))]
    direct = complement_direct(Q, A, N, V1, V2)
    via = complement_via_annihilator(Q, A, N, V1, V2)
    assert direct.shape[1] == via.shape[1]
    if direct.shape[1]:
        assert np.linalg.norm(direct @ direct.T - via @ via.T) < 1e-8


# --------------------------------------------------------- random problems


@settings(max_examples=12)
@given(st.integers(0, 49))
def test_random_problem_formulas_agree(i):
    prob = sweep_problem(i)
    report = morse_verify(moving_frame(prob, np.linspace(0, prob.T, 65)), seed=i)
    assert report.piecewise == report.leray == report.brute
    assert report.kernel_brute == report.kernel_curve


@settings(max_examples=15)
@given(st.integers(0, 49), seeds, st.booleans())
def test_formulas_agree_on_nonuniform_partitions(i, seed, short_tail):
    prob = sweep_problem(i)
    rng = np.random.default_rng(seed)
    steps = rng.uniform(0.2, 1.0, 48)
    if short_tail:
        steps[-1] = 1e-3
    grid = np.concatenate([[0.0], np.cumsum(steps) / steps.sum() * prob.T])
    report = morse_verify(moving_frame(prob, grid), seed=seed)
    assert report.piecewise == report.leray == report.brute
    assert report.kernel_brute == report.kernel_curve
