import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import builtin_fields
from jacobi_lab.lderiv import jacobi_curve
from jacobi_lab.linearization import (
    ProblemLinearization,
    augment_time,
    boundary_plane,
    builtin,
    frame_matrices,
    free_particle,
    harmonic_oscillator,
    isotropic_oscillator_2d,
    lq,
    moving_frame,
)
from jacobi_lab.morse import brute_force_index, hessian_assemble
from jacobi_lab.symplectic import (
    LinearSubspace,
    SymplecticSpace,
    intersect,
    is_lagrangian,
    plane_distance,
    standard_form,
)


def test_free_particle_fields_are_constant():
    f = builtin_fields("free_particle", intervals=10)
    assert np.allclose(f.X, np.array([[0.0], [1.0]]))
    assert np.allclose(f.b, -1.0)
    h = np.diff(f.grid)
    assert np.allclose(f.M[:, :, 0], np.outer(h, [0.0, 1.0]))


def test_oscillator_pullback_is_linear_in_time():
    f = builtin_fields("harmonic_oscillator", intervals=20)
    assert np.allclose(f.X[:, :, 0], np.column_stack([f.grid, np.ones_like(f.grid)]), atol=1e-12)


def test_zero_projector_kills_variations():
    base = harmonic_oscillator(T=2.0)
    prob = ProblemLinearization(n=1, k=1, C=base.C, D=base.D, b=base.b, T=2.0, P=np.zeros((1, 1)))
    f = moving_frame(prob, np.linspace(0, 2, 5))
    assert np.all(f.X == 0) and np.all(f.M == 0) and np.all(f.Bint == 0)


def test_time_dependent_fields_match_constant_ones():
    base = harmonic_oscillator(T=3.0)
    prob = ProblemLinearization(n=1, k=1, C=lambda t: base.C, D=lambda t: base.D, b=lambda t: base.b, T=3.0)
    grid = np.linspace(0, 3, 7)
    a, b = moving_frame(prob, grid), moving_frame(base, grid)
    assert np.allclose(a.X, b.X, atol=1e-9) and np.allclose(a.K, b.K, atol=1e-9)


def test_builtin_definitions():
    fp, ref = builtin("free_particle"), lq(0, 1, 0, 1)
    assert np.array_equal(fp.C, ref.C) and np.array_equal(fp.D, ref.D) and np.array_equal(fp.b, ref.b)
    ho = builtin("harmonic_oscillator", T=4.0)
    assert ho.T == 4.0 and np.array_equal(ho.C, lq(0, 1, -1, 1).C)
    iso = builtin("isotropic_oscillator_2d")
    assert (iso.n, iso.k) == (2, 2)
    assert fp.N0_tangent.shape == (1, 0)
    with pytest.raises(ValueError):
        builtin("pendulum")
    with pytest.raises(ValueError):
        lq(0, 1, 0, -1)


def test_lq_block_layout():
    A, B, W = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [0.0]]), np.eye(2)
    prob = lq(A, B, W, [[2.0]])
    assert np.array_equal(prob.C, np.block([[-A.T, W], [np.zeros((2, 2)), A]]))
    assert np.array_equal(prob.D, np.vstack([np.zeros((2, 1)), B]))
    assert np.array_equal(prob.b, [[-2.0]])


def test_problem_validation():
    with pytest.raises(ValueError):
        ProblemLinearization(n=1, k=1, C=np.eye(2), D=np.zeros((2, 1)), b=-np.eye(1))
    with pytest.raises(ValueError):
        lq(np.zeros((2, 2)), np.ones((2, 1)), np.eye(2), np.eye(2))


@pytest.mark.parametrize("factory", [free_particle, harmonic_oscillator, isotropic_oscillator_2d])
def test_flow_stays_symplectic(factory):
    prob = factory(T=10.0)
    G = frame_matrices(prob, np.linspace(0, 10, 41))
    J = standard_form(prob.n)
    err = max(np.linalg.norm(g.T @ J @ g - J) for g in G)
    assert err <= 1e-7


def test_grid_validation():
    prob = free_particle(T=1.0)
    with pytest.raises(ValueError):
        moving_frame(prob, [0.0, 0.5, 0.5])
    with pytest.raises(ValueError):
        moving_frame(prob, [0.1, 0.5])
    with pytest.raises(ValueError):
        moving_frame(prob, [0.0, 2.0])


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.data())
def test_boundary_plane_is_lagrangian(seed, n, data):
    d = data.draw(st.integers(0, n))
    N0 = np.random.default_rng(seed).standard_normal((n, d))
    plane = boundary_plane(N0)
    assert is_lagrangian(plane, 1e-10)
    # tangent directions sit in the x block, the annihilator in the p block
    assert np.allclose(plane.basis[n:] @ plane.basis[n:].T @ N0, N0) if d else True


def test_refinement_converges_at_second_order():
    prob = lq([[0.3]], [[1.0]], [[-0.5]], [[1.0]], T=2.0)
    t = 1.5
    ends = [jacobi_curve(moving_frame(prob, np.linspace(0, t, N + 1))).planes[-1] for N in (8, 16, 32, 64)]
    diffs = [plane_distance(a, b) for a, b in zip(ends, ends[1:])]
    assert all(d1 / d2 >= 2.0 for d1, d2 in zip(diffs, diffs[1:]))


# ------------------------------------------------------------ time variations


def test_augment_time_dimensions():
    prob = free_particle(T=3.0)
    once = augment_time(prob)
    twice = augment_time(once)
    assert (once.n, once.k) == (2, 2)
    assert (twice.n, twice.k) == (3, 3)


def test_augmented_curve_projects_onto_original():
    prob = free_particle(T=3.0)
    aug = augment_time(prob)
    grid = np.linspace(0, 3, 31)
    plane = jacobi_curve(moving_frame(aug, grid)).planes[-1]
    original = jacobi_curve(moving_frame(prob, grid)).planes[-1]
    # the part of the augmented plane with p_t = 0, read in (p, x)
    sp = plane.space
    no_pt = LinearSubspace.span(sp, np.eye(4)[:, [0, 2, 3]])
    part = intersect(plane, no_pt).basis[[0, 2]]
    projected = LinearSubspace.span(SymplecticSpace(1), part)
    assert projected.dim == 1
    assert plane_distance(projected, original) < 1e-9


@pytest.mark.parametrize("factory,expected", [(free_particle, 0), (harmonic_oscillator, 1)])
def test_time_variations_do_not_change_index(factory, expected):
    prob = factory(T=4.0)
    grid = np.linspace(0, 4, 41)
    plain = brute_force_index(hessian_assemble(moving_frame(prob, grid)))[0]
    augmented = brute_force_index(hessian_assemble(moving_frame(augment_time(prob), grid)))[0]
    assert plain == augmented == expected


def test_problem_rejects_broken_invariants():
    C = harmonic_oscillator().C
    with pytest.raises(ValueError):
        ProblemLinearization(n=1, k=1, C=C, D=np.zeros((2, 1)), b=-np.eye(1), P=[[0.5]])
    with pytest.raises(ValueError):
        ProblemLinearization(n=1, k=2, C=C, D=np.zeros((2, 2)), b=[[1.0, 2.0], [0.0, 1.0]])
