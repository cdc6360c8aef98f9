import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poissonforms.exterior import (
    Multivector,
    annihilate,
    antisymmetrize,
    block_potential,
    create,
    curvature_operator,
    interior,
    leibniz_power,
    t_basis,
    wedge,
    wedge_to_tensor,
)
from poissonforms.geometry import Euclidean, Sphere

vec2 = st.tuples(
    st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False)
).map(np.array)


def mv(v, slot=0):
    return Multivector.from_vector(np.asarray(v, dtype=float), slot)


class TestWedge:
    @settings(max_examples=50, deadline=None)
    @given(vec2, vec2)
    def test_anticommutes(self, a, b):
        lhs = wedge(mv(a), mv(b))
        rhs = wedge(mv(b), mv(a)) * (-1.0)
        assert (lhs - rhs).norm() < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(vec2)
    def test_nilpotent(self, a):
        assert wedge(mv(a), mv(a)).norm() < 1e-12 * max(1.0, float(a @ a))

    def test_gram_inner(self):
        # <a^b, c^e> = det [[a.c, a.e], [b.c, b.e]]
        a, b = np.array([1.0, 2.0]), np.array([0.0, 1.0])
        c, e = np.array([2.0, -1.0]), np.array([1.0, 1.0])
        lhs = wedge(mv(a), mv(b)).inner(wedge(mv(c), mv(e)))
        det = (a @ c) * (b @ e) - (a @ e) * (b @ c)
        assert abs(lhs - det) < 1e-12

    def test_bilinear_in_sum(self):
        a, b, c = map(np.array, ([1.0, 0.5], [0.2, -1.0], [0.7, 0.3]))
        lhs = wedge(mv(a) + mv(b), mv(c))
        rhs = wedge(mv(a), mv(c)) + wedge(mv(b), mv(c))
        assert (lhs - rhs).norm() < 1e-12


class TestCreateAnnihilate:
    @settings(max_examples=40, deadline=None)
    @given(vec2, vec2, vec2, vec2)
    def test_adjoint_pair(self, v, a, b, c):
        # <create(v) x, y> == <x, annihilate(v) y> across degrees
        x = wedge(mv(a), mv(b, slot=1))
        y = wedge(wedge(mv(c), mv(a, slot=1)), mv(b, slot=2))
        lhs = create(v, x, slot=2).inner(y)
        rhs = x.inner(annihilate(v, y, slot=2))
        assert abs(lhs - rhs) < 1e-9

    def test_occupation_scaling(self):
        # on a fully occupied degree-n key, annihilate . create = (n+1) <v,v>
        v = np.array([0.0, 1.0])
        u = mv([1.0, 0.0], slot=0)
        n = 1
        out = annihilate(v, create(v, u, slot=1), slot=1)
        assert (out - u * (n + 1)).norm() < 1e-12

    def test_interior_antiderivation(self):
        v = np.array([0.3, -0.8])
        a, b = np.array([1.0, 0.2]), np.array([-0.4, 0.9])
        u = wedge(mv(a), mv(b))
        out = interior(v, u)
        expect = mv(b) * float(v @ a) - mv(a) * float(v @ b)
        assert (out - expect).norm() < 1e-12


class TestAntisymmetrize:
    def test_projects_and_fixes(self):
        gen = np.random.default_rng(7)
        T = gen.normal(size=(2, 2))
        u = antisymmetrize(T, 2)
        back = wedge_to_tensor(u, 2, 2)
        # antisymmetric part of T, and idempotent on its image
        anti = 0.5 * (T - T.T)
        assert np.allclose(back, anti, atol=1e-12)
        assert (antisymmetrize(back, 2) - u).norm() < 1e-12


class TestTBasis:
    def test_counts(self):
        # n=2, m=2, d=2: each slot holds one axis -> 2*2 keys
        assert len(t_basis(2, 2, 2)) == 4
        # n=2, m=1, d=2: one slot holds both axes -> 1 key
        assert len(t_basis(2, 1, 2)) == 1
        assert len(t_basis(1, 1, 3)) == 3

    def test_empty_when_degree_below_slots(self):
        assert t_basis(1, 2, 2) == []

    def test_keys_sorted_and_full(self):
        for key in t_basis(2, 2, 2):
            slots = [s for s, _ in key]
            assert sorted(slots) == [0, 1]
            assert list(key) == sorted(key)


class TestLeibniz:
    def test_degree_one_is_identity_action(self):
        A = np.array([[1.0, 2.0], [0.5, -1.0]])
        assert np.allclose(leibniz_power(A, 1), A)

    def test_derivation_rule_top_degree(self):
        # on the top form e1^e2 in d=2 the extension acts by trace
        A = np.array([[0.7, 0.1], [-0.3, 1.2]])
        L = leibniz_power(A, 2)
        assert L.shape == (1, 1)
        assert abs(L[0, 0] - np.trace(A)) < 1e-12

    def test_commutes_with_sum(self):
        gen = np.random.default_rng(3)
        A, B = gen.normal(size=(2, 2)), gen.normal(size=(2, 2))
        assert np.allclose(
            leibniz_power(A + B, 2), leibniz_power(A, 2) + leibniz_power(B, 2)
        )


class TestCurvatureOperator:
    def test_euclidean_zero(self):
        sp = Euclidean(2)
        p = np.array([0.3, 0.4])
        for n in (1, 2):
            assert np.allclose(curvature_operator(sp, p, n), 0.0)

    def test_sphere_degree_one_identity(self):
        sp = Sphere()
        p = np.array([0.0, 0.0, 1.0])
        assert np.allclose(curvature_operator(sp, p, 1), np.eye(2), atol=1e-12)

    def test_sphere_degree_two_zero(self):
        sp = Sphere()
        p = np.array([1.0, 0.0, 0.0]) / 1.0
        R2 = curvature_operator(sp, p, 2)
        assert R2.shape == (1, 1)
        assert abs(R2[0, 0]) < 1e-12


class TestBlockPotential:
    def test_matches_weitz_on_full_sector(self):
        # gaussian scale 1 in the plane: degree-k block is +k I, so the
        # fully occupied (n=2, m=2) sector gets +2 on the diagonal
        from poissonforms.geometry import IntensitySpec
        from poissonforms.operators import weitz_matrix

        sp, p = Euclidean(2), np.array([0.4, -0.1])
        inten = IntensitySpec("gaussian", 1.0)
        pts = [p, -p]
        B = block_potential(
            lambda k, x: weitz_matrix(sp, inten, x, k), pts, n=2, m=2, d=2
        )
        assert np.allclose(B, 2.0 * np.eye(len(t_basis(2, 2, 2))), atol=1e-12)
