import math

import numpy as np
import pytest

from poissonforms import batteries as bat
from poissonforms.fields import SphereAxisField, SphereGradientField, SphereKilling
from poissonforms.forms import (
    CylinderFunction,
    EvalCache,
    Exp,
    Linear,
    SphereSlotOne,
    eval_form,
)
from poissonforms.geometry import Euclidean, IntensitySpec, Sphere, Window
from poissonforms.fields import monomial
from poissonforms.operators import (
    FdScheme,
    OperatorReport,
    adjointness_check,
    apply_r_pi_sigma,
    beta_fields,
    bochner_x_at,
    d_gamma,
    d_x_at,
    dd_zero_check,
    dirichlet_check,
    dstar_gamma,
    dstar_x_at,
    factorization_check,
    h_pi_sigma,
    h_r_at,
    ibp_check,
    lift,
    weitz_matrix,
    weitzenbock_check,
)
from poissonforms.pointprocess import Configuration, RngStream

SP = Euclidean(2)
GAUSS = IntensitySpec("gaussian", 1.0)
ALL = Window("all")
CONFIG = Configuration(np.array([[0.7, -0.4], [0.3, 0.2], [-0.5, 0.6]]))


class TestWeitzMatrix:
    def test_flat_gaussian_blocks(self):
        # grad beta = -I, so the potential is +k on every degree-k block
        p = np.array([0.4, -0.1])
        assert np.allclose(weitz_matrix(SP, GAUSS, p, 1), np.eye(2), atol=1e-14)
        assert np.allclose(weitz_matrix(SP, GAUSS, p, 2), [[2.0]], atol=1e-14)

    def test_flat_scaled_gaussian(self):
        inten = IntensitySpec("gaussian", 0.5)  # grad beta = -4 I
        p = np.array([0.1, 0.2])
        assert np.allclose(weitz_matrix(SP, inten, p, 1), 4.0 * np.eye(2))

    def test_sphere_uniform_blocks(self):
        sp, p = Sphere(), np.array([0.0, 0.0, 1.0])
        inten = IntensitySpec("uniform")
        assert np.allclose(weitz_matrix(sp, inten, p, 1), np.eye(2), atol=1e-12)
        assert np.allclose(weitz_matrix(sp, inten, p, 2), [[0.0]], atol=1e-12)


class TestScalarLevel:
    def test_h_on_first_coordinate_statistic(self):
        # F = <x_1, gamma> is an OU eigenfunction: H F = F
        F = CylinderFunction(Linear([1.0]), (monomial(2, (1, 0)),))
        cache = EvalCache(CONFIG)
        s = CONFIG.points[:, 0].sum()
        assert abs(h_pi_sigma(SP, GAUSS, F, CONFIG, cache) - s) < 1e-12

    def test_h_exponential_statistic(self):
        # F = e^{s}, s = sum x_1: LF = e^s (n - s), so HF = -e^s (n - s)
        F = CylinderFunction(Exp([1.0]), (monomial(2, (1, 0)),))
        cache = EvalCache(CONFIG)
        s = CONFIG.points[:, 0].sum()
        expect = -math.exp(s) * (CONFIG.n - s)
        assert abs(h_pi_sigma(SP, GAUSS, F, CONFIG, cache) - expect) < 1e-11

    def test_beta_fields_match_geometry(self):
        from poissonforms.geometry import beta

        fields = beta_fields(SP, GAUSS)
        p = np.array([0.3, -0.8])
        vals = np.array([f.value_one(p) for f in fields])
        assert np.allclose(vals, beta(SP, GAUSS, p), atol=1e-14)


class TestLiftedOperators:
    def test_ou_eigenform_eigenvalues(self):
        # x1 dx1 has Bochner eigenvalue 1 and de Rham eigenvalue 2
        W = bat.ou_eigenform()
        base = eval_form(W, CONFIG)
        fb = lift("bochner", SP, GAUSS, W, CONFIG)
        fr = lift("deRham", SP, GAUSS, W, CONFIG)
        assert (fb + base.scale(-1.0)).norm() < 1e-12
        assert (fr + base.scale(-2.0)).norm() < 1e-12

    def test_dd_zero_pointwise_with_cylinder_factor(self):
        # the product rule through the cylinder factor must cancel in d(dW)
        W = bat.flat_form_battery()[1]
        ddW = d_gamma(SP, GAUSS, d_gamma(SP, GAUSS, W))
        assert eval_form(ddW, CONFIG).norm() < 1e-12

    def test_dstar_adjoint_to_d_in_expectation(self):
        # paired-sample version of <dW1, W2> = <W1, d*W2>
        W1, W2 = bat.form_pairs()[0]
        res = adjointness_check(SP, GAUSS, ALL, W1, W2, RngStream(12), n_samples=600)
        assert res.passed

    def test_weitzenbock_pointwise_scalar_slot(self):
        # the potential must act on partially occupied slots too: the
        # difference of the two lifts equals the curvature-potential action
        W = bat.flat_form_battery()[3]
        assert W.name == "deg2-scalar-slot"
        cache = EvalCache(CONFIG)
        fr = lift("deRham", SP, GAUSS, W, CONFIG, cache=cache)
        fb = lift("bochner", SP, GAUSS, W, CONFIG, cache=cache)
        diff = fr + fb.scale(-1.0)
        pot = apply_r_pi_sigma(SP, GAUSS, eval_form(W, CONFIG, cache), CONFIG, W.degree)
        assert (diff + pot.scale(-1.0)).norm() < 1e-12

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            lift("heat", SP, GAUSS, bat.ou_eigenform(), CONFIG)


class TestSphereFiniteDifferences:
    def setup_method(self):
        self.sp = Sphere()
        self.inten = IntensitySpec("uniform")
        self.fd = FdScheme()
        self.p = np.array([0.6, -0.3, 0.74161984870956629])  # unit length
        e3 = np.array([0.0, 0.0, 1.0])
        self.killing = SphereSlotOne(self.sp, SphereKilling(e3))
        grad = SphereGradientField(SphereAxisField(e3, [0.0, 1.0]))
        self.gradient = SphereSlotOne(self.sp, grad)

    def om(self, slot):
        return lambda q: slot.mv_at(q, 0)

    def test_killing_is_coclosed(self):
        val = dstar_x_at(self.sp, self.inten, self.om(self.killing), self.p, self.fd)
        assert val.norm() < 1e-6

    def test_gradient_form_is_closed(self):
        val = d_x_at(self.sp, self.inten, self.om(self.gradient), self.p, self.fd)
        assert val.norm() < 1e-6

    def test_killing_bochner_eigenvalue_one(self):
        # rotation forms on the unit sphere: Delta_B = 1, Delta_R = 2
        base = self.killing.mv_at(self.p, 0)
        got = bochner_x_at(self.sp, self.inten, self.om(self.killing), self.p, self.fd)
        assert (got - base).norm() < 5e-6

    def test_killing_derham_eigenvalue_two(self):
        base = self.killing.mv_at(self.p, 0)
        got = h_r_at(self.sp, self.inten, self.om(self.killing), self.p, self.fd)
        assert (got - base * 2.0).norm() < 5e-5


class TestChecks:
    def test_dd_zero(self):
        W = bat.flat_form_battery()[1]
        res = dd_zero_check(SP, GAUSS, ALL, W, RngStream(3), n_configs=10)
        assert res.passed
        assert res.lhs < 1e-10

    def test_weitzenbock_battery_flat(self):
        for W in bat.flat_form_battery():
            res = weitzenbock_check(
                SP, GAUSS, ALL, W, RngStream(4), n_configs=8, name=W.name
            )
            assert res.passed, W.name
            assert res.lhs < 1e-8

    def test_factorization_flat(self):
        W = bat.flat_form_battery()[2]
        for kind in ("bochner", "deRham"):
            res = factorization_check(
                kind, SP, GAUSS, ALL, W, RngStream(5), n_trials=8
            )
            assert res.passed, kind

    def test_ibp_small(self):
        F1, F2, V = bat.ibp_battery()[0]
        res = ibp_check(SP, GAUSS, ALL, F1, F2, V, RngStream(6), n_samples=20_000)
        assert res.passed

    def test_dirichlet_functions_small(self):
        F1, F2 = bat.function_pairs()[0]
        res = dirichlet_check(
            SP, GAUSS, ALL, F1, F2, RngStream(7), level="functions", n_samples=20_000
        )
        assert res.passed

    def test_dirichlet_forms_small(self):
        W1, W2 = bat.form_pairs()[0]
        for level in ("bochner", "deRham"):
            res = dirichlet_check(
                SP, GAUSS, ALL, W1, W2, RngStream(8), level=level, n_samples=800
            )
            assert res.passed, level

    def test_adjointness_small(self):
        W1, W2 = bat.form_pairs()[1]
        res = adjointness_check(SP, GAUSS, ALL, W1, W2, RngStream(9), n_samples=800)
        assert res.passed

    def test_report_aggregation(self):
        r = OperatorReport("demo")
        r.checks.append(
            dd_zero_check(SP, GAUSS, ALL, bat.ou_eigenform(), RngStream(1), n_configs=4)
        )
        assert r.passed
        rows = r.rows()
        assert set(rows[0]) >= {"check", "lhs", "rhs", "stderr", "tol", "pass"}
