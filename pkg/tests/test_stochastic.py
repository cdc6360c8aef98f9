import math

import numpy as np
import pytest

from poissonforms import batteries as bat
from poissonforms.forms import CylinderFunction, Exp, Linear
from poissonforms.fields import monomial
from poissonforms.geometry import Euclidean, IntensitySpec, Sphere
from poissonforms.pointprocess import Configuration, RngStream
from poissonforms.stochastic import (
    BlockPotential,
    FrameMatrix,
    SdeConfig,
    curvature_potential,
    domination_check,
    eigen_decay_check,
    frame_bound_check,
    generator_check,
    generator_check_function,
    parallel_translate,
    poisson_invariance_check,
    semigroup_T0,
    semigroup_Tn,
    semigroup_property_check,
    simulate_particles,
    simulate_sde,
    sphere_uniform_check,
    zero_potential,
)

SP = Euclidean(2)
GAUSS = IntensitySpec("gaussian", 1.0)


def ou_discrete_moments(x0: float, t: float, dt_target: float) -> tuple[float, float]:
    """Exact per-coordinate moments of the Euler chain for dX = -X dt + sqrt(2) dB."""
    K = max(1, int(round(t / dt_target)))
    dt = t / K
    a = 1.0 - dt
    mean = x0 * a**K
    var = 2.0 * dt * sum(a ** (2 * j) for j in range(K))
    return mean, var


class TestSdeConfig:
    def test_step_hits_horizon_exactly(self):
        cfg = SdeConfig(t=0.25, dt=0.009)
        assert cfg.n_steps * cfg.step == pytest.approx(0.25, abs=0)

    def test_validation(self):
        with pytest.raises(ValueError):
            SdeConfig(t=-1.0)
        with pytest.raises(ValueError):
            SdeConfig(t=0.1, dt=0.2)
        with pytest.raises(ValueError):
            SdeConfig(t=0.1, scheme="milstein")

    def test_with_horizon_keeps_granularity(self):
        cfg = SdeConfig(t=0.5, dt=0.01)
        assert SdeConfig(t=0.5, dt=0.01).with_horizon(0.25).dt == 0.01


class TestSimulation:
    def test_ou_marginal_moments(self):
        # all particles from one start: marginal is the exact Euler chain,
        # Gaussian with computable mean and variance
        x0 = np.array([1.0, 0.5])
        gamma = Configuration(np.tile(x0, (6000, 1)))
        cfg = SdeConfig(t=0.5, dt=0.01)
        path = simulate_particles(SP, GAUSS, gamma, cfg, RngStream(21), keep_paths=False)
        X = path.final()
        m_chain, v_chain = ou_discrete_moments(1.0, 0.5, 0.01)
        for c, x0c in enumerate(x0):
            mean_c = x0c * m_chain  # chain mean scales linearly in x0
            se = math.sqrt(v_chain / X.shape[0])
            assert abs(X[:, c].mean() - mean_c) < 4.0 * se
            v = X[:, c].var(ddof=1)
            assert abs(v / v_chain - 1.0) < 0.1
        # continuous-time targets are close at this step size
        assert abs(m_chain - math.exp(-0.5)) < 3e-3
        assert abs(v_chain - (1.0 - math.exp(-1.0))) < 8e-3

    def test_single_path_deterministic(self):
        ts, p1 = simulate_sde(SP, GAUSS, np.array([0.3, -0.2]), SdeConfig(0.2), RngStream(3))
        _, p2 = simulate_sde(SP, GAUSS, np.array([0.3, -0.2]), SdeConfig(0.2), RngStream(3))
        assert np.array_equal(p1, p2)
        assert ts[0] == 0.0 and ts[-1] == pytest.approx(0.2)

    def test_sphere_paths_stay_on_sphere(self):
        sp = Sphere()
        gamma = Configuration(
            np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        )
        cfg = SdeConfig(t=0.3, dt=5e-3, scheme="geodesic-em")
        path = simulate_particles(sp, IntensitySpec("uniform"), gamma, cfg, RngStream(4))
        norms = np.linalg.norm(path.paths, axis=-1)
        assert np.max(np.abs(norms - 1.0)) < 1e-12

    def test_empty_configuration(self):
        path = simulate_particles(
            SP, GAUSS, Configuration(np.zeros((0, 2))), SdeConfig(0.1), RngStream(5)
        )
        assert path.n_particles == 0


class TestScalarSemigroup:
    def test_t0_gaussian_chain_oracle(self):
        # F = e^{w <x_1>} on a single point: the Euler chain is Gaussian, so
        # E e^{w X_1(t)} = exp(w m + w^2 v / 2) exactly for the chain
        w, x0, t = -0.7, 0.9, 0.4
        F = CylinderFunction(Exp([w]), (monomial(2, (1, 0)),))
        gamma = Configuration(np.array([[x0, 0.2]]))
        cfg = SdeConfig(t=t, dt=0.01)
        est = semigroup_T0(SP, GAUSS, F, gamma, t, cfg, 40_000, RngStream(11))
        m, v = ou_discrete_moments(x0, t, 0.01)
        target = math.exp(w * m + w * w * v / 2.0)
        assert abs(est.mean - target) < 4.0 * est.stderr + 1e-12

    def test_t0_exact_cases(self):
        F = CylinderFunction(Exp([-0.5]), (monomial(2, (1, 0)),))
        gamma = Configuration(np.array([[0.4, -0.1]]))
        cfg = SdeConfig(t=0.2, dt=0.01)
        at0 = semigroup_T0(SP, GAUSS, F, gamma, 0.0, cfg, 10, RngStream(1))
        assert at0.mean == pytest.approx(F.value(gamma.points)) and at0.stderr == 0.0
        empty = semigroup_T0(
            SP, GAUSS, F, Configuration(np.zeros((0, 2))), 0.2, cfg, 10, RngStream(1)
        )
        assert empty.mean == pytest.approx(1.0)

    def test_semigroup_property(self):
        F = bat.generator_functions()[0]
        gamma = Configuration(np.array([[0.3, -0.2], [-0.5, 0.4]]))
        res = semigroup_property_check(
            SP, GAUSS, F, gamma, 0.15, 0.1, SdeConfig(0.25, 0.01),
            n_outer=200, n_inner=200, rng=RngStream(33),
        )
        assert res.passed


class TestFrameTransport:
    def test_constant_scalar_potential_is_exact(self):
        gamma = Configuration(np.array([[0.5, -0.3]]))
        cfg = SdeConfig(t=0.3, dt=0.01)
        path = simulate_particles(SP, GAUSS, gamma, cfg, RngStream(8))
        J = BlockPotential(1, scalar=-0.4)
        fm = parallel_translate(SP, path, J, 1)
        assert abs(fm.norm() - math.exp(-0.12)) < 1e-13
        assert fm.c_sup == pytest.approx(-0.4)
        assert fm.bound_ok(cfg.step)

    def test_empty_fibre_guard(self):
        gamma = Configuration(np.array([[0.5, -0.3], [0.1, 0.2]]))
        path = simulate_particles(SP, GAUSS, gamma, SdeConfig(0.1), RngStream(9))
        fm = parallel_translate(SP, path, zero_potential(1), 1, subset=[0, 1])
        assert fm.P.shape == (0, 0)
        assert fm.norm() == 0.0

    def test_generic_block_matches_scalar_on_gaussian(self):
        # the gaussian curvature potential is scalar; forcing the generic ODE
        # path must approximate the same transport to O(dt)
        gamma = Configuration(np.array([[0.5, -0.3]]))
        cfg = SdeConfig(t=0.2, dt=2e-3)
        path = simulate_particles(SP, GAUSS, gamma, cfg, RngStream(10))
        J_fast = curvature_potential(SP, GAUSS, 1)
        J_slow = curvature_potential(SP, GAUSS, 1, allow_scalar=False)
        assert J_fast.scalar == -1.0 and J_slow.scalar is None
        f1 = parallel_translate(SP, path, J_fast, 1)
        f2 = parallel_translate(SP, path, J_slow, 1)
        assert np.allclose(f1.P, f2.P, atol=1e-12)

    def test_frame_bound_check(self):
        gamma = Configuration(np.array([[0.4, 0.1], [-0.2, 0.3]]))
        res = frame_bound_check(
            SP, GAUSS, gamma, curvature_potential(SP, GAUSS, 1), 1,
            SdeConfig(0.25, 0.01), n_paths=10, rng=RngStream(13),
        )
        assert res.passed


class TestFormSemigroup:
    def setup_method(self):
        self.W = bat.ou_eigenform()
        self.gamma = Configuration(np.array([[0.7, -0.4]]))
        self.cfg = SdeConfig(t=0.25, dt=0.01)

    def test_derham_decay_rate_two(self):
        J = curvature_potential(SP, GAUSS, 1)  # -R twist
        res = eigen_decay_check(
            SP, GAUSS, self.W, self.gamma, 0.25, 2.0, J, self.cfg, 3000, RngStream(42)
        )
        assert res.passed

    def test_bochner_decay_rate_one(self):
        res = eigen_decay_check(
            SP, GAUSS, self.W, self.gamma, 0.25, 1.0, zero_potential(1),
            self.cfg, 3000, RngStream(43),
        )
        assert res.passed

    def test_estimates_deterministic(self):
        J = curvature_potential(SP, GAUSS, 1)
        a = semigroup_Tn(SP, GAUSS, self.W, self.gamma, 0.2, J, self.cfg, 500, RngStream(7))
        b = semigroup_Tn(SP, GAUSS, self.W, self.gamma, 0.2, J, self.cfg, 500, RngStream(7))
        assert set(a.entries) == set(b.entries)
        for k in a.entries:
            assert a.entries[k].mean == b.entries[k].mean
            assert a.entries[k].stderr == b.entries[k].stderr

    def test_mean_form_against_decayed_target(self):
        from poissonforms.forms import eval_form

        J = curvature_potential(SP, GAUSS, 1)
        est = semigroup_Tn(
            SP, GAUSS, self.W, self.gamma, 0.25, J, self.cfg, 2000, RngStream(15)
        )
        target = eval_form(self.W, self.gamma).scale(math.exp(-2.0 * 0.25))
        dist, se = est.against(target)
        assert dist < 4.0 * se + 5e-3  # O(dt) discretization allowance

    def test_domination(self):
        J = curvature_potential(SP, GAUSS, 1)
        res = domination_check(
            SP, GAUSS, self.W, self.gamma, 0.3, J, self.cfg, 400, RngStream(44)
        )
        assert res.passed


class TestGenerator:
    def test_form_generator_derham(self):
        rep = generator_check(
            SP, GAUSS, bat.ou_eigenform(),
            [Configuration(c) for c in bat.flat_configs()][:1],
            "deRham", n_samples=4000, rng=RngStream(50),
        )
        assert rep.passed

    def test_function_generator(self):
        F = bat.generator_functions()[0]
        rep = generator_check_function(
            SP, GAUSS, F,
            [Configuration(c) for c in bat.flat_configs()][:1],
            n_samples=4000, rng=RngStream(51),
        )
        assert rep.passed


class TestLawPreservation:
    def test_poisson_invariance_small(self):
        res = poisson_invariance_check(
            SP, GAUSS, 0.3, SdeConfig(0.3, 0.01), 600, RngStream(60)
        )
        assert res.passed

    def test_poisson_invariance_rejects_uniform(self):
        with pytest.raises(ValueError):
            poisson_invariance_check(
                SP, IntensitySpec("uniform"), 0.3, SdeConfig(0.3, 0.01), 10, RngStream(1)
            )

    def test_sphere_uniform_small(self):
        res = sphere_uniform_check(0.4, SdeConfig(0.4, 0.01, "geodesic-em"), 4000, RngStream(61))
        assert res.passed
