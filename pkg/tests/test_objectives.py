"""Unit tests for objective oracles, logistic regression, and PL envelopes."""

import numpy as np
import pytest

from nsslab import objectives
from nsslab.objectives import (LogisticModel, check_nonseparable,
                               estimate_kpl_envelope, fit_theta_star,
                               gradient_bound_check, limiting_ray_slope,
                               load_logistic_csv, logistic_gradient,
                               logistic_hessian, logistic_lipschitz_constant,
                               logistic_loss, logistic_objective,
                               quadratic_objective, verify_pl)


def demo_model(n=2, N=200, seed=42):
    rng = np.random.default_rng(seed)
    X1 = rng.standard_normal((N // 2, n)) + np.array([0.7, 0.3])[:n]
    X0 = rng.standard_normal((N // 2, n)) - np.array([0.7, 0.3])[:n]
    X = np.vstack([X1, X0]).T
    y = np.r_[np.ones(N // 2), np.zeros(N // 2)]
    return LogisticModel(X=X, y=y)


class TestQuadratic:
    def test_minimizer_and_value(self):
        A = np.diag([1.0, 4.0])
        b = np.array([2.0, 4.0])
        obj = quadratic_objective(A, b)
        assert np.allclose(obj.minimizer, [2.0, 1.0])
        assert abs(obj.value_at(obj.minimizer) - obj.optimum_value) <= 1e-12
        assert np.allclose(obj.gradient_at(obj.minimizer), 0.0)

    def test_pl_identity_exact(self):
        # |grad|^2 = 2 lambda_min h exactly when A = lambda I
        obj = quadratic_objective(2.0 * np.eye(3), np.zeros(3))
        z = np.array([1.0, -2.0, 0.5])
        h = obj.value_at(z) - obj.optimum_value
        mu = float(obj.envelope.mu(h))
        assert abs(np.linalg.norm(obj.gradient_at(z)) - mu) <= 1e-9

    def test_batched_value_and_gradient(self):
        obj = quadratic_objective(np.eye(2), np.zeros(2))
        zs = np.random.default_rng(0).standard_normal((7, 2))
        vals = np.asarray(obj.value(zs))
        grads = np.asarray(obj.gradient(zs))
        assert vals.shape == (7,)
        assert grads.shape == (7, 2)
        for z, v, g in zip(zs, vals, grads):
            assert abs(v - obj.value_at(z)) <= 1e-12
            assert np.allclose(g, obj.gradient_at(z))


class TestLogisticBasics:
    def test_loss_symmetry_at_zero(self):
        model = demo_model()
        assert abs(logistic_loss(model, np.zeros(2)) - np.log(2.0)) <= 1e-12

    def test_gradient_matches_fd(self):
        model = demo_model()
        theta = np.array([0.3, -0.8])
        g = logistic_gradient(model, theta)
        h = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (logistic_loss(model, theta + e)
                  - logistic_loss(model, theta - e)) / (2 * h)
            assert abs(g[i] - fd) <= 1e-6

    def test_hessian_matches_fd(self):
        model = demo_model()
        theta = np.array([0.3, -0.8])
        H = logistic_hessian(model, theta)
        h = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (logistic_gradient(model, theta + e)
                  - logistic_gradient(model, theta - e)) / (2 * h)
            assert np.max(np.abs(H[:, i] - fd)) <= 1e-5

    def test_hessian_bound(self):
        model = demo_model()
        L = logistic_lipschitz_constant(model)
        rng = np.random.default_rng(1)
        for theta in rng.standard_normal((50, 2)) * 5.0:
            top = np.linalg.norm(logistic_hessian(model, theta), 2)
            assert top <= L + 1e-9

    def test_gradient_bound_including_long_rays(self):
        model = demo_model()
        rng = np.random.default_rng(2)
        thetas = np.vstack([rng.standard_normal((50, 2)),
                            1e3 * rng.standard_normal((50, 2))])
        rep = gradient_bound_check(model, thetas)
        assert rep.holds


class TestFitThetaStar:
    def test_stationary_point(self):
        model = demo_model()
        theta = fit_theta_star(model)
        assert np.linalg.norm(logistic_gradient(model, theta)) <= 1e-10

    def test_objective_wiring(self):
        model = demo_model()
        obj = logistic_objective(model)
        assert abs(obj.value_at(obj.minimizer) - obj.optimum_value) <= 1e-12
        assert np.linalg.norm(obj.gradient_at(obj.minimizer)) <= 1e-8


class TestSeparability:
    def test_separable_pair(self):
        model = LogisticModel(X=np.array([[-1.0], [1.0]]).T,
                              y=np.array([0.0, 1.0]))
        assert check_nonseparable(model).separable

    def test_duplicate_x_not_separable(self):
        model = LogisticModel(X=np.array([[0.5], [0.5]]).T,
                              y=np.array([0.0, 1.0]))
        assert not check_nonseparable(model).separable

    def test_xor_not_separable(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]).T
        y = np.array([0.0, 1.0, 1.0, 0.0])
        assert not check_nonseparable(LogisticModel(X=X, y=y)).separable

    def test_demo_dataset_not_separable(self):
        assert not check_nonseparable(demo_model()).separable


class TestRaySlopes:
    def test_limiting_slope_positive_when_nonseparable(self):
        model = demo_model()
        for d in (np.array([1.0, 0.0]), np.array([-0.6, 0.8])):
            assert limiting_ray_slope(model, d) > 0.0


class TestEnvelope:
    def test_quadratic_recovery(self):
        # the direction-uniform envelope of lambda I recovers sqrt(2 lambda h)
        obj = quadratic_objective(np.eye(3), np.zeros(3))
        env = estimate_kpl_envelope(obj, np.zeros(3), n_dirs=32, seed=2)
        hs = np.geomspace(1e-3, 10.0, 60)
        ratio = np.asarray(env.mu(hs)) / np.sqrt(2.0 * hs)
        assert np.all(ratio >= 0.98)
        assert np.all(ratio <= 1.02)

    def test_envelope_verifies_on_held_out(self):
        model = demo_model()
        obj = logistic_objective(model)
        env = estimate_kpl_envelope(obj, obj.minimizer, n_dirs=256, seed=1)
        rng = np.random.default_rng(7)
        held = obj.minimizer + np.vstack(
            [s * rng.standard_normal((334, 2)) for s in (0.1, 1.0, 10.0)])
        rep = verify_pl(obj, env, held)
        assert rep.clean

    def test_quadratic_classic_envelope_zero_violations(self):
        obj = quadratic_objective(np.diag([1.0, 3.0]), np.zeros(2))
        pts = np.random.default_rng(3).standard_normal((200, 2)) * 4.0
        rep = verify_pl(obj, obj.envelope, pts)
        assert rep.clean

    def test_nonstationary_center_rejected(self):
        obj = logistic_objective(demo_model())
        with pytest.raises(ValueError):
            estimate_kpl_envelope(obj, obj.minimizer + 1.0, n_dirs=8)


class TestCsv:
    def test_dataset_roundtrip(self, tmp_path):
        import csv
        model = demo_model()
        f = tmp_path / "data.csv"
        with open(f, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "label"])
            for col, lab in zip(model.X.T, model.y):
                w.writerow([format(col[0], ".17g"), format(col[1], ".17g"),
                            int(lab)])
        back = load_logistic_csv(str(f))
        assert np.array_equal(back.X, model.X)
        assert np.array_equal(back.y, model.y)

    def test_envelope_export(self, tmp_path):
        obj = quadratic_objective(np.eye(2), np.zeros(2))
        env = estimate_kpl_envelope(obj, np.zeros(2), n_dirs=8, seed=0)
        f = tmp_path / "env.csv"
        objectives.envelope_to_csv(env, str(f))
        data = np.loadtxt(f, delimiter=",", skiprows=1)
        assert data.shape[1] == 2
        assert np.all(np.diff(data[:, 0]) > 0)
