import math

import numpy as np
import pytest

from sgpts.errors import (
    ExplorationInfeasibleError,
    InvalidInputError,
    UnsupportedDecompositionError,
)
from sgpts.exact_gp import Dataset, fit_exact
from sgpts.kernels import KernelSpec, kernel_matrix, mercer_truncate, rff_sample, tail_mass
from sgpts.svgp import (
    SvgpModel,
    elbo,
    fit_svgp_closed_form,
    kl_to_exact,
    load_snapshot,
    predict_svgp,
    approximation_constants,
    select_inducing_greedy,
    select_inducing_kmeans,
    precision_sup_norm,
    trace_residual,
    write_snapshot,
)

SE1 = KernelSpec(family="se", dim=1, lengthscales=(0.3,))


def spread_data(rng, n, dim=1, bsz=1, y_scale=1.0):
    """Inputs jittered off a grid so grams stay well-conditioned."""
    base = np.linspace(0.05, 0.95, n)
    X = np.stack([(base + rng.uniform(-0.02, 0.02, n)) for _ in range(dim)], axis=1)
    y = y_scale * rng.normal(size=n)
    return Dataset(X, y, bsz, n // bsz)


def dense_fit_oracle(data, spec, tau, Z):
    """Closed-form optimum through plain dense inverses."""
    P = kernel_matrix(spec, Z)
    C = kernel_matrix(spec, Z, data.X)
    Sigma = P + C @ C.T / tau
    Si = np.linalg.inv(Sigma)
    return P @ Si @ C @ data.y / tau, P @ Si @ P


class TestClosedForm:
    def test_moments_match_dense_oracle(self):
        rng = np.random.default_rng(0)
        data = spread_data(rng, 14)
        Z = data.X[::3]
        model = fit_svgp_closed_form(data, SE1, 0.2, Z=Z)
        om, oS = dense_fit_oracle(data, SE1, 0.2, Z)
        assert np.abs(model.m_vec - om).max() < 1e-9
        assert np.abs(model.S_mat - oS).max() < 1e-8

    def test_empty_data_is_prior(self):
        Z = np.array([[0.1], [0.5], [0.9]])
        model = fit_svgp_closed_form(Dataset.empty(1, 2), SE1, 0.1, Z=Z)
        assert np.array_equal(model.m_vec, np.zeros(3))
        assert np.allclose(model.S_mat, kernel_matrix(SE1, Z), atol=1e-14)
        mean, var = model.predict(np.array([[0.4]]))
        assert mean[0] == 0.0
        assert np.isclose(var[0], SE1.variance, atol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_collapse_onto_exact_posterior(self, seed):
        # Z = X makes the variational optimum reproduce the exact GP; the
        # lengthscales keep the gram condition number below ~1e7
        rng = np.random.default_rng(seed)
        dim = 1 + seed % 2
        spec = KernelSpec(family="se", dim=dim, lengthscales=(0.14 if dim == 1 else 0.3,) * dim)
        data = spread_data(rng, 12, dim=dim)
        tau = float(rng.uniform(0.05, 0.5))
        model = fit_svgp_closed_form(data, spec, tau, Z=data.X)
        exact = fit_exact(data, spec, tau)
        Xq = rng.uniform(0, 1, size=(15, dim))
        em, ev = exact.predict(Xq)
        am, av = model.predict(Xq)
        assert np.abs(am - em).max() < 1e-6
        assert np.abs(av - ev).max() < 1e-6
        assert np.abs(model.cov(Xq[:5]) - exact.cov(Xq[:5])).max() < 1e-6
        assert abs(elbo(data, model) - exact.log_marginal()) < 1e-6
        assert trace_residual(data, model) <= 1e-8

    def test_features_variant_with_full_map_nears_exact(self):
        rng = np.random.default_rng(3)
        data = spread_data(rng, 10)
        fm = mercer_truncate(SE1, 60, [0.0], [1.0])
        model = fit_svgp_closed_form(data, SE1, 0.3, feature_map=fm, m=60)
        exact = fit_exact(data, SE1, 0.3)
        Xq = np.linspace(0.1, 0.9, 20).reshape(-1, 1)
        em, ev = exact.predict(Xq)
        am, av = model.predict(Xq)
        assert np.abs(am - em).max() < 1e-4
        assert np.abs(av - ev).max() < 1e-4

    def test_predict_svgp_scalar_interface(self):
        rng = np.random.default_rng(4)
        data = spread_data(rng, 8)
        model = fit_svgp_closed_form(data, SE1, 0.2, Z=data.X[::2])
        mean, cov = predict_svgp(model, [0.5], [0.6])
        assert np.isfinite(mean) and np.isfinite(cov)
        assert np.isclose(cov, model.cov([[0.5]], [[0.6]])[0, 0], atol=1e-14)

    def test_rff_map_rejected_for_features_variant(self):
        data = spread_data(np.random.default_rng(5), 8)
        fm = rff_sample(SE1, 16, seed=0)
        with pytest.raises(UnsupportedDecompositionError):
            fit_svgp_closed_form(data, SE1, 0.2, feature_map=fm, m=8)


class TestElbo:
    def test_optimum_beats_perturbations(self):
        rng = np.random.default_rng(6)
        data = spread_data(rng, 12)
        Z = data.X[::2]
        model = fit_svgp_closed_form(data, SE1, 0.25, Z=Z)
        best = elbo(data, model)
        for _ in range(20):
            dm = rng.normal(scale=0.1, size=model.m_count)
            v = rng.normal(size=model.m_count)
            dS = 0.05 * np.outer(v, v)
            other = SvgpModel(
                spec=SE1, tau=0.25, m_vec=model.m_vec + dm, S_mat=model.S_mat + dS, Z=Z
            )
            assert elbo(data, other) <= best + 1e-10

    def test_matches_collapsed_expression_at_optimum(self):
        rng = np.random.default_rng(7)
        data = spread_data(rng, 10)
        Z = data.X[::2]
        model = fit_svgp_closed_form(data, SE1, 0.3, Z=Z)
        K_zx = kernel_matrix(SE1, Z, data.X)
        Q = K_zx.T @ np.linalg.solve(kernel_matrix(SE1, Z), K_zx)
        theta = float(np.trace(kernel_matrix(SE1, data.X) - Q))
        Qn = Q + 0.3 * np.eye(data.n)
        want = -0.5 * data.y @ np.linalg.solve(Qn, data.y)
        want -= 0.5 * np.linalg.slogdet(Qn)[1]
        want -= 0.5 * data.n * math.log(2 * math.pi) + theta / 0.6
        assert np.isclose(elbo(data, model), want, atol=1e-8)

    def test_monotone_under_nested_inducing_sets(self):
        rng = np.random.default_rng(8)
        sharp = KernelSpec(family="se", dim=1, lengthscales=(0.14,))
        data = spread_data(rng, 12)
        Z_full = select_inducing_greedy(data, sharp, 12)
        vals = []
        for m in range(1, 13):
            model = fit_svgp_closed_form(data, sharp, 0.2, Z=Z_full[:m])
            vals.append(elbo(data, model))
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_below_log_marginal_with_certified_gap(self):
        # 0 <= log p(y) - elbo <= theta/(2 tau) + slack, slack = theta (1 + |y|^2/tau) / (2 tau)
        rng = np.random.default_rng(9)
        for _ in range(5):
            data = spread_data(rng, 10, y_scale=0.5)
            Z = data.X[:5]
            tau = 0.4
            model = fit_svgp_closed_form(data, SE1, tau, Z=Z)
            gap = fit_exact(data, SE1, tau).log_marginal() - elbo(data, model)
            theta = trace_residual(data, model)
            slack = theta * (1.0 + float(data.y @ data.y) / tau) / (2 * tau)
            assert -1e-9 <= gap <= theta / (2 * tau) + slack + 1e-9

    def test_empty_data_convention(self):
        model = fit_svgp_closed_form(Dataset.empty(1, 1), SE1, 0.1, Z=np.array([[0.5]]))
        assert elbo(Dataset.empty(1, 1), model) == 0.0


class TestTraceResidual:
    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(10)
        data = spread_data(rng, 11)
        Z = data.X[::4]
        model = fit_svgp_closed_form(data, SE1, 0.2, Z=Z)
        K_zx = kernel_matrix(SE1, Z, data.X)
        Q = K_zx.T @ np.linalg.solve(kernel_matrix(SE1, Z), K_zx)
        want = float(np.trace(kernel_matrix(SE1, data.X) - Q))
        assert np.isclose(trace_residual(data, model), want, atol=1e-9)

    def test_features_variant_bounded_by_tail_mass(self):
        rng = np.random.default_rng(11)
        data = spread_data(rng, 12, bsz=3)
        fm = mercer_truncate(SE1, 80, [0.0], [1.0])
        for m in (6, 10, 16):
            model = fit_svgp_closed_form(data, SE1, 0.2, feature_map=fm, m=m)
            theta = trace_residual(data, model)
            bound = data.n * tail_mass(fm, m, 80)
            assert 0.0 <= theta <= bound

    def test_shrinks_as_m_grows(self):
        rng = np.random.default_rng(12)
        sharp = KernelSpec(family="se", dim=1, lengthscales=(0.14,))
        data = spread_data(rng, 12)
        Z_full = select_inducing_greedy(data, sharp, 12)
        thetas = [
            trace_residual(data, fit_svgp_closed_form(data, sharp, 0.2, Z=Z_full[:m]))
            for m in range(1, 13)
        ]
        assert all(b <= a + 1e-10 for a, b in zip(thetas, thetas[1:]))


class TestKlCertificate:
    def kl_oracle(self, data, model, spec, tau):
        exact = fit_exact(data, spec, tau)
        mu_e = exact.predict(data.X)[0]
        S_e = exact.cov(data.X) + 1e-12 * np.eye(data.n)
        mu_a, _ = model.predict(data.X)
        S_a = model.cov(data.X) + 1e-12 * np.eye(data.n)
        Si = np.linalg.inv(S_e)
        d = mu_e - mu_a
        return 0.5 * (
            np.trace(Si @ S_a)
            + d @ Si @ d
            - data.n
            + np.linalg.slogdet(S_e)[1]
            - np.linalg.slogdet(S_a)[1]
        )

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(13)
        data = spread_data(rng, 9)
        model = fit_svgp_closed_form(data, SE1, 0.3, Z=data.X[::2])
        want = self.kl_oracle(data, model, SE1, 0.3)
        assert np.isclose(kl_to_exact(data, model), want, atol=1e-8)

    @pytest.mark.parametrize("seed", range(3))
    def test_feature_variant_certificate(self, seed):
        # KL at training inputs stays under theta / tau when the tail is thin
        rng = np.random.default_rng(100 + seed)
        data = spread_data(rng, 12, bsz=3, y_scale=0.5)
        fm = mercer_truncate(SE1, 80, [0.0], [1.0])
        model = fit_svgp_closed_form(data, SE1, 0.5, feature_map=fm, m=14)
        kl = kl_to_exact(data, model)
        theta = trace_residual(data, model)
        assert kl <= theta / 0.5
        assert kl >= 0.0


class TestInducingSelection:
    def test_greedy_first_pick_is_lowest_index(self):
        rng = np.random.default_rng(14)
        data = spread_data(rng, 10)
        Z = select_inducing_greedy(data, SE1, 3)
        assert np.array_equal(Z[0], data.X[0])

    def test_greedy_rows_are_distinct_inputs(self):
        rng = np.random.default_rng(15)
        data = spread_data(rng, 15)
        Z = select_inducing_greedy(data, SE1, 8)
        assert np.unique(Z, axis=0).shape[0] == 8

    def test_greedy_residual_never_increases(self):
        rng = np.random.default_rng(16)
        data = spread_data(rng, 12)
        Z_full = select_inducing_greedy(data, SE1, 12)
        prev = np.inf
        for m in range(1, 13):
            model = fit_svgp_closed_form(data, SE1, 0.2, Z=Z_full[:m])
            theta = trace_residual(data, model)
            assert theta <= prev + 1e-12
            prev = theta

    def test_greedy_m_range_checked(self):
        data = spread_data(np.random.default_rng(17), 5)
        with pytest.raises(InvalidInputError):
            select_inducing_greedy(data, SE1, 6)

    def test_kmeans_recovers_distinct_points(self):
        rng = np.random.default_rng(18)
        X = rng.uniform(0, 1, size=(7, 2))
        data = Dataset(X, np.zeros(7), 1, 7)
        Z = select_inducing_kmeans(data, 7, seed=5)
        assert np.allclose(np.sort(Z, axis=0), np.sort(X, axis=0), atol=1e-12)

    def test_kmeans_deterministic(self):
        rng = np.random.default_rng(19)
        data = Dataset(rng.uniform(0, 1, size=(30, 2)), np.zeros(30), 1, 30)
        a = select_inducing_kmeans(data, 5, seed=7)
        b = select_inducing_kmeans(data, 5, seed=7)
        assert np.array_equal(a, b)

    def test_kmeans_m_exceeding_distinct_points(self):
        X = np.array([[0.0], [0.0], [1.0]])
        data = Dataset(X, np.zeros(3), 1, 3)
        with pytest.raises(InvalidInputError):
            select_inducing_kmeans(data, 3, seed=0)

    def test_kmeans_centers_reduce_sse(self):
        rng = np.random.default_rng(20)
        X = rng.uniform(0, 1, size=(40, 2))
        data = Dataset(X, np.zeros(40), 1, 40)
        Z = select_inducing_kmeans(data, 4, seed=3)
        d2 = np.sum((X[:, None, :] - Z[None, :, :]) ** 2, axis=2)
        sse = d2.min(axis=1).sum()
        rng_init = np.random.default_rng(99)
        Z0 = X[rng_init.choice(40, 4, replace=False)]
        sse0 = np.sum((X[:, None, :] - Z0[None, :, :]) ** 2, axis=2).min(axis=1).sum()
        assert sse <= sse0 + 1e-9


class TestApproximationConstants:
    def test_feature_variant_worked_example(self):
        q = approximation_constants(
            t=1, B=1, m_t=8, tau=1.0, delta=0.05, delta_m=0.005, delta_M=1e-6,
            prec_norm=2.0, variant="features",
        )
        assert np.isclose(q.kappa, 0.01, atol=1e-15)
        assert np.isclose(q.c, 0.1, atol=1e-15)
        assert np.isclose(q.a_over, math.sqrt(1 + math.sqrt(0.03)), atol=1e-12)
        assert np.isclose(q.a_under, 1 / math.sqrt(1 - math.sqrt(0.03)), atol=1e-12)
        assert np.isclose(q.a_over, 1.0831, atol=2e-4)
        assert np.isclose(q.a_under, 1.0998, atol=2e-4)

    def test_points_variant_formula(self):
        q = approximation_constants(
            t=2, B=3, m_t=4, tau=0.5, delta=0.1, delta_m=1e-4, delta_M=1e-5,
            prec_norm=3.0, variant="points", eps0=1e-5,
        )
        want = 2 * 2 * 3 * 5 * 1e-4 / (0.5 * 0.1) + 4 * 2 * 3 * 1e-5 / (0.5 * 0.1)
        assert np.isclose(q.kappa, want, atol=1e-15)
        assert np.isclose(q.eps, math.sqrt(3.0 * 4 * 1e-5), atol=1e-15)

    def test_infeasible_kappa_raises(self):
        with pytest.raises(ExplorationInfeasibleError):
            approximation_constants(
                t=1, B=1, m_t=8, tau=1.0, delta=0.05, delta_m=0.5, delta_M=0.0,
                prec_norm=1.0, variant="features",
            )

    def test_precision_sup_norm(self):
        rng = np.random.default_rng(21)
        data = spread_data(rng, 8)
        model = fit_svgp_closed_form(data, SE1, 0.2, Z=data.X[::2])
        Pinv = np.linalg.inv(kernel_matrix(SE1, model.Z))
        assert np.isclose(precision_sup_norm(model), 1 + np.abs(Pinv).sum(axis=1).max(), atol=1e-7)


class TestSnapshot:
    def test_points_round_trip(self):
        rng = np.random.default_rng(22)
        data = spread_data(rng, 10)
        model = fit_svgp_closed_form(data, SE1, 0.2, Z=data.X[::2])
        back = load_snapshot(write_snapshot(model))
        Xq = rng.uniform(0, 1, size=(6, 1))
        m0, v0 = model.predict(Xq)
        m1, v1 = back.predict(Xq)
        assert np.abs(m0 - m1).max() < 1e-12
        assert np.abs(v0 - v1).max() < 1e-12

    def test_features_round_trip(self):
        rng = np.random.default_rng(23)
        data = spread_data(rng, 9)
        fm = mercer_truncate(SE1, 40, [0.0], [1.0])
        model = fit_svgp_closed_form(data, SE1, 0.3, feature_map=fm, m=10)
        back = load_snapshot(write_snapshot(model))
        Xq = rng.uniform(0, 1, size=(6, 1))
        assert np.allclose(back.predict(Xq)[0], model.predict(Xq)[0], atol=1e-12)
        assert np.allclose(back.predict(Xq)[1], model.predict(Xq)[1], atol=1e-12)

    def test_missing_field_rejected(self):
        with pytest.raises(InvalidInputError):
            load_snapshot("variant=points\ntau=0.1\n")
