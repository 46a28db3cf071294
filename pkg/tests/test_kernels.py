import math

import numpy as np
import pytest

from sgpts.errors import InvalidInputError, UnsupportedDecompositionError
from sgpts.kernels import (
    FeatureMap,
    KernelSpec,
    eval_kernel,
    kernel_matrix,
    mercer_truncate,
    rff_sample,
    tail_mass,
)


def se(dim=1, ls=0.5, var=1.0):
    return KernelSpec(family="se", dim=dim, lengthscales=(ls,) * dim, variance=var)


def matern(nu, dim=1, ls=1.0, var=1.0):
    return KernelSpec(family="matern", dim=dim, lengthscales=(ls,) * dim, variance=var, nu=nu)


class TestClosedForms:
    def test_se_unit_distance(self):
        # r = |0-1|/0.5 = 2, k = exp(-r^2/2) = exp(-2)
        assert np.isclose(eval_kernel(se(ls=0.5), [0.0], [1.0]), math.exp(-2.0), atol=1e-12)

    def test_matern25_unit_distance(self):
        want = (1.0 + math.sqrt(5.0) + 5.0 / 3.0) * math.exp(-math.sqrt(5.0))
        assert np.isclose(eval_kernel(matern(2.5), [0.0], [1.0]), want, atol=1e-12)

    def test_matern15_direct_formula(self):
        r = 0.7
        want = 0.8 * (1.0 + math.sqrt(3.0) * r) * math.exp(-math.sqrt(3.0) * r)
        got = eval_kernel(matern(1.5, var=0.8), [0.0], [r])
        assert np.isclose(got, want, atol=1e-12)

    def test_anisotropic_lengthscales(self):
        spec = KernelSpec(family="se", dim=2, lengthscales=(0.5, 2.0))
        r2 = (1.0 / 0.5) ** 2 + (1.0 / 2.0) ** 2
        assert np.isclose(eval_kernel(spec, [0.0, 0.0], [1.0, 1.0]), math.exp(-r2 / 2), atol=1e-12)

    def test_diagonal_equals_variance(self):
        for spec in (se(var=0.3), matern(1.5, var=0.9), matern(2.5)):
            assert np.isclose(eval_kernel(spec, [0.2], [0.2]), spec.variance, atol=1e-14)


class TestSpecValidation:
    def test_variance_cap(self):
        with pytest.raises(InvalidInputError):
            KernelSpec(family="se", dim=1, lengthscales=(0.5,), variance=1.5)

    def test_matern_nu_whitelist(self):
        with pytest.raises(InvalidInputError):
            KernelSpec(family="matern", dim=1, lengthscales=(0.5,), nu=0.5)

    def test_nonpositive_lengthscale(self):
        with pytest.raises(InvalidInputError):
            KernelSpec(family="se", dim=1, lengthscales=(0.0,))

    def test_bad_family(self):
        with pytest.raises(InvalidInputError):
            KernelSpec(family="rq", dim=1, lengthscales=(0.5,))


def test_gram_psd_random_sets():
    # min eigenvalue >= -1e-10 across families and dimensions
    rng = np.random.default_rng(7)
    for spec in (se(dim=3, ls=0.4), matern(1.5, dim=2, ls=0.7), matern(2.5, dim=1, ls=0.3)):
        X = rng.uniform(-1, 1, size=(40, spec.dim))
        w = np.linalg.eigvalsh(kernel_matrix(spec, X))
        assert w.min() >= -1e-10


def test_kernel_bounded_by_variance():
    rng = np.random.default_rng(8)
    spec = se(dim=2, ls=0.3, var=0.7)
    X = rng.uniform(-2, 2, size=(30, 2))
    K = kernel_matrix(spec, X)
    assert K.max() <= spec.variance + 1e-12


class TestMercer:
    def test_reconstruction_bulk_1d(self):
        # 50 random pairs in the central half of [0,1], M=8, tol 1e-3
        spec = se(ls=0.3)
        fm = mercer_truncate(spec, 8, [0.0], [1.0])
        rng = np.random.default_rng(11)
        x = rng.uniform(0.25, 0.75, size=(50, 1))
        y = rng.uniform(0.25, 0.75, size=(50, 1))
        rec = np.sum(fm.lambdas * fm.features(x) * fm.features(y), axis=1)
        exact = np.array([eval_kernel(spec, xi, yi) for xi, yi in zip(x, y)])
        assert np.abs(rec - exact).max() <= 1e-3

    def test_reconstruction_converges_with_m(self):
        spec = se(ls=0.25)
        grid = np.linspace(0, 1, 40).reshape(-1, 1)
        exact = kernel_matrix(spec, grid)
        errs = []
        for M in (4, 16, 64):
            fm = mercer_truncate(spec, M, [0.0], [1.0])
            errs.append(np.abs(fm.reconstruct(grid) - exact).max())
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-8

    def test_tensor_products_match_enumeration_oracle(self):
        # d=2: brute-force all order pairs (i,j), sort products, compare top-4
        spec = KernelSpec(family="se", dim=2, lengthscales=(0.4, 0.6))
        fm = mercer_truncate(spec, 4, [0.0, 0.0], [1.0, 1.0])

        def axis_lams(ls, n=12):
            eps2 = 1.0 / (2 * ls * ls)
            a2 = 1.0 / (2 * 0.25 ** 2)
            beta = (1 + 4 * eps2 / a2) ** 0.25
            delta2 = 0.5 * a2 * (beta ** 2 - 1)
            denom = a2 + delta2 + eps2
            return math.sqrt(a2 / denom) * (eps2 / denom) ** np.arange(n)

        la, lb = axis_lams(0.4), axis_lams(0.6)
        prods = np.sort(np.outer(la, lb).ravel())[::-1]
        assert np.allclose(fm.lambdas, prods[:4], rtol=1e-12)

    def test_lambda_decay_1d_is_geometric(self):
        fm = mercer_truncate(se(ls=0.3), 30, [0.0], [1.0])
        ratios = fm.lambdas[1:] / fm.lambdas[:-1]
        assert np.allclose(ratios, ratios[0], rtol=1e-10)
        assert 0 < ratios[0] < 1

    def test_lambda_decay_rate_2d(self):
        # eigenvalue j should fall like exp(-c j^(1/d)); check the trend
        spec = KernelSpec(family="se", dim=2, lengthscales=(0.4, 0.4))
        fm = mercer_truncate(spec, 60, [0.0, 0.0], [1.0, 1.0])
        lam = fm.lambdas
        assert np.all(np.diff(lam) <= 1e-15)
        j = np.arange(1, 61)
        slope = np.polyfit(np.sqrt(j[9:]), np.log(lam[9:]), 1)[0]
        assert slope < -0.5

    def test_matern_has_no_expansion(self):
        with pytest.raises(UnsupportedDecompositionError):
            mercer_truncate(matern(2.5), 8, [0.0], [1.0])

    def test_truncation_error_at_diagonal_below_tail_mass(self):
        spec = se(ls=0.3)
        fm = mercer_truncate(spec, 64, [0.0], [1.0])
        M = 10
        grid = np.linspace(0, 1, 101).reshape(-1, 1)
        F = fm.features(grid)
        resid = spec.variance - np.sum(fm.lambdas[:M] * F[:, :M] ** 2, axis=1)
        direct_tail = np.sum(fm.lambdas[M:] * F[:, M:] ** 2, axis=1)
        # residual at x=x' equals the tail sum, and both sit under the bound
        assert np.allclose(resid, direct_tail, atol=1e-10)
        assert resid.max() <= tail_mass(fm, M, 64) + 1e-12


class TestRff:
    def test_zero_lag_identity_even_m(self):
        spec = se(ls=0.5, var=0.6)
        fm = rff_sample(spec, 2000, seed=3)
        x = np.array([[0.3], [0.9], [-1.2]])
        F = fm.features(x)
        assert np.allclose(np.sum(F * F, axis=1), spec.variance, atol=1e-12)

    def test_monte_carlo_reconstruction(self):
        spec = matern(2.5, dim=2, ls=0.8)
        fm = rff_sample(spec, 4000, seed=5)
        rng = np.random.default_rng(17)
        X = rng.uniform(-1, 1, size=(40, 2))
        err = np.abs(fm.reconstruct(X) - kernel_matrix(spec, X))
        assert np.median(err) < 0.05

    def test_error_shrinks_with_m(self):
        # median error over 100 pairs, M=4000 vs M=250, same seed
        spec = se(dim=1, ls=0.4)
        rng = np.random.default_rng(23)
        x = rng.uniform(-1, 1, size=(100, 1))
        y = rng.uniform(-1, 1, size=(100, 1))
        exact = np.array([eval_kernel(spec, a, b) for a, b in zip(x, y)])

        def med_err(M):
            fm = rff_sample(spec, M, seed=9)
            rec = np.sum(fm.features(x) * fm.features(y), axis=1)
            return np.median(np.abs(rec - exact))

        assert med_err(4000) < med_err(250)

    def test_deterministic_in_seed(self):
        spec = matern(1.5, dim=3, ls=0.5)
        a = rff_sample(spec, 64, seed=42)
        b = rff_sample(spec, 64, seed=42)
        X = np.random.default_rng(0).uniform(-1, 1, size=(10, 3))
        assert np.array_equal(a.features(X), b.features(X))
        c = rff_sample(spec, 64, seed=43)
        assert not np.array_equal(a.features(X), c.features(X))

    def test_lambdas_are_ones(self):
        fm = rff_sample(se(), 32, seed=1)
        assert np.array_equal(fm.lambdas, np.ones(32))


class TestTailMass:
    def geometric_map(self, count=60):
        lam = 2.0 ** -np.arange(count)
        return FeatureMap(
            kind="mercer",
            count=count,
            dim=1,
            lambdas=lam,
            sup_bounds=np.ones(count),
        )

    def test_geometric_series_closes_to_one(self):
        # lambda_j = 2^-(j-1), sup=1, M=1: body 1 - 2^-59 plus remainder 2^-59
        fm = self.geometric_map()
        assert tail_mass(fm, 1, 60) == 1.0

    def test_monotone_in_m(self):
        fm = self.geometric_map()
        vals = [tail_mass(fm, M, 60) for M in range(1, 12)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_real_map_tail_bounds_truncation(self):
        fm = mercer_truncate(se(ls=0.35), 80, [0.0], [1.0])
        tm = tail_mass(fm, 12, 80)
        direct = np.sum(fm.lambdas[12:] * fm.sup_bounds[12:] ** 2)
        assert tm >= direct > 0

    def test_rff_rejected(self):
        with pytest.raises(UnsupportedDecompositionError):
            tail_mass(rff_sample(se(), 16, seed=0), 4, 16)

    def test_bad_ranges(self):
        fm = self.geometric_map()
        with pytest.raises(InvalidInputError):
            tail_mass(fm, 10, 10)
        with pytest.raises(InvalidInputError):
            tail_mass(fm, 1, 61)
