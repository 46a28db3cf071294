"""Sparse variational GP surrogates with conjugate closed-form fits.

Two inducing-variable families share one model type:

* "points": inducing outputs u = f(Z) at m locations Z, prior N(0, K_ZZ).
  Posterior predictive given q(u) = N(m, S):

      mean(x)    = k(Z,x)^T K_ZZ^{-1} m
      cov(x,x')  = k(x,x') + k(Z,x)^T K_ZZ^{-1} (S - K_ZZ) K_ZZ^{-1} k(Z,x')

* "features": inducing variables are the leading m eigenfunction integrals
  of a Mercer expansion, prior N(0, Lambda_m) with Lambda_m diagonal, and
  cov(u_j, f(x)) = lambda_j phi_j(x), so

      mean(x)    = phi_m(x)^T m
      cov(x,x')  = k(x,x') + phi_m(x)^T (S - Lambda_m) phi_m(x')

For Gaussian likelihoods with noise variance tau the optimal q(u) is closed
form.  With C the m x n matrix of cov(u_i, f(x_j)) and P the prior covariance
of u (K_ZZ or Lambda_m):

    Sigma = P + C C^T / tau,   m = P Sigma^{-1} C y / tau,   S = P Sigma^{-1} P

The fit caches the quantities predictions need in forms that avoid
multiplying by P^{-1} twice, which keeps the Z = X collapse onto the exact
posterior accurate even for ill-conditioned grams.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import (
    ExplorationInfeasibleError,
    InvalidInputError,
    NumericalDegeneracyError,
    UnsupportedDecompositionError,
)
from .exact_gp import Dataset, fit_exact
from .kernels import FeatureMap, KernelSpec, kernel_matrix, mercer_truncate, rff_sample
from .util import chol_psd, clamp_variance, rng_from_path


@dataclass
class SvgpModel:
    """Variational posterior; treat as immutable once constructed.

    Exactly one of Z (points variant) or feature_map+m_count (features
    variant) is set.  m_vec and S_mat are the moments of q(u).
    """

    spec: KernelSpec
    tau: float
    m_vec: np.ndarray
    S_mat: np.ndarray
    Z: Optional[np.ndarray] = None
    feature_map: Optional[FeatureMap] = None
    m_count: int = 0
    # prediction caches: mean(x) = c(x)^T _a, cov correction = c(x)^T _B c(x')
    _a: Optional[np.ndarray] = None
    _B: Optional[np.ndarray] = None
    _chol_P: Optional[np.ndarray] = None
    # closed-form fits also carry the Cholesky factor of Sigma = P + C C^T/tau
    # so covariance corrections go through triangular solves, which stay
    # accurate when the inducing gram is nearly singular (Z = X collapse)
    _chol_Sigma: Optional[np.ndarray] = None
    _sol: Optional[np.ndarray] = None           # Sigma^{-1} C y / tau

    def __post_init__(self):
        if (self.Z is None) == (self.feature_map is None):
            raise InvalidInputError("set exactly one of Z or feature_map")
        if self.tau <= 0:
            raise InvalidInputError("tau must be positive")
        if self.variant == "points":
            self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
            self.m_count = self.Z.shape[0]
            if self.Z.shape[1] != self.spec.dim:
                raise InvalidInputError("inducing points do not match kernel dimension")
        else:
            if not 1 <= self.m_count <= self.feature_map.count:
                raise InvalidInputError("m_count must lie in [1, feature_map.count]")
            if self.feature_map.kind != "mercer":
                raise UnsupportedDecompositionError(
                    "the features variant needs an eigen-expansion map"
                )
        m = self.m_count
        self.m_vec = np.asarray(self.m_vec, dtype=float).reshape(m)
        self.S_mat = np.asarray(self.S_mat, dtype=float).reshape(m, m)
        if self._a is None:
            P = self.prior_cov()
            if self.variant == "points":
                self._chol_P = chol_psd(P)
                self._a = cho_solve((self._chol_P, True), self.m_vec)
                Pi = cho_solve((self._chol_P, True), np.eye(m))
                self._B = Pi @ (self.S_mat - P) @ Pi
            else:
                self._a = self.m_vec.copy()
                self._B = self.S_mat - P

    @property
    def variant(self) -> str:
        return "points" if self.Z is not None else "features"

    def prior_cov(self) -> np.ndarray:
        if self.variant == "points":
            return kernel_matrix(self.spec, self.Z)
        return np.diag(self.feature_map.lambdas[: self.m_count])

    def _cross(self, X: np.ndarray) -> np.ndarray:
        """c(x) columns: k(Z, x) for points, phi_m(x) for features."""
        if self.variant == "points":
            return kernel_matrix(self.spec, self.Z, X)
        return self.feature_map.features(X)[:, : self.m_count].T

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        C = self._cross(X)
        mean = C.T @ self._a
        if self.variant == "points" and self._chol_Sigma is not None:
            V = solve_triangular(self._chol_P, C, lower=True)
            W = solve_triangular(self._chol_Sigma, C, lower=True)
            var = self.spec.variance - np.sum(V * V, axis=0) + np.sum(W * W, axis=0)
        else:
            # features variant: C is phi and _B = S - Lambda, no inverses involved
            var = self.spec.variance + np.sum(C * (self._B @ C), axis=0)
        return mean, clamp_variance(var)

    def cov(self, X, X2=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        X2m = X if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
        Ca = self._cross(X)
        Cb = Ca if X2 is None else self._cross(X2m)
        prior = kernel_matrix(self.spec, X, X2m)
        if self.variant == "points" and self._chol_Sigma is not None:
            Va = solve_triangular(self._chol_P, Ca, lower=True)
            Wa = solve_triangular(self._chol_Sigma, Ca, lower=True)
            Vb = Va if X2 is None else solve_triangular(self._chol_P, Cb, lower=True)
            Wb = Wa if X2 is None else solve_triangular(self._chol_Sigma, Cb, lower=True)
            return prior - Va.T @ Vb + Wa.T @ Wb
        return prior + Ca.T @ self._B @ Cb


def predict_svgp(model: SvgpModel, x, x2=None) -> tuple[float, float]:
    """Mean at x and covariance between x and x2 (x2 defaults to x)."""
    mean, _ = model.predict(x)
    covv = model.cov(x, x if x2 is None else x2)
    return float(mean[0]), float(covv[0, 0])


def _cross_cov(data, spec, tau, Z, feature_map, m):
    """Returns (P, C, variant metadata) for whichever inducing family is set."""
    if (Z is None) == (feature_map is None):
        raise InvalidInputError("supply exactly one of Z or feature_map")
    if Z is not None:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        P = kernel_matrix(spec, Z)
        C = kernel_matrix(spec, Z, data.X) if data.n else np.zeros((Z.shape[0], 0))
        return P, C, Z, None, Z.shape[0]
    if m is None:
        raise InvalidInputError("features variant needs m")
    if feature_map.kind != "mercer":
        raise UnsupportedDecompositionError("the features variant needs an eigen-expansion map")
    if not 1 <= m <= feature_map.count:
        raise InvalidInputError("m must lie in [1, feature_map.count]")
    lam = feature_map.lambdas[:m]
    P = np.diag(lam)
    if data.n:
        C = lam[:, None] * feature_map.features(data.X)[:, :m].T
    else:
        C = np.zeros((m, 0))
    return P, C, None, feature_map, m


def fit_svgp_closed_form(
    data: Dataset,
    spec: KernelSpec,
    tau: float,
    Z=None,
    feature_map: Optional[FeatureMap] = None,
    m: Optional[int] = None,
) -> SvgpModel:
    """Optimal q(u) for the conjugate likelihood; prior moments when data is empty."""
    if tau <= 0:
        raise InvalidInputError("tau must be positive")
    P, C, Zp, fm, mc = _cross_cov(data, spec, tau, Z, feature_map, m)
    if data.n == 0:
        return SvgpModel(spec=spec, tau=tau, m_vec=np.zeros(mc), S_mat=P, Z=Zp,
                         feature_map=fm, m_count=mc)
    Sigma = P + (C @ C.T) / tau
    try:
        cf = cho_factor(Sigma, lower=True)
    except np.linalg.LinAlgError:
        cf = cho_factor(Sigma + 1e-10 * np.eye(mc), lower=True)
    sol_y = cho_solve(cf, C @ data.y)
    m_vec = P @ sol_y / tau
    Sigma_inv = cho_solve(cf, np.eye(mc))
    S_mat = P @ Sigma_inv @ P
    S_mat = 0.5 * (S_mat + S_mat.T)

    cSigma = np.tril(cf[0]) if cf[1] else np.tril(cf[0].T)
    sol = sol_y / tau
    if Zp is not None:
        # the mean cache K_ZZ^{-1} m reduces to Sigma^{-1} C y / tau, no
        # gram inverse involved; covariance goes through the stored factors
        cP = chol_psd(P)
        Bmat = Sigma_inv - cho_solve((cP, True), np.eye(mc))
        return SvgpModel(spec=spec, tau=tau, m_vec=m_vec, S_mat=S_mat, Z=Zp,
                         _a=sol, _B=Bmat, _chol_P=cP, _chol_Sigma=cSigma, _sol=sol)
    return SvgpModel(spec=spec, tau=tau, m_vec=m_vec, S_mat=S_mat,
                     feature_map=fm, m_count=mc,
                     _a=m_vec.copy(), _B=S_mat - P,
                     _chol_P=np.diag(np.sqrt(np.diag(P))), _chol_Sigma=cSigma, _sol=sol)


def elbo(data: Dataset, model: SvgpModel) -> float:
    """Evidence lower bound at (m_vec, S_mat); zero observations return 0.

    Gaussian-likelihood form: per-point expected log density minus the
    posterior-variance penalties, minus KL(q(u) || prior).  At the
    closed-form optimum this equals the collapsed bound
    -1/2 y^T (Q + tau I)^{-1} y - 1/2 log det(Q + tau I) - (n/2) log 2 pi
    - theta / (2 tau).
    """
    if data.n == 0:
        return 0.0
    tau = model.tau
    P = model.prior_cov()
    mc = model.m_count
    C = _cross_of(model, data.X)
    if model.variant == "points":
        A = cho_solve((model._chol_P, True), C)     # K_ZZ^{-1} k(Z, x_i) per column
    else:
        A = model.feature_map.features(data.X)[:, :mc].T
    mu = A.T @ model.m_vec
    q_ii = np.sum(C * A, axis=0)
    k_ii = np.full(data.n, model.spec.variance)
    resid = np.maximum(k_ii - q_ii, 0.0)
    s_ii = np.sum(A * (model.S_mat @ A), axis=0)
    fit_term = -0.5 * data.n * math.log(2.0 * math.pi * tau)
    fit_term -= float(np.sum((data.y - mu) ** 2)) / (2.0 * tau)
    penalty = (float(np.sum(resid)) + float(np.sum(s_ii))) / (2.0 * tau)

    if model._chol_Sigma is not None:
        # S = P Sigma^{-1} P collapses the KL term to quantities of Sigma,
        # which stays well-conditioned even when the prior gram does not
        tr = float(np.trace(cho_solve((model._chol_Sigma, True), P)))
        mPm = float(model.m_vec @ model._sol)
        logdet_Sigma = 2.0 * float(np.sum(np.log(np.diag(model._chol_Sigma))))
        logdet_P = 2.0 * float(np.sum(np.log(np.diag(model._chol_P))))
        kl = 0.5 * (tr + mPm - mc + logdet_Sigma - logdet_P)
    else:
        cP = chol_psd(P)
        cS = chol_psd(model.S_mat)
        Pinv_S = cho_solve((cP, True), model.S_mat)
        mPm = model.m_vec @ cho_solve((cP, True), model.m_vec)
        logdet_P = 2.0 * float(np.sum(np.log(np.diag(cP))))
        logdet_S = 2.0 * float(np.sum(np.log(np.diag(cS))))
        kl = 0.5 * (np.trace(Pinv_S) + mPm - mc + logdet_P - logdet_S)
    return fit_term - penalty - float(kl)


def _cross_of(model: SvgpModel, X: np.ndarray) -> np.ndarray:
    if model.variant == "points":
        return kernel_matrix(model.spec, model.Z, X)
    lam = model.feature_map.lambdas[: model.m_count]
    return lam[:, None] * model.feature_map.features(X)[:, : model.m_count].T


def trace_residual(data: Dataset, model: SvgpModel) -> float:
    """theta = trace of the Nystrom residual K_XX - C^T P^{-1} C at the training inputs."""
    if data.n == 0:
        return 0.0
    C = _cross_of(model, data.X)
    if model.variant == "points":
        V = solve_triangular(model._chol_P, C, lower=True)
        q_ii = np.sum(V * V, axis=0)
    else:
        lam = model.feature_map.lambdas[: model.m_count]
        Phi = model.feature_map.features(data.X)[:, : model.m_count]
        q_ii = np.sum(lam * Phi * Phi, axis=1)
    theta = float(np.sum(np.full(data.n, model.spec.variance) - q_ii))
    return max(theta, 0.0)


def kl_to_exact(data: Dataset, model: SvgpModel, grid=None) -> float:
    """KL(approximate || exact) for function values at the training inputs.

    Extra evaluation points may be appended through grid; the certificate
    theta / tau applies to the training-input marginal.
    """
    if data.n == 0:
        return 0.0
    P = data.X if grid is None else np.vstack([data.X, np.atleast_2d(grid)])
    exact = fit_exact(data, model.spec, model.tau)
    mu_e = exact.predict(P)[0]
    cov_e = exact.cov(P)
    mu_a, _ = model.predict(P)
    cov_a = model.cov(P)
    p = P.shape[0]
    jit = 1e-12 * np.eye(p)
    cE = chol_psd(cov_e + jit)
    cA = chol_psd(cov_a + jit)
    solve_e = lambda rhs: cho_solve((cE, True), rhs)
    diff = mu_e - mu_a
    tr = float(np.trace(solve_e(cov_a + jit)))
    quad = float(diff @ solve_e(diff))
    logdet_e = 2.0 * float(np.sum(np.log(np.diag(cE))))
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(cA))))
    return max(0.5 * (tr + quad - p + logdet_e - logdet_a), 0.0)


def select_inducing_greedy(data: Dataset, spec: KernelSpec, m: int,
                           stop_early: bool = False) -> np.ndarray:
    """Greedy maximum-residual-variance inducing points (pivoted-Cholesky order).

    Ties resolve to the lowest index, so for stationary kernels the first
    pick is always row 0.  When the residual variance collapses before m
    picks (duplicated inputs), stop_early returns the shorter set instead of
    raising.
    """
    if not 1 <= m <= data.n:
        raise InvalidInputError(f"m must lie in [1, {data.n}]")
    K = kernel_matrix(spec, data.X)
    d = np.diag(K).copy()
    L = np.zeros((data.n, m))
    picks = []
    for j in range(m):
        p = int(np.argmax(d))
        if d[p] <= 1e-12:
            if stop_early and picks:
                break
            raise NumericalDegeneracyError(
                f"residual variance collapsed after {j} picks; lower m or deduplicate inputs"
            )
        col = K[:, p] - L[:, :j] @ L[p, :j]
        L[:, j] = col / math.sqrt(d[p])
        d = np.maximum(d - L[:, j] ** 2, 0.0)
        picks.append(p)
    return data.X[picks]


def select_inducing_kmeans(data: Dataset, m: int, seed: int) -> np.ndarray:
    """Lloyd's algorithm on the inputs; deterministic given the seed.

    Init draws m distinct rows; an emptied cluster is re-seeded with the
    point farthest from its assigned centroid; iteration stops when the
    assignment is stable or after 100 rounds.
    """
    uniq = np.unique(data.X, axis=0)
    if m > uniq.shape[0]:
        raise InvalidInputError(f"m={m} exceeds the {uniq.shape[0]} distinct points")
    if m < 1:
        raise InvalidInputError("m must be >= 1")
    rng = rng_from_path(seed, 0x4B4D)
    centers = uniq[rng.choice(uniq.shape[0], size=m, replace=False)]
    X = data.X
    assign = np.full(X.shape[0], -1)
    for _ in range(100):
        d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(m):
            mask = assign == c
            if np.any(mask):
                centers[c] = X[mask].mean(axis=0)
            else:
                worst = int(np.argmax(d2[np.arange(X.shape[0]), assign]))
                centers[c] = X[worst]
                assign[worst] = c
    return centers


@dataclass(frozen=True)
class ApproxQuality:
    """Constants the exploration schedule consumes.

    kappa controls everything: c = sqrt(kappa) bounds the scaled mean gap,
    [1/a_under, a_over] sandwich the deviation ratio, and eps bounds the
    sampling rule's extra deviation from spectral truncation.
    """

    kappa: float
    c: float
    a_under: float
    a_over: float
    eps: float
    delta_m: float
    delta_M: float


def approximation_constants(
    t: int,
    B: int,
    m_t: int,
    tau: float,
    delta: float,
    delta_m: float,
    delta_M: float,
    prec_norm: float,
    variant: str,
    eps0: float = 0.0,
) -> ApproxQuality:
    """Approximation-quality constants for step t.

    points:   kappa = 2 t B (m_t + 1) delta_m / (tau delta) + 4 t B eps0 / (tau delta)
    features: kappa = 2 t B delta_m / tau

    Feasible exploration needs sqrt(3 kappa) < 1; otherwise the schedule has
    no valid scaling and ExplorationInfeasibleError is raised.
    """
    if variant not in ("points", "features"):
        raise InvalidInputError("variant must be 'points' or 'features'")
    if min(t, B, m_t) < 1 or tau <= 0 or not 0 < delta < 1:
        raise InvalidInputError("bad schedule inputs")
    if min(delta_m, delta_M, eps0) < 0 or prec_norm < 1:
        raise InvalidInputError("bad approximation-quality inputs")
    if variant == "points":
        kappa = 2.0 * t * B * (m_t + 1) * delta_m / (tau * delta) + 4.0 * t * B * eps0 / (
            tau * delta
        )
    else:
        kappa = 2.0 * t * B * delta_m / tau
    root = math.sqrt(3.0 * kappa)
    if root >= 1.0:
        raise ExplorationInfeasibleError(
            f"kappa={kappa:.4g} gives sqrt(3 kappa)={root:.4g} >= 1; "
            "increase m or loosen tau/delta"
        )
    return ApproxQuality(
        kappa=kappa,
        c=math.sqrt(kappa),
        a_under=1.0 / math.sqrt(1.0 - root),
        a_over=math.sqrt(1.0 + root),
        eps=math.sqrt(prec_norm * m_t * delta_M),
        delta_m=delta_m,
        delta_M=delta_M,
    )


def precision_sup_norm(model: SvgpModel) -> float:
    """1 + the max-abs-row-sum norm of the prior precision over the inducing set."""
    if model.variant == "points":
        Pinv = cho_solve((model._chol_P, True), np.eye(model.m_count))
        return 1.0 + float(np.max(np.sum(np.abs(Pinv), axis=1)))
    return 1.0 + float(1.0 / model.feature_map.lambdas[model.m_count - 1])


# ---------------------------------------------------------------------------
# snapshot serialization


def write_snapshot(model: SvgpModel) -> str:
    """Plain-text snapshot; load_snapshot reconstructs an equivalent model."""
    buf = io.StringIO()
    spec = model.spec
    buf.write(f"variant={model.variant}\n")
    buf.write(f"tau={model.tau!r}\n")
    buf.write(f"kernel.family={spec.family}\n")
    buf.write(f"kernel.dim={spec.dim}\n")
    buf.write("kernel.lengthscales=" + ",".join(repr(l) for l in spec.lengthscales) + "\n")
    buf.write(f"kernel.variance={spec.variance!r}\n")
    if spec.nu is not None:
        buf.write(f"kernel.nu={spec.nu!r}\n")
    buf.write(f"m_count={model.m_count}\n")
    if model.variant == "features":
        kind = model.feature_map.origin[0]
        if kind != "mercer":
            raise UnsupportedDecompositionError("only eigen-expansion maps snapshot")
        _, lo, hi = model.feature_map.origin
        buf.write(f"fm.count={model.feature_map.count}\n")
        buf.write("fm.lower=" + ",".join(repr(v) for v in lo) + "\n")
        buf.write("fm.upper=" + ",".join(repr(v) for v in hi) + "\n")

    def block(name, arr):
        arr = np.atleast_2d(arr)
        buf.write(f"[{name}]\n")
        for row in arr:
            buf.write(" ".join(repr(float(v)) for v in row) + "\n")

    if model.variant == "points":
        block("Z", model.Z)
    block("m_vec", model.m_vec)
    block("S_mat", model.S_mat)
    return buf.getvalue()


def load_snapshot(text: str) -> SvgpModel:
    fields = {}
    blocks = {}
    current = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            blocks[current] = []
        elif current is not None:
            blocks[current].append([float(v) for v in line.split()])
        else:
            k, _, v = line.partition("=")
            fields[k] = v
    try:
        spec = KernelSpec(
            family=fields["kernel.family"],
            dim=int(fields["kernel.dim"]),
            lengthscales=tuple(float(v) for v in fields["kernel.lengthscales"].split(",")),
            variance=float(fields["kernel.variance"]),
            nu=float(fields["kernel.nu"]) if "kernel.nu" in fields else None,
        )
        tau = float(fields["tau"])
        m_vec = np.asarray(blocks["m_vec"]).ravel()
        S_mat = np.asarray(blocks["S_mat"])
        if fields["variant"] == "points":
            return SvgpModel(spec=spec, tau=tau, m_vec=m_vec, S_mat=S_mat,
                             Z=np.asarray(blocks["Z"]))
        fm = mercer_truncate(
            spec,
            int(fields["fm.count"]),
            [float(v) for v in fields["fm.lower"].split(",")],
            [float(v) for v in fields["fm.upper"].split(",")],
        )
        return SvgpModel(spec=spec, tau=tau, m_vec=m_vec, S_mat=S_mat,
                         feature_map=fm, m_count=int(fields["m_count"]))
    except KeyError as exc:
        raise InvalidInputError(f"snapshot missing field {exc}") from exc
