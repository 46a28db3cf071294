"""Stationary kernels and their finite feature expansions.

Two expansion routes feed the decoupled sampler and the inducing-feature
surrogate:

* Squared-exponential kernels admit an analytic eigen-expansion with respect
  to a Gaussian base measure.  For measure N(c, s^2) and kernel
  ``v * exp(-(x-x')^2 / (2 l^2))`` write ``eps2 = 1/(2 l^2)`` and
  ``a2 = 1/(2 s^2)``.  With

      beta   = (1 + 4 eps2 / a2)^(1/4)
      delta2 = (a2 / 2) (beta^2 - 1)
      D      = a2 + delta2 + eps2

  the eigenpairs are, for j = 0, 1, ...

      lambda_j = v sqrt(a2 / D) (eps2 / D)^j
      phi_j(x) = sqrt(beta) exp(-delta2 (x-c)^2) psi_j(sqrt(a2) beta (x-c))

  where psi_j is the Hermite function H_j / sqrt(2^j j!) evaluated through a
  normalized recurrence.  The phi_j are orthonormal under the base measure and
  reconstruct the kernel: k(x, x') = sum_j lambda_j phi_j(x) phi_j(x').
  Multi-dimensional kernels tensorize; product eigenvalues are enumerated
  best-first so the returned map carries the M largest.

  The base measure is centered on the domain midpoint with standard deviation
  a quarter of the side length, so +-2 standard deviations span the box.

* Matern kernels have no closed-form eigen-expansion here; they get random
  cosine features instead.  Frequencies are drawn from the kernel's spectral
  density (Gaussian for SE, Student-t with 2*nu degrees of freedom for
  Matern), paired as cos/sin so the zero-lag reconstruction
  sum_j phi_j(x)^2 = v holds exactly for even M.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError, UnsupportedDecompositionError
from .util import as_box, rng_from_path

_MATERN_NUS = (1.5, 2.5)


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel description.

    family is "se" or "matern"; matern requires nu in {1.5, 2.5}.  The
    variance is capped at 1 so kernel values never exceed 1, which the
    exploration schedules rely on.
    """

    family: str
    dim: int
    lengthscales: tuple[float, ...]
    variance: float = 1.0
    nu: Optional[float] = None

    def __post_init__(self):
        if self.family not in ("se", "matern"):
            raise InvalidInputError(f"unknown kernel family {self.family!r}")
        if self.dim < 1:
            raise InvalidInputError("dim must be >= 1")
        ls = tuple(float(l) for l in np.atleast_1d(np.asarray(self.lengthscales, dtype=float)))
        if len(ls) == 1 and self.dim > 1:
            ls = ls * self.dim
        if len(ls) != self.dim:
            raise InvalidInputError(f"need {self.dim} lengthscales, got {len(ls)}")
        if any(not math.isfinite(l) or l <= 0 for l in ls):
            raise InvalidInputError("lengthscales must be finite and positive")
        object.__setattr__(self, "lengthscales", ls)
        if not (0.0 < self.variance <= 1.0):
            raise InvalidInputError("variance must lie in (0, 1]")
        if self.family == "matern":
            if self.nu not in _MATERN_NUS:
                raise InvalidInputError(f"matern nu must be one of {_MATERN_NUS}")
        elif self.nu is not None:
            raise InvalidInputError("nu is only meaningful for the matern family")


def _scaled_sqdist(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    ls = np.asarray(spec.lengthscales)
    a = A / ls
    b = B / ls
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def _as_points(spec: KernelSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size == spec.dim else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != spec.dim:
        raise InvalidInputError(f"points must have {spec.dim} columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("points must be finite")
    return X


def kernel_matrix(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Cross-covariance matrix k(A, B); B defaults to A."""
    A = _as_points(spec, A)
    B = A if B is None else _as_points(spec, B)
    d2 = _scaled_sqdist(spec, A, B)
    if spec.family == "se":
        return spec.variance * np.exp(-0.5 * d2)
    r = np.sqrt(d2)
    if spec.nu == 1.5:
        z = math.sqrt(3.0) * r
        return spec.variance * (1.0 + z) * np.exp(-z)
    z = math.sqrt(5.0) * r
    return spec.variance * (1.0 + z + z * z / 3.0) * np.exp(-z)


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    """Kernel value at a single pair of points."""
    return float(kernel_matrix(spec, x, x2)[0, 0])


# ---------------------------------------------------------------------------
# feature maps


def _hermite_psi(z: np.ndarray, orders: int) -> np.ndarray:
    """Normalized Hermite functions psi_j(z) = H_j(z)/sqrt(2^j j!), j < orders.

    The normalized three-term recurrence keeps intermediates bounded, so no
    factorial overflow for the order counts used here.  Shape (len(z), orders).
    """
    z = np.asarray(z, dtype=float)
    out = np.empty((z.size, orders))
    out[:, 0] = 1.0
    if orders > 1:
        out[:, 1] = z * math.sqrt(2.0)
    for n in range(1, orders - 1):
        out[:, n + 1] = z * math.sqrt(2.0 / (n + 1)) * out[:, n] - math.sqrt(
            n / (n + 1.0)
        ) * out[:, n - 1]
    return out


@dataclass(frozen=True)
class _Mercer1D:
    """Eigen-expansion parameters for one coordinate."""

    center: float
    a2: float
    beta: float
    delta2: float
    ratio: float      # eigenvalue decay factor eps2/D
    lam0: float       # leading eigenvalue, unit variance

    def lambdas(self, orders: int) -> np.ndarray:
        return self.lam0 * self.ratio ** np.arange(orders)

    def phis(self, x: np.ndarray, orders: int) -> np.ndarray:
        r = np.asarray(x, dtype=float) - self.center
        psi = _hermite_psi(math.sqrt(self.a2) * self.beta * r, orders)
        return math.sqrt(self.beta) * np.exp(-self.delta2 * r * r)[:, None] * psi


def _mercer_axis(lengthscale: float, lo: float, hi: float) -> _Mercer1D:
    center = 0.5 * (lo + hi)
    sm = 0.25 * (hi - lo)
    eps2 = 1.0 / (2.0 * lengthscale * lengthscale)
    a2 = 1.0 / (2.0 * sm * sm)
    beta = (1.0 + 4.0 * eps2 / a2) ** 0.25
    delta2 = 0.5 * a2 * (beta * beta - 1.0)
    denom = a2 + delta2 + eps2
    return _Mercer1D(
        center=center,
        a2=a2,
        beta=beta,
        delta2=delta2,
        ratio=eps2 / denom,
        lam0=math.sqrt(a2 / denom),
    )


@dataclass(frozen=True)
class FeatureMap:
    """Finite feature expansion of a kernel.

    kind "mercer": k(x,x') ~= sum_j lambdas[j] phi_j(x) phi_j(x'), features()
    returning the phi values, lambdas sorted non-increasing, sup_bounds the
    per-feature sup of |phi_j| over the build domain.

    kind "rff": k(x,x') ~= features(x) @ features(x'), weights absorbed into
    the features; lambdas are all ones so downstream code can treat both kinds
    through the same lambda-weighted interface.
    """

    kind: str
    count: int
    dim: int
    lambdas: np.ndarray
    sup_bounds: np.ndarray
    origin: tuple = ()
    _axes: tuple = field(default=(), repr=False)
    _index: Optional[np.ndarray] = field(default=None, repr=False)
    _freqs: Optional[np.ndarray] = field(default=None, repr=False)
    _phase: Optional[float] = field(default=None, repr=False)
    _amp: float = field(default=0.0, repr=False)

    def features(self, X) -> np.ndarray:
        """Feature matrix of shape (n_points, count)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1) if X.size == self.dim else X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise InvalidInputError(f"points must have {self.dim} columns")
        if self.kind == "mercer":
            if self._index is None:
                raise InvalidInputError("feature map carries no evaluation rule")
            out = np.ones((X.shape[0], self.count))
            for axis in range(self.dim):
                orders = int(self._index[:, axis].max()) + 1
                phis = self._axes[axis].phis(X[:, axis], orders)
                out *= phis[:, self._index[:, axis]]
            return out
        z = X @ self._freqs.T
        n_pair = self._freqs.shape[0] if self.count % 2 == 0 else self._freqs.shape[0] - 1
        cols = np.empty((X.shape[0], self.count))
        cols[:, 0 : 2 * n_pair : 2] = np.cos(z[:, :n_pair])
        cols[:, 1 : 2 * n_pair : 2] = np.sin(z[:, :n_pair])
        if self.count % 2 == 1:
            cols[:, -1] = np.cos(z[:, -1] + self._phase)
        return self._amp * cols

    def reconstruct(self, X, X2=None) -> np.ndarray:
        """Kernel matrix implied by the truncated expansion."""
        F = self.features(X)
        G = F if X2 is None else self.features(X2)
        return (F * self.lambdas) @ G.T


def mercer_truncate(spec: KernelSpec, M: int, lower, upper) -> FeatureMap:
    """Top-M eigenpairs of an SE kernel over a box domain.

    Tensor-product eigenvalues are enumerated best-first (largest product
    first; lexicographically smaller index tuple on ties), so the map always
    carries the M largest.  Raises UnsupportedDecompositionError for Matern.
    """
    if spec.family != "se":
        raise UnsupportedDecompositionError(
            "analytic eigen-expansion is only available for the se family"
        )
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    lo, hi = as_box(lower, upper)
    if lo.size != spec.dim:
        raise InvalidInputError("domain dimension does not match the kernel")
    axes = tuple(_mercer_axis(spec.lengthscales[i], lo[i], hi[i]) for i in range(spec.dim))
    per_dim = [ax.lambdas(M) for ax in axes]

    # best-first walk over index tuples; products of per-axis eigenvalues
    start = (0,) * spec.dim
    heap = [(-float(np.prod([per_dim[i][0] for i in range(spec.dim)])), start)]
    seen = {start}
    index_rows = []
    lams = []
    while heap and len(index_rows) < M:
        neg, idx = heapq.heappop(heap)
        index_rows.append(idx)
        lams.append(-neg)
        for axis in range(spec.dim):
            if idx[axis] + 1 >= M:
                continue
            nxt = idx[:axis] + (idx[axis] + 1,) + idx[axis + 1 :]
            if nxt in seen:
                continue
            seen.add(nxt)
            lam = float(np.prod([per_dim[i][nxt[i]] for i in range(spec.dim)]))
            heapq.heappush(heap, (-lam, nxt))

    index = np.asarray(index_rows, dtype=int)
    lambdas = spec.variance * np.asarray(lams)

    # per-axis sup of |phi_j| over the box by dense grid search, 1e4 points
    sup_per_axis = []
    for axis in range(spec.dim):
        orders = int(index[:, axis].max()) + 1
        grid = np.linspace(lo[axis], hi[axis], 10_000)
        sup_per_axis.append(np.abs(axes[axis].phis(grid, orders)).max(axis=0))
    sup = np.ones(len(index_rows))
    for axis in range(spec.dim):
        sup *= sup_per_axis[axis][index[:, axis]]

    return FeatureMap(
        kind="mercer",
        count=len(index_rows),
        dim=spec.dim,
        lambdas=lambdas,
        sup_bounds=sup,
        origin=("mercer", tuple(float(v) for v in lo), tuple(float(v) for v in hi)),
        _axes=axes,
        _index=index,
    )


def rff_sample(spec: KernelSpec, M: int, seed: int) -> FeatureMap:
    """Random cosine features, deterministic in the seed.

    Even M gives cos/sin pairs sharing M/2 frequencies; an odd M appends one
    phase-shifted cosine, keeping the reconstruction unbiased but giving up
    the exact zero-lag identity.
    """
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    rng = rng_from_path(seed, 0x52FF)
    n_freq = (M + 1) // 2
    z = rng.standard_normal((n_freq, spec.dim))
    if spec.family == "matern":
        g = rng.chisquare(2.0 * spec.nu, size=n_freq)
        z = z * np.sqrt(2.0 * spec.nu / g)[:, None]
    freqs = z / np.asarray(spec.lengthscales)
    phase = float(rng.uniform(0.0, 2.0 * math.pi)) if M % 2 == 1 else None
    amp = math.sqrt(2.0 * spec.variance / M)
    return FeatureMap(
        kind="rff",
        count=M,
        dim=spec.dim,
        lambdas=np.ones(M),
        sup_bounds=np.full(M, amp),
        origin=("rff", int(seed)),
        _freqs=freqs,
        _phase=phase,
        _amp=amp,
    )


def tail_mass(fm: FeatureMap, M: int, cap: int) -> float:
    """Upper bound on sum_{j>M} lambda_j sup|phi_j|^2.

    Sums the computed spectrum from M+1 through cap, then closes the series
    with a geometric continuation: the last term times r/(1-r) where r is the
    final observed term ratio.  Only defined for Mercer maps.
    """
    if fm.kind != "mercer":
        raise UnsupportedDecompositionError("tail mass requires an eigen-expansion map")
    if not (0 <= M < cap):
        raise InvalidInputError("need 0 <= M < cap")
    if cap > fm.count:
        raise InvalidInputError(f"cap {cap} exceeds computed spectrum size {fm.count}")
    terms = fm.lambdas[:cap] * fm.sup_bounds[:cap] ** 2
    body = float(np.sum(terms[M:cap]))
    if cap >= 2:
        r = terms[cap - 1] / terms[cap - 2]
        if not (0.0 < r < 1.0):
            r = fm.lambdas[cap - 1] / fm.lambdas[cap - 2]
        r = min(float(r), 1.0 - 1e-12)
        remainder = float(terms[cap - 1]) * r / (1.0 - r)
    else:
        remainder = float(terms[cap - 1])
    return body + remainder
