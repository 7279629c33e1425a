"""scikit-learn style wrappers.

Transformers take one sampled field per call: ``X`` is an array with the grid
shape (optionally a trailing component axis of length m, or flattened to
(N^d, m)), and ``transform`` returns the nonnegative square-function samples
with the grid shape. Estimators of best constants follow the
fit / predict pattern: ``fit`` runs the family scan and ``predict(p)`` returns
the fitted lower estimates.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import gfunc, martingale
from .families import standard_family
from .kernels import SemigroupSpec, phi_kernel
from .numgrid import GridSpec, LogTimeGrid, VectorTarget
from .validation import check_exponent, check_field, check_nonnegative, check_seed


def _grid(est) -> GridSpec:
    return GridSpec(est.d, est.L, est.N)


def _tgrid(est) -> LogTimeGrid:
    return LogTimeGrid.from_density(est.t_min, est.t_max, est.per_decade)


def _operator(kind: str, grid: GridSpec):
    if kind == "phi":
        return phi_kernel(grid)
    sg = {"poisson": SemigroupSpec.poisson, "heat": SemigroupSpec.heat}[kind](grid.d) \
        if kind in ("poisson", "heat") else None
    if sg is None:
        raise ValueError(f"unknown kernel {kind!r}")
    return sg


class _GridTransformer(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        grid = _grid(self)
        check_field(X, grid)
        check_exponent(self.q, "q", allow_one=True)
        self.grid_ = grid
        self.tgrid_ = _tgrid(self)
        return self

    def _field(self, X):
        check_is_fitted(self, "grid_")
        return check_field(X, self.grid_, VectorTarget(self.r, _m(X, self.grid_)))


def _m(X, grid):
    a = np.asarray(X.values if hasattr(X, "values") else X)
    extra = a.shape[grid.d:] if a.shape[: grid.d] == grid.shape else a.shape[1:]
    return int(extra[0]) if extra else 1


class GFunctionTransformer(_GridTransformer):
    """Semigroup g-function (``kernel`` in {"poisson", "heat"}) or G_{q,phi} for ``kernel="phi"``."""

    def __init__(self, kernel="poisson", q=2.0, r=2.0, d=1, L=256.0, N=2**14,
                 t_min=2.0**-12, t_max=2.0**12, per_decade=48):
        self.kernel = kernel
        self.q = q
        self.r = r
        self.d = d
        self.L = L
        self.N = N
        self.t_min = t_min
        self.t_max = t_max
        self.per_decade = per_decade

    def transform(self, X):
        f = self._field(X)
        op = _operator(self.kernel, self.grid_)
        return gfunc.square_function(f, op, self.q, self.tgrid_).values


class LusinAreaTransformer(_GridTransformer):
    def __init__(self, kernel="poisson", q=2.0, r=2.0, d=1, L=256.0, N=2**14,
                 t_min=2.0**-12, t_max=2.0**12, per_decade=48):
        self.kernel = kernel
        self.q = q
        self.r = r
        self.d = d
        self.L = L
        self.N = N
        self.t_min = t_min
        self.t_max = t_max
        self.per_decade = per_decade

    def transform(self, X):
        f = self._field(X)
        op = _operator(self.kernel, self.grid_)
        phi = op.g_kernel(self.grid_) if isinstance(op, SemigroupSpec) else op
        return gfunc.lusin_area(f, phi, self.q, self.tgrid_).values


class LacunaryTransformer(_GridTransformer):
    def __init__(self, kernel="poisson", a=2.0, t0=1.0, q=2.0, r=2.0, d=1, L=256.0, N=2**14,
                 kmin=-24, kmax=24):
        self.kernel = kernel
        self.a = a
        self.t0 = t0
        self.q = q
        self.r = r
        self.d = d
        self.L = L
        self.N = N
        self.kmin = kmin
        self.kmax = kmax

    def fit(self, X, y=None):
        self.grid_ = _grid(self)
        check_field(X, self.grid_)
        check_exponent(self.q, "q", allow_one=True)
        return self

    def transform(self, X):
        f = self._field(X)
        sg = _operator(self.kernel, self.grid_)
        return gfunc.lacunary_diff(f, sg, self.a, self.t0, self.q, range(self.kmin, self.kmax + 1)).values


class MaximalTransformer(TransformerMixin, BaseEstimator):
    """Centred dyadic maximal function of a nonnegative weight."""

    def __init__(self, d=1, L=256.0, N=2**14):
        self.d = d
        self.L = L
        self.N = N

    def fit(self, X, y=None):
        self.grid_ = _grid(self)
        check_nonnegative(X, "weight")
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        w = check_field(check_nonnegative(X, "weight"), self.grid_)
        return gfunc.maximal(w).scalar().real


class DyadicSquareFunction(TransformerMixin, BaseEstimator):
    """Dyadic martingale square function on [0,1)^d for differences kmin < k <= kmax."""

    def __init__(self, q=2.0, r=2.0, kmin=0, kmax=None, d=1, L=1.0, N=2**11):
        self.q = q
        self.r = r
        self.kmin = kmin
        self.kmax = kmax
        self.d = d
        self.L = L
        self.N = N

    def fit(self, X, y=None):
        self.grid_ = _grid(self)
        check_field(X, self.grid_)
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        f = check_field(X, self.grid_, VectorTarget(self.r, _m(X, self.grid_)))
        J = int(round(-np.log2(self.grid_.h)))
        kr = (self.kmin, J if self.kmax is None else self.kmax)
        return martingale.square_fn(f, self.q, kr).scalar().real


class WalshGFunction(TransformerMixin, BaseEstimator):
    """Walsh semigroup g-function of functions on {-1,1}^K (X of length 2^K)."""

    def __init__(self, q=2.0, t_min=1e-6, t_max=50.0, per_decade=48):
        self.q = q
        self.t_min = t_min
        self.t_max = t_max
        self.per_decade = per_decade

    def fit(self, X, y=None):
        n = np.asarray(X).shape[0]
        if n & (n - 1):
            raise ValueError("length must be a power of two")
        self.tgrid_ = _tgrid(self)
        return self

    def transform(self, X):
        check_is_fitted(self, "tgrid_")
        return martingale.walsh_g(np.asarray(X), self.q, self.tgrid_).values


class LusinConstantEstimator(BaseEstimator):
    """Lower estimates of the best constant in ||G f||_p <= C ||f||_p over a test family.

    ``fit(ps)`` scans the family once for all exponents; ``predict(ps)`` returns
    the estimates (exponents must be among those fitted).
    """

    def __init__(self, kernel="poisson", q=2.0, r=2.0, m=1, d=1, L=256.0, N=2**14,
                 t_min=2.0**-12, t_max=2.0**12, per_decade=48, n_samples=10, seed=0, n_jobs=1,
                 family=None):
        self.kernel = kernel
        self.q = q
        self.r = r
        self.m = m
        self.d = d
        self.L = L
        self.N = N
        self.t_min = t_min
        self.t_max = t_max
        self.per_decade = per_decade
        self.n_samples = n_samples
        self.seed = seed
        self.n_jobs = n_jobs
        self.family = family

    def fit(self, X, y=None):
        ps = [check_exponent(p) for p in np.atleast_1d(X)]
        check_seed(self.seed)
        grid = _grid(self)
        op = _operator(self.kernel, grid)
        if self.kernel == "poisson":
            op = op.g_kernel(grid)
        fam = self.family or standard_family()
        self.estimates_ = gfunc.estimate_constants(fam, op, ps, self.q, grid, VectorTarget(self.r, self.m),
                                                   _tgrid(self), self.n_samples, self.seed, self.n_jobs)
        self.ps_ = np.array(ps)
        return self

    def predict(self, X):
        check_is_fitted(self, "estimates_")
        table = {float(e.p): e.estimate for e in self.estimates_}
        try:
            return np.array([table[float(p)] for p in np.atleast_1d(X)])
        except KeyError as exc:
            raise ValueError(f"exponent {exc.args[0]} was not fitted") from None


class CotypeEstimator(BaseEstimator):
    """Martingale cotype ratio lower estimate by exact enumeration; ``fit`` ignores X."""

    def __init__(self, q=2.0, r=2.0, m=1, K=10, n_samples=32, seed=0):
        self.q = q
        self.r = r
        self.m = m
        self.K = K
        self.n_samples = n_samples
        self.seed = seed

    def fit(self, X=None, y=None):
        check_seed(self.seed)
        self.estimate_ = martingale.cotype_estimate(VectorTarget(self.r, self.m), self.q, None, self.K,
                                                    self.n_samples, self.seed)
        return self

    def predict(self, X=None):
        check_is_fitted(self, "estimate_")
        return self.estimate_.estimate
