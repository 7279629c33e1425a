"""Square functions: G_{q,phi}, semigroup g-functions, Lusin area functions,
lacunary differences, intrinsic (dictionary) square functions, the centred
maximal function, weighted inequalities and best-constant lower estimates."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Callable, Iterator, Sequence

import numpy as np
from joblib import Parallel, delayed

from .kernels import HolderKernel, SemigroupSpec, holder_check
from .numgrid import (Field, GridSpec, LogTimeGrid, VectorTarget, kernel_fft, lp_norm,
                      norm_of_values)

DEFAULT_TGRID = LogTimeGrid.from_density(2.0**-12, 2.0**12, 48)


@dataclass(frozen=True)
class GFunctionResult:
    """Nonnegative scalar field of square-function values plus a truncation diagnostic.

    ``truncation`` is the share of the integral over x and t coming from the
    lowest and highest decade of the time grid.
    """

    field: Field
    q: float
    tgrid: LogTimeGrid | None
    truncation: float
    tol: float
    flagged: bool

    @property
    def values(self) -> np.ndarray:
        return self.field.scalar().real

    def norm(self, p: float) -> float:
        return lp_norm(self.field, p)


# ------------------------------------------------------------------ stacks


def _stack(f: Field, mult: Callable[[float], np.ndarray], times) -> Iterator[np.ndarray]:
    """Yield (mult(t) applied to f) for each t, sharing one forward FFT."""
    axes = tuple(range(f.grid.d))
    F = np.fft.fftn(f.values, axes=axes)
    for t in times:
        yield np.fft.ifftn(F * np.asarray(mult(t))[..., None], axes=axes)


class _Accumulator:
    """Running sum_t w ||u_t(x)||^q (or max for q = inf) with edge bookkeeping."""

    def __init__(self, q, tgrid: LogTimeGrid | None, decades: float = 1.0):
        self.q = q
        self.total = None
        self.edge = 0.0
        self.whole = 0.0
        if tgrid is not None:
            lo, hi = tgrid.edge_masks(decades)
            self.edge_mask = lo | hi
        else:
            self.edge_mask = None

    def add(self, j: int, a: np.ndarray, weight: float = 1.0):
        if np.isinf(self.q):
            self.total = a if self.total is None else np.maximum(self.total, a)
            contrib = a**2
        else:
            contrib = weight * a**self.q
            self.total = contrib if self.total is None else self.total + contrib
        s = float(contrib.sum())
        self.whole += s
        if self.edge_mask is not None and self.edge_mask[j]:
            self.edge += s

    def result(self):
        if np.isinf(self.q):
            return self.total
        return self.total ** (1.0 / self.q)

    @property
    def fraction(self) -> float:
        return self.edge / self.whole if self.whole > 0 else 0.0


def _finish(f: Field, acc: _Accumulator, q, tgrid, tol) -> GFunctionResult:
    vals = acc.result()
    frac = acc.fraction
    return GFunctionResult(Field(f.grid, vals), q, tgrid, frac, tol, bool(frac > tol))


def _conv_multiplier(phi: HolderKernel, f: Field, method: str) -> Callable[[float], np.ndarray]:
    if phi.grid != f.grid:
        raise ValueError("grid mismatch")
    if method == "auto":
        method = "fourier" if phi.fourier is not None else "spatial"
    if method == "fourier":
        return lambda t: phi.dilated_multiplier(t, f.grid)
    if method == "spatial":
        return lambda t: kernel_fft(phi.dilated(t, f.grid), f.grid)
    raise ValueError(f"unknown method {method!r}")


def _check_q(q):
    if not (q >= 1):
        raise ValueError("invalid exponent")


def g_conv(f: Field, phi: HolderKernel, q: float = 2.0, tgrid: LogTimeGrid = DEFAULT_TGRID,
           tol: float = 1e-3, method: str = "auto") -> GFunctionResult:
    """G_{q,phi}(f)(x) = (int ||phi_t * f(x)||_X^q dt/t)^{1/q}.

    ``method="fourier"`` multiplies by phi_hat(t xi); ``"spatial"`` samples phi_t.
    """
    _check_q(q)
    mult = _conv_multiplier(phi, f, method)
    acc = _Accumulator(q, tgrid)
    w = tgrid.log_step
    for j, u in enumerate(_stack(f, mult, tgrid.nodes)):
        acc.add(j, f.target.norm(u), w)
    return _finish(f, acc, q, tgrid, tol)


def _semigroup_multiplier(sg: SemigroupSpec, f: Field, method: str) -> Callable[[float], np.ndarray]:
    if sg.d != f.grid.d:
        raise ValueError("semigroup and grid dimensions differ")
    if method == "multiplier":
        return lambda t: sg.grid_dt_multiplier(f.grid, t)
    if method == "kernel":
        # sampled kernels alias once t drops below a few grid steps
        t_res = 8 * f.grid.h

        def mult(t):
            if t < t_res:
                return sg.grid_dt_multiplier(f.grid, t)
            return kernel_fft(sg.dt_kernel_field(f.grid, t), f.grid)

        return mult
    raise ValueError(f"unknown method {method!r}")


def g_semigroup(f: Field, sg: SemigroupSpec, q: float = 2.0, tgrid: LogTimeGrid = DEFAULT_TGRID,
                tol: float = 1e-3, method: str = "multiplier") -> GFunctionResult:
    """(int ||t d/dt T_t f(x)||_X^q dt/t)^{1/q}.

    ``method="multiplier"`` uses the exact discrete multiplier of t d/dt T_t on the
    periodic grid; ``"kernel"`` convolves with sampled closed-form dt-kernels
    for t >= 8h and falls back to the multiplier below that scale.
    """
    _check_q(q)
    mult = _semigroup_multiplier(sg, f, method)
    acc = _Accumulator(q, tgrid)
    w = tgrid.log_step
    for j, u in enumerate(_stack(f, mult, tgrid.nodes)):
        acc.add(j, f.target.norm(u), w)
    return _finish(f, acc, q, tgrid, tol)


def g_semigroup_many(f: Field, sg: SemigroupSpec, qs: Sequence[float],
                     tgrid: LogTimeGrid = DEFAULT_TGRID) -> dict:
    """Semigroup g-functions for several finite q from one pass over the time grid
    (exact discrete multipliers); returns {q: values}."""
    qs = [float(q) for q in qs]
    for q in qs:
        _check_q(q)
        if np.isinf(q):
            raise ValueError("finite exponents only")
    mult = _semigroup_multiplier(sg, f, "multiplier")
    tot = {q: 0.0 for q in qs}
    for u in _stack(f, mult, tgrid.nodes):
        a = f.target.norm(u)
        for q in qs:
            tot[q] = tot[q] + a**q
    return {q: (tot[q] * tgrid.log_step) ** (1 / q) for q in qs}


# ------------------------------------------------------------------ area function


def ball_average_multiplier(grid: GridSpec, radius: float) -> np.ndarray:
    """Multiplier of the periodic average over grid points y with |y| < radius."""
    ind = (grid.radius < radius).astype(float)
    ind[grid.origin_index] = 1.0
    ind /= ind.sum()
    return np.fft.fftn(np.fft.ifftshift(ind))


def unit_ball_volume(d: int) -> float:
    return {1: 2.0, 2: np.pi}[d]


def lusin_area(f: Field, phi: HolderKernel, q: float = 2.0, tgrid: LogTimeGrid = DEFAULT_TGRID,
               tol: float = 1e-3, method: str = "auto") -> GFunctionResult:
    """S_{q,phi}(f)(x) = (int_{|y-x|<t} ||phi_t*f(y)||^q dy dt / t^{d+1})^{1/q}.

    The inner y-integral is |B(0,1)| times the average of ||phi_t*f||^q over the grid
    points of the ball, so the Fubini identity holds exactly on the grid.
    """
    _check_q(q)
    if np.isinf(q):
        raise ValueError("area function needs finite q")
    mult = _conv_multiplier(phi, f, method)
    g = f.grid
    vol = unit_ball_volume(g.d)
    acc = _Accumulator(q, tgrid)
    w = tgrid.log_step
    for j, (t, u) in enumerate(zip(tgrid.nodes, _stack(f, mult, tgrid.nodes))):
        a = f.target.norm(u) ** q
        avg = np.fft.ifftn(np.fft.fftn(a) * ball_average_multiplier(g, t)).real
        acc.add(j, np.maximum(avg * vol, 0.0) ** (1.0 / q), w)
    return _finish(f, acc, q, tgrid, tol)


def space_time_energy(f: Field, phi: HolderKernel, q: float, tgrid: LogTimeGrid,
                      method: str = "auto") -> float:
    """int int ||phi_t*f(x)||^q dx dt/t on the grid."""
    mult = _conv_multiplier(phi, f, method)
    tot = 0.0
    for u in _stack(f, mult, tgrid.nodes):
        tot += float((f.target.norm(u) ** q).sum())
    return tot * f.grid.cell * tgrid.log_step


# ------------------------------------------------------------------ lacunary


def lacunary_terms(f: Field, sg: SemigroupSpec, a: float, t0: float, krange: Sequence[int]) -> np.ndarray:
    """Stack of (T_{a^k t0} - T_{a^{k+1} t0}) f for k in krange (complex, (len, *grid, m))."""
    if not a > 1:
        raise ValueError("lacunary ratio a must exceed 1")
    if not (1 <= t0 <= a):
        raise ValueError("t0 must lie in [1, a]")
    ks = list(krange)

    def mult(k):
        return sg.grid_multiplier(f.grid, a**k * t0) - sg.grid_multiplier(f.grid, a ** (k + 1) * t0)

    return np.stack(list(_stack(f, mult, ks)))


def lacunary_diff(f: Field, sg: SemigroupSpec, a: float = 2.0, t0: float = 1.0, q: float = 2.0,
                  krange: Sequence[int] = range(-24, 25), tol: float = 1e-3) -> GFunctionResult:
    """(sum_k ||(T_{a^k t0} - T_{a^{k+1} t0}) f(x)||^q)^{1/q}; flagged when the two
    extreme k carry more than ``tol`` of the sum."""
    _check_q(q)
    ks = list(krange)
    terms = lacunary_terms(f, sg, a, t0, ks)
    norms = f.target.norm(terms)
    acc = _Accumulator(q, None)
    for j in range(len(ks)):
        acc.add(j, norms[j])
    edge = norms[[0, -1]]
    whole = float((norms**(q if np.isfinite(q) else 2)).sum())
    frac = float((edge**(q if np.isfinite(q) else 2)).sum()) / whole if whole > 0 else 0.0
    return GFunctionResult(Field(f.grid, acc.result()), q, None, frac, tol, bool(frac > tol))


# ------------------------------------------------------------------ intrinsic


def bump_dictionary(grid: GridSpec, n: int = 8, eps: float = 1.0, delta: float = 1.0,
                    seed: int = 0) -> list[HolderKernel]:
    """Rescaled, shifted derivative-of-Gaussian bumps normalised into the unit ball of H_{eps,delta}."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        s = float(np.exp(rng.uniform(np.log(0.25), np.log(1.0))))
        c = rng.uniform(-0.5, 0.5, grid.d)

        def func(*x, s=s, c=c):
            y = [xi - ci for xi, ci in zip(x, c)]
            r2 = sum(yi * yi for yi in y)
            return y[0] / s * np.exp(-r2 / (2 * s * s))

        k = HolderKernel.from_function(grid, func, eps, delta, name=f"bump{i}")
        rep = holder_check(k)
        scale = max(rep.decay, rep.smoothness, rep.mean, 1e-300)
        out.append(k.scaled(1.0 / scale, name=f"bump{i}"))
    return out


def intrinsic_g(f: Field, eps: float, delta: float, q: float, tgrid: LogTimeGrid,
                dictionary: Sequence[HolderKernel], tol: float = 1e-3, check: bool = True) -> GFunctionResult:
    """Dictionary lower bound for the intrinsic square function: max over the dictionary of
    ||phi_t*f(x)|| at each (x, t), then integrated in t."""
    _check_q(q)
    if len(dictionary) == 0:
        raise ValueError("empty dictionary")
    if check:
        for k in dictionary:
            kk = HolderKernel(k.grid, k.values, eps, delta, k.func, k.fourier, k.name)
            rep = holder_check(kk)
            if max(rep.as_tuple()) > 1 + 1e-9:
                raise ValueError(f"dictionary kernel {k.name} lies outside the unit ball of the class")
    mults = [_conv_multiplier(k, f, "auto") for k in dictionary]
    axes = tuple(range(f.grid.d))
    F = np.fft.fftn(f.values, axes=axes)
    acc = _Accumulator(q, tgrid)
    w = tgrid.log_step
    for j, t in enumerate(tgrid.nodes):
        best = None
        for m in mults:
            a = f.target.norm(np.fft.ifftn(F * m(t)[..., None], axes=axes))
            best = a if best is None else np.maximum(best, a)
        acc.add(j, best, w)
    return _finish(f, acc, q, tgrid, tol)


# ------------------------------------------------------------------ maximal


def _box_sums_1d(a: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Sums over index windows [i - n//2, i + n - n//2) along ``axis``, zero outside."""
    N = a.shape[axis]
    pad = [(0, 0)] * a.ndim
    pad[axis] = (1, 0)
    c = np.pad(np.cumsum(a, axis=axis), pad)
    i = np.arange(N)
    lo = np.clip(i - n // 2, 0, N)
    hi = np.clip(i - n // 2 + n, 0, N)
    return np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)


def maximal(w: Field) -> Field:
    """Centred dyadic maximal function: for every grid point x and every n = 2^j grid
    steps, the cube of side n h made of the cells [x_i, x_i + h) with indices
    i - n/2 .. i + n/2 - 1 (cell i itself when n = 1); w is extended by 0 outside the box."""
    if w.m != 1:
        raise ValueError("maximal function takes scalar weights")
    v = w.scalar()
    if np.any(np.abs(v.imag) > 0) or np.any(v.real < 0):
        raise ValueError("negative input to maximal function")
    v = v.real
    g = w.grid
    best = v.copy()
    n = 2
    while n <= 2 * g.N:
        s = v
        for ax in range(g.d):
            s = _box_sums_1d(s, n, ax)
        best = np.maximum(best, s / n**g.d)
        n *= 2
    return Field(g, best)


def one_sided_maximal(values, h: float, steps: Sequence[int]) -> np.ndarray:
    """sup over n in ``steps`` of |(1/n) sum_{k<n} f(x_i + k h)|, the Riemann-sum form of
    the forward averages (1/t) int_0^t f(x+s) ds at t = n h; f is 0 beyond the last sample.
    ``values`` may carry a trailing component axis, in which case the Euclidean norm of the
    averaged vector is used. ``h`` only fixes units and does not enter the averages."""
    if not h > 0:
        raise ValueError("grid step must be positive")
    a = np.asarray(values)
    vec = a.ndim == 2
    if a.ndim not in (1, 2):
        raise ValueError("one-dimensional samples expected")
    N = a.shape[0]
    c = np.concatenate([np.zeros((1,) + a.shape[1:], dtype=a.dtype), np.cumsum(a, axis=0)])
    i = np.arange(N)
    best = np.zeros(N)
    for n in sorted({int(n) for n in steps}):
        if n < 1:
            raise ValueError("averaging lengths must be positive")
        hi = np.minimum(i + n, N)
        avg = (c[hi] - c[i]) / n
        m = np.sqrt((np.abs(avg) ** 2).sum(axis=-1)) if vec else np.abs(avg)
        np.maximum(best, m, out=best)
    return best


# ------------------------------------------------------------------ weighted


def weighted_check(f: Field, w: Field, phi: HolderKernel, q: float = 2.0,
                   tgrid: LogTimeGrid = DEFAULT_TGRID) -> tuple[float, float]:
    """((int S(f)^q w)^{1/q}, (int ||f||^q M(w))^{1/q})."""
    if f.grid != w.grid:
        raise ValueError("grid mismatch")
    S = lusin_area(f, phi, q, tgrid).values
    ww = w.scalar().real
    if np.any(ww < 0):
        raise ValueError("negative weight")
    Mw = maximal(w).scalar().real
    cell = f.grid.cell
    lhs = float((S**q * ww).sum() * cell) ** (1 / q)
    rhs = float((f.pointwise_norm() ** q * Mw).sum() * cell) ** (1 / q)
    return lhs, rhs


# ------------------------------------------------------------------ constants


@dataclass
class ConstantEstimate:
    """Empirical lower estimate: max over a finite family of ||G f||_p / ||f||_p."""

    p: float
    q: float
    r: float
    m: int
    family: str
    estimate: float
    argmax: int
    n_samples: int
    seed: int
    grid: dict
    ratios: list = field(default_factory=list)
    skipped: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def summary(self) -> dict:
        return {"p": self.p, "q": self.q, "r": self.r, "m": self.m, "estimate": self.estimate,
                "argmax_family_member": self.argmax, "family": self.family}


def square_function(f: Field, op, q: float, tgrid: LogTimeGrid) -> GFunctionResult:
    if isinstance(op, SemigroupSpec):
        return g_semigroup(f, op, q, tgrid)
    if isinstance(op, HolderKernel):
        return g_conv(f, op, q, tgrid)
    raise TypeError("operator must be a SemigroupSpec or a HolderKernel")


def _member_ratios(family, grid, target, op, ps, q, tgrid, i, ss):
    f = family(grid, target, np.random.default_rng(ss), i)
    norms_f = [lp_norm(f, p) for p in ps]
    if min(norms_f) == 0:
        return None
    G = square_function(f, op, q, tgrid)
    vals = G.values
    return [norm_of_values(vals, p, grid.cell) / nf for p, nf in zip(ps, norms_f)]


def estimate_constants(family, op, ps: Sequence[float], q: float, grid: GridSpec,
                       target: VectorTarget, tgrid: LogTimeGrid = DEFAULT_TGRID,
                       n_samples: int = 8, seed: int = 0, n_jobs: int = 1) -> list[ConstantEstimate]:
    """Lower estimates for several p at once; each family member's square function is
    computed once. Member i uses the i-th child of SeedSequence(seed)."""
    ps = [float(p) for p in ps]
    seqs = np.random.SeedSequence(seed).spawn(n_samples)
    jobs = (delayed(_member_ratios)(family, grid, target, op, ps, q, tgrid, i, seqs[i])
            for i in range(n_samples))
    rows = Parallel(n_jobs=n_jobs)(jobs) if n_jobs != 1 else [j[0](*j[1], **j[2]) for j in jobs]
    skipped = sum(r is None for r in rows)
    out = []
    for a, p in enumerate(ps):
        ratios = [np.nan if r is None else r[a] for r in rows]
        arr = np.array(ratios, dtype=float)
        ok = np.where(np.isfinite(arr), arr, -np.inf)
        idx = int(np.argmax(ok)) if np.any(np.isfinite(arr)) else -1
        est = float(ok[idx]) if idx >= 0 else 0.0
        out.append(ConstantEstimate(p, float(q), target.r, target.m, getattr(family, "name", str(family)),
                                    est, idx, n_samples, int(seed),
                                    {"d": grid.d, "L": grid.L, "N": grid.N, "t_min": tgrid.t_min,
                                     "t_max": tgrid.t_max, "K": tgrid.K},
                                    ratios, skipped))
    return out


def estimate_constant(family, op, p: float, q: float, grid: GridSpec, target: VectorTarget,
                      tgrid: LogTimeGrid = DEFAULT_TGRID, n_samples: int = 8, seed: int = 0,
                      n_jobs: int = 1) -> ConstantEstimate:
    return estimate_constants(family, op, [p], q, grid, target, tgrid, n_samples, seed, n_jobs)[0]
