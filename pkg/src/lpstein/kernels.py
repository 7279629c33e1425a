"""Closed-form semigroup kernels, Hölder-class kernels and structural checks
(Hölder class, Hörmander regularity, Uchiyama decomposition, Calderón pairs)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special
from scipy.interpolate import RegularGridInterpolator

from .numgrid import Field, GridSpec, LogTimeGrid, integrate_time, kernel_fft

# ---------------------------------------------------------------- closed forms


def _sq_radius(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d == 1:
        return x * x
    if x.shape[-1] != d:
        raise ValueError(f"points must have a trailing axis of length {d}")
    return (x * x).sum(axis=-1)


def _check_t(t):
    if not np.all(np.asarray(t) > 0):
        raise ValueError("time t must be positive")


def poisson_constant(d: int) -> float:
    """Normalising constant c_d making c_d t/(|x|^2+t^2)^{(d+1)/2} a probability density."""
    return float(special.gamma((d + 1) / 2) / np.pi ** ((d + 1) / 2))


def heat_kernel(t, x, d: int = 1):
    """(4 pi t)^{-d/2} exp(-|x|^2/(4t))."""
    _check_t(t)
    r2 = _sq_radius(x, d)
    return (4 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))


def heat_dt_kernel(t, x, d: int = 1):
    _check_t(t)
    r2 = _sq_radius(x, d)
    return heat_kernel(t, x, d) * (-d / 2 + r2 / (4 * t))


def poisson_kernel(t, x, d: int = 1):
    _check_t(t)
    r2 = _sq_radius(x, d)
    return poisson_constant(d) * t / (r2 + t * t) ** ((d + 1) / 2)


def poisson_dt_kernel(t, x, d: int = 1):
    """t d/dt of the Poisson kernel: c_d t (|x|^2 - d t^2)/(|x|^2+t^2)^{(d+3)/2}."""
    _check_t(t)
    r2 = _sq_radius(x, d)
    return poisson_constant(d) * t * (r2 - d * t * t) / (r2 + t * t) ** ((d + 3) / 2)


def levy_kernel(t, x):
    """Kernel of the Poisson semigroup subordinated to the translation group f -> f(.+s).

    Supported on x < 0: (t / (2 sqrt(pi))) u^{-3/2} exp(-t^2/(4u)) with u = -x.
    """
    _check_t(t)
    x = np.asarray(x, dtype=float)
    u = np.where(x < 0, -x, 1.0)
    val = t / (2 * np.sqrt(np.pi)) * u**-1.5 * np.exp(-t * t / (4 * u))
    return np.where(x < 0, val, 0.0)


def levy_dt_kernel(t, x):
    _check_t(t)
    x = np.asarray(x, dtype=float)
    u = np.where(x < 0, -x, 1.0)
    return np.where(x < 0, levy_kernel(t, x) * (1 - t * t / (2 * u)), 0.0)


def _sqrt_symbol(xi) -> np.ndarray:
    """Principal branch of sqrt(-2 pi i xi) = sqrt(2 pi |xi|) exp(-i sgn(xi) pi/4)."""
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(2 * np.pi * np.abs(xi)) * np.exp(-1j * np.sign(xi) * np.pi / 4)


def phi_fourier(xi) -> np.ndarray:
    """Fourier transform of the translation-Poisson g-function kernel: -z e^{-z}, z = sqrt(-2 pi i xi)."""
    z = _sqrt_symbol(xi)
    return -z * np.exp(-z)


# ---------------------------------------------------------------- semigroups

_FD_STEP = 1e-4


@dataclass(frozen=True)
class SemigroupSpec:
    """A computable convolution semigroup on R^d.

    ``kind`` is one of ``heat``, ``poisson``, ``translation_poisson`` or ``custom``.
    Custom semigroups are given by their Fourier multiplier ``symbol(t, *xi)``.
    """

    kind: str
    d: int = 1
    symbol: Callable | None = field(default=None, compare=False)
    fd_step: float = _FD_STEP

    def __post_init__(self):
        if self.kind not in ("heat", "poisson", "translation_poisson", "custom"):
            raise ValueError(f"unknown semigroup kind {self.kind!r}")
        if self.d not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.kind == "translation_poisson" and self.d != 1:
            raise ValueError("translation-Poisson semigroup lives on R (d=1)")
        if self.kind == "custom" and self.symbol is None:
            raise ValueError("custom semigroup needs a multiplier")

    @classmethod
    def heat(cls, d: int = 1):
        return cls("heat", d)

    @classmethod
    def poisson(cls, d: int = 1):
        return cls("poisson", d)

    @classmethod
    def translation_poisson(cls):
        return cls("translation_poisson", 1)

    @classmethod
    def custom(cls, symbol: Callable, d: int = 1, fd_step: float = _FD_STEP):
        return cls("custom", d, symbol, fd_step)

    @property
    def has_closed_form(self) -> bool:
        return self.kind != "custom"

    # pointwise evaluators (x: array for d=1, array with trailing axis d otherwise)
    def kernel(self, t, x):
        if self.kind == "heat":
            return heat_kernel(t, x, self.d)
        if self.kind == "poisson":
            return poisson_kernel(t, x, self.d)
        if self.kind == "translation_poisson":
            return levy_kernel(t, x)
        raise NotImplementedError("custom semigroups have no pointwise kernel; use kernel_field")

    def dt_kernel(self, t, x):
        if self.kind == "heat":
            return heat_dt_kernel(t, x, self.d)
        if self.kind == "poisson":
            return poisson_dt_kernel(t, x, self.d)
        if self.kind == "translation_poisson":
            return levy_dt_kernel(t, x)
        raise NotImplementedError("custom semigroups have no pointwise kernel; use dt_kernel_field")

    # Fourier side; xi are coordinate arrays, one per axis
    def multiplier(self, t, *xi):
        _check_t(t)
        if self.kind == "heat":
            return np.exp(-4 * np.pi**2 * t * sum(x * x for x in xi))
        if self.kind == "poisson":
            return np.exp(-2 * np.pi * t * np.sqrt(sum(x * x for x in xi)))
        if self.kind == "translation_poisson":
            return np.exp(-t * _sqrt_symbol(xi[0]))
        return np.asarray(self.symbol(t, *xi))

    def dt_multiplier(self, t, *xi):
        _check_t(t)
        if self.kind == "heat":
            a = 4 * np.pi**2 * t * sum(x * x for x in xi)
            return -a * np.exp(-a)
        if self.kind == "poisson":
            a = 2 * np.pi * t * np.sqrt(sum(x * x for x in xi))
            return -a * np.exp(-a)
        if self.kind == "translation_poisson":
            z = t * _sqrt_symbol(xi[0])
            return -z * np.exp(-z)
        e = self.fd_step
        return (self.multiplier(t * np.exp(e), *xi) - self.multiplier(t * np.exp(-e), *xi)) / (2 * e)

    # grid realisations
    def _pts(self, grid: GridSpec):
        if grid.d != self.d:
            raise ValueError("grid dimension does not match semigroup")
        return grid.axis if self.d == 1 else np.stack(grid.coords, axis=-1)

    def kernel_field(self, grid: GridSpec, t: float) -> Field:
        if self.has_closed_form:
            return Field(grid, self.kernel(t, self._pts(grid)))
        return Field(grid, _inverse_ft(grid, self.multiplier(t, *grid.frequencies)))

    def dt_kernel_field(self, grid: GridSpec, t: float) -> Field:
        if self.has_closed_form:
            return Field(grid, self.dt_kernel(t, self._pts(grid)))
        e = self.fd_step
        a = self.kernel_field(grid, t * np.exp(e)).scalar()
        b = self.kernel_field(grid, t * np.exp(-e)).scalar()
        return Field(grid, (a - b) / (2 * e))

    def grid_multiplier(self, grid: GridSpec, t: float) -> np.ndarray:
        return self.multiplier(t, *grid.frequencies)

    def grid_dt_multiplier(self, grid: GridSpec, t: float) -> np.ndarray:
        return self.dt_multiplier(t, *grid.frequencies)

    def g_kernel(self, grid: GridSpec) -> "HolderKernel":
        """The kernel t d/dt T_t at t = 1, whose dilations give t d/dt T_t for
        the dilation-invariant (heat excluded) semigroups."""
        if self.kind == "heat":
            raise ValueError("heat time derivatives are not dilations in t; use g_semigroup")
        if self.kind == "poisson":
            return HolderKernel.from_function(
                grid, lambda *c: poisson_dt_kernel(1.0, c[0] if self.d == 1 else np.stack(c, -1), self.d),
                eps=1.0, delta=1.0, fourier=lambda *xi: self.dt_multiplier(1.0, *xi), name="poisson_dt")
        if self.kind == "translation_poisson":
            return phi_kernel(grid)
        raise ValueError("custom semigroups have no dilation structure")


def _inverse_ft(grid: GridSpec, mult: np.ndarray) -> np.ndarray:
    """Centred kernel samples whose discrete multiplier is ``mult`` (inverse of kernel_fft)."""
    return np.fft.fftshift(np.fft.ifftn(mult)) / grid.cell


def dt_kernel(sg: SemigroupSpec, t, x):
    return sg.dt_kernel(t, x)


# ---------------------------------------------------------------- subordination


class QuadratureError(RuntimeError):
    pass


def subordinated_kernel(sg: SemigroupSpec, t: float, x, rtol: float = 1e-8, atol: float = 1e-15,
                        u_range=(-80.0, 5.0), max_levels: int = 14, chunk: int = 4096):
    """(1/sqrt(pi)) int_0^inf e^{-s} s^{-1/2} K(t^2/(4s), x) ds.

    Uses s = e^u and the trapezoid rule on ``u_range``; the step is halved until
    successive values differ by less than max(rtol*|value|, atol) at every x.
    """
    _check_t(t)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    pts = x.reshape(-1) if sg.d == 1 else x.reshape(-1, sg.d)
    out = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        out[lo:lo + chunk] = _subordinate_chunk(sg, t, pts[lo:lo + chunk], rtol, atol, u_range, max_levels)
    out = out.reshape(x.shape if sg.d == 1 else x.shape[:-1])
    return float(out) if scalar else out


def _subordinate_chunk(sg, t, pts, rtol, atol, u_range, max_levels):
    a, b = u_range

    def integrand(u):
        s = np.exp(u)[:, None]
        w = np.exp(-s + 0.5 * np.log(s))  # e^{-s} s^{-1/2} ds/du
        k = sg.kernel((t * t / (4 * s)), pts[None, ...] if sg.d == 1 else pts[None, :, :])
        return w * k

    h = 1.0
    u = np.arange(a, b + h / 2, h)
    f = integrand(u)
    total = h * (f.sum(axis=0) - 0.5 * (f[0] + f[-1]))
    for level in range(max_levels):
        mids = u[:-1] + h / 2
        new = 0.5 * total + (h / 2) * integrand(mids).sum(axis=0)
        u = np.sort(np.concatenate([u, mids]))
        h /= 2
        diff = np.abs(new - total)
        total = new
        if level >= 2 and np.all(diff <= np.maximum(rtol * np.abs(total), atol)):
            return total / np.sqrt(np.pi)
    worst = float(np.max(diff / np.maximum(np.abs(total), atol)))
    raise QuadratureError(f"subordination quadrature did not converge: relative change {worst:.3e} at step {h:g}")


# ---------------------------------------------------------------- Hölder kernels


@dataclass(frozen=True, eq=False)
class HolderKernel:
    """A kernel phi sampled on a grid, with declared class parameters (eps, delta).

    ``func`` (pointwise closed form) and ``fourier`` (closed-form transform) are
    optional; without them evaluation falls back to interpolation of the samples
    and to the discrete transform.
    """

    grid: GridSpec
    values: np.ndarray
    eps: float
    delta: float
    func: Callable | None = None
    fourier: Callable | None = None
    name: str = "kernel"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128)
        if v.shape != self.grid.shape:
            raise ValueError("kernel samples must match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite field")
        if not (self.eps > 0 and self.delta > 0):
            raise ValueError("class parameters eps, delta must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable, eps: float, delta: float,
                      fourier: Callable | None = None, name: str = "kernel"):
        return cls(grid, grid.sample(func), eps, delta, func, fourier, name)

    @classmethod
    def zero(cls, grid: GridSpec, eps: float = 1.0, delta: float = 1.0):
        return cls.from_function(grid, lambda *c: np.zeros_like(c[0]), eps, delta,
                                 lambda *xi: np.zeros_like(xi[0], dtype=complex), "zero")

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def field(self) -> Field:
        return Field(self.grid, self.values)

    def integral(self) -> complex:
        return complex(self.values.sum() * self.grid.cell)

    def __call__(self, *x) -> np.ndarray:
        if self.func is not None:
            return np.asarray(self.func(*x), dtype=complex)
        return self._interp(*x)

    def _interp(self, *x) -> np.ndarray:
        g = self.grid
        if g.d == 1:
            xx = np.asarray(x[0], dtype=float)
            re = np.interp(xx, g.axis, self.values.real, left=0.0, right=0.0)
            im = np.interp(xx, g.axis, self.values.imag, left=0.0, right=0.0)
            return re + 1j * im
        pts = np.stack(np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in x]), axis=-1)
        axes = (g.axis,) * g.d
        re = RegularGridInterpolator(axes, self.values.real, bounds_error=False, fill_value=0.0)(pts)
        im = RegularGridInterpolator(axes, self.values.imag, bounds_error=False, fill_value=0.0)(pts)
        return re + 1j * im

    def dilated(self, t: float, grid: GridSpec | None = None) -> np.ndarray:
        """Samples of phi_t(x) = t^{-d} phi(x/t)."""
        g = grid or self.grid
        return t ** (-g.d) * self(*[c / t for c in g.coords])

    def fourier_at(self, *xi) -> np.ndarray:
        if self.fourier is not None:
            return np.asarray(self.fourier(*xi), dtype=complex)
        # discrete transform of the samples, interpolated in frequency
        g = self.grid
        F = np.fft.fftshift(kernel_fft(self.values, g))
        fax = np.fft.fftshift(g.freq_axis)
        if g.d == 1:
            xx = np.asarray(xi[0], dtype=float)
            return (np.interp(xx, fax, F.real, left=0.0, right=0.0)
                    + 1j * np.interp(xx, fax, F.imag, left=0.0, right=0.0))
        pts = np.stack(np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in xi]), axis=-1)
        re = RegularGridInterpolator((fax,) * g.d, F.real, bounds_error=False, fill_value=0.0)(pts)
        im = RegularGridInterpolator((fax,) * g.d, F.imag, bounds_error=False, fill_value=0.0)(pts)
        return re + 1j * im

    def dilated_multiplier(self, t: float, grid: GridSpec | None = None) -> np.ndarray:
        """phi_hat(t xi) on the discrete frequencies (requires a closed-form transform)."""
        g = grid or self.grid
        if self.fourier is None:
            raise ValueError("kernel has no closed-form Fourier transform")
        return np.asarray(self.fourier(*[t * f for f in g.frequencies]), dtype=complex)

    def scaled(self, c: complex, name: str | None = None) -> "HolderKernel":
        func = None if self.func is None else (lambda *x, f=self.func: c * f(*x))
        four = None if self.fourier is None else (lambda *xi, f=self.fourier: c * f(*xi))
        return HolderKernel(self.grid, c * self.values, self.eps, self.delta, func, four,
                            name or f"{c}*{self.name}")


class ResolutionError(ValueError):
    pass


def _check_nyquist(grid: GridSpec, ft: Callable, tol: float):
    nyq = 1.0 / (2 * grid.h)
    tail = max(abs(complex(ft(np.array(nyq)))), abs(complex(ft(np.array(-nyq)))))
    if tail > tol:
        raise ResolutionError(
            f"insufficient grid resolution: |transform| = {tail:.3e} at the Nyquist frequency "
            f"{nyq:g} exceeds {tol:g}; decrease h = 2L/N")


def phi_kernel(grid: GridSpec, tol: float = 1e-12) -> HolderKernel:
    """Samples of the kernel with transform ``phi_fourier`` by inverse FFT, class (1/2, 1)."""
    if grid.d != 1:
        raise ValueError("phi kernel is defined on R (d=1)")
    _check_nyquist(grid, phi_fourier, tol)
    vals = _inverse_ft(grid, phi_fourier(grid.freq_axis))
    return HolderKernel(grid, vals, 0.5, 1.0, None, phi_fourier, "phi")


def phi_prime_kernel(grid: GridSpec, tol: float = 1e-12) -> HolderKernel:
    """Spectral derivative of the phi kernel (transform 2 pi i xi phi_hat)."""
    if grid.d != 1:
        raise ValueError("phi kernel is defined on R (d=1)")

    def ft(xi):
        return 2j * np.pi * np.asarray(xi) * phi_fourier(xi)

    _check_nyquist(grid, ft, tol)
    vals = _inverse_ft(grid, ft(grid.freq_axis))
    return HolderKernel(grid, vals, 0.5, 1.0, None, ft, "phi_prime")


def decay_constant(k: HolderKernel, power: float, radius: float | None = None) -> float:
    """sup over |x| <= radius of |phi(x)| (1+|x|)^power."""
    r = k.grid.radius
    mask = np.ones_like(r, dtype=bool) if radius is None else r <= radius
    return float(np.max(np.abs(k.values[mask]) * (1 + r[mask]) ** power))


# ---------------------------------------------------------------- checks


@dataclass(frozen=True)
class HolderReport:
    decay: float
    smoothness: float
    mean: float
    n_pairs: int

    def as_tuple(self):
        return (self.decay, self.smoothness, self.mean)

    def finite(self) -> bool:
        return all(np.isfinite(self.as_tuple()))


def _pair_indices(grid: GridSpec, n_pairs: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Random pairs plus all nearest-neighbour pairs (flat indices)."""
    n = grid.size
    a = rng.integers(0, n, n_pairs)
    b = rng.integers(0, n, n_pairs)
    idx = np.arange(n).reshape(grid.shape)
    na, nb = [a], [b]
    for ax in range(grid.d):
        sl = [slice(None)] * grid.d
        sl2 = [slice(None)] * grid.d
        sl[ax] = slice(0, grid.N - 1)
        sl2[ax] = slice(1, grid.N)
        na.append(idx[tuple(sl)].ravel())
        nb.append(idx[tuple(sl2)].ravel())
    a, b = np.concatenate(na), np.concatenate(nb)
    keep = a != b
    return a[keep], b[keep]


def holder_check(k: HolderKernel, n_pairs: int = 20000, seed: int = 0) -> HolderReport:
    """Smallest constants making the three class conditions hold on sampled points."""
    g, d, eps, dl = k.grid, k.d, k.eps, k.delta
    v = k.values.ravel()
    r = g.radius.ravel()
    c1 = float(np.max(np.abs(v) * (1 + r) ** (d + eps)))
    rng = np.random.default_rng(seed)
    a, b = _pair_indices(g, n_pairs, rng)
    pts = np.stack([c.ravel() for c in g.coords], axis=-1)
    dist = np.sqrt(((pts[a] - pts[b]) ** 2).sum(axis=-1))
    bound = dist**dl * ((1 + r[a]) ** (-d - eps - dl) + (1 + r[b]) ** (-d - eps - dl))
    c2 = float(np.max(np.abs(v[a] - v[b]) / bound))
    c3 = abs(k.integral()) / g.h
    return HolderReport(c1, c2, float(c3), int(a.size))


@dataclass(frozen=True)
class HormanderReport:
    size: float
    smoothness: float


def _sample_points(grid: GridSpec, n: int, rng) -> np.ndarray:
    rad = np.geomspace(4 * grid.h, grid.L / 2, n)
    if grid.d == 1:
        return rad * rng.choice([-1.0, 1.0], n)
    ang = rng.uniform(0, 2 * np.pi, n)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)


def _vector_kernel(k: HolderKernel, x: np.ndarray, tgrid: LogTimeGrid) -> np.ndarray:
    """|phi_t(x)| for all nodes t (rows) and points x (columns)."""
    t = tgrid.nodes[:, None]
    if k.d == 1:
        return t ** -1.0 * k(x[None, :] / t)
    return t ** -2.0 * k(x[None, :, 0] / t, x[None, :, 1] / t)


def hormander_check(k: HolderKernel, q: float, tgrid: LogTimeGrid, n_points: int = 256,
                    n_shifts: int = 16, seed: int = 0) -> HormanderReport:
    """Size and smoothness suprema of the l_q(dt/t)-valued kernel x -> (phi_t(x))_t."""
    rng = np.random.default_rng(seed)
    d, dl = k.d, k.delta
    x = _sample_points(k.grid, n_points, rng)
    rx = np.abs(x) if d == 1 else np.linalg.norm(x, axis=-1)
    Kx = _vector_kernel(k, x, tgrid)
    size = float(np.max(integrate_time(np.abs(Kx), tgrid, q) * rx**d))
    best = 0.0
    for _ in range(n_shifts):
        s = rng.uniform(1e-3, 0.5, n_points)
        if d == 1:
            y = x * s * rng.choice([-1.0, 1.0], n_points)
            ry = np.abs(y)
        else:
            ang = rng.uniform(0, 2 * np.pi, n_points)
            y = (rx * s)[:, None] * np.stack([np.cos(ang), np.sin(ang)], -1)
            ry = rx * s
        diff = integrate_time(np.abs(_vector_kernel(k, x + y, tgrid) - Kx), tgrid, q)
        best = max(best, float(np.max(diff * rx ** (d + dl) / ry**dl)))
    return HormanderReport(size, best)


# ---------------------------------------------------------------- Uchiyama


def smooth_step(x):
    """C^inf step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)

    def e(y):
        return np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)

    a, b = e(x), e(1 - x)
    return a / (a + b)


def cutoff(r):
    """1 on [0, 1/2], 0 on [1, inf), smooth in between."""
    return 1.0 - smooth_step(2 * np.asarray(r, dtype=float) - 1)


def annulus_bump(r):
    """eta(r) = cutoff(r/2) - cutoff(r), supported in [1/2, 2]; sum_k eta(2^-k r) = 1."""
    r = np.asarray(r, dtype=float)
    return cutoff(r / 2) - cutoff(r)


def partition_piece(k: int, r):
    """rho_0 = cutoff(|x|); rho_k = eta(2^{1-k}|x|) for k >= 1."""
    if k == 0:
        return cutoff(r)
    return annulus_bump(np.asarray(r, dtype=float) * 2.0 ** (1 - k))


class DecompositionError(RuntimeError):
    pass


@dataclass
class UchiyamaDecomposition:
    constant: float
    levels: list  # (k, Field psi_k on the unit grid)
    eps: float
    residuals: np.ndarray  # sup residual after each level
    hoelder: np.ndarray  # measured delta-Hölder constant of each unnormalised piece
    means: np.ndarray  # |integral psi_k|
    _pieces: Callable = field(repr=False, default=None)

    def term(self, k: int, *x):
        """k-th summand of the decomposition evaluated at physical points x."""
        return self._pieces(k, *x)

    def reconstruct(self, *x):
        return sum(self._pieces(k, *x) for k, _ in self.levels)


def _hoelder_const(vals: np.ndarray, grid: GridSpec, delta: float, rng, n_pairs: int = 20000) -> float:
    a, b = _pair_indices(grid, n_pairs, rng)
    pts = np.stack([c.ravel() for c in grid.coords], axis=-1)
    dist = np.sqrt(((pts[a] - pts[b]) ** 2).sum(axis=-1))
    v = vals.ravel()
    return float(np.max(np.abs(v[a] - v[b]) / dist**delta))


def uchiyama_decompose(k: HolderKernel, Kmax: int, tol: float | None = 1e-3, n_unit: int = 2048,
                       seed: int = 0) -> UchiyamaDecomposition:
    """Write phi = C sum_{k<=Kmax} 2^{-eps k} (psi_k)_{2^k} with psi_k supported in the unit ball,
    mean zero and delta-Hölder with constant 1 (up to the residual tail)."""
    d, eps = k.d, k.eps
    ug = GridSpec(d, 1.0, n_unit)
    ur = ug.radius
    rng = np.random.default_rng(seed)

    def phys(level):  # physical coordinates of the unit grid at scale 2^level
        return [c * 2.0**level for c in ug.coords]

    cell = lambda level: ug.cell * 2.0 ** (level * d)  # noqa: E731
    # S_j = int phi rho_j and R_j = int rho_j, on the grid at the piece's own scale
    S = np.zeros(Kmax + 1, dtype=complex)
    R = np.zeros(Kmax + 1)
    for j in range(Kmax + 1):
        rho = partition_piece(j, ur * 2.0**j)
        S[j] = (k(*phys(j)) * rho).sum() * cell(j)
        R[j] = rho.sum() * cell(j)
    cum = np.cumsum(S)

    def zeta(j, r):
        return cum[j] / R[j] * partition_piece(j, r)

    def piece(j, *x):
        r = np.sqrt(sum(np.asarray(c, dtype=float) ** 2 for c in x))
        out = k(*x) * partition_piece(j, r) - zeta(j, r)
        if j > 0:
            out = out + zeta(j - 1, r)
        return out

    raw, hol = [], []
    for j in range(Kmax + 1):
        vals = 2.0 ** (eps * j) * 2.0 ** (j * d) * piece(j, *phys(j))
        raw.append(vals)
        hol.append(_hoelder_const(vals, ug, k.delta, rng))
    C = max(hol)
    levels, means = [], []
    for j, vals in enumerate(raw):
        psi = vals / C if C > 0 else np.zeros_like(vals)
        levels.append((j, Field(ug, psi)))
        means.append(abs(psi.sum() * ug.cell))

    # residual phi - sum_{j<=K} piece_j = phi (1 - cutoff(2^-K r)) + zeta_K, on the kernel grid
    # and on radii reaching past the largest scale
    g = k.grid
    if d == 1:
        extra = np.geomspace(g.h, 2.0 ** (Kmax + 2), 400)
        evalpts = [np.concatenate([g.axis, extra, -extra])]
    else:
        extra = np.geomspace(g.h, 2.0 ** (Kmax + 2), 400)
        evalpts = [np.concatenate([g.coords[0].ravel(), extra, extra / np.sqrt(2)]),
                   np.concatenate([g.coords[1].ravel(), 0 * extra, extra / np.sqrt(2)])]
    r = np.sqrt(sum(c * c for c in evalpts))
    phi_vals = k(*evalpts)
    residuals = np.array([
        np.max(np.abs(phi_vals * (1 - cutoff(r * 2.0**-K)) + zeta(K, r))) for K in range(Kmax + 1)
    ])
    if tol is not None and residuals[-1] > tol:
        raise DecompositionError(
            f"reconstruction tail {residuals[-1]:.3e} exceeds {tol:g} at Kmax={Kmax}; increase Kmax")
    return UchiyamaDecomposition(float(C), levels, eps, residuals, np.array(hol), np.array(means), piece)


# ---------------------------------------------------------------- Calderón pairs


class TimeGridError(ValueError):
    pass


def calderon_check(phi: HolderKernel, psi: HolderKernel, xi: Sequence, tgrid: LogTimeGrid,
                   edge_tol: float = 1e-9) -> float:
    """max over xi of |int phi_hat(t xi) psi_hat(t xi) dt/t - 1|."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if phi.d == 1:
        pts = [xi[None, :] * tgrid.nodes[:, None]]
    else:
        xi = xi.reshape(-1, phi.d)
        pts = [xi[None, :, i] * tgrid.nodes[:, None] for i in range(phi.d)]
    prod = phi.fourier_at(*pts) * psi.fourier_at(*pts)
    edge = max(np.max(np.abs(prod[0])), np.max(np.abs(prod[-1])))
    if edge > edge_tol:
        raise TimeGridError(f"time grid too narrow: integrand {edge:.3e} at an endpoint")
    integral = prod.sum(axis=0) * tgrid.log_step
    return float(np.max(np.abs(integral - 1.0)))


# ---------------------------------------------------------------- output


def dump_kernel_csv(path, grid: GridSpec, values) -> None:
    """Write columns x..., value_re, value_im (17 significant digits)."""
    v = np.asarray(values).reshape(grid.shape)
    names = ["x", "y"][: grid.d]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["value_re", "value_im"])
        coords = [c.ravel() for c in grid.coords]
        flat = v.ravel()
        for i in range(flat.size):
            w.writerow([f"{c[i]:.17g}" for c in coords] + [f"{flat[i].real:.17g}", f"{flat[i].imag:.17g}"])
