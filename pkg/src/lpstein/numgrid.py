"""Sampled vector-valued fields on periodic grids, L_p norms, FFT convolution
and geometric quadrature for the scale-invariant measure dt/t."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable

import numpy as np


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [-L, L)^d with N points per axis."""

    d: int = 1
    L: float = 256.0
    N: int = 2**14

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("dimension d must be 1 or 2")
        if int(self.N) != self.N or not _is_pow2(int(self.N)) or self.N < 16:
            raise ValueError("N must be a power of two ≥ 16")
        if not (self.L > 0 and np.isfinite(self.L)):
            raise ValueError("half width L must be positive")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def size(self) -> int:
        return self.N**self.d

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def cell(self) -> float:
        """Volume element h^d."""
        return self.h**self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def coords(self) -> tuple:
        """Meshgrid of coordinates, one array per axis (ij indexing)."""
        return tuple(np.meshgrid(*([self.axis] * self.d), indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.coords))

    @cached_property
    def freq_axis(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, self.h)

    @cached_property
    def frequencies(self) -> tuple:
        return tuple(np.meshgrid(*([self.freq_axis] * self.d), indexing="ij"))

    @cached_property
    def origin_index(self) -> tuple:
        return (self.N // 2,) * self.d

    def sample(self, func: Callable[..., np.ndarray]) -> np.ndarray:
        """Evaluate ``func(*coords)`` on the grid."""
        return np.asarray(func(*self.coords))

    def rescaled(self, lam: float) -> "GridSpec":
        """Grid for x -> x/lam, i.e. the grid on which f(lam x) samples match f."""
        return GridSpec(self.d, self.L / lam, self.N)


@dataclass(frozen=True)
class VectorTarget:
    """The finite-dimensional Banach space l_r^m."""

    r: float = 2.0
    m: int = 1

    def __post_init__(self):
        if not (self.r >= 1):
            raise ValueError("target exponent r must be ≥ 1")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("target dimension m must be a positive integer")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "r", float(self.r))

    def norm(self, v: np.ndarray, axis: int = -1) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[axis] == 1:
            return np.abs(v[..., 0] if axis in (-1, v.ndim - 1) else np.take(v, 0, axis=axis))
        a = np.abs(v)
        if np.isinf(self.r):
            return a.max(axis=axis)
        if self.r == 2.0:
            return np.sqrt((a * a).sum(axis=axis))
        if self.r == 1.0:
            return a.sum(axis=axis)
        # scale by the max to avoid overflow for large r
        s = a.max(axis=axis, keepdims=True)
        s_safe = np.where(s > 0, s, 1.0)
        return np.squeeze(s, axis=axis) * ((a / s_safe) ** self.r).sum(axis=axis) ** (1.0 / self.r)


SCALAR = VectorTarget(2.0, 1)


class Field:
    """Function R^d -> C^m sampled on a GridSpec. Values are read-only."""

    __slots__ = ("grid", "target", "_values")

    def __init__(self, grid: GridSpec, values, target: VectorTarget | None = None):
        vals = np.asarray(values)
        if target is None:
            target = VectorTarget(2.0, 1) if vals.shape == grid.shape else VectorTarget(2.0, vals.shape[-1])
        if vals.shape == grid.shape:
            vals = vals[..., None]
        if vals.shape != grid.shape + (target.m,):
            raise ValueError(f"values shape {vals.shape} does not match grid {grid.shape} x m={target.m}")
        vals = np.array(vals, dtype=np.complex128, copy=True)
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite field")
        vals.flags.writeable = False
        self.grid = grid
        self.target = target
        self._values = vals

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def m(self) -> int:
        return self.target.m

    def pointwise_norm(self) -> np.ndarray:
        return self.target.norm(self._values)

    def scalar(self) -> np.ndarray:
        """Component 0 (convenient for m=1 fields)."""
        return self._values[..., 0]

    def with_values(self, values, target: VectorTarget | None = None) -> "Field":
        return Field(self.grid, values, target if target is not None else self.target)

    @classmethod
    def from_function(cls, grid: GridSpec, func, target: VectorTarget | None = None) -> "Field":
        return cls(grid, grid.sample(func), target)

    @classmethod
    def zeros(cls, grid: GridSpec, target: VectorTarget = SCALAR) -> "Field":
        return cls(grid, np.zeros(grid.shape + (target.m,)), target)

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return self.with_values(self._values + other._values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return self.with_values(self._values - other._values)

    def __mul__(self, c) -> "Field":
        return self.with_values(self._values * c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Field(d={self.grid.d}, N={self.grid.N}, L={self.grid.L}, m={self.m})"


def _check_same_grid(a: Field, b: Field):
    if a.grid != b.grid:
        raise ValueError("grid mismatch")


def lp_norm(f: Field, p: float) -> float:
    """Discrete L_p(R^d; X) norm (sum ||f(x)||_X^p h^d)^{1/p}."""
    if not (p > 1):
        raise ValueError("invalid exponent")
    if not np.all(np.isfinite(f.values)):
        raise ValueError("non-finite field")
    return norm_of_values(f.pointwise_norm(), p, f.grid.cell)


def norm_of_values(a: np.ndarray, p: float, cell: float) -> float:
    """L_p norm of a nonnegative sampled function with volume element ``cell``."""
    a = np.abs(np.asarray(a, dtype=float))
    if np.isinf(p):
        return float(a.max(initial=0.0))
    s = a.max(initial=0.0)
    if s == 0:
        return 0.0
    return float(s * (((a / s) ** p).sum() * cell) ** (1.0 / p))


def kernel_fft(k: Field | np.ndarray, grid: GridSpec) -> np.ndarray:
    """Discrete multiplier of a centred kernel (origin at index N/2)."""
    kv = k.scalar() if isinstance(k, Field) else np.asarray(k)
    return np.fft.fftn(np.fft.ifftshift(kv)) * grid.cell


def convolve_multiplier(f: Field, mult: np.ndarray) -> Field:
    """Apply a discrete Fourier multiplier (grid shape) to every component."""
    axes = tuple(range(f.grid.d))
    F = np.fft.fftn(f.values, axes=axes)
    out = np.fft.ifftn(F * np.asarray(mult)[..., None], axes=axes)
    return f.with_values(out)


def convolve(f: Field, k: Field) -> Field:
    """Periodic convolution sum_y k(x-y) f(y) h^d, coordinate-wise over components."""
    if f.grid != k.grid:
        raise ValueError("grid mismatch")
    if k.m != 1:
        raise ValueError("kernel must be scalar (m=1)")
    return convolve_multiplier(f, kernel_fft(k, f.grid))


def boundary_leakage(values: np.ndarray, grid: GridSpec, frac: float = 1 / 64) -> float:
    """Sup of |values| on the outer band of relative width ``frac`` of the box."""
    a = np.abs(np.asarray(values))
    if a.ndim > grid.d:
        a = a.reshape(grid.shape + (-1,)).max(axis=-1)
    band = max(1, int(round(grid.N * frac)))
    mask = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.d):
        idx = [slice(None)] * grid.d
        idx[ax] = slice(0, band)
        mask[tuple(idx)] = True
        idx[ax] = slice(grid.N - band, grid.N)
        mask[tuple(idx)] = True
    return float(a[mask].max(initial=0.0))


@dataclass(frozen=True)
class LogTimeGrid:
    """K geometric nodes on [t_min, t_max], each with weight ln(rho)."""

    t_min: float = 2.0**-12
    t_max: float = 2.0**12
    K: int = 48 * 8 + 1
    nodes: np.ndarray = dc_field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 < self.t_min < self.t_max) or not np.isfinite(self.t_max):
            raise ValueError("time grid needs 0 < t_min < t_max")
        if int(self.K) != self.K or self.K < 2:
            raise ValueError("time grid needs K ≥ 2")
        object.__setattr__(self, "K", int(self.K))
        t = np.geomspace(self.t_min, self.t_max, self.K)
        t.flags.writeable = False
        object.__setattr__(self, "nodes", t)

    @classmethod
    def from_density(cls, t_min: float = 2.0**-12, t_max: float = 2.0**12, per_decade: float = 48) -> "LogTimeGrid":
        decades = np.log10(t_max / t_min)
        return cls(t_min, t_max, max(2, int(np.ceil(decades * per_decade)) + 1))

    @property
    def rho(self) -> float:
        return (self.t_max / self.t_min) ** (1.0 / (self.K - 1))

    @property
    def log_step(self) -> float:
        return float(np.log(self.t_max / self.t_min) / (self.K - 1))

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.K, self.log_step)

    def scaled(self, lam: float) -> "LogTimeGrid":
        return LogTimeGrid(self.t_min * lam, self.t_max * lam, self.K)

    def edge_masks(self, decades: float = 1.0):
        """Boolean masks for the nodes in the lowest / highest ``decades`` of the range."""
        lo = self.nodes < self.t_min * 10**decades
        hi = self.nodes > self.t_max / 10**decades
        return lo, hi


def integrate_time(values, tgrid: LogTimeGrid, q: float, axis: int = 0) -> np.ndarray | float:
    """(sum_j v_j^q w_j)^{1/q} along ``axis``; max for q = inf."""
    v = np.asarray(values, dtype=float)
    if v.shape[axis] != tgrid.K:
        raise ValueError("need one value per time node")
    if np.any(v < 0):
        raise ValueError("negative input to time integral")
    if not (q >= 1):
        raise ValueError("invalid exponent")
    if np.isinf(q):
        out = v.max(axis=axis)
    else:
        out = (np.sum(v**q, axis=axis) * tgrid.log_step) ** (1.0 / q)
    return float(out) if np.ndim(out) == 0 else out


def tail_fraction(values, tgrid: LogTimeGrid, q: float, axis: int = 0, decades: float = 1.0) -> float:
    """Share of sum v^q coming from the two extreme decades (max over other axes)."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    if np.isinf(q):
        q = 2.0
    lo, hi = tgrid.edge_masks(decades)
    p = v**q
    tot = p.sum(axis=0)
    edge = p[lo].sum(axis=0) + p[hi].sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(tot > 0, edge / np.where(tot > 0, tot, 1.0), 0.0)
    return float(np.max(r))
