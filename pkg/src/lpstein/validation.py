"""Input validation helpers shared by the estimators, experiments and CLI."""
from __future__ import annotations

import numbers

import numpy as np

from .numgrid import Field, GridSpec, VectorTarget


def check_exponent(p, name: str = "p", allow_one: bool = False, allow_inf: bool = True) -> float:
    if isinstance(p, str) and p.strip().lower() in ("inf", "infinity"):
        p = np.inf
    if not isinstance(p, numbers.Real):
        raise TypeError(f"{name} must be a real number")
    p = float(p)
    if np.isnan(p) or (np.isinf(p) and not allow_inf):
        raise ValueError(f"invalid exponent {name}={p}")
    if (p < 1) if allow_one else (p <= 1):
        raise ValueError(f"invalid exponent {name}={p}: need {name} {'>=' if allow_one else '>'} 1")
    return p


def check_power_of_two(n, name: str = "N", minimum: int = 16) -> int:
    if not isinstance(n, numbers.Integral) or n < minimum or (int(n) & (int(n) - 1)):
        raise ValueError(f"{name} must be a power of two ≥ {minimum}")
    return int(n)


def check_field(X, grid: GridSpec, target: VectorTarget | None = None) -> Field:
    """Turn X (a Field or array of samples) into a Field on ``grid``.

    Accepted array shapes: grid.shape, grid.shape + (m,), or (N^d,) / (N^d, m) flattened.
    """
    if isinstance(X, Field):
        if X.grid != grid:
            raise ValueError("grid mismatch")
        return X
    a = np.asarray(X)
    if a.ndim >= 1 and a.shape[0] == grid.size and a.shape[: grid.d] != grid.shape:
        a = a.reshape(grid.shape + a.shape[1:])
    if a.shape[: grid.d] != grid.shape:
        raise ValueError(f"samples of shape {a.shape} do not fit a grid of shape {grid.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite field")
    if target is None:
        target = VectorTarget(2.0, 1 if a.ndim == grid.d else a.shape[-1])
    return Field(grid, a, target)


def check_nonnegative(a, name: str = "input") -> np.ndarray:
    a = np.asarray(a)
    if np.iscomplexobj(a):
        if np.any(a.imag != 0):
            raise ValueError(f"{name} must be real and nonnegative")
        a = a.real
    if np.any(a < 0):
        raise ValueError(f"{name} must be nonnegative")
    return a


def check_seed(seed) -> int:
    if not isinstance(seed, numbers.Integral) or not (0 <= int(seed) < 2**64):
        raise ValueError("seed must be a 64-bit unsigned integer")
    return int(seed)
