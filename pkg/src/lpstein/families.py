"""Deterministic test-field families. A family is called as
``family(grid, target, rng, i)`` and returns the i-th member as a Field."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import heat_kernel, poisson_kernel
from .numgrid import Field, GridSpec, VectorTarget


def _direction(target: VectorTarget, rng, random: bool) -> np.ndarray:
    if not random or target.m == 1:
        v = np.zeros(target.m)
        v[0] = 1.0
        return v
    v = rng.standard_normal(target.m)
    return v / target.norm(v)


def _pts(grid: GridSpec):
    return grid.axis if grid.d == 1 else np.stack(grid.coords, axis=-1)


@dataclass(frozen=True)
class PoissonFamily:
    """Poisson kernels P_s at geometric scales s (member i uses scales[i % len])."""

    scales: tuple = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    random_direction: bool = False
    name: str = "poisson"

    def __call__(self, grid, target, rng, i):
        s = self.scales[i % len(self.scales)]
        v = _direction(target, rng, self.random_direction)
        return Field(grid, poisson_kernel(s, _pts(grid), grid.d)[..., None] * v, target)


@dataclass(frozen=True)
class HeatFamily:
    scales: tuple = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    random_direction: bool = False
    name: str = "heat"

    def __call__(self, grid, target, rng, i):
        s = self.scales[i % len(self.scales)]
        v = _direction(target, rng, self.random_direction)
        return Field(grid, heat_kernel(s, _pts(grid), grid.d)[..., None] * v, target)


@dataclass(frozen=True)
class GaussianBumps:
    """Sums of a few Gaussian bumps with random centres, widths and vector coefficients."""

    n_bumps: int = 4
    spread: float = 8.0
    name: str = "gaussian_bumps"

    def __call__(self, grid, target, rng, i):
        out = np.zeros(grid.shape + (target.m,))
        for _ in range(self.n_bumps):
            c = rng.uniform(-self.spread, self.spread, grid.d)
            w = float(np.exp(rng.uniform(np.log(0.1), np.log(4.0))))
            coef = rng.standard_normal(target.m)
            r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))
            out += np.exp(-r2 / (2 * w * w))[..., None] * coef
        return Field(grid, out, target)


@dataclass(frozen=True)
class DyadicSteps:
    """Step fields constant on dyadic cells of side 2^-level inside [-R, R)^d,
    with random l_r^m-valued coefficients."""

    level: int = 1
    R: float = 4.0
    name: str = "dyadic_steps"

    def __call__(self, grid, target, rng, i):
        side = 2.0 ** (-self.level)
        n = int(round(2 * self.R / side))
        coef = rng.standard_normal((n,) * grid.d + (target.m,))
        idx = [np.floor((x + self.R) / side).astype(int) for x in grid.coords]
        inside = np.ones(grid.shape, dtype=bool)
        for j in idx:
            inside &= (j >= 0) & (j < n)
        clipped = tuple(np.clip(j, 0, n - 1) for j in idx)
        out = coef[clipped] * inside[..., None]
        return Field(grid, out, target)


@dataclass(frozen=True)
class TrigPoly:
    """Random trigonometric polynomials periodic on the box, frequencies 1..max_freq."""

    n_terms: int = 6
    max_freq: int = 16
    name: str = "trig_poly"

    def __call__(self, grid, target, rng, i):
        out = np.zeros(grid.shape + (target.m,), dtype=complex)
        period = 2 * grid.L
        for _ in range(self.n_terms):
            k = rng.integers(-self.max_freq, self.max_freq + 1, grid.d)
            if not np.any(k):
                k[0] = 1
            phase = sum(kk * x for kk, x in zip(k, grid.coords)) / period
            coef = rng.standard_normal(target.m) + 1j * rng.standard_normal(target.m)
            out += np.exp(2j * np.pi * phase)[..., None] * coef
        return Field(grid, out, target)


@dataclass(frozen=True)
class Mixture:
    """Cycle through several families: member i comes from families[i % len]."""

    families: tuple
    name: str = "mixture"

    def __call__(self, grid, target, rng, i):
        fam = self.families[i % len(self.families)]
        return fam(grid, target, rng, i // len(self.families))


FAMILIES = {
    "poisson": PoissonFamily,
    "heat": HeatFamily,
    "gaussian_bumps": GaussianBumps,
    "dyadic_steps": DyadicSteps,
    "trig_poly": TrigPoly,
}


def standard_family() -> Mixture:
    return Mixture((PoissonFamily(), HeatFamily(), GaussianBumps(), DyadicSteps(), TrigPoly()), "standard")
