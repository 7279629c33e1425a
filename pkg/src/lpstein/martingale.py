"""Dyadic martingales on [0,1)^d, dyadic-like cube families and the 3Q partition,
smooth atoms and the tent decomposition, Boolean martingales and cotype
estimates, the stopped random walk, and the Walsh semigroup."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gfunc import ConstantEstimate
from .kernels import HolderKernel
from .numgrid import Field, GridSpec, LogTimeGrid, VectorTarget


class AlignmentError(ValueError):
    pass


# ------------------------------------------------------------------ cubes


@dataclass(frozen=True, order=True)
class Cube:
    """prod_i [a_i 2^-k, (a_i + w) 2^-k). Dyadic cubes have w = 1, tripled ones w = 3."""

    k: int
    a: tuple
    w: int = 1

    @classmethod
    def dyadic(cls, k: int, j) -> "Cube":
        j = (j,) if np.isscalar(j) else tuple(j)
        return cls(int(k), tuple(int(x) for x in j), 1)

    @property
    def d(self) -> int:
        return len(self.a)

    @property
    def side(self) -> float:
        return self.w * 2.0 ** (-self.k)

    @property
    def volume(self) -> float:
        return self.side**self.d

    def bounds(self):
        s = 2.0 ** (-self.k)
        return [(ai * s, (ai + self.w) * s) for ai in self.a]

    def tripled(self) -> "Cube":
        """3Q for a dyadic cube Q."""
        if self.w != 1:
            raise ValueError("tripling is defined for dyadic cubes")
        return Cube(self.k, tuple(ai - 1 for ai in self.a), 3)

    def children(self) -> list["Cube"]:
        offs = itertools.product((0, self.w), repeat=self.d)
        return [Cube(self.k + 1, tuple(2 * ai + o for ai, o in zip(self.a, off)), self.w) for off in offs]

    def parent(self) -> "Cube":
        # 2p = a or 2p + w = a; w is odd so exactly one choice is an integer
        return Cube(self.k - 1, tuple(ai // 2 if ai % 2 == 0 else (ai - self.w) // 2 for ai in self.a), self.w)

    def scaled_endpoints(self, kref: int):
        """Integer endpoints in units of 2^-kref (kref >= k)."""
        f = 2 ** (kref - self.k)
        return [(ai * f, (ai + self.w) * f) for ai in self.a]

    def contains_cube(self, other: "Cube") -> bool:
        kr = max(self.k, other.k)
        return all(lo1 <= lo2 and hi2 <= hi1 for (lo1, hi1), (lo2, hi2)
                   in zip(self.scaled_endpoints(kr), other.scaled_endpoints(kr)))

    def intersects(self, other: "Cube") -> bool:
        kr = max(self.k, other.k)
        return all(lo1 < hi2 and lo2 < hi1 for (lo1, hi1), (lo2, hi2)
                   in zip(self.scaled_endpoints(kr), other.scaled_endpoints(kr)))

    def mask(self, grid: GridSpec) -> np.ndarray:
        m = np.ones(grid.shape, dtype=bool)
        for (lo, hi), c in zip(self.bounds(), grid.coords):
            m &= (c >= lo - 1e-12 * grid.h) & (c < hi - 1e-12 * grid.h)
        return m


DyadicCube = Cube


@dataclass(frozen=True)
class DyadicLikeFamily:
    """Finite truncation of a cube family plus the predicate for the window it was cut from."""

    cubes: frozenset
    name: str = "family"
    window: Callable[[Cube], bool] | None = field(default=None, compare=False, repr=False)

    def __contains__(self, c: Cube) -> bool:
        return c in self.cubes

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(sorted(self.cubes))

    def in_window(self, c: Cube) -> bool:
        return True if self.window is None else self.window(c)

    def check_axioms(self) -> dict:
        """Counts of violations of: a) children closure, b) parent existence,
        c) nesting trichotomy; a) and b) only where the relative lies in the window."""
        miss_child = 0
        miss_parent = 0
        for c in self.cubes:
            for ch in c.children():
                if self.in_window(ch) and ch not in self.cubes:
                    miss_child += 1
            p = c.parent()
            if self.in_window(p) and p not in self.cubes:
                miss_parent += 1
        bad_nest = _nesting_violations(list(self.cubes))
        return {"a": miss_child, "b": miss_parent, "c": bad_nest, "size": len(self.cubes),
                "ok": miss_child == 0 and miss_parent == 0 and bad_nest == 0}


def _nesting_violations(cubes: list[Cube], chunk: int = 2048) -> int:
    """Number of unordered pairs that overlap without being nested (exact integer arithmetic)."""
    if not cubes:
        return 0
    kref = max(c.k for c in cubes)
    lo = np.array([[e[0] for e in c.scaled_endpoints(kref)] for c in cubes], dtype=object)
    hi = np.array([[e[1] for e in c.scaled_endpoints(kref)] for c in cubes], dtype=object)
    # int64 suffices whenever the spread of levels is moderate; fall back to object otherwise
    try:
        lo = lo.astype(np.int64)
        hi = hi.astype(np.int64)
    except OverflowError:
        pass
    n = len(cubes)
    count = 0
    for s in range(0, n, chunk):
        l1, h1 = lo[s:s + chunk, None, :], hi[s:s + chunk, None, :]
        l2, h2 = lo[None, :, :], hi[None, :, :]
        inter = np.all((l1 < h2) & (l2 < h1), axis=-1)
        a_in_b = np.all((l2 <= l1) & (h1 <= h2), axis=-1)
        b_in_a = np.all((l1 <= l2) & (h2 <= h1), axis=-1)
        count += int(np.sum(inter & ~a_in_b & ~b_in_a))
    return count // 2


def three_q_selector(k: int, a: int) -> int:
    """Family index sigma of the 1-d interval [a 2^-k, (a+3) 2^-k): the shift s = a mod 3
    satisfies s = 2^|k| sigma mod 3, and 2^|k| is its own inverse mod 3."""
    s = a % 3
    return (s * pow(2, abs(k), 3)) % 3


def three_q_partition(krange: Sequence[int] = range(-8, 9), jrange: Sequence[int] = range(-256, 257),
                      d: int = 1) -> list[DyadicLikeFamily]:
    """Split {3Q : Q dyadic, level in krange, index in jrange (per axis)} into 3^d families.

    Family membership is built independently of the selector: family sigma at
    level k collects the intervals [(3j+s)2^-k, (3(j+1)+s)2^-k) with
    s = 2^|k| sigma mod 3; products over axes give the d-dimensional families.
    """
    ks = list(krange)
    js = list(jrange)
    jlo, jhi = min(js), max(js)
    kset = set(ks)

    def window(c: Cube) -> bool:
        return c.k in kset and all(jlo <= ai + 1 <= jhi for ai in c.a)

    per_axis = {}
    for sigma in range(3):
        for k in ks:
            s = (pow(2, abs(k), 3) * sigma) % 3
            # numerators a = 3j + s of tripled intervals whose middle index a+1 is in range
            per_axis[(sigma, k)] = [a for a in range(jlo - 1, jhi) if a % 3 == s]
    fams = []
    for sig in itertools.product(range(3), repeat=d):
        cubes = set()
        for k in ks:
            for a in itertools.product(*[per_axis[(s_, k)] for s_ in sig]):
                cubes.add(Cube(k, tuple(a), 3))
        fams.append(DyadicLikeFamily(frozenset(cubes), f"3Q{sig if d > 1 else sig[0]}", window))
    return fams


def dyadic_family(kmin: int, kmax: int, d: int = 1) -> DyadicLikeFamily:
    """Dyadic cubes inside [0,1)^d with levels kmin..kmax (kmin >= 0)."""
    cubes = set()
    for k in range(kmin, kmax + 1):
        for j in itertools.product(range(2**k), repeat=d):
            cubes.add(Cube(k, tuple(j), 1))

    def window(c):
        return kmin <= c.k <= kmax and all(0 <= a < 2**c.k for a in c.a)

    return DyadicLikeFamily(frozenset(cubes), f"D[{kmin},{kmax}]", window)


# ------------------------------------------------------------------ conditional expectations


def _unit_block(grid: GridSpec):
    """Index slice of [0,1)^d and the resolution level J with h = 2^-J."""
    J = -np.log2(grid.h)
    if grid.L < 1 or abs(J - round(J)) > 1e-12:
        raise AlignmentError("misaligned grid: need L >= 1 and h = 2^-J")
    J = int(round(J))
    i0 = grid.N // 2
    return (slice(i0, i0 + 2**J),) * grid.d, J


def _block_mean(a: np.ndarray, b: int, d: int) -> np.ndarray:
    """Average over blocks of b points along the first d axes, broadcast back."""
    n = a.shape[0]
    shp = []
    for _ in range(d):
        shp += [n // b, b]
    r = a.reshape(tuple(shp) + a.shape[d:])
    mean_axes = tuple(2 * i + 1 for i in range(d))
    m = r.mean(axis=mean_axes, keepdims=True)
    return np.broadcast_to(m, r.shape).reshape(a.shape)


def cond_expect_array(a: np.ndarray, k: int, J: int, d: int) -> np.ndarray:
    """E_k on samples of [0,1)^d at resolution 2^-J."""
    if not (0 <= k <= J):
        raise AlignmentError(f"level {k} outside 0..{J}")
    return _block_mean(a, 2 ** (J - k), d)


def cond_expect(f: Field, k: int) -> Field:
    """Average of f over each Q in D_k, on [0,1)^d (zero elsewhere)."""
    sl, J = _unit_block(f.grid)
    out = np.zeros_like(f.values)
    out[sl] = cond_expect_array(f.values[sl], k, J, f.grid.d)
    return f.with_values(out)


def martingale_differences(f: Field, krange: tuple[int, int]) -> list[np.ndarray]:
    """d_k = E_k f - E_{k-1} f for kmin < k <= kmax, on the unit block."""
    kmin, kmax = krange
    sl, J = _unit_block(f.grid)
    if not (0 <= kmin < kmax <= J):
        raise AlignmentError(f"krange must satisfy 0 <= kmin < kmax <= {J}")
    a = f.values[sl]
    E = {k: cond_expect_array(a, k, J, f.grid.d) for k in range(kmin, kmax + 1)}
    return [E[k] - E[k - 1] for k in range(kmin + 1, kmax + 1)]


def square_fn(f: Field, q: float = 2.0, krange: tuple[int, int] | None = None) -> Field:
    """(sum_{kmin<k<=kmax} ||d_k f||_X^q)^{1/q} on [0,1)^d."""
    sl, J = _unit_block(f.grid)
    krange = (0, J) if krange is None else tuple(krange)
    diffs = martingale_differences(f, krange)
    acc = np.zeros(f.values[sl].shape[:-1])
    for dk in diffs:
        n = f.target.norm(dk)
        acc = np.maximum(acc, n) if np.isinf(q) else acc + n**q
    out = np.zeros(f.grid.shape)
    out[sl] = acc if np.isinf(q) else acc ** (1 / q)
    return Field(f.grid, out)


# ------------------------------------------------------------------ family square function


def _cube_slices(c: Cube, grid: GridSpec):
    idx = []
    for lo, hi in c.bounds():
        a = (lo + grid.L) / grid.h
        b = (hi + grid.L) / grid.h
        if abs(a - round(a)) > 1e-9 or abs(b - round(b)) > 1e-9:
            raise AlignmentError(f"cube {c} is not aligned with the grid")
        a, b = int(round(a)), int(round(b))
        if a < 0 or b > grid.N:
            raise AlignmentError(f"cube {c} leaves the grid box")
        idx.append(slice(a, b))
    return tuple(idx)


def family_square_fn(f: Field, fam: DyadicLikeFamily, q: float = 2.0) -> Field:
    """(sum_{Q in F} sum_{R child of Q in F} ||avg_R f - avg_Q f||^q 1_R)^{1/q}."""
    covered = np.zeros(f.grid.shape, dtype=bool)
    for c in fam.cubes:
        covered[_cube_slices(c, f.grid)] = True
    if np.any(f.pointwise_norm()[~covered] > 0):
        raise ValueError("f is not supported in the cubes of the family")
    acc = np.zeros(f.grid.shape)
    for Q in fam.cubes:
        sq = _cube_slices(Q, f.grid)
        aq = f.values[sq].reshape(-1, f.m).mean(axis=0)
        for R in Q.children():
            if R not in fam.cubes:
                continue
            sr = _cube_slices(R, f.grid)
            ar = f.values[sr].reshape(-1, f.m).mean(axis=0)
            acc[sr] += float(f.target.norm(ar - aq)) ** q
    return Field(f.grid, acc ** (1 / q))


# ------------------------------------------------------------------ atoms


@dataclass(frozen=True)
class AtomReport:
    outside_mass: float
    mean: float
    holder: float

    def as_tuple(self):
        return (self.outside_mass, self.mean, self.holder)


def atom_check(a: Field, Q: Cube, q: float, delta: float, n_pairs: int = 20000, seed: int = 0) -> AtomReport:
    """Mass outside Q, |int a|, and the smallest C with
    ||a(x)-a(y)|| <= C |Q|^{-1/q} (|x-y|/l(Q))^delta over sampled pairs."""
    g = a.grid
    nrm = a.pointwise_norm()
    inside = Q.mask(g)
    outside = float(nrm[~inside].sum() * g.cell)
    mean = float(a.target.norm(a.values.reshape(-1, a.m).sum(axis=0) * g.cell))
    rng = np.random.default_rng(seed)
    n = g.size
    ia = rng.integers(0, n, n_pairs)
    ib = rng.integers(0, n, n_pairs)
    flat = np.arange(n).reshape(g.shape)
    na, nb = [ia], [ib]
    for ax in range(g.d):
        s1 = [slice(None)] * g.d
        s2 = [slice(None)] * g.d
        s1[ax], s2[ax] = slice(0, g.N - 1), slice(1, g.N)
        na.append(flat[tuple(s1)].ravel())
        nb.append(flat[tuple(s2)].ravel())
    ia, ib = np.concatenate(na), np.concatenate(nb)
    keep = ia != ib
    ia, ib = ia[keep], ib[keep]
    pts = np.stack([c.ravel() for c in g.coords], axis=-1)
    dist = np.sqrt(((pts[ia] - pts[ib]) ** 2).sum(-1))
    v = a.values.reshape(-1, a.m)
    diff = a.target.norm(v[ia] - v[ib])
    scale = Q.volume ** (-1 / q) * (dist / Q.side) ** delta
    return AtomReport(outside, mean, float(np.max(diff / scale)) if diff.size else 0.0)


@dataclass(frozen=True)
class TentData:
    """Samples of h_t(y) on a grid for t in the dyadic bands (2^-k-1, 2^-k], k in levels.

    Each band carries n_sub nodes t = 2^{-k-(i+1/2)/n_sub} with weight ln2/n_sub
    for the measure dt/t; values has shape (len(levels), n_sub, *grid.shape, m).
    """

    grid: GridSpec
    levels: tuple
    n_sub: int
    values: np.ndarray
    target: VectorTarget = VectorTarget(2.0, 1)

    def nodes(self, k: int) -> np.ndarray:
        return 2.0 ** (-k - (np.arange(self.n_sub) + 0.5) / self.n_sub)

    @property
    def weight(self) -> float:
        return np.log(2.0) / self.n_sub

    def norm(self, q: float) -> float:
        nr = self.target.norm(self.values)
        return float((nr**q).sum() * self.grid.cell * self.weight) ** (1 / q)

    @classmethod
    def from_function(cls, grid: GridSpec, levels, n_sub: int, func, target: VectorTarget = VectorTarget(2.0, 1)):
        """func(t, *coords) -> array (*grid.shape, m) or (*grid.shape,)."""
        vals = []
        tmp = cls(grid, tuple(levels), n_sub, np.zeros((0,)), target)
        for k in levels:
            row = []
            for t in tmp.nodes(k):
                v = np.asarray(func(t, *grid.coords), dtype=complex)
                if v.shape == grid.shape:
                    v = v[..., None]
                row.append(v)
            vals.append(row)
        return cls(grid, tuple(levels), n_sub, np.array(vals), target)


@dataclass
class AtomicDecomposition:
    cubes: list
    lambdas: np.ndarray
    atoms: list  # Field per cube
    q: float

    def energy(self) -> float:
        return float((self.lambdas**self.q).sum())

    def reconstruct(self) -> Field:
        out = sum((lam * a.values for lam, a in zip(self.lambdas, self.atoms)),
                  start=np.zeros_like(self.atoms[0].values)) if self.atoms else None
        return self.atoms[0].with_values(out) if self.atoms else None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            d = self.cubes[0].d if self.cubes else 1
            w.writerow(["k"] + [f"j{i}" for i in range(d)] + ["lambda"])
            for c, lam in zip(self.cubes, self.lambdas):
                w.writerow([c.k] + list(c.a) + [f"{lam:.17g}"])


def check_h0(phi: HolderKernel, tol: float = 1e-8, n_pairs: int = 20000, seed: int = 0) -> dict:
    """Support in the unit ball, mean zero and delta-Hölder constant at most 1."""
    g = phi.grid
    outside = float(np.max(np.abs(phi.values[g.radius >= 1.0]), initial=0.0))
    mean = abs(phi.integral())
    rng = np.random.default_rng(seed)
    n = g.size
    ia, ib = rng.integers(0, n, n_pairs), rng.integers(0, n, n_pairs)
    flat = np.arange(n).reshape(g.shape)
    ia = np.concatenate([ia, flat[(slice(0, g.N - 1),) + (slice(None),) * (g.d - 1)].ravel()])
    ib = np.concatenate([ib, flat[(slice(1, g.N),) + (slice(None),) * (g.d - 1)].ravel()])
    keep = ia != ib
    ia, ib = ia[keep], ib[keep]
    pts = np.stack([c.ravel() for c in g.coords], axis=-1)
    dist = np.sqrt(((pts[ia] - pts[ib]) ** 2).sum(-1))
    v = phi.values.ravel()
    hol = float(np.max(np.abs(v[ia] - v[ib]) / dist**phi.delta))
    ok = outside <= tol and mean <= tol and hol <= 1 + tol
    return {"outside": outside, "mean": mean, "holder": hol, "ok": ok}


def atomic_decompose(h: TentData, phi: HolderKernel, q: float = 2.0) -> AtomicDecomposition:
    """lambda_Q = (int_{T_Q} ||h||^q dy dt/t)^{1/q}, a_Q = lambda_Q^{-1} int_{T_Q} phi_t(y - .) h_t(y) dy dt/t,
    over the dyadic cubes Q with l(Q) = 2^-k meeting the support of h."""
    rep = check_h0(phi)
    if not rep["ok"]:
        raise ValueError(f"kernel is not in the unit-ball Hölder class: {rep}")
    g = h.grid
    if phi.d != g.d:
        raise ValueError("dimension mismatch")
    pts = np.stack([c.ravel() for c in g.coords], axis=-1)
    cell, w = g.cell, h.weight
    nrm = h.target.norm(h.values)  # (levels, n_sub, *grid)
    cubes, lambdas, atoms = [], [], []
    for li, k in enumerate(h.levels):
        side = 2.0 ** (-k)
        band = nrm[li].reshape(h.n_sub, -1)
        active = np.nonzero(band.max(axis=0) > 0)[0]
        if active.size == 0:
            continue
        # group active points by their dyadic cube at level k
        idx = np.floor(pts[active] / side + 1e-9).astype(np.int64)
        keys = {tuple(r) for r in idx}
        for key in sorted(keys):
            Q = Cube(k, tuple(int(v) for v in key), 1)
            mQ = Q.mask(g).ravel()
            ys = np.nonzero(mQ)[0]
            lam = float((band[:, ys] ** q).sum() * cell * w) ** (1 / q)
            if lam == 0:
                continue
            vals = np.zeros((g.size, h.target.m), dtype=complex)
            hv = h.values[li].reshape(h.n_sub, g.size, h.target.m)
            for i, t in enumerate(h.nodes(k)):
                diff = (pts[ys][:, None, :] - pts[None, :, :]) / t  # (y, x, d)
                ker = t ** (-g.d) * phi(*[diff[..., a] for a in range(g.d)])
                vals += ker.T @ hv[i, ys, :] * cell * w
            cubes.append(Q)
            lambdas.append(lam)
            atoms.append(Field(g, (vals / lam).reshape(g.shape + (h.target.m,)), h.target))
    return AtomicDecomposition(cubes, np.array(lambdas), atoms, q)


def direct_tent_integral(h: TentData, phi: HolderKernel) -> Field:
    """g(x) = int int phi_t(y - x) h_t(y) dy dt/t evaluated by a single direct sum."""
    g = h.grid
    pts = np.stack([c.ravel() for c in g.coords], axis=-1)
    out = np.zeros((g.size, h.target.m), dtype=complex)
    for li, k in enumerate(h.levels):
        hv = h.values[li].reshape(h.n_sub, g.size, h.target.m)
        for i, t in enumerate(h.nodes(k)):
            ys = np.nonzero(np.abs(hv[i]).max(axis=1) > 0)[0]
            if ys.size == 0:
                continue
            diff = (pts[None, :, :] - pts[ys][:, None, :]) / t  # x - y
            ker = t ** (-g.d) * phi(*[-diff[..., a] for a in range(g.d)])
            out += np.einsum("yx,ym->xm", ker, hv[i, ys, :]) * g.cell * h.weight
    return Field(g, out.reshape(g.shape + (h.target.m,)), h.target)


def atom_holder_bound(d: int, delta: float, q: float) -> float:
    """Uniform constant (ln 2)^{1/q'} 2^{d+delta} for atoms built from a unit-ball
    Hölder kernel, relative to Q (not 3Q)."""
    qp = np.inf if q == 1 else q / (q - 1)
    return float(np.log(2.0) ** (1 / qp) * 2.0 ** (d + delta))


# ------------------------------------------------------------------ Boolean martingales


def _signs(K: int) -> np.ndarray:
    """eps[omega, i] = 1 - 2 * bit_i(omega), shape (2^K, K), int8."""
    om = np.arange(2**K, dtype=np.int64)
    bits = (om[:, None] >> np.arange(K)) & 1
    return (1 - 2 * bits).astype(np.int8)


@dataclass
class BooleanMartingale:
    """f_n = sum_{k<=n} d_k(eps_1..eps_{k-1}) eps_k on {-1,1}^K.

    ``coeffs[k-1]`` has shape (2^{k-1}, m); its row index encodes the prefix via
    bit i = (1 - eps_{i+1})/2.
    """

    coeffs: list
    m: int = 1

    def __post_init__(self):
        self.coeffs = [np.asarray(c, dtype=complex).reshape(2**i, -1) for i, c in enumerate(self.coeffs)]
        if self.coeffs:
            self.m = self.coeffs[0].shape[1]
        for i, c in enumerate(self.coeffs):
            if c.shape != (2**i, self.m):
                raise ValueError(f"coefficient table {i + 1} must have shape {(2**i, self.m)}")

    @property
    def K(self) -> int:
        return len(self.coeffs)

    @classmethod
    def from_callables(cls, K: int, funcs: Sequence[Callable], m: int = 1) -> "BooleanMartingale":
        """funcs[k-1](eps) with eps the (2^K, K) sign table returns d_k at every point.

        Raises if some d_k depends on eps_k, ..., eps_K.
        """
        eps = _signs(K)
        om = np.arange(2**K, dtype=np.int64)
        tabs = []
        for k in range(1, K + 1):
            v = np.asarray(funcs[k - 1](eps), dtype=complex).reshape(2**K, m)
            pre = om & ((1 << (k - 1)) - 1)
            if not np.allclose(v, v[pre]):
                raise ValueError(f"d_{k} depends on coordinates beyond the first {k - 1}")
            tabs.append(v[: 2 ** (k - 1)])
        return cls(tabs, m)

    def differences(self) -> np.ndarray:
        """(K, 2^K, m) array of d_k(omega) eps_k(omega)."""
        K = self.K
        eps = _signs(K)
        om = np.arange(2**K, dtype=np.int64)
        out = np.empty((K, 2**K, self.m), dtype=complex)
        for k in range(1, K + 1):
            pre = om & ((1 << (k - 1)) - 1)
            out[k - 1] = self.coeffs[k - 1][pre] * eps[:, k - 1, None]
        return out

    def path(self) -> np.ndarray:
        """(K+1, 2^K, m): f_0 = 0, f_1, ..., f_K."""
        dif = self.differences()
        return np.concatenate([np.zeros((1,) + dif.shape[1:], dtype=complex), np.cumsum(dif, axis=0)])

    def to_json(self) -> str:
        return json.dumps({"depth": self.K, "m": self.m,
                           "coefficients": [[[[z.real, z.imag] for z in row] for row in c] for c in self.coeffs]})

    @classmethod
    def from_json(cls, s: str) -> "BooleanMartingale":
        obj = json.loads(s)
        tabs = [np.array([[complex(a, b) for a, b in row] for row in c]) for c in obj["coefficients"]]
        return cls(tabs, obj["m"])


def random_martingale(rng, K: int, m: int = 1, complex_values: bool = False) -> BooleanMartingale:
    tabs = []
    for k in range(1, K + 1):
        c = rng.standard_normal((2 ** (k - 1), m))
        if complex_values:
            c = c + 1j * rng.standard_normal((2 ** (k - 1), m))
        tabs.append(c * rng.uniform(0.0, 1.0))
    return BooleanMartingale(tabs, m)


def stopped_walk(K: int) -> BooleanMartingale:
    """d_k = 1_{tau >= k}, tau the first time |eps_1 + ... + eps_k| = 2."""
    if K < 4 or K % 2:
        raise ValueError("stopped walk needs an even depth K >= 4")
    tabs = []
    for k in range(1, K + 1):
        pre = _signs(k - 1) if k > 1 else np.zeros((1, 0), dtype=np.int8)
        S = np.cumsum(pre, axis=1) if k > 1 else np.zeros((1, 0))
        alive = np.all(np.abs(S) < 2, axis=1) if k > 1 else np.ones(1, dtype=bool)
        tabs.append(alive.astype(float)[:, None])
    return BooleanMartingale(tabs, 1)


def stopping_time_pmf(K: int) -> dict:
    """Exact P(tau = j) for even j <= K plus P(tau > K), tau as in ``stopped_walk``."""
    pmf = {j: 2.0 ** (-j / 2) for j in range(2, K + 1, 2)}
    pmf["tail"] = 2.0 ** (-K / 2)
    return pmf


def cotype_ratio(mart: BooleanMartingale, target: VectorTarget, q: float) -> float:
    """(sum_k E||d_k||^q)^{1/q} / sup_n (E||f_n||^q)^{1/q} by exact enumeration."""
    dif = mart.differences()
    num = float(np.sum(np.mean(target.norm(dif) ** q, axis=1)))
    path = np.cumsum(dif, axis=0)
    den = float(np.max(np.mean(target.norm(path) ** q, axis=1)))
    if den == 0:
        return np.nan
    return (num / den) ** (1 / q)


def cotype_estimate(target: VectorTarget, q: float, generator: Callable | None = None, K: int = 10,
                    n_samples: int = 32, seed: int = 0) -> ConstantEstimate:
    """Running max of ``cotype_ratio`` over generated martingales (exact enumeration of {-1,1}^K).

    ``generator(rng, K, m)`` defaults to ``random_martingale``; member i uses the
    i-th child of SeedSequence(seed).
    """
    if K > 20:
        raise ValueError("exact enumeration is limited to K <= 20")
    gen = generator or random_martingale
    seqs = np.random.SeedSequence(seed).spawn(n_samples)
    ratios, skipped = [], 0
    for ss in seqs:
        r = cotype_ratio(gen(np.random.default_rng(ss), K, target.m), target, q)
        if not np.isfinite(r):
            skipped += 1
        ratios.append(r)
    arr = np.array(ratios, dtype=float)
    ok = np.where(np.isfinite(arr), arr, -np.inf)
    idx = int(np.argmax(ok)) if np.any(np.isfinite(arr)) else -1
    return ConstantEstimate(q, q, target.r, target.m, getattr(gen, "__name__", "generator"),
                            float(ok[idx]) if idx >= 0 else 0.0, idx, n_samples, int(seed),
                            {"K": K}, ratios, skipped)


# ------------------------------------------------------------------ torus limit of the walk


def walk_torus_sample(rng, n: int, K: int, q: float) -> np.ndarray:
    """Direct samples of sum_{k <= min(tau, K)} |cos theta_k|^q with (eps, theta) uniform."""
    eps = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, K))
    S = np.cumsum(eps, axis=1)
    hit = np.abs(S) >= 2
    tau = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, K)
    theta = rng.uniform(0, 2 * np.pi, size=(n, K))
    c = np.abs(np.cos(theta)) ** q
    alive = np.arange(1, K + 1)[None, :] <= tau[:, None]
    return (c * alive).sum(axis=1)


def walk_torus_moments(ps, q: float, K: int, n_per_stratum: int, seed: int = 0):
    """Stratified estimates of E[(sum_{k<=min(tau,K)} |cos theta_k|^q)^{p/q}] for each p,
    with exact stratum weights P(min(tau, K) = n); the same angle samples serve every p.
    Returns (estimates, standard errors) as arrays."""
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    pmf = stopping_time_pmf(K)
    weights = {j: pmf[j] for j in range(2, K + 1, 2)}
    weights[K] = weights.get(K, 0.0) + pmf["tail"]
    ss = np.random.SeedSequence(seed).spawn(len(weights))
    est = np.zeros(len(ps))
    var = np.zeros(len(ps))
    for (n, wgt), s in zip(sorted(weights.items()), ss):
        rng = np.random.default_rng(s)
        theta = rng.uniform(0, 2 * np.pi, size=(n_per_stratum, n))
        base = (np.abs(np.cos(theta)) ** q).sum(axis=1)
        y = base[None, :] ** (ps[:, None] / q)
        est += wgt * y.mean(axis=1)
        var += wgt**2 * y.var(axis=1, ddof=1) / n_per_stratum
    return est, np.sqrt(var)


def walk_torus_moment(p: float, q: float, K: int, n_per_stratum: int, seed: int = 0):
    """Single-p version of ``walk_torus_moments``; returns (estimate, standard error)."""
    est, se = walk_torus_moments([p], q, K, n_per_stratum, seed)
    return float(est[0]), float(se[0])


def walk_lower_bound(p: float, q: float, K: int) -> float:
    """sum_{j even <= K} 8^{-j/2} (2^{-q/2} j)^{p/q}: the contribution of the events
    {tau = j, |cos theta_k| >= 2^{-1/2} for k <= j}."""
    j = np.arange(2, K + 1, 2, dtype=float)
    return float(np.sum(8.0 ** (-j / 2) * (2.0 ** (-q / 2) * j) ** (p / q)))


# ------------------------------------------------------------------ Walsh


def fwht(a) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform along axis 0 (length 2^K)."""
    a = np.array(a, dtype=complex if np.iscomplexobj(a) else float)
    n = a.shape[0]
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    rest = a.shape[1:]
    h = 1
    while h < n:
        r = a.reshape((n // (2 * h), 2, h) + rest)
        a = np.stack([r[:, 0] + r[:, 1], r[:, 0] - r[:, 1]], axis=1).reshape((n,) + rest)
        h *= 2
    return a


def walsh_levels(K: int) -> np.ndarray:
    """|A| for every subset index A of {1..K}."""
    A = np.arange(2**K, dtype=np.int64)
    return np.array([bin(x).count("1") for x in A]) if K <= 4 else \
        ((A[:, None] >> np.arange(K)) & 1).sum(axis=1)


def walsh_character(K: int, A) -> np.ndarray:
    """w_A(omega) = prod_{i in A} eps_i(omega) with A a bitmask or an iterable of indices (1-based)."""
    if not np.isscalar(A):
        mask = 0
        for i in A:
            mask |= 1 << (int(i) - 1)
        A = mask
    om = np.arange(2**K, dtype=np.int64)
    par = ((om & int(A))[:, None] >> np.arange(K)) & 1
    return (1 - 2 * (par.sum(axis=1) % 2)).astype(float)


def _walsh_input(f) -> tuple[np.ndarray, int, bool]:
    f = np.asarray(f)
    vec = f.ndim == 2
    n = f.shape[0]
    K = int(round(np.log2(n)))
    if 2**K != n:
        raise ValueError("length must be a power of two")
    return (f if vec else f[:, None]), K, vec


def walsh_coefficients(f) -> np.ndarray:
    a, K, _ = _walsh_input(f)
    return fwht(a) / 2**K


def walsh_apply(f, t: float) -> np.ndarray:
    """T_t f: coefficient of w_A multiplied by e^{-t|A|}."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    a, K, vec = _walsh_input(f)
    alpha = fwht(a) / 2**K
    out = fwht(alpha * np.exp(-t * walsh_levels(K))[:, None])
    if not np.iscomplexobj(f):
        out = out.real
    return out if vec else out[:, 0]


@dataclass(frozen=True)
class WalshGResult:
    values: np.ndarray
    truncation: float
    flagged: bool


def walsh_g(f, q: float, tgrid: LogTimeGrid, target: VectorTarget | None = None,
            tol: float = 1e-3) -> WalshGResult:
    """(int ||sum_A (-t|A|) e^{-t|A|} alpha_A w_A(omega)||^q dt/t)^{1/q} per point omega."""
    a, K, _ = _walsh_input(f)
    target = target or VectorTarget(2.0, a.shape[1])
    alpha = fwht(a) / 2**K
    lev = walsh_levels(K)
    present = [l for l in range(1, K + 1) if np.any(alpha[lev == l] != 0)]
    if not present:
        return WalshGResult(np.zeros(2**K), 0.0, False)
    parts = np.stack([fwht(np.where((lev == l)[:, None], alpha, 0)) for l in present])  # (L, 2^K, m)
    ls = np.array(present, dtype=float)
    tt = tgrid.nodes[:, None]
    c = -tt * ls[None, :] * np.exp(-tt * ls[None, :])  # (T, L)
    lo, hi = tgrid.edge_masks(1.0)
    qq = 2.0 if np.isinf(q) else q
    if len(present) == 1:
        # single level: ||c_t part(omega)|| = |c_t| ||part(omega)||, so the time integral factors
        ct = np.abs(c[:, 0])
        pn = target.norm(parts[0])
        out = pn * (ct.max() if np.isinf(q) else (np.sum(ct**q) * tgrid.log_step) ** (1 / q))
        cw = ct**qq
        frac = float(cw[lo | hi].sum() / cw.sum()) if np.any(pn > 0) else 0.0
        return WalshGResult(out, frac, bool(frac > tol))
    vals = (c @ parts.reshape(len(present), -1)).reshape((c.shape[0],) + parts.shape[1:])
    nr = target.norm(vals)  # (T, 2^K)
    contrib = nr**qq
    out = nr.max(axis=0) if np.isinf(q) else (contrib.sum(axis=0) * tgrid.log_step) ** (1 / q)
    tot = contrib.sum()
    frac = float(contrib[lo | hi].sum() / tot) if tot > 0 else 0.0
    return WalshGResult(out, frac, bool(frac > tol))
