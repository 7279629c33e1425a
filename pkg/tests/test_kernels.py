import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from lpstein.kernels import (
    DecompositionError,
    HolderKernel,
    QuadratureError,
    ResolutionError,
    SemigroupSpec,
    TimeGridError,
    calderon_check,
    cutoff,
    decay_constant,
    dt_kernel,
    dump_kernel_csv,
    heat_dt_kernel,
    heat_kernel,
    holder_check,
    hormander_check,
    levy_kernel,
    partition_piece,
    phi_fourier,
    phi_kernel,
    phi_prime_kernel,
    poisson_constant,
    poisson_dt_kernel,
    poisson_kernel,
    smooth_step,
    subordinated_kernel,
    uchiyama_decompose,
)
from lpstein.numgrid import Field, GridSpec, LogTimeGrid, convolve_multiplier

PHI_GRID = GridSpec(1, 64.0, 2**17)


def radial_mass(func, d):
    if d == 1:
        return integrate.quad(func, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
    return 2 * np.pi * integrate.quad(lambda r: r * func(np.array([r, 0.0])), 0, np.inf,
                                      epsabs=1e-13, epsrel=1e-12)[0]


# -- closed forms -------------------------------------------------------------


def test_heat_values():
    assert heat_kernel(1.0, 0.0) == pytest.approx((4 * np.pi) ** -0.5, rel=1e-15)
    assert heat_kernel(0.7, 1.3) == heat_kernel(0.7, -1.3)
    with pytest.raises(ValueError):
        heat_kernel(0.0, 1.0)
    with pytest.raises(ValueError):
        heat_kernel(-1.0, 1.0)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("t", [0.5, 1.0, 3.0])
def test_unit_mass(d, t):
    assert radial_mass(lambda x: heat_kernel(t, x, d), d) == pytest.approx(1.0, abs=1e-10)
    assert radial_mass(lambda x: poisson_kernel(t, x, d), d) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("t", [0.5, 2.0])
def test_dt_kernels_have_zero_mass(d, t):
    assert abs(radial_mass(lambda x: heat_dt_kernel(t, x, d), d)) < 1e-8
    assert abs(radial_mass(lambda x: poisson_dt_kernel(t, x, d), d)) < 1e-8


def test_poisson_values_and_constant():
    assert poisson_kernel(1.0, 0.0) == pytest.approx(1 / np.pi, rel=1e-15)
    assert poisson_constant(1) == pytest.approx(1 / np.pi)
    assert poisson_constant(2) == pytest.approx(special.gamma(1.5) / np.pi**1.5)
    with pytest.raises(ValueError):
        poisson_kernel(0.0, 0.0)


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_poisson_dilation(x, y):
    assert poisson_kernel(2.0, x) == pytest.approx(0.5 * poisson_kernel(1.0, x / 2), rel=1e-13)
    p = np.array([x, y])
    assert poisson_kernel(2.0, p, 2) == pytest.approx(0.25 * poisson_kernel(1.0, p / 2, 2), rel=1e-13)


def test_heat_dt_value_and_finite_difference():
    assert heat_dt_kernel(1.0, 0.0) == pytest.approx(-0.5 * (4 * np.pi) ** -0.5, rel=1e-15)
    e = 1e-5
    for x in (0.0, 0.7, 2.5):
        fd = (heat_kernel(np.exp(e), x) - heat_kernel(np.exp(-e), x)) / (2 * e)
        assert heat_dt_kernel(1.0, x) == pytest.approx(fd, rel=1e-8, abs=1e-12)


def test_poisson_dt_composition():
    # t d/dt P_t applied to p_s at t=s=1, x=0 is -1/(4 pi)
    target = -1 / (4 * np.pi)
    assert 0.5 * poisson_dt_kernel(2.0, 0.0) == pytest.approx(target, rel=1e-15)
    g = GridSpec(1, 1024.0, 2**16)
    sg = SemigroupSpec.poisson(1)
    f = Field.from_function(g, lambda x: poisson_kernel(1.0, x))
    out = convolve_multiplier(f, sg.grid_dt_multiplier(g, 1.0)).scalar().real
    assert out[g.N // 2] == pytest.approx(target, abs=1e-6)
    assert dt_kernel(sg, 1.0, 0.0) == poisson_dt_kernel(1.0, 0.0)


def test_levy_kernel_mass_and_support():
    assert levy_kernel(1.0, 0.5) == 0.0
    assert integrate.quad(lambda x: levy_kernel(1.3, x), -np.inf, 0)[0] == pytest.approx(1.0, abs=1e-8)


def test_custom_semigroup_matches_heat():
    heat = SemigroupSpec.heat(1)
    custom = SemigroupSpec.custom(lambda t, xi: np.exp(-4 * np.pi**2 * t * xi * xi))
    xi = np.linspace(-2, 2, 41)
    assert np.allclose(custom.dt_multiplier(0.3, xi), heat.dt_multiplier(0.3, xi), atol=1e-8)
    with pytest.raises(ValueError):
        SemigroupSpec("custom")
    with pytest.raises(ValueError):
        SemigroupSpec("wave")


def test_custom_kernel_field_matches_closed_form():
    g = GridSpec(1, 32.0, 2**12)
    custom = SemigroupSpec.custom(lambda t, xi: np.exp(-4 * np.pi**2 * t * xi * xi))
    assert np.max(np.abs(custom.kernel_field(g, 1.0).scalar() - heat_kernel(1.0, g.axis))) < 1e-12
    dt = custom.dt_kernel_field(g, 1.0).scalar().real
    assert np.max(np.abs(dt - heat_dt_kernel(1.0, g.axis))) < 1e-8


# -- subordination ------------------------------------------------------------


def test_subordination_origin():
    assert subordinated_kernel(SemigroupSpec.heat(1), 1.0, 0.0) == pytest.approx(1 / np.pi, abs=1e-6)


def test_subordination_identity_on_grid():
    heat = SemigroupSpec.heat(1)
    x = np.linspace(-64, 64, 257)
    for t in (0.25, 0.5, 1.0, 2.0, 4.0):
        assert np.max(np.abs(subordinated_kernel(heat, t, x) - poisson_kernel(t, x))) < 1e-6


def test_subordination_d2():
    heat = SemigroupSpec.heat(2)
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]])
    assert np.allclose(subordinated_kernel(heat, 1.0, pts), poisson_kernel(1.0, pts, 2), atol=1e-6)


def test_subordinated_mass_is_one():
    g = GridSpec(1, 256.0, 2**14)
    vals = subordinated_kernel(SemigroupSpec.heat(1), 0.25, g.axis)
    tail = 1 - 2 / np.pi * np.arctan(g.L / 0.25)
    assert vals.sum() * g.h + tail == pytest.approx(1.0, abs=1e-6)


def test_subordination_nonconvergence_raises():
    with pytest.raises(QuadratureError, match="did not converge"):
        subordinated_kernel(SemigroupSpec.heat(1), 1.0, 0.0, max_levels=2)


# -- phi kernel ---------------------------------------------------------------


def test_phi_fourier_values():
    z = np.sqrt(2 * np.pi) * np.exp(-1j * np.pi / 4)
    assert phi_fourier(1.0) == pytest.approx(-z * np.exp(-z), rel=1e-14)
    assert phi_fourier(0.0) == 0
    # the multiplier is that of t d/dt exp(-t sqrt(-2 pi i xi)) at t = 1
    sg = SemigroupSpec.translation_poisson()
    assert sg.dt_multiplier(1.0, np.array([0.3, -2.0])) == pytest.approx(phi_fourier(np.array([0.3, -2.0])))


def test_phi_kernel_mean_zero_and_class():
    k = phi_kernel(PHI_GRID)
    assert abs(k.integral()) < 1e-8
    assert (k.eps, k.delta) == (0.5, 1.0)
    assert holder_check(k).finite()


def test_phi_kernel_needs_resolution():
    with pytest.raises(ResolutionError, match="resolution"):
        phi_kernel(GridSpec(1, 64.0, 2**10))
    with pytest.raises(ValueError):
        phi_kernel(GridSpec(2, 8.0, 64))


def test_phi_decay_grid_stable():
    coarse = phi_kernel(PHI_GRID), phi_prime_kernel(PHI_GRID)
    fine_grid = GridSpec(1, 64.0, 2**18)
    fine = phi_kernel(fine_grid), phi_prime_kernel(fine_grid)
    for a, b, power in ((coarse[0], fine[0], 1.5), (coarse[1], fine[1], 2.5)):
        ca, cb = decay_constant(a, power, 32), decay_constant(b, power, 32)
        assert np.isfinite(ca) and abs(ca - cb) <= 0.1 * cb


# -- structural checks --------------------------------------------------------


def test_holder_and_hormander_zero():
    g = GridSpec(1, 16.0, 256)
    z = HolderKernel.zero(g)
    assert holder_check(z).as_tuple() == (0.0, 0.0, 0.0)
    tg = LogTimeGrid(1e-3, 1e3, 61)
    rep = hormander_check(z, 2.0, tg)
    assert (rep.size, rep.smoothness) == (0.0, 0.0)


def test_holder_poisson_dt_finite():
    k = SemigroupSpec.poisson(1).g_kernel(GridSpec(1, 256.0, 2**13))
    assert holder_check(k).finite()


def test_hormander_poisson_dt_stable_under_refinement():
    tg = LogTimeGrid.from_density(2.0**-12, 2.0**12, 48)
    sg = SemigroupSpec.poisson(1)
    a = hormander_check(sg.g_kernel(GridSpec(1, 256.0, 2**12)), 2.0, tg)
    b = hormander_check(sg.g_kernel(GridSpec(1, 256.0, 2**13)), 2.0, tg)
    for u, v in ((a.size, b.size), (a.smoothness, b.smoothness)):
        assert np.isfinite(u) and abs(u - v) <= 0.1 * v
    # the size constant is sup_x |x| (int |t d/dt p_t(x)|^2 dt/t)^{1/2}, computed here by quadrature
    oracle = np.sqrt(integrate.quad(lambda u: (u * (1 - u * u) / (np.pi * (1 + u * u) ** 2)) ** 2 / u, 0, np.inf)[0])
    assert a.size == pytest.approx(oracle, rel=1e-3)


def test_hormander_phi_finite():
    tg = LogTimeGrid.from_density(2.0**-12, 2.0**12, 48)
    rep = hormander_check(phi_kernel(PHI_GRID), 2.0, tg)
    assert np.isfinite(rep.size) and np.isfinite(rep.smoothness) and rep.size > 0


# -- partition of unity -------------------------------------------------------


def test_smooth_step_and_partition():
    assert smooth_step(-1.0) == 0.0 and smooth_step(2.0) == 1.0
    assert cutoff(0.4) == 1.0 and cutoff(1.0) == 0.0
    r = np.geomspace(1e-3, 1e3, 500)
    total = sum(partition_piece(k, r) for k in range(0, 14))
    assert np.allclose(total, 1.0, atol=1e-14)


# -- Uchiyama decomposition ----------------------------------------------------


@pytest.fixture(scope="module")
def poisson_decomposition():
    k = SemigroupSpec.poisson(1).g_kernel(GridSpec(1, 256.0, 2**13))
    return k, uchiyama_decompose(k, 30)


def test_uchiyama_reconstruction(poisson_decomposition):
    k, dec = poisson_decomposition
    assert dec.residuals[-1] <= 1e-3
    x = np.concatenate([np.linspace(-50, 50, 1001), np.geomspace(1, 1e8, 50)])
    assert np.max(np.abs(dec.reconstruct(x) - poisson_dt_kernel(1.0, x))) < 1e-12


def test_uchiyama_pieces_normalised(poisson_decomposition):
    _, dec = poisson_decomposition
    for k, psi in dec.levels:
        ug = psi.grid
        assert np.all(psi.scalar()[ug.radius > 1 + ug.h] == 0)
        assert abs(psi.scalar().sum() * ug.cell) <= 1e-6
    # each normalised piece is delta-Hölder with constant at most 1
    assert np.max(dec.hoelder) / dec.constant == pytest.approx(1.0)
    # psi_k dilated by 2^k and weighted by C 2^{-eps k} is the k-th summand
    k, psi = dec.levels[3]
    y = psi.grid.axis * 2**3
    assert np.allclose(dec.constant * 2.0**-3 * 2.0**-3 * psi.scalar(), dec.term(3, y), atol=1e-15)


def test_uchiyama_geometric_residual(poisson_decomposition):
    _, dec = poisson_decomposition
    ratios = dec.residuals[6:] / dec.residuals[5:-1]
    assert np.all(ratios <= 2.0**-dec.eps + 0.01)


def test_uchiyama_zero_and_failure(poisson_decomposition):
    dec = uchiyama_decompose(HolderKernel.zero(GridSpec(1, 16.0, 256)), 5)
    assert all(np.all(psi.scalar() == 0) for _, psi in dec.levels)
    k, _ = poisson_decomposition
    with pytest.raises(DecompositionError, match="increase Kmax"):
        uchiyama_decompose(k, 3, tol=1e-6)


# -- Calderón pairs -------------------------------------------------------------


def _pair(grid):
    k = SemigroupSpec.poisson(1).g_kernel(grid)
    return k.scaled(4.0), k


def test_calderon_gamma_pair():
    phi, psi = _pair(GridSpec(1, 16.0, 256))
    xi = np.concatenate([-np.geomspace(1e-2, 1e2, 32), np.geomspace(1e-2, 1e2, 32)])
    tg = LogTimeGrid.from_density(1e-8, 1e8, 48)
    assert calderon_check(phi, psi, xi, tg) <= 1e-6


@given(st.floats(0.1, 5.0))
def test_calderon_linear_in_psi(lam):
    phi, psi = _pair(GridSpec(1, 16.0, 256))
    tg = LogTimeGrid.from_density(1e-8, 1e8, 48)
    dev = calderon_check(phi, psi.scaled(lam), [0.7, -3.0], tg)
    assert dev == pytest.approx(abs(lam - 1), abs=1e-6)


def test_calderon_degenerate_detected():
    g = GridSpec(1, 16.0, 256)
    one_sided = HolderKernel(g, np.zeros(g.N), 1.0, 1.0, None,
                             lambda xi: np.where(xi > 0, -2 * np.pi * xi * np.exp(-2 * np.pi * np.abs(xi)), 0.0))
    tg = LogTimeGrid.from_density(1e-8, 1e8, 48)
    assert calderon_check(one_sided.scaled(4.0), one_sided, [-1.0, 1.0], tg) == pytest.approx(1.0)


def test_calderon_narrow_time_grid():
    phi, psi = _pair(GridSpec(1, 16.0, 256))
    with pytest.raises(TimeGridError, match="too narrow"):
        calderon_check(phi, psi, [1.0], LogTimeGrid(1e-2, 1.0, 50))


# -- output -------------------------------------------------------------------


def test_dump_kernel_csv_roundtrip(tmp_path):
    g = GridSpec(1, 4.0, 16)
    vals = phi_fourier(g.axis)
    path = tmp_path / "k.csv"
    dump_kernel_csv(path, g, vals)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x", "value_re", "value_im"]
    back = np.array([complex(float(r[1]), float(r[2])) for r in rows[1:]])
    assert np.array_equal(back, vals)
    assert np.array_equal([float(r[0]) for r in rows[1:]], g.axis)
