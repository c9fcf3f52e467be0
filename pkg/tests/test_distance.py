import math

import numpy as np
import pytest
from scipy import special

from reckit import generators
from reckit.distance import (
    CarlesonEstimate,
    DistanceField,
    SmoothedDensity,
    carleson_norm,
    comparison_constant,
    density_gradient_check,
    flat_compare,
    flat_constant,
)
from reckit.errors import DegenerateError, DomainError, PreconditionError
from reckit.geometry import AtomicMeasure, DPlane


def gamma_form(d, a):
    return math.pi ** (d / 2) * special.gamma(a / 2) / special.gamma((d + a) / 2)


# -- flat constant -------------------------------------------------------------

@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_flat_constant_vs_gamma_oracle(d, alpha):
    assert flat_constant(d, alpha) == pytest.approx(gamma_form(d, alpha), rel=1e-6)


def test_flat_constant_named_values():
    assert flat_constant(1, 1.0) == pytest.approx(math.pi, rel=1e-6)
    assert flat_constant(2, 2.0) == pytest.approx(math.pi, rel=1e-6)


def test_flat_constant_scale_free():
    # the formula carries no length scale; same call, same output
    assert flat_constant(1, 1.0) == flat_constant(1, 1.0)


# -- regularized distance --------------------------------------------------------

def test_d_alpha_plane_alpha1():
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=48.0)
    f = DistanceField(mu, alpha=1.0)
    t = 0.5
    got = f.evaluate(np.array([0.0, t, 0.0]))
    assert got == pytest.approx(t / math.pi, rel=0.01)


def test_d_alpha_plane_alpha2():
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=8.0)
    f = DistanceField(mu, alpha=2.0)
    t = 0.5
    got = f.evaluate(np.array([0.0, t, 0.0]))
    assert got == pytest.approx(t / math.sqrt(2.0), rel=0.01)


def test_d_alpha_single_atom_exact():
    one = AtomicMeasure([[0.0, 0.0]], [1.0], boundary_dim=0, patch_radius=1e-6)
    f = DistanceField(one, alpha=1.3, singular_floor=0.0)
    x = np.array([0.3, 0.4])
    assert f.evaluate(x) == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(DegenerateError):
        f.evaluate(np.zeros(2))


def test_d_alpha_homogeneity():
    mu = generators.lipschitz_graph(0.1, spacing=1 / 64, extent=2.0)
    s = 10.0
    scaled = AtomicMeasure(
        s * mu.positions, s**mu.boundary_dim * mu.masses, mu.boundary_dim,
        patch_radius=s * mu.h,
    )
    f = DistanceField(mu, alpha=1.0)
    fs = DistanceField(scaled, alpha=1.0)
    x = np.array([0.3, 0.7, 0.2])
    assert fs.evaluate(s * x) == pytest.approx(s * f.evaluate(x), rel=1e-12)


def test_d_alpha_monotone_in_atoms():
    mu = generators.plane(d=1, n=3, spacing=1 / 32, extent=2.0)
    sub = AtomicMeasure(
        mu.positions[::2], mu.masses[::2], mu.boundary_dim, patch_radius=mu.h
    )
    f_full = DistanceField(mu, alpha=1.0)
    f_sub = DistanceField(sub, alpha=1.0)
    x = np.array([0.17, 0.4, 0.1])
    assert f_sub.evaluate(x) > f_full.evaluate(x)


def test_d_alpha_distance_sandwich():
    mu = generators.lipschitz_graph(0.1, spacing=1 / 64, extent=4.0)
    f = DistanceField(mu, alpha=1.0)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, size=(1000, 3))
    pts[:, 1] += 0.3  # keep clear of the graph
    keep = mu.dist_to_support(pts) >= 4 * mu.h
    c1, c2 = f.comparability(pts[keep])
    assert 0 < c1 <= c2 < 10.0


# -- smoothed density -------------------------------------------------------------

def test_smoothed_density_plane():
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=4.0)
    sd = SmoothedDensity(mu)
    x = np.array([0.25, 0.0, 0.0])
    l0, phi, lam = sd.all_three(x, 1.0)
    assert lam == pytest.approx(1.0, rel=0.02)
    assert l0 == pytest.approx(1.0, rel=0.02)
    # the plane is symmetric about x's projection, so phi stays put
    assert np.linalg.norm(phi - x) <= 1e-9


def test_center_of_mass_symmetry_and_equivariance():
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=4.0)
    sd = SmoothedDensity(mu)
    x = np.array([0.0, 0.0, 0.0])
    assert np.linalg.norm(sd.center_of_mass(x, 0.8) - x) <= 1e-9
    shift = np.array([0.21, -0.05, 0.4])
    mu2 = AtomicMeasure(mu.positions + shift, mu.masses, 1, patch_radius=mu.h)
    sd2 = SmoothedDensity(mu2)
    assert np.allclose(
        sd2.center_of_mass(x + shift, 0.8), sd.center_of_mass(x, 0.8) + shift,
        atol=1e-12,
    )


def test_smoothed_density_resolution_guard():
    mu = generators.plane(d=1, n=3, spacing=1 / 16, extent=1.0)
    sd = SmoothedDensity(mu)
    with pytest.raises(DomainError):
        sd.all_three(np.zeros(3), 4 * mu.h)


def test_density_gradient_flat_plane():
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=6.0)
    sd = SmoothedDensity(mu)
    left, _ = density_gradient_check(
        sd, lambda x, r: 0.0, np.array([0.3, 0.0, 0.0]), 1.0
    )
    assert left <= 1e-3


def test_density_gradient_scale_invariance():
    mu = generators.lipschitz_graph(0.1, spacing=1 / 128, extent=2.0)
    s = 3.0
    mu_s = AtomicMeasure(
        s * mu.positions, s**mu.boundary_dim * mu.masses, 1, patch_radius=s * mu.h
    )
    sd, sd_s = SmoothedDensity(mu), SmoothedDensity(mu_s)
    x = np.array([0.1, 0.1 * math.sin(0.1), 0.0])
    x = mu.positions[len(mu) // 3]
    l1, _ = density_gradient_check(sd, lambda *_: 0.0, x, 0.5, step=0.02)
    l2, _ = density_gradient_check(sd_s, lambda *_: 0.0, s * x, s * 0.5, step=s * 0.02)
    assert l2 == pytest.approx(l1, rel=1e-6)


# -- Carleson estimators ------------------------------------------------------------

def test_carleson_norm_constant_flags():
    est = carleson_norm(
        lambda y, t: np.ones(len(y)), np.zeros(1), 1.0, d=1, n=3, resolution=1 / 512
    )
    assert est.non_carleson_at_resolution
    # shell sums stay level, so the running total grows ~ log(R/h)
    assert est.shell_sums[-1] == pytest.approx(est.shell_sums[0], rel=0.05)


def test_carleson_norm_outer_indicator_stable():
    def field(y, t):
        return (np.linalg.norm(t, axis=1) > 0.5).astype(float)

    e1 = carleson_norm(field, np.zeros(1), 1.0, d=1, n=3, resolution=1 / 128,
                       y_divisions=16)
    e2 = carleson_norm(field, np.zeros(1), 1.0, d=1, n=3, resolution=1 / 128,
                       y_divisions=32)
    assert not e1.non_carleson_at_resolution
    assert e1.value > 0
    assert e2.value == pytest.approx(e1.value, rel=0.05)


def test_carleson_norm_zero():
    est = carleson_norm(
        lambda y, t: np.zeros(len(y)), np.zeros(1), 1.0, d=1, n=3, resolution=1 / 64
    )
    assert est.value == 0.0
    assert not est.diverged


# -- flat_compare ----------------------------------------------------------------

def test_flat_compare_plane():
    mu = generators.plane(d=1, n=3, spacing=1 / 128, extent=48.0)
    f = DistanceField(mu, alpha=1.0)
    sd = SmoothedDensity(mu)
    plane = DPlane(np.zeros(3), np.array([[1.0, 0.0, 0.0]]))
    x = np.zeros(3)
    r = 1.0
    z = np.array([0.3, 0.45, 0.0])
    resid = flat_compare(f, sd, z, x, r, plane)
    assert resid <= 1e-2


def test_flat_compare_precondition():
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=4.0)
    f = DistanceField(mu, alpha=1.0)
    sd = SmoothedDensity(mu)
    plane = DPlane(np.zeros(3), np.array([[1.0, 0.0, 0.0]]))
    with pytest.raises(PreconditionError):
        flat_compare(f, sd, np.array([0.2, 0.001, 0.0]), np.zeros(3), 1.0, plane)


def test_comparison_constant_relation():
    assert comparison_constant(1, 1.0) == pytest.approx(1 / math.pi, rel=1e-6)
