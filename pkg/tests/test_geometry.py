import math

import numpy as np
import pytest

from reckit import generators
from reckit.errors import (
    DimensionError,
    DomainError,
    ParseError,
    PreconditionError,
    ResolutionError,
)
from reckit.geometry import (
    AtomicMeasure,
    DPlane,
    build_dyadic_tree,
    corkscrew,
    local_hausdorff,
    nearest_isometry,
    plane_local_hausdorff,
    load_measure,
)


# -- load_measure -------------------------------------------------------------

def test_load_measure_roundtrip(tmp_path):
    p = tmp_path / "axis.txt"
    p.write_text("# three unit masses on the x-axis\n0 0 0 1\n1 0 0 1\n2 0 0 1\n")
    mu = load_measure(p, n=3, d=1)
    assert mu.total_mass == 3.0
    assert len(mu) == 3
    out = tmp_path / "copy.txt"
    mu.save(out)
    mu2 = load_measure(out, n=3, d=1)
    assert np.array_equal(mu2.positions, mu.positions)
    assert np.array_equal(mu2.masses, mu.masses)


def test_load_measure_empty_file(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("# nothing here\n")
    with pytest.raises(ParseError, match="no atoms"):
        load_measure(p, n=3, d=1)


def test_load_measure_malformed_line_number(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 0 0 1\n1 0 zero 1\n")
    with pytest.raises(ParseError, match="line 2"):
        load_measure(p, n=3, d=1)


def test_dimension_guard():
    with pytest.raises(DimensionError):
        AtomicMeasure([[0.0, 0.0]], [1.0], boundary_dim=1)  # d = n-1 rejected


def test_plane_ar_constant_counting_oracle():
    # oracle: brute-force ball counting, independent of the KD-tree path
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=1.0)
    c0, records = mu.ar_profile(n_centers=12, n_radii=6, seed=1)
    brute = 1.0
    for i, r, m in records:
        mask = np.linalg.norm(mu.positions - mu.positions[i], axis=1) <= r
        m_brute = float(mu.masses[mask].sum())
        assert m == pytest.approx(m_brute, abs=0.0)
        ratio = m_brute / r
        brute = max(brute, ratio, 1.0 / ratio)
    assert c0 == pytest.approx(brute)
    # continuum constant for a unit-density line is 2; closed-ball counting
    # can overshoot by h/r <= 1/4 at the smallest sampled radius
    assert c0 <= 2.0 + mu.h / (4 * mu.h) + 1e-9


def test_ar_profile_uniform_across_two_decades():
    mu = generators.lipschitz_graph(0.1, spacing=1 / 256, extent=4.0)
    r_lo, r_hi = 4 * mu.h, mu.diameter() / 4
    assert r_hi / r_lo >= 100  # two decades available
    c0, _ = mu.ar_profile(n_centers=15, n_radii=10, seed=3)
    assert c0 <= 3.0


# -- local_hausdorff ----------------------------------------------------------

def _line_cloud(shift=0.0, tilt=0.0, m=1601, span=2.0):
    x = np.linspace(-span, span, m)
    pts = np.stack([x, tilt * x + shift, np.zeros(m)], axis=1)
    return pts


def test_local_hausdorff_identical_and_shifted():
    line = _line_cloud()
    assert local_hausdorff(line, line, np.zeros(3), 1.0) == 0.0
    shifted = _line_cloud(shift=0.1)
    # parallel translate: each one-sided supremum is 0.1
    assert local_hausdorff(line, shifted, np.zeros(3), 1.0) == pytest.approx(0.2, rel=1e-9)


def test_local_hausdorff_tilted_plane():
    theta = 0.05
    dense = _line_cloud(m=8001)
    tilted = np.stack(
        [dense[:, 0] * math.cos(theta), dense[:, 0] * math.sin(theta), dense[:, 2]],
        axis=1,
    )
    got = local_hausdorff(dense, tilted, np.zeros(3), 1.0)
    # brute-force oracle over the sampled pairs
    def brute(a, b):
        inside = a[np.linalg.norm(a - 0.0, axis=1) <= 1.0]
        d = np.min(
            np.linalg.norm(inside[:, None, :] - b[None, :, :], axis=2), axis=1
        )
        return d.max()

    oracle = brute(dense, tilted) + brute(tilted, dense)
    assert got == pytest.approx(oracle, rel=1e-12)
    assert abs(got - 2 * math.sin(theta)) <= 0.1 * 2 * math.sin(theta)


def test_local_hausdorff_scale_invariance():
    line = _line_cloud()
    curve = line + np.array([0.0, 0.03, 0.0])
    s = 3.0
    base = local_hausdorff(line, curve, np.array([0.1, 0, 0]), 0.7)
    scaled = local_hausdorff(s * line, s * curve, s * np.array([0.1, 0, 0]), s * 0.7)
    assert scaled == pytest.approx(base, rel=1e-12)


def test_local_hausdorff_symmetry_and_domain():
    a, b = _line_cloud(), _line_cloud(shift=0.05)
    assert local_hausdorff(a, b, np.zeros(3), 0.5) == pytest.approx(
        local_hausdorff(b, a, np.zeros(3), 0.5)
    )
    with pytest.raises(DomainError):
        local_hausdorff(a, b, np.zeros(3), 0.0)


def test_plane_local_hausdorff_matches_sampled():
    pa = DPlane(np.zeros(3), np.array([[1.0, 0, 0]]))
    th = 0.07
    pb = DPlane(np.zeros(3), np.array([[math.cos(th), math.sin(th), 0.0]]))
    exact = plane_local_hausdorff(pa, pb, np.zeros(3), 1.0)
    x = np.linspace(-1, 1, 4001)
    sa = np.stack([x, 0 * x, 0 * x], axis=1)
    sb = np.stack([x * math.cos(th), x * math.sin(th), 0 * x], axis=1)
    sampled = local_hausdorff(sa, sb, np.zeros(3), 1.0)
    assert exact == pytest.approx(sampled, rel=1e-3)


# -- dyadic tree ---------------------------------------------------------------

def test_tree_single_atom():
    one = AtomicMeasure([[0.0, 0.0, 0.0]], [1.0], boundary_dim=1, patch_radius=1e-3)
    t = build_dyadic_tree(one, 0, 2)
    for k in range(0, 3):
        assert len(t.generations[k]) == 1
        cid = t.generations[k][0]
        assert np.array_equal(t.cubes[cid].atom_ids, [0])


def test_tree_generation_counts_near_net_oracle():
    mu = generators.plane(d=1, n=3, spacing=1 / 512, extent=0.5)  # unit segment
    t = build_dyadic_tree(mu, 0, 2)
    # greedy-net oracle: a maximal r_k/2-net of a length-1 segment has
    # between 10^k and 2*10^k + 1 points
    for k in range(0, 3):
        cnt = len(t.generations[k])
        assert 10**k / 3 <= cnt <= 3 * 10**k


def test_tree_axioms_and_resolution_guard():
    mu = generators.plane(d=1, n=3, spacing=1 / 512, extent=0.5)
    t = build_dyadic_tree(mu, 0, 2)
    assert t.verify_axioms()
    assert t.report["outer_ratio"] <= 1.0
    with pytest.raises(ResolutionError, match="generation 4"):
        build_dyadic_tree(mu, 0, 4)


def test_tree_nesting_exact():
    mu = generators.lipschitz_graph(0.1, spacing=1 / 512, extent=0.5)
    t = build_dyadic_tree(mu, 0, 2)
    for cid, cube in t.cubes.items():
        if cube.parent is not None:
            par = t.cubes[cube.parent]
            assert set(cube.atom_ids) <= set(par.atom_ids)


# -- corkscrew ----------------------------------------------------------------

def test_corkscrew_flat_plane_valid():
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=2.0)
    cs = corkscrew(mu, np.zeros(3), 1.0)
    # flat case: any point at height >= 1/2 is a valid corkscrew; the
    # deterministic grid argmax reaches tau0 ~ 1
    assert cs.tau0 >= 0.5
    assert cs.tau0 * cs.scale <= float(mu.dist_to_support(cs.point)) + 1e-12
    assert np.linalg.norm(cs.point - cs.anchor) <= cs.scale + 1e-12


def test_corkscrew_two_lines_grid_oracle():
    # two parallel lines at distance 0.2; corkscrew from one of them
    x = np.arange(-1.0, 1.0 + 1e-9, 1 / 128)
    a = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    b = a + np.array([0.0, 0.2, 0.0])
    mu = AtomicMeasure(np.vstack([a, b]), np.full(2 * len(x), 1 / 128), boundary_dim=1)
    cs = corkscrew(mu, np.zeros(3), 1.0)
    assert mu.dist_to_support(cs.point) >= 0.1
    # exhaustive oracle at spacing 1/32 (same grid the search scans)
    assert cs.tau0 <= 1.0 + 1e-12


def test_corkscrew_eq_inequality_chain():
    mu = generators.lipschitz_graph(0.1, spacing=1 / 128, extent=1.0)
    anchor = mu.positions[len(mu) // 2]
    cs = corkscrew(mu, anchor, 0.5)
    d = float(mu.dist_to_support(cs.point))
    assert cs.tau0 * cs.scale <= d + 1e-12
    assert d <= np.linalg.norm(cs.point - anchor) + 1e-12
    assert np.linalg.norm(cs.point - anchor) <= cs.scale + 1e-12


def test_corkscrew_resolution_error():
    mu = generators.plane(d=1, n=3, spacing=1 / 64, extent=1.0)
    with pytest.raises(ResolutionError):
        corkscrew(mu, np.zeros(3), 4 * mu.h)


# -- nearest isometry -----------------------------------------------------------

def test_nearest_isometry_identity_and_scaling():
    assert np.allclose(nearest_isometry(np.eye(3)).linear_part, np.eye(3))
    assert np.allclose(nearest_isometry(1.2 * np.eye(3)).linear_part, np.eye(3))


def test_nearest_isometry_svd_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        sym = rng.standard_normal((4, 4))
        sym = 0.01 * (sym + sym.T)
        s = q @ (np.eye(4) + sym)
        got = nearest_isometry(s).linear_part
        u, _, vt = np.linalg.svd(s)
        assert np.abs(got - u @ vt).max() <= 1e-8


def test_nearest_isometry_idempotent():
    rng = np.random.default_rng(11)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    s = q @ (np.eye(3) + 0.05 * np.diag([1.0, -1.0, 0.5]))
    h1 = nearest_isometry(s).linear_part
    h2 = nearest_isometry(h1).linear_part
    assert np.abs(h1 - h2).max() <= 1e-10


def test_nearest_isometry_domain_errors():
    with pytest.raises(PreconditionError):
        nearest_isometry(np.zeros((3, 3)))
    with pytest.raises(PreconditionError):
        nearest_isometry(2.0 * np.eye(3))
