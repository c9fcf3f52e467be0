"""Replacement surface and measure: the image of the base plane under the
iterated maps, a mass-matched measure on it, the hybrid distance that
follows the original set inside the region and the surface outside, the
discrepancy field, and the projections of cubes onto the surface."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .distance import DistanceField
from .errors import DegenerateError, DomainError, PreconditionError
from .geometry import AtomicMeasure


# ---------------------------------------------------------------------------
# Surface surrogate
# ---------------------------------------------------------------------------

@dataclass
class SigmaSurface:
    stack: object
    base_local: np.ndarray     # (N, d) grid on the base plane
    xi_local: np.ndarray       # (N, n) images under the final map
    xi_world: np.ndarray       # (N, n)
    weights_world: np.ndarray  # d-volume per sample in world units
    cell_area_local: float
    tree: cKDTree = field(default=None, repr=False)

    def __post_init__(self):
        if self.tree is None:
            self.tree = cKDTree(self.xi_world)

    def __len__(self):
        return len(self.weights_world)

    @property
    def total_mass(self):
        return float(self.weights_world.sum())

    def ball_ids(self, center, radius):
        ids = self.tree.query_ball_point(np.asarray(center, dtype=float), radius)
        return np.asarray(sorted(ids), dtype=int)

    def dist_to_surface(self, pts):
        d, _ = self.tree.query(np.asarray(pts, dtype=float))
        return d

    def as_measure(self, boundary_dim):
        return AtomicMeasure(
            self.xi_world, np.maximum(self.weights_world, 1e-300), boundary_dim,
            patch_radius=self.cell_area_local ** (1.0 / self.base_local.shape[1]),
        )

    def ar_profile(self, n_centers=15, n_radii=6, seed=0):
        meas = self.as_measure(self.base_local.shape[1])
        return meas.ar_profile(n_centers=n_centers, n_radii=n_radii, seed=seed)


def build_sigma_surface(stack, grid_step, reach):
    """Map a uniform base-plane grid of the ball of radius ``reach``
    (local units) through the final composed map.

    Weights are grid cell area times the d-volume Jacobian factor
    sqrt(det(Df^T Df)) by central differences, converted to world units.
    """
    d = stack.d
    frame = stack.ccbp.frame
    ax = np.arange(-reach, reach + grid_step / 2, grid_step)
    if d == 1:
        base = ax[:, None]
    else:
        gg = np.meshgrid(*([ax] * d), indexing="ij")
        base = np.stack([g.ravel() for g in gg], axis=1)
    base = base[np.linalg.norm(base, axis=1) <= reach]
    h = grid_step / 20
    stencil = [base]
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        stencil.extend([base + e, base - e])
    flat = np.concatenate(stencil, axis=0)
    vals = stack.f(flat)
    m = len(base)
    xi = vals[:m]
    jac_cols = []
    for i in range(d):
        plus = vals[m * (1 + 2 * i): m * (2 + 2 * i)]
        minus = vals[m * (2 + 2 * i): m * (3 + 2 * i)]
        jac_cols.append((plus - minus) / (2 * h))
    jac = np.stack(jac_cols, axis=2)  # (m, n, d)
    gram = np.swapaxes(jac, 1, 2) @ jac
    det = np.linalg.det(gram)
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise DegenerateError("degenerate surface Jacobian weight")
    w_local = grid_step**d * np.sqrt(det)
    scale = frame.scale
    return SigmaSurface(
        stack=stack,
        base_local=base,
        xi_local=xi,
        xi_world=frame.to_world(xi),
        weights_world=w_local * scale**d,
        cell_area_local=grid_step**d,
    )


# ---------------------------------------------------------------------------
# Replacement measure
# ---------------------------------------------------------------------------

@dataclass
class SigmaPatch:
    whitney_id: int
    sample_ids: np.ndarray
    area: float
    density: float
    mu_mass: float


@dataclass
class SigmaMeasure:
    surface: SigmaSurface
    region: object
    contact_ids: np.ndarray       # atom ids carrying the untouched part
    patches: list                 # SigmaPatch per near Whitney cube
    far_ids: np.ndarray           # sample ids in the far part
    sample_mass: np.ndarray       # assembled mass per surface sample
    m2: float
    overlap_count: np.ndarray     # patches covering each sample

    def part_mass(self, j):
        return float(self.patches[j].density * self.patches[j].area)

    @property
    def max_overlap(self):
        return int(self.overlap_count.max()) if len(self.overlap_count) else 0

    def as_measure(self):
        """Assembled measure: contact atoms plus weighted surface samples."""
        mu = self.region.tree.measure
        pos_parts, mass_parts = [], []
        if len(self.contact_ids):
            pos_parts.append(mu.positions[self.contact_ids])
            mass_parts.append(mu.masses[self.contact_ids])
        live = self.sample_mass > 0
        if np.any(live):
            pos_parts.append(self.surface.xi_world[live])
            mass_parts.append(self.sample_mass[live])
        if not pos_parts:
            raise DegenerateError("empty replacement measure")
        return AtomicMeasure(
            np.vstack(pos_parts), np.concatenate(mass_parts), mu.boundary_dim,
            patch_radius=max(mu.h, self.surface.cell_area_local),
        )

    def total_mass(self):
        mu = self.region.tree.measure
        return float(mu.masses[self.contact_ids].sum() + self.sample_mass.sum())


def build_sigma_measure(surface, region, whitney, tau):
    """Assemble the replacement measure from its three parts.

    Contact atoms keep their original masses; each near Whitney cube
    spreads its mass uniformly over its surface patch (ball of radius
    M2 * l, M2 = 1/(10 tau)); the far samples keep unit surface density.
    """
    tree = region.tree
    mu = tree.measure
    top = tree.cubes[region.top]
    l_top = top.sidelength
    m2 = 0.1 / tau
    top_tree = cKDTree(tree.atom_positions(region.top))

    near = []
    for cid in whitney.cubes:
        gap = float(top_tree.query(tree.atom_positions(cid))[0].min())
        if gap <= l_top:
            near.append(cid)

    sample_mass = np.zeros(len(surface))
    overlap = np.zeros(len(surface), dtype=int)
    patches = []
    for j, cid in enumerate(near):
        cube = tree.cubes[cid]
        ids = surface.ball_ids(cube.center, m2 * cube.sidelength)
        if len(ids) == 0:
            raise PreconditionError(
                f"surface patch empty for Whitney cube {cid} at resolution"
            )
        area = float(surface.weights_world[ids].sum())
        mu_mass = tree.mass(cid)
        density = mu_mass / area
        sample_mass[ids] += density * surface.weights_world[ids]
        overlap[ids] += 1
        patches.append(SigmaPatch(cid, ids, area, density, mu_mass))

    far_gap = surface.xi_world
    dist_to_top = top_tree.query(far_gap)[0]
    far_ids = np.flatnonzero(dist_to_top >= l_top / 2)
    sample_mass[far_ids] += surface.weights_world[far_ids]

    return SigmaMeasure(
        surface=surface,
        region=region,
        contact_ids=whitney.contact_ids,
        patches=patches,
        far_ids=far_ids,
        sample_mass=sample_mass,
        m2=m2,
        overlap_count=overlap,
    )


# ---------------------------------------------------------------------------
# Region membership and the hybrid distance
# ---------------------------------------------------------------------------

def omega_theta_contains(region, z, m0):
    """Whitney-box union membership: some region cube has
    |z - x_Q| <= M0 l(Q) and dist(z, E) >= l(Q)/M0."""
    z = np.asarray(z, dtype=float)
    tree = region.tree
    dist_e = float(tree.measure.dist_to_support(z))
    for cid in region.theta:
        cube = tree.cubes[cid]
        l = cube.sidelength
        if dist_e >= l / m0 and np.linalg.norm(z - cube.center) <= m0 * l:
            return True
    return False


@dataclass
class HybridDistance:
    region: object
    sigma_measure: SigmaMeasure
    m0: float
    alpha: float = 1.0
    field_e: DistanceField = None
    field_sigma: DistanceField = None

    def __post_init__(self):
        mu = self.region.tree.measure
        if self.field_e is None:
            self.field_e = DistanceField(mu, alpha=self.alpha)
        if self.field_sigma is None:
            self.field_sigma = DistanceField(
                self.sigma_measure.as_measure(), alpha=self.alpha
            )

    def in_region(self, z):
        return omega_theta_contains(self.region, z, self.m0)

    def d_hat(self, z):
        z = np.asarray(z, dtype=float)
        if self.in_region(z):
            return float(self.field_e.evaluate(z))
        return float(self.field_sigma.evaluate(z))

    def psi(self, z):
        """Discrepancy |D_E / D_Sigma - 1| inside the region, 0 outside."""
        z = np.asarray(z, dtype=float)
        if not self.in_region(z):
            return 0.0
        return abs(
            float(self.field_e.evaluate(z)) / float(self.field_sigma.evaluate(z)) - 1.0
        )

    def sandwich_constant(self, pts):
        """Sampled C with dist(z, Sigma)/C <= d_hat <= C dist(z, Sigma)."""
        worst = 1.0
        for z in np.atleast_2d(pts):
            dh = self.d_hat(z)
            ds = float(self.sigma_measure.surface.dist_to_surface(z))
            if ds <= 0:
                continue
            worst = max(worst, dh / ds, ds / dh)
        return worst


def d_hat(hd, z):
    return hd.d_hat(z)


def psi_field(hd, z):
    return hd.psi(z)


# ---------------------------------------------------------------------------
# Projections onto the surface
# ---------------------------------------------------------------------------

@dataclass
class ProjectionSet:
    sample_ids: np.ndarray
    atom_ids: np.ndarray
    center: np.ndarray
    radius: float

    def sigma_mass(self, sigma_measure):
        mu = sigma_measure.region.tree.measure
        return float(
            sigma_measure.sample_mass[self.sample_ids].sum()
            + mu.masses[self.atom_ids].sum()
        )


class PiProjection:
    """Cube projections onto the replacement surface.

    For a stopped cube: the union of patches of the Whitney cubes inside
    it, plus its contact atoms outside those cubes. For a kept cube: the
    recursion bottoms out the same way. Each projection carries its
    enclosing ball record (radius 2 (1+M2) l(Q) about any member)."""

    def __init__(self, region, whitney, sigma_measure):
        self.region = region
        self.whitney = whitney
        self.sm = sigma_measure
        tree = region.tree
        self._contact = set(whitney.contact_ids.tolist())
        self._patch_of = {p.whitney_id: p for p in sigma_measure.patches}
        self._whitney_atomsets = {
            cid: set(tree.cubes[cid].atom_ids.tolist()) for cid in whitney.cubes
        }

    def project(self, cube_id):
        tree = self.region.tree
        cube = tree.cubes[cube_id]
        members = set(cube.atom_ids.tolist())
        top_members = set(tree.cubes[self.region.top].atom_ids.tolist())
        if not members <= top_members:
            raise DomainError("cube outside the decomposition of the top cube")
        sample_ids = []
        covered = set()
        for wid, atoms in self._whitney_atomsets.items():
            if atoms <= members:
                patch = self._patch_of.get(wid)
                if patch is not None:
                    sample_ids.append(patch.sample_ids)
                covered |= atoms
        leftover = np.asarray(sorted((members - covered) & self._contact), dtype=int)
        samples = (
            np.unique(np.concatenate(sample_ids)) if sample_ids else np.empty(0, int)
        )
        if len(samples):
            center = self.sm.surface.xi_world[samples[0]]
        elif len(leftover):
            center = tree.measure.positions[leftover[0]]
        else:
            center = cube.center
        radius = 2 * (1 + self.sm.m2) * cube.sidelength
        return ProjectionSet(
            sample_ids=samples, atom_ids=leftover, center=center, radius=radius
        )

    def containment_ok(self, proj):
        """All members inside the declared enclosing ball (exact check)."""
        pts = []
        if len(proj.sample_ids):
            pts.append(self.sm.surface.xi_world[proj.sample_ids])
        if len(proj.atom_ids):
            pts.append(self.region.tree.measure.positions[proj.atom_ids])
        if not pts:
            return True
        pts = np.vstack(pts)
        return bool(
            np.all(np.linalg.norm(pts - proj.center, axis=1) <= proj.radius + 1e-12)
        )

    def inner_ball_radius(self, proj):
        """Largest rho such that every surface/contact point within rho of
        some member stays inside the projection (reported, not asserted)."""
        member_pts = []
        if len(proj.sample_ids):
            member_pts.append(self.sm.surface.xi_world[proj.sample_ids])
        if len(proj.atom_ids):
            member_pts.append(self.region.tree.measure.positions[proj.atom_ids])
        if not member_pts:
            return 0.0
        member_pts = np.vstack(member_pts)
        anchor = member_pts[len(member_pts) // 2]
        all_pts = np.vstack(
            [self.sm.surface.xi_world, self.region.tree.measure.positions[
                sorted(self._contact)] if self._contact else np.zeros((0, member_pts.shape[1]))]
        )
        outsiders = cKDTree(member_pts).query(all_pts)[0] > 1e-12
        out_pts = all_pts[outsiders]
        if len(out_pts) == 0:
            return math.inf
        return float(np.min(np.linalg.norm(out_pts - anchor, axis=1)))


def pi_project(pp, cube_id):
    return pp.project(cube_id)
