"""Core geometric types: weighted point clouds, d-planes, isometries,
dyadic cube trees, local Hausdorff distances, and corkscrew points.

Every measure is a finite weighted cloud; each atom stands for a surface
patch of radius ``h`` (the resolution floor), so integrals over the
carrier set become finite sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateError,
    DimensionError,
    DomainError,
    ParseError,
    PreconditionError,
    ResolutionError,
)


# ---------------------------------------------------------------------------
# Atomic measures
# ---------------------------------------------------------------------------

class AtomicMeasure:
    """Weighted point cloud standing in for a d-regular measure on a set E.

    positions : (N, n) array, masses : (N,) positive array.
    ``h`` is the patch radius each atom represents; it is the resolution
    floor below which no geometric query is meaningful.
    """

    def __init__(self, positions, masses, boundary_dim, patch_radius=None):
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        masses = np.asarray(masses, dtype=float).ravel()
        if positions.shape[0] != masses.shape[0]:
            raise DomainError("positions and masses disagree in length")
        if positions.shape[0] == 0:
            raise ParseError("no atoms")
        if np.any(masses <= 0) or not np.all(np.isfinite(masses)):
            raise DomainError("all masses must be strictly positive and finite")
        n = positions.shape[1]
        d = int(boundary_dim)
        if d > n - 2:
            raise DimensionError(f"boundary dimension {d} needs ambient >= {d + 2}, got {n}")
        self.positions = positions
        self.masses = masses
        self.ambient_dim = n
        self.boundary_dim = d
        self.tree = cKDTree(positions)
        self.h = float(patch_radius) if patch_radius is not None else self._median_nn_spacing()
        if self.h <= 0:
            raise DomainError("patch radius must be positive")

    def _median_nn_spacing(self):
        if len(self.masses) == 1:
            return 1.0
        dists, _ = self.tree.query(self.positions, k=2)
        return float(np.median(dists[:, 1]))

    # -- queries ------------------------------------------------------------

    def __len__(self):
        return len(self.masses)

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def ball_ids(self, center, radius):
        """Indices of atoms with |p - center| <= radius (closed ball)."""
        center = np.asarray(center, dtype=float)
        ids = self.tree.query_ball_point(center, radius)
        return np.asarray(sorted(ids), dtype=int)

    def ball_mass(self, center, radius):
        ids = self.ball_ids(center, radius)
        return float(self.masses[ids].sum())

    def dist_to_support(self, points):
        """Euclidean distance from one point or a batch of points to the cloud."""
        d, _ = self.tree.query(np.asarray(points, dtype=float))
        return d

    def diameter(self):
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def ar_profile(self, n_centers=20, n_radii=8, seed=0):
        """Measured Ahlfors-regularity constant.

        Samples centers on the support and radii in [4h, diam/4], and
        returns the smallest C0 with C0^-1 r^d <= mass(B(x,r)) <= C0 r^d
        over the samples, together with the sampled grid.
        """
        rng = np.random.default_rng(seed)
        n_atoms = len(self)
        idx = rng.choice(n_atoms, size=min(n_centers, n_atoms), replace=False)
        r_lo, r_hi = 4 * self.h, self.diameter() / 4
        if r_hi <= r_lo:
            r_hi = 4 * r_lo
        radii = np.geomspace(r_lo, r_hi, n_radii)
        d = self.boundary_dim
        c_needed = 1.0
        records = []
        for i in idx:
            for r in radii:
                m = self.ball_mass(self.positions[i], r)
                if m <= 0:
                    return math.inf, records
                ratio = m / r**d
                c_needed = max(c_needed, ratio, 1.0 / ratio)
                records.append((int(i), float(r), m))
        return float(c_needed), records

    def save(self, path):
        """Write the cloud in the text interchange format (x1 ... xn mass)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# atoms={len(self)} n={self.ambient_dim} d={self.boundary_dim}\n")
            for p, m in zip(self.positions, self.masses):
                coords = " ".join(repr(float(c)) for c in p)
                fh.write(f"{coords} {float(m)!r}\n")


def load_measure(path, n, d):
    """Read an atomic measure from a text file.

    Each non-comment line holds ``n`` coordinates then a mass,
    whitespace-separated. Comments start with '#'.
    """
    positions = []
    masses = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != n + 1:
                raise ParseError(f"expected {n + 1} fields, found {len(parts)}", line=lineno)
            try:
                vals = [float(tok) for tok in parts]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            positions.append(vals[:n])
            masses.append(vals[n])
    if not positions:
        raise ParseError("no atoms")
    return AtomicMeasure(np.array(positions), np.array(masses), boundary_dim=d)


# ---------------------------------------------------------------------------
# Planes and isometries
# ---------------------------------------------------------------------------

_ORTHO_TOL = 1e-12


@dataclass
class DPlane:
    """Affine d-plane through ``base`` spanned by orthonormal ``basis`` rows."""

    base: np.ndarray
    basis: np.ndarray  # (d, n), rows orthonormal

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        self.basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        gram = self.basis @ self.basis.T
        if not np.allclose(gram, np.eye(self.dim), atol=1e-9):
            # Re-orthonormalize mildly skewed inputs, reject garbage.
            q, _ = np.linalg.qr(self.basis.T)
            cand = q.T[: self.dim]
            if not np.allclose(cand @ cand.T, np.eye(self.dim), atol=_ORTHO_TOL * 1e3):
                raise DomainError("plane basis is not orthonormalizable")
            self.basis = cand

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def ambient_dim(self):
        return self.basis.shape[1]

    def project(self, points):
        """Orthogonal projection of one point or a batch onto the plane."""
        pts = np.asarray(points, dtype=float)
        rel = pts - self.base
        coeff = rel @ self.basis.T
        return self.base + coeff @ self.basis

    def distance(self, points):
        pts = np.asarray(points, dtype=float)
        return np.linalg.norm(pts - self.project(pts), axis=-1)

    def coordinates(self, points):
        """In-plane coordinates of the projections."""
        pts = np.asarray(points, dtype=float)
        return (pts - self.base) @ self.basis.T

    def point_at(self, coords):
        coords = np.asarray(coords, dtype=float)
        return self.base + coords @ self.basis

    def projection_matrix(self):
        return self.basis.T @ self.basis

    @staticmethod
    def span(base, directions):
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        q, r = np.linalg.qr(directions.T)
        keep = np.abs(np.diag(r)) > 1e-13
        return DPlane(np.asarray(base, dtype=float), q.T[: directions.shape[0]][keep[: directions.shape[0]]])


@dataclass
class Isometry:
    """Rigid map z -> linear_part @ z + offset with orthogonal linear part."""

    linear_part: np.ndarray
    offset: np.ndarray = None

    def __post_init__(self):
        self.linear_part = np.asarray(self.linear_part, dtype=float)
        n = self.linear_part.shape[0]
        if self.offset is None:
            self.offset = np.zeros(n)
        self.offset = np.asarray(self.offset, dtype=float)
        defect = self.linear_part.T @ self.linear_part - np.eye(n)
        if np.abs(defect).max() > 1e-10:
            raise DomainError("linear part is not orthogonal to 1e-10")

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.linear_part.T + self.offset

    def inverse(self):
        rt = self.linear_part.T
        return Isometry(rt, -rt @ self.offset)


def nearest_isometry(matrix):
    """Orthogonal polar factor of a near-isometry.

    Returns the orthogonal matrix closest to ``matrix`` in Frobenius norm
    (U V^T from the SVD). Requires every singular value within 0.5 of 1.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError("nearest_isometry expects a square matrix")
    u, s, vt = np.linalg.svd(m)
    if s.min() <= 1e-12:
        raise PreconditionError("matrix is singular; no polar factor")
    if np.abs(s - 1.0).max() > 0.5 + 1e-12:
        raise PreconditionError(
            f"matrix too far from orthogonal (singular values {s.min():.3g}..{s.max():.3g})"
        )
    return Isometry(u @ vt)


def polar_factor(matrix):
    """Orthogonal polar factor as a plain array (no domain guard)."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=float))
    return u @ vt


# ---------------------------------------------------------------------------
# Local Hausdorff distance
# ---------------------------------------------------------------------------

def local_hausdorff(points_f, points_g, center, radius):
    """Normalized local Hausdorff distance between two sampled sets.

    r^-1 sup_{y in F cap B} dist(y, G) + r^-1 sup_{y in G cap B} dist(y, F);
    an empty intersection contributes 0 to its term.
    """
    if radius <= 0:
        raise DomainError("radius must be positive")
    center = np.asarray(center, dtype=float)
    f = np.atleast_2d(np.asarray(points_f, dtype=float))
    g = np.atleast_2d(np.asarray(points_g, dtype=float))

    def one_sided(a, b):
        if len(a) == 0 or len(b) == 0:
            return 0.0
        inside = a[np.linalg.norm(a - center, axis=1) <= radius]
        if len(inside) == 0:
            return 0.0
        d, _ = cKDTree(b).query(inside)
        return float(np.max(d))

    return (one_sided(f, g) + one_sided(g, f)) / radius


def plane_local_hausdorff(plane_a, plane_b, center, radius, samples=720):
    """Normalized local Hausdorff distance between two affine d-planes.

    The supremum of dist(., other plane) over a disk is attained on its
    boundary; for d = 1 the two endpoints give it exactly, for d >= 2 the
    boundary sphere is densely sampled.
    """
    if radius <= 0:
        raise DomainError("radius must be positive")
    center = np.asarray(center, dtype=float)

    def one_sided(src, dst):
        foot = src.project(center)
        gap2 = radius**2 - float(np.dot(center - foot, center - foot))
        if gap2 <= 0:
            return 0.0
        rho = math.sqrt(gap2)
        d = src.dim
        if d == 1:
            dirs = np.array([[1.0], [-1.0]])
        else:
            ang = np.linspace(0.0, 2 * math.pi, samples, endpoint=False)
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        pts = foot + (rho * dirs) @ src.basis
        pts = np.vstack([pts, foot])
        return float(np.max(dst.distance(pts)))

    return (one_sided(plane_a, plane_b) + one_sided(plane_b, plane_a)) / radius


# ---------------------------------------------------------------------------
# Dyadic cubes
# ---------------------------------------------------------------------------

@dataclass
class DyadicCube:
    id: int
    generation: int
    center: np.ndarray
    atom_ids: np.ndarray
    parent: int | None = None
    children: list = field(default_factory=list)

    @property
    def sidelength(self):
        return 10.0 ** (-self.generation)

    def __len__(self):
        return len(self.atom_ids)


class DyadicTree:
    """Christ-style pseudocubes over an atomic measure, scales 10^-k.

    Construction: greedy maximal nets at spacing r_k/2, seeded from the
    previous generation's centers, with lexicographic tie-breaking.
    The atom partition is fixed at the finest generation (nearest finest
    center) and coarser cubes are unions of their children, so nesting and
    per-generation disjointness hold exactly.
    """

    def __init__(self, measure, k_min, k_max):
        self.measure = measure
        self.k_min = int(k_min)
        self.k_max = int(k_max)
        self.cubes = {}
        self.generations = {}
        self._build()
        self.report = self._verify_and_report()

    # -- construction --------------------------------------------------------

    def _build(self):
        mu = self.measure
        pos = mu.positions
        order = np.lexsort(pos.T[::-1])  # lexicographic by coordinates

        def greedy_net(candidate_ids, spacing, seed_ids):
            # incremental net via a uniform grid hash (cells of size `spacing`)
            cell = {}
            chosen = []

            def key_of(p):
                return tuple(np.floor(p / spacing).astype(int))

            def clear(p):
                kp = key_of(p)
                for off in np.ndindex(*(3,) * pos.shape[1]):
                    kk = tuple(k + o - 1 for k, o in zip(kp, off))
                    for q in cell.get(kk, ()):
                        if np.linalg.norm(pos[q] - p) < spacing:
                            return False
                return True

            def accept(i):
                chosen.append(i)
                cell.setdefault(key_of(pos[i]), []).append(i)

            for i in seed_ids:
                accept(i)
            for i in candidate_ids:
                if clear(pos[i]):
                    accept(i)
            return chosen

        # Net centers per generation, coarse to fine, seeded by inclusion.
        centers = {}
        prev = []
        for k in range(self.k_min, self.k_max + 1):
            spacing = 10.0 ** (-k) / 2
            centers[k] = greedy_net(order, spacing, prev)
            prev = centers[k]

        # Center-tree: each generation-(k+1) center picks the nearest
        # generation-k center as its parent (ties by center order).
        parent_of = {}
        for k in range(self.k_min + 1, self.k_max + 1):
            coarse = centers[k - 1]
            tree = cKDTree(pos[coarse])
            for j, ci in enumerate(centers[k]):
                _, loc = tree.query(pos[ci])
                parent_of[(k, j)] = int(loc)

        # Atoms attach to the nearest finest-generation center.
        fine = centers[self.k_max]
        _, owner = cKDTree(pos[fine]).query(pos)

        # Materialize cubes bottom-up.
        next_id = 0
        by_gen_center = {}
        atom_sets = {
            (self.k_max, j): np.flatnonzero(owner == j) for j in range(len(fine))
        }
        for k in range(self.k_max - 1, self.k_min - 1, -1):
            agg = {j: [] for j in range(len(centers[k]))}
            for j in range(len(centers[k + 1])):
                agg[parent_of[(k + 1, j)]].append(atom_sets[(k + 1, j)])
            for j in range(len(centers[k])):
                parts = agg[j]
                atom_sets[(k, j)] = (
                    np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=int)
                )
        for k in range(self.k_min, self.k_max + 1):
            self.generations[k] = []
            for j, ci in enumerate(centers[k]):
                ids = atom_sets[(k, j)]
                if len(ids) == 0:
                    continue
                cube = DyadicCube(
                    id=next_id,
                    generation=k,
                    center=pos[ci].copy(),
                    atom_ids=np.sort(ids),
                )
                self.cubes[next_id] = cube
                by_gen_center[(k, j)] = next_id
                self.generations[k].append(next_id)
                next_id += 1
        for k in range(self.k_min + 1, self.k_max + 1):
            for j in range(len(centers[k])):
                if (k, j) not in by_gen_center:
                    continue
                cid = by_gen_center[(k, j)]
                pid = by_gen_center[(k - 1, parent_of[(k, j)])]
                self.cubes[cid].parent = pid
                self.cubes[pid].children.append(cid)

    # -- queries --------------------------------------------------------------

    def cube(self, cube_id):
        return self.cubes[cube_id]

    def roots(self):
        return [self.cubes[i] for i in self.generations[self.k_min]]

    def descendants(self, cube_id):
        """All cubes contained in the given cube, itself included."""
        out = []
        stack = [cube_id]
        while stack:
            cid = stack.pop()
            out.append(cid)
            stack.extend(self.cubes[cid].children)
        return out

    def ancestors(self, cube_id):
        """Chain from the root down to the cube, inclusive."""
        chain = []
        cid = cube_id
        while cid is not None:
            chain.append(cid)
            cid = self.cubes[cid].parent
        return chain[::-1]

    def mass(self, cube_id):
        return float(self.measure.masses[self.cubes[cube_id].atom_ids].sum())

    def atom_positions(self, cube_id):
        return self.measure.positions[self.cubes[cube_id].atom_ids]

    def dist_to_cube(self, point, cube_id):
        pts = self.atom_positions(cube_id)
        return float(np.min(np.linalg.norm(pts - np.asarray(point, dtype=float), axis=1)))

    def deepest_generation(self):
        return self.k_max

    # -- axioms ----------------------------------------------------------------

    def _verify_and_report(self):
        mu = self.measure
        pos = mu.positions
        all_ids = np.arange(len(mu))
        outer = 0.0
        c_inner = 1.0
        for k in range(self.k_min, self.k_max + 1):
            seen = np.concatenate(
                [self.cubes[c].atom_ids for c in self.generations[k]]
            )
            if len(seen) != len(all_ids) or not np.array_equal(np.sort(seen), all_ids):
                raise DomainError(f"generation {k} does not partition the atoms")
            r_k = 10.0 ** (-k)
            for cid in self.generations[k]:
                cube = self.cubes[cid]
                rel = np.linalg.norm(pos[cube.atom_ids] - cube.center, axis=1)
                outer = max(outer, float(rel.max()) / r_k)
                others = np.setdiff1d(all_ids, cube.atom_ids, assume_unique=False)
                if len(others):
                    rho = float(
                        np.min(np.linalg.norm(pos[others] - cube.center, axis=1))
                    )
                    if rho <= 0:
                        raise DomainError("coincident atoms across cubes")
                    c_inner = max(c_inner, r_k / rho)
                if cube.children:
                    kid_ids = np.sort(
                        np.concatenate([self.cubes[c].atom_ids for c in cube.children])
                    )
                    if not np.array_equal(kid_ids, cube.atom_ids):
                        raise DomainError("cube is not the disjoint union of its children")
        if outer > 1.0 + 1e-12:
            raise DomainError(f"center sandwich violated: outer ratio {outer}")
        return {
            "outer_ratio": outer,
            "C": float(c_inner),
            "cube_count": len(self.cubes),
        }

    def verify_axioms(self):
        """Re-run the four dyadic axiom scans; raises on violation."""
        self.report = self._verify_and_report()
        return True

    def dump_jsonl(self, path):
        import json

        with open(path, "w", encoding="utf-8") as fh:
            for cid in sorted(self.cubes):
                c = self.cubes[cid]
                fh.write(
                    json.dumps(
                        {
                            "id": c.id,
                            "k": c.generation,
                            "center": [float(v) for v in c.center],
                            "parent": c.parent,
                            "n_atoms": int(len(c.atom_ids)),
                        }
                    )
                    + "\n"
                )


def build_dyadic_tree(measure, k_min, k_max):
    """Build the pseudocube tree for generations k_min..k_max.

    Cubes must stay above the atom resolution: 10^-k_max >= 4h.
    """
    if k_min > k_max:
        raise DomainError("k_min must not exceed k_max")
    if 10.0 ** (-k_max) < 4 * measure.h:
        raise ResolutionError(
            f"generation {k_max} has sidelength {10.0 ** (-k_max):g} below 4h = {4 * measure.h:g}"
        )
    return DyadicTree(measure, k_min, k_max)


# ---------------------------------------------------------------------------
# Corkscrew points
# ---------------------------------------------------------------------------

@dataclass
class CorkscrewPoint:
    point: np.ndarray
    anchor: np.ndarray
    scale: float
    tau0: float


def corkscrew(measure, x, r, grid_divisions=32):
    """Deterministic corkscrew point for B(x, r).

    Scans a cubic grid of spacing r/grid_divisions inside B(x, r), keeps
    the point farthest from the cloud (lexicographic tie-break), and
    reports tau0 = dist(A, E)/r.
    """
    x = np.asarray(x, dtype=float)
    if measure.dist_to_support(x) > measure.h * (1 + 1e-9):
        raise DomainError("anchor is not within h of the support")
    if r <= 4 * measure.h:
        raise ResolutionError(f"scale r={r:g} must exceed 4h={4 * measure.h:g}")
    n = measure.ambient_dim
    step = r / grid_divisions
    axis = np.arange(-grid_divisions, grid_divisions + 1) * step
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    pts = x + np.stack([g.ravel() for g in grids], axis=1)
    pts = pts[np.linalg.norm(pts - x, axis=1) <= r]
    dists = measure.dist_to_support(pts)
    best = float(dists.max())
    if best < 4 * measure.h:
        raise ResolutionError("no grid point clears 4h from the support")
    cand = pts[dists >= best - 1e-12 * max(1.0, r)]
    order = np.lexsort(cand.T[::-1])
    a = cand[order[0]]
    tau0 = float(measure.dist_to_support(a)) / r
    return CorkscrewPoint(point=a, anchor=x, scale=float(r), tau0=tau0)
