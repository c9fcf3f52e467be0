"""Local Wasserstein distances to flat measures, flatness numbers, average
distance-to-plane numbers, their accumulated square-sum functions along the
tree, and packing sums.

The Wasserstein pairing is an exact linear program over test values f_i at
the atoms: |f_i - f_j| <= |p_i - p_j| on a pair graph and |f_i| <= the
boundary cap (r - |p_i - z|)_+, which is the discrete form of 1-Lipschitz
functions vanishing outside the ball. With the all-pairs graph the optimum
is the true discrete supremum; the pruned k-NN graph is an over-relaxation
and can only increase it, so flatness values stay honest upper bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse, special
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .errors import DegenerateError, DomainError, SizeError
from .geometry import AtomicMeasure, DPlane

LP_SIZE_CAP = 400
ALL_PAIRS_LIMIT = 120
KNN_PAIRS = 16


@dataclass
class FlatMeasure:
    density: float
    plane: DPlane

    def __post_init__(self):
        if self.density < 0:
            raise DomainError("flat-measure density must be nonnegative")


@dataclass
class AlphaResult:
    value: float
    best_c: float
    best_plane: DPlane
    lp_status: int
    evaluations: int = 0


def _as_cloud(measure):
    if isinstance(measure, AtomicMeasure):
        return measure.positions, measure.masses
    pos, mass = measure
    return np.atleast_2d(np.asarray(pos, float)), np.asarray(mass, float).ravel()


def _subsample(pos, mass, cap, rng=None):
    """Mass-preserving coarsening to at most ``cap`` atoms.

    Atoms are bucketed on a uniform grid (cell size grown until at most
    cap cells are occupied) and every cell collapses to its mass-weighted
    centroid. Deterministic, and exact on the total mass; the Wasserstein
    cost of the collapse is at most cell_diameter * total_mass.
    """
    if len(mass) <= cap:
        return pos, mass
    span = float(np.max(pos.max(axis=0) - pos.min(axis=0)))
    if span == 0.0:
        return pos[:1], np.array([mass.sum()])
    cell = span / max(cap, 2)
    for _ in range(64):
        keys = np.floor(pos / cell).astype(np.int64)
        _, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if len(counts) <= cap:
            break
        cell *= 1.5
    agg_mass = np.zeros(len(counts))
    np.add.at(agg_mass, inverse, mass)
    agg_pos = np.zeros((len(counts), pos.shape[1]))
    np.add.at(agg_pos, inverse, pos * mass[:, None])
    agg_pos /= agg_mass[:, None]
    return agg_pos, agg_mass


def kr_distance(sigma, nu, z, r, size_cap=LP_SIZE_CAP, allow_subsample=True, seed=0):
    """Normalized local Wasserstein pairing between two weighted clouds.

    Returns r^(-d-1) * sup { sum f_i (sigma_i - nu_i) } over discrete
    1-Lipschitz data capped by (r - |p - z|)_+. d is taken from sigma when
    it is an AtomicMeasure, else it must ride on nu; for raw clouds pass
    AtomicMeasure instances or use kr_distance_raw.
    """
    d = sigma.boundary_dim if isinstance(sigma, AtomicMeasure) else nu.boundary_dim
    return kr_distance_raw(
        _as_cloud(sigma), _as_cloud(nu), z, r, d,
        size_cap=size_cap, allow_subsample=allow_subsample, seed=seed,
    )


def kr_distance_raw(
    cloud_a, cloud_b, z, r, d, size_cap=LP_SIZE_CAP, allow_subsample=True, seed=0
):
    z = np.asarray(z, dtype=float)
    pos_a, mass_a = cloud_a
    pos_b, mass_b = cloud_b

    def clip(pos, mass):
        if len(mass) == 0:
            return pos.reshape(0, len(z)), mass
        keep = np.linalg.norm(pos - z, axis=1) < r
        return pos[keep], mass[keep]

    pos_a, mass_a = clip(pos_a, mass_a)
    pos_b, mass_b = clip(pos_b, mass_b)
    total = len(mass_a) + len(mass_b)
    if total == 0:
        return 0.0
    if total > size_cap:
        if not allow_subsample:
            raise SizeError(f"{total} atoms exceed the LP cap {size_cap}")
        cap_each = max(size_cap // 2, 1)
        pos_a, mass_a = _subsample(pos_a, mass_a, cap_each)
        pos_b, mass_b = _subsample(pos_b, mass_b, cap_each)

    pos = np.vstack([pos_a, pos_b]) if len(mass_b) else pos_a
    weight = np.concatenate([mass_a, -mass_b])
    m = len(weight)
    cap = np.maximum(0.0, r - np.linalg.norm(pos - z, axis=1))

    if m == 1:
        return float(abs(weight[0]) * cap[0]) / r ** (d + 1)

    if m <= ALL_PAIRS_LIMIT:
        ii, jj = np.triu_indices(m, k=1)
    else:
        k = min(KNN_PAIRS + 1, m)
        _, nbrs = cKDTree(pos).query(pos, k=k)
        ii = np.repeat(np.arange(m), k - 1)
        jj = nbrs[:, 1:].ravel()
        lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
        pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
        ii, jj = pairs[:, 0], pairs[:, 1]
    gap = np.linalg.norm(pos[ii] - pos[jj], axis=1)

    npairs = len(ii)
    rows = np.arange(npairs)
    data = np.concatenate([np.ones(npairs), -np.ones(npairs)])
    rix = np.concatenate([rows, rows])
    cix = np.concatenate([ii, jj])
    a_half = sparse.coo_matrix((data, (rix, cix)), shape=(npairs, m))
    a_ub = sparse.vstack([a_half, -a_half]).tocsr()
    b_ub = np.concatenate([gap, gap])
    res = linprog(
        -weight,
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=np.stack([-cap, cap], axis=1),
        method="highs",
    )
    if res.status != 0:
        raise DegenerateError(f"transport LP failed with status {res.status}")
    return float(-res.fun) / r ** (d + 1)


# ---------------------------------------------------------------------------
# Flatness numbers
# ---------------------------------------------------------------------------

def _ball_volume(d):
    return math.pi ** (d / 2) / special.gamma(d / 2 + 1)


def _plane_grid(plane, z, r, target=120):
    """Deterministic grid discretization of H^d restricted to P cap B(z,r)."""
    d = plane.dim
    foot = plane.project(z)
    gap2 = r * r - float(np.dot(z - foot, z - foot))
    if gap2 <= 0:
        return np.zeros((0, plane.ambient_dim)), np.zeros(0)
    rho = math.sqrt(gap2)
    per_side = max(3, int(round(target ** (1 / d))))
    ax = (np.arange(per_side) + 0.5) / per_side * 2 - 1.0
    if d == 1:
        coords = ax[:, None] * rho
    else:
        gg = np.meshgrid(*([ax] * d), indexing="ij")
        coords = np.stack([g.ravel() for g in gg], axis=1) * rho
    keep = np.linalg.norm(coords, axis=1) <= rho
    coords = coords[keep]
    cell = (2 * rho / per_side) ** d
    pts = foot + coords @ plane.basis
    return pts, np.full(len(coords), cell)


def _flat_free_distance(cloud, flat_pos, flat_cell, z, r, d, size_cap=LP_SIZE_CAP, seed=0):
    """Distance to the best nonnegative multiple of a plane grid, one LP.

    min_{c>=0} dist(sigma, c*grid) = max { sum f_i sigma_i : f admissible,
    sum_j f_j cell_j <= 0 } by the bilinear minimax; the optimal density is
    the multiplier of the extra row.
    """
    z = np.asarray(z, dtype=float)
    pos_a, mass_a = cloud
    keep = np.linalg.norm(pos_a - z, axis=1) < r
    pos_a, mass_a = pos_a[keep], mass_a[keep]
    keep_f = np.linalg.norm(flat_pos - z, axis=1) < r
    flat_pos, flat_cell = flat_pos[keep_f], flat_cell[keep_f]
    if len(mass_a) + len(flat_cell) == 0:
        return 0.0, 0.0
    if len(mass_a) > size_cap:
        pos_a, mass_a = _subsample(pos_a, mass_a, size_cap)

    na, nf = len(mass_a), len(flat_cell)
    pos = np.vstack([pos_a, flat_pos]) if nf else pos_a
    m = na + nf
    cap = np.maximum(0.0, r - np.linalg.norm(pos - z, axis=1))
    obj = np.concatenate([mass_a, np.zeros(nf)])
    if m == 1:
        return float(abs(obj[0]) * cap[0]) / r ** (d + 1), 0.0

    if m <= ALL_PAIRS_LIMIT:
        ii, jj = np.triu_indices(m, k=1)
    else:
        k = min(KNN_PAIRS + 1, m)
        _, nbrs = cKDTree(pos).query(pos, k=k)
        ii = np.repeat(np.arange(m), k - 1)
        jj = nbrs[:, 1:].ravel()
        lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
        pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
        ii, jj = pairs[:, 0], pairs[:, 1]
    gap = np.linalg.norm(pos[ii] - pos[jj], axis=1)
    npairs = len(ii)
    rows = np.arange(npairs)
    data = np.concatenate([np.ones(npairs), -np.ones(npairs)])
    rix = np.concatenate([rows, rows])
    cix = np.concatenate([ii, jj])
    a_half = sparse.coo_matrix((data, (rix, cix)), shape=(npairs, m))
    blocks = [a_half, -a_half]
    b_ub = np.concatenate([gap, gap])
    if nf:
        grid_row = sparse.coo_matrix(
            (flat_cell, (np.zeros(nf, dtype=int), np.arange(na, m))), shape=(1, m)
        )
        blocks.append(grid_row)
        b_ub = np.concatenate([b_ub, [0.0]])
    a_ub = sparse.vstack(blocks).tocsr()
    res = linprog(
        -obj, A_ub=a_ub, b_ub=b_ub, bounds=np.stack([-cap, cap], axis=1),
        method="highs",
    )
    if res.status != 0:
        raise DegenerateError(f"flatness LP failed with status {res.status}")
    c_star = 0.0
    if nf:
        c_star = float(max(0.0, -res.ineqlin.marginals[-1]))
    return float(-res.fun) / r ** (d + 1), c_star


def _canonical_frame(pos, mass):
    """Rotation-covariant orthonormal frame from weighted moments."""
    centroid = (mass @ pos) / mass.sum()
    rel = pos - centroid
    cov = (rel * mass[:, None]).T @ rel
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    frame = evecs[:, order].T
    coords = rel @ frame.T
    for k in range(frame.shape[0]):
        s3 = float(mass @ coords[:, k] ** 3)
        if abs(s3) > 1e-12 * (mass.sum() * max(np.abs(coords[:, k]).max(), 1e-30) ** 3):
            if s3 < 0:
                frame[k] = -frame[k]
                coords[:, k] = -coords[:, k]
    return centroid, frame


class AlphaEstimator:
    """Flatness optimizer: distance of mu to the nearest flat measure in a ball.

    Initialization by mass-weighted principal directions, then coordinate
    descent: the density by 1-D convex minimization, the plane by angle and
    offset line searches. The achieved value is an upper bound for the true
    infimum; ``random_restart_oracle`` provides the independent check used
    in tests.
    """

    def __init__(self, measure, size_cap=LP_SIZE_CAP, plane_grid_target=100, seed=0):
        self.measure = measure
        self.size_cap = size_cap
        self.plane_grid_target = plane_grid_target
        self.seed = seed
        self._evals = 0

    # -- objective ----------------------------------------------------------

    def _plane_objective(self, pos, mass, z, r, plane):
        """Distance to the best multiple of the plane (one LP).

        The plane grid never needs to resolve below the cloud's own
        discretization, so its target follows the ball's atom count.
        """
        self._evals += 1
        target = min(self.plane_grid_target, max(32, 2 * min(len(mass), self.size_cap)))
        flat_pos, flat_cell = _plane_grid(plane, z, r, target)
        return _flat_free_distance(
            (pos, mass), flat_pos, flat_cell, z, r, self.measure.boundary_dim,
            size_cap=self.size_cap, seed=self.seed,
        )

    def dist_to_flat(self, z, r, flat):
        """Distance from mu to the given flat measure, restricted to B(z, r)."""
        mu = self.measure
        z = np.asarray(z, dtype=float)
        ids = mu.ball_ids(z, r)
        flat_pos, flat_cell = _plane_grid(flat.plane, z, r, self.plane_grid_target)
        return kr_distance_raw(
            (mu.positions[ids], mu.masses[ids]),
            (flat_pos, flat.density * flat_cell),
            z, r, mu.boundary_dim, size_cap=self.size_cap, seed=self.seed,
        )

    # -- search -------------------------------------------------------------

    def _descend(self, pos, mass, z, r, plane, value, c, rounds=2):
        n = plane.ambient_dim
        d = plane.dim
        normals = self._normal_basis(plane)
        for rnd in range(rounds):
            ang = 0.2 / (4**rnd)
            off = 0.08 * r / (4**rnd)
            # rotations mixing each basis direction with each normal
            for bi in range(d):
                for nj in range(n - d):
                    for s in (ang, -ang):
                        cand = self._rotated(plane, normals, bi, nj, s)
                        v, cc = self._plane_objective(pos, mass, z, r, cand)
                        if v < value:
                            value, plane, c = v, cand, cc
                            normals = self._normal_basis(plane)
            # offsets along the normals
            for nj in range(n - d):
                for s in (off, -off):
                    cand = DPlane(plane.base + s * normals[nj], plane.basis)
                    v, cc = self._plane_objective(pos, mass, z, r, cand)
                    if v < value:
                        value, plane, c = v, cand, cc
        return c, plane, value

    @staticmethod
    def _normal_basis(plane):
        n = plane.ambient_dim
        full = np.eye(n)
        proj = full - plane.basis.T @ plane.basis
        q, rdiag = np.linalg.qr(proj)
        cols = [q[:, i] for i in range(n) if abs(rdiag[i, i]) > 1e-10]
        return np.stack(cols[: n - plane.dim])

    @staticmethod
    def _rotated(plane, normals, bi, nj, angle):
        u = plane.basis[bi]
        v = normals[nj]
        cu, su = math.cos(angle), math.sin(angle)
        basis = plane.basis.copy()
        basis[bi] = cu * u + su * v
        return DPlane(plane.base, basis)

    def alpha(self, z, r, rounds=2):
        """Achieved flatness value and the (c, plane) realizing it."""
        mu = self.measure
        z = np.asarray(z, dtype=float)
        ids = mu.ball_ids(z, r)
        if len(ids) == 0:
            raise DegenerateError("no atoms in the flatness ball")
        pos = mu.positions[ids]
        mass = mu.masses[ids]
        self._evals = 0

        # canonical frame: makes the whole search rigid-motion covariant
        origin, frame = _canonical_frame(pos, mass)
        pos_c = (pos - origin) @ frame.T
        z_c = (z - origin) @ frame.T
        d = mu.boundary_dim
        plane = DPlane(np.zeros(mu.ambient_dim), np.eye(mu.ambient_dim)[:d])

        value, c = self._plane_objective(pos_c, mass, z_c, r, plane)
        c, plane, value = self._descend(pos_c, mass, z_c, r, plane, value, c,
                                        rounds=rounds)

        world_plane = DPlane(origin + plane.base @ frame, plane.basis @ frame)
        return AlphaResult(
            value=float(value),
            best_c=float(c),
            best_plane=world_plane,
            lp_status=0,
            evaluations=self._evals,
        )

    def random_restart_oracle(self, z, r, restarts=8, seed=1234):
        """Independent check: random plane initializations, same descent."""
        mu = self.measure
        z = np.asarray(z, dtype=float)
        ids = mu.ball_ids(z, r)
        if len(ids) == 0:
            raise DegenerateError("no atoms in the flatness ball")
        pos, mass = mu.positions[ids], mu.masses[ids]
        rng = np.random.default_rng(seed)
        d, n = mu.boundary_dim, mu.ambient_dim
        best = math.inf
        centroid = (mass @ pos) / mass.sum()
        for _ in range(restarts):
            q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            plane = DPlane(centroid + 0.05 * r * rng.standard_normal(n), q.T[:d])
            value, c = self._plane_objective(pos, mass, z, r, plane)
            c, plane, value = self._descend(pos, mass, z, r, plane, value, c, rounds=2)
            best = min(best, value)
        return best


def alpha(measure, z, r, **kw):
    return AlphaEstimator(measure, **kw).alpha(z, r)


# ---------------------------------------------------------------------------
# Per-cube tables
# ---------------------------------------------------------------------------

class AlphaCache:
    """Caches flatness values and best planes per (cube, window factor)."""

    def __init__(self, measure, tree, window=16.0, rounds=1, **kw):
        self.measure = measure
        self.tree = tree
        self.window = float(window)
        self.rounds = rounds
        if self.window < 1:
            raise DomainError("window factor must be >= 1")
        self.estimator = AlphaEstimator(measure, **kw)
        self._store = {}

    def result(self, cube_id, window=None):
        m = self.window if window is None else float(window)
        key = (cube_id, m)
        if key not in self._store:
            cube = self.tree.cubes[cube_id]
            self._store[key] = self.estimator.alpha(
                cube.center, m * cube.sidelength, rounds=self.rounds
            )
        return self._store[key]

    def value(self, cube_id, window=None):
        return self.result(cube_id, window).value

    def plane(self, cube_id, window=None):
        return self.result(cube_id, window).best_plane


def alpha_cube(cache, cube_id, window=None):
    return cache.value(cube_id, window)


def beta_cube(measure, tree, cube_id, plane, window=16.0):
    """Average distance from atoms near the cube to the given plane,
    normalized by l(Q)^(d+1)."""
    cube = tree.cubes[cube_id]
    r = window * cube.sidelength
    ids = measure.ball_ids(cube.center, r)
    if len(ids) == 0:
        return 0.0
    dist = plane.distance(measure.positions[ids])
    d = measure.boundary_dim
    return float(np.dot(measure.masses[ids], dist)) / cube.sidelength ** (d + 1)


@dataclass
class JonesTable:
    window: float
    top: int
    alpha_val: dict
    beta_val: dict
    beta_reg: dict
    j_beta: dict
    j_alpha: dict

    def row(self, cube_id):
        return (
            self.alpha_val[cube_id],
            self.beta_val[cube_id],
            self.beta_reg[cube_id],
            self.j_beta[cube_id],
            self.j_alpha[cube_id],
        )


def jones(measure, tree, top_id, cache=None, window=16.0):
    """Per-cube flatness records under a top cube: alpha, beta, the
    same-generation regularized beta, and both accumulated square sums
    anchored at the top cube's generation (inclusive)."""
    if cache is None:
        cache = AlphaCache(measure, tree, window=window)
    members = tree.descendants(top_id)
    member_set = set(members)
    by_gen = {}
    for cid in members:
        by_gen.setdefault(tree.cubes[cid].generation, []).append(cid)

    alpha_val = {cid: cache.value(cid) for cid in members}
    beta_val = {}
    for cid in members:
        plane = cache.plane(cid)
        beta_val[cid] = beta_cube(measure, tree, cid, plane, window=cache.window)

    beta_reg = {}
    for k, cids in by_gen.items():
        centers = np.array([tree.cubes[c].center for c in cids])
        r_k = 10.0 ** (-k)
        for i, cid in enumerate(cids):
            reach = cache.window * r_k
            # prune by center distance, then exact atom-set distances
            cd = np.linalg.norm(centers - centers[i], axis=1)
            cand = [cids[j] for j in np.flatnonzero(cd <= reach + 2 * r_k)]
            best = beta_val[cid]
            for other in cand:
                if other == cid:
                    continue
                gap = _cube_gap(tree, cid, other)
                if gap <= reach:
                    best = max(best, beta_val[other])
            beta_reg[cid] = best

    j_beta, j_alpha = {}, {}

    def fill(cid, jb, ja):
        jb = jb + beta_reg[cid] ** 2
        ja = ja + alpha_val[cid] ** 2
        j_beta[cid] = jb
        j_alpha[cid] = ja
        for kid in tree.cubes[cid].children:
            if kid in member_set:
                fill(kid, jb, ja)

    fill(top_id, 0.0, 0.0)
    return JonesTable(
        window=cache.window,
        top=top_id,
        alpha_val=alpha_val,
        beta_val=beta_val,
        beta_reg=beta_reg,
        j_beta=j_beta,
        j_alpha=j_alpha,
    )


def _cube_gap(tree, cid_a, cid_b):
    pa = tree.atom_positions(cid_a)
    pb = tree.atom_positions(cid_b)
    if len(pa) * len(pb) > 4_000_000:
        da, _ = cKDTree(pb).query(pa)
        return float(da.min())
    return float(
        np.min(np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2))
    )


def carleson_packing(measure, tree, top_id, cache=None, window=16.0, max_depth=None):
    """Packing ratio sum_{Q below top} alpha(Q)^2 mu(Q) / mu(top)."""
    if cache is None:
        cache = AlphaCache(measure, tree, window=window)
    top_gen = tree.cubes[top_id].generation
    total = 0.0
    for cid in tree.descendants(top_id):
        if max_depth is not None and tree.cubes[cid].generation - top_gen > max_depth:
            continue
        total += cache.value(cid) ** 2 * tree.mass(cid)
    return total / tree.mass(top_id)


def export_table_csv(path, tree, table, top_id):
    """One row per cube: id, k, alpha, beta, beta_reg, J, J_alpha, mass."""
    rows = []
    for cid in sorted(tree.descendants(top_id)):
        a, b, br, jb, ja = table.row(cid)
        rows.append(
            f"{cid},{tree.cubes[cid].generation},{a!r},{b!r},{br!r},{jb!r},{ja!r},{tree.mass(cid)!r}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,k,alpha,beta,beta_reg,J,J_alpha,mass\n")
        fh.write("\n".join(rows) + "\n")
