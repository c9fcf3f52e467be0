"""Coherent ball-and-plane collections over a stopping-time region, the
bump partitions of unity, the iterated surface maps, tangent rotation
fields, the global change of variables, and its Jacobian block structure.

Everything is built in local coordinates: the top cube's center projects
to the origin, its plane becomes the horizontal d-plane, and lengths are
rescaled by the top sidelength, so generation k lives at scale 10^-k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateError, DomainError, PreconditionError
from .geometry import DPlane, local_hausdorff, plane_local_hausdorff, polar_factor


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def bump_profile(s):
    """C^2 radial profile: 1 on [0,8], 0 on [10, inf)."""
    s = np.asarray(s, dtype=float)
    return 1.0 - _smoothstep((s - 8.0) / 2.0)


# ---------------------------------------------------------------------------
# Local frame
# ---------------------------------------------------------------------------

@dataclass
class LocalFrame:
    origin: np.ndarray
    rotation: np.ndarray  # rows: first d span the base plane direction
    scale: float

    def to_local(self, pts):
        pts = np.asarray(pts, dtype=float)
        return (pts - self.origin) @ self.rotation.T / self.scale

    def to_world(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts * self.scale @ self.rotation + self.origin

    def plane_to_local(self, plane):
        base = self.to_local(plane.base)
        basis = plane.basis @ self.rotation.T
        return DPlane(base, basis)


def _frame_from_plane(plane, center, scale):
    n = plane.ambient_dim
    d = plane.dim
    rows = [plane.basis[i] for i in range(d)]
    # complete to an orthonormal basis of R^n
    for e in np.eye(n):
        v = e - sum(np.dot(e, r) * r for r in rows)
        nv = np.linalg.norm(v)
        if nv > 1e-10:
            rows.append(v / nv)
        if len(rows) == n:
            break
    rot = np.stack(rows)
    origin = plane.project(center)
    return LocalFrame(origin=origin, rotation=rot, scale=scale)


# ---------------------------------------------------------------------------
# CCBP
# ---------------------------------------------------------------------------

@dataclass
class CCBPGeneration:
    k: int
    radius: float
    centers: np.ndarray          # (m, n) moved centers on their planes
    raw_centers: np.ndarray      # (m, n) net points on the carrier set
    planes: list                 # DPlane per center (local coordinates)
    source_cubes: list           # tree cube ids

    def __len__(self):
        return len(self.planes)


@dataclass
class CCBP:
    frame: LocalFrame
    generations: list
    compat_same: float    # worst same-generation plane residual
    compat_cross: float   # worst cross-generation plane residual
    flatness: dict        # cube id -> measured local Hausdorff flatness

    @property
    def deepest(self):
        return len(self.generations) - 1


def build_ccbp(region, cache, eps1=0.5, net_spacing_factor=1.1, check_flatness=True):
    """Coherent collection of balls and planes over the region.

    Per generation: the near-region atom set, a greedy maximal net at
    spacing 1.1 * r_k, a source cube within M r_k / 10 for each net point,
    the cube's plane, and the net point moved onto that plane (the move
    must stay below r_k / 100, else the flatness precondition failed).
    Plane-compatibility residuals are measured and reported.
    """
    tree = region.tree
    mu = tree.measure
    if not region.theta:
        raise DegenerateError("cannot build a collection over an empty region")
    m_win = region.window
    top = tree.cubes[region.top]
    top_plane_world = cache.plane(region.top)
    frame = _frame_from_plane(top_plane_world, top.center, top.sidelength)
    atoms_local = frame.to_local(mu.positions)

    k0 = top.generation
    gens_available = sorted({tree.cubes[c].generation for c in region.theta})
    deepest = max(gens_available)
    generations = []
    flatness = {}
    prev_centers = None
    for k_local in range(0, deepest - k0 + 1):
        k_world = k0 + k_local
        r_k = 10.0 ** (-k_local)
        theta_k = region.theta_generation(k_world)
        if not theta_k:
            generations.append(CCBPGeneration(k_local, r_k, np.zeros((0, mu.ambient_dim)),
                                              np.zeros((0, mu.ambient_dim)), [], []))
            continue
        # E(k): atoms within M r_k / 10 of some region cube of this generation
        reach = m_win * r_k / 10
        centers_k = np.array([frame.to_local(tree.cubes[c].center) for c in theta_k])
        sides_k = np.array([tree.cubes[c].sidelength / frame.scale for c in theta_k])
        lb = np.linalg.norm(
            atoms_local[:, None, :] - centers_k[None, :, :], axis=2
        ) - sides_k[None, :]
        cand_mask = lb.min(axis=1) <= reach
        cand_ids = np.flatnonzero(cand_mask)
        member = np.zeros(len(cand_ids), dtype=bool)
        cube_of = np.full(len(cand_ids), -1)
        cube_dist = np.full(len(cand_ids), np.inf)
        cube_local_atoms = [
            frame.to_local(tree.atom_positions(c)) for c in theta_k
        ]
        for j, cid in enumerate(theta_k):
            d = cKDTree(cube_local_atoms[j]).query(atoms_local[cand_ids])[0]
            hit = d <= reach
            member |= hit
            better = d < cube_dist
            cube_of[better] = j
            cube_dist[better] = d[better]
        ek_ids = cand_ids[member]
        if len(ek_ids) == 0:
            generations.append(CCBPGeneration(k_local, r_k, np.zeros((0, mu.ambient_dim)),
                                              np.zeros((0, mu.ambient_dim)), [], []))
            continue
        # greedy maximal net at spacing 1.1 r_k (lexicographic order)
        pts = atoms_local[ek_ids]
        order = np.lexsort(pts.T[::-1])
        chosen = []
        spacing = net_spacing_factor * r_k
        for idx in order:
            p = pts[idx]
            if all(np.linalg.norm(p - pts[c]) >= spacing for c in chosen):
                chosen.append(idx)
        raw = pts[chosen]
        # nearest region cube within reach per net point
        src = []
        for p in raw:
            best, best_d = None, np.inf
            for j, cid in enumerate(theta_k):
                dd = float(cKDTree(cube_local_atoms[j]).query(p)[0])
                if dd < best_d - 1e-15 or (
                    abs(dd - best_d) <= 1e-15 and (best is None or cid < best)
                ):
                    best, best_d = cid, dd
            if best_d > reach + 1e-12:
                raise PreconditionError("net point lost its source cube")
            src.append(best)
        planes = []
        moved = np.empty_like(raw)
        for i, cid in enumerate(src):
            if check_flatness and cid not in flatness:
                flatness[cid] = _cube_flatness(mu, tree, cid, cache, frame)
                if flatness[cid] > eps1:
                    raise PreconditionError(
                        f"flatness {flatness[cid]:.3g} > eps1 {eps1:g} at cube {cid}"
                    )
            plane = frame.plane_to_local(cache.plane(cid))
            planes.append(plane)
            moved[i] = plane.project(raw[i])
            if np.linalg.norm(moved[i] - raw[i]) > r_k / 100 + 1e-12:
                raise PreconditionError(
                    f"net point at generation {k_local} sits {np.linalg.norm(moved[i] - raw[i]):.3g} "
                    f"from its plane (> r_k/100); cube {cid}"
                )
        generations.append(
            CCBPGeneration(k_local, r_k, moved, raw, planes, src)
        )
        # coherence: every center within 2 r_{k-1} of a previous-generation center
        if prev_centers is not None and len(moved) and len(prev_centers):
            dmin = cKDTree(prev_centers).query(moved)[0]
            if np.any(dmin > 2 * 10.0 ** (-(k_local - 1)) + 1e-12):
                raise PreconditionError(f"coherence failed at generation {k_local}")
        prev_centers = moved

    compat_same, compat_cross = _compatibility_residuals(generations)
    return CCBP(frame=frame, generations=generations,
                compat_same=compat_same, compat_cross=compat_cross,
                flatness=flatness)


def _cube_flatness(mu, tree, cid, cache, frame):
    cube = tree.cubes[cid]
    r = cache.window * cube.sidelength
    plane = cache.plane(cid)
    ids = mu.ball_ids(cube.center, r)
    if len(ids) == 0:
        return math.inf
    # sample the plane at the atom resolution inside the window
    steps = max(8, int(2 * r / max(mu.h, 1e-12)))
    steps = min(steps, 4096)
    coords = np.linspace(-r, r, steps)
    if plane.dim == 1:
        grid = coords[:, None]
    else:
        g = np.meshgrid(*([np.linspace(-r, r, int(math.sqrt(steps)) + 2)] * plane.dim),
                        indexing="ij")
        grid = np.stack([x.ravel() for x in g], axis=1)
    plane_pts = plane.point_at(grid)
    return local_hausdorff(mu.positions[ids], plane_pts, cube.center, r)


def _compatibility_residuals(generations):
    worst_same, worst_cross = 0.0, 0.0
    for gen in generations:
        m = len(gen)
        for i in range(m):
            for j in range(i + 1, m):
                if np.linalg.norm(gen.centers[i] - gen.centers[j]) <= 100 * gen.radius:
                    d = plane_local_hausdorff(
                        gen.planes[i], gen.planes[j], gen.centers[j], 100 * gen.radius
                    )
                    worst_same = max(worst_same, d)
    for prev, cur in zip(generations[:-1], generations[1:]):
        for i in range(len(prev)):
            for j in range(len(cur)):
                if np.linalg.norm(prev.centers[i] - cur.centers[j]) <= 2 * prev.radius:
                    d = plane_local_hausdorff(
                        prev.planes[i], cur.planes[j], prev.centers[i], 20 * prev.radius
                    )
                    worst_cross = max(worst_cross, d)
    return worst_same, worst_cross


# ---------------------------------------------------------------------------
# Parametrization stack
# ---------------------------------------------------------------------------

ACTIVE, DYING, DEAD = "active", "dying", "dead"


class ParamStack:
    """Iterated maps over a collection: per-generation displacement maps,
    their compositions, tangent rotation fields, and the global map."""

    def __init__(self, ccbp, fd_step_factor=1 / 200):
        self.ccbp = ccbp
        self.fd_step_factor = fd_step_factor
        self.n = ccbp.frame.rotation.shape[0]
        self.d = None
        for gen in ccbp.generations:
            if len(gen):
                self.d = gen.planes[0].dim
                break
        if self.d is None:
            raise DegenerateError("collection has no planes")
        self.K = ccbp.deepest
        self._trees = [
            cKDTree(g.centers) if len(g) else None for g in ccbp.generations
        ]
        self._pair_cache = {}
        self._rot_cache = {}
        self._tan_cache = {}

    # -- partition of unity ---------------------------------------------------

    def _bump_pairs(self, k, pts):
        """Sparse (point_idx, center_idx, raw_weight) triples plus the
        pre-normalization cutoff value per point."""
        gen = self.ccbp.generations[k]
        m = len(pts)
        psi_tilde = np.ones(m)
        if not len(gen):
            return np.empty(0, int), np.empty(0, int), np.empty(0), psi_tilde
        ragged = self._trees[k].query_ball_point(pts, 10 * gen.radius)
        counts = np.fromiter((len(r) for r in ragged), dtype=int, count=m)
        if counts.sum() == 0:
            return np.empty(0, int), np.empty(0, int), np.empty(0), psi_tilde
        pi = np.repeat(np.arange(m), counts)
        ci = np.concatenate([np.asarray(r, dtype=int) for r in ragged if len(r)])
        dist = np.linalg.norm(pts[pi] - gen.centers[ci], axis=1)
        w = bump_profile(dist / gen.radius)
        mind = np.full(m, np.inf)
        np.minimum.at(mind, pi, dist)
        with np.errstate(invalid="ignore"):
            psi_tilde = np.where(
                np.isfinite(mind),
                np.clip((mind - 8 * gen.radius) / gen.radius, 0.0, 1.0),
                1.0,
            )
        keep = w > 0
        return pi[keep], ci[keep], w[keep], psi_tilde

    def bump_weights(self, k, pts):
        """(theta weights by sparse lists, psi) at the given points."""
        pts = np.atleast_2d(pts)
        pi, ci, w, psi_tilde = self._bump_pairs(k, pts)
        m = len(pts)
        wsum = np.zeros(m)
        np.add.at(wsum, pi, w)
        denom = psi_tilde + wsum
        psi = psi_tilde / denom
        theta = [([], np.empty(0)) for _ in range(m)]
        for i in range(m):
            theta[i] = ([], [])
        for p, c, ww in zip(pi, ci, w):
            theta[p][0].append(int(c))
            theta[p][1].append(ww / denom[p])
        theta = [(ids, np.asarray(vals)) for ids, vals in theta]
        return theta, psi

    def region_of(self, k, pts):
        gen = self.ccbp.generations[k]
        pts = np.atleast_2d(pts)
        if not len(gen):
            return np.array([DEAD] * len(pts))
        dist, _ = self._trees[k].query(pts)
        out = np.where(dist <= 8 * gen.radius, ACTIVE,
                       np.where(dist <= 10 * gen.radius, DYING, DEAD))
        return out

    # -- maps -------------------------------------------------------------------

    def sigma_k(self, k, pts):
        """One smoothing step: y + sum_j theta_j(y) (proj_j(y) - y),
        vectorized by grouping the sparse pairs per plane."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        gen = self.ccbp.generations[k]
        out = pts.copy()
        if not len(gen):
            return out
        pi, ci, w, psi_tilde = self._bump_pairs(k, pts)
        if len(pi) == 0:
            return out
        wsum = np.zeros(len(pts))
        np.add.at(wsum, pi, w)
        denom = psi_tilde + wsum
        theta = w / denom[pi]
        disp = np.zeros_like(pts)
        for j in np.unique(ci):
            sel = ci == j
            plane = gen.planes[j]
            sub = pts[pi[sel]]
            delta = plane.project(sub) - sub
            disp[pi[sel]] += theta[sel, None] * delta
        return out + disp

    def f_seq(self, pts, upto=None):
        """[f_0(x), f_1(x), ...] with f_0 the identity embedding of R^d."""
        if upto is None:
            upto = self.K + 1
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] == self.d:
            full = np.zeros((len(pts), self.n))
            full[:, : self.d] = pts
            pts = full
        seq = [pts]
        cur = pts
        for k in range(0, min(upto, self.K + 1)):
            cur = self.sigma_k(k, cur)
            seq.append(cur)
        return seq

    def f_k(self, k, pts):
        return self.f_seq(pts, upto=k)[min(k, self.K + 1)]

    def f(self, pts):
        return self.f_seq(pts)[-1]

    # -- tangent rotations ---------------------------------------------------------

    def tangent_projector(self, k, x):
        """Projection matrix onto the tangent direction of the level-k
        surface at f_k(x), by finite differences of f_k."""
        x = np.asarray(x, dtype=float)[: self.d]
        if k == 0:
            p = np.zeros((self.n, self.n))
            p[: self.d, : self.d] = np.eye(self.d)
            return p
        key = (k, tuple(np.round(x, 12)))
        if key in self._tan_cache:
            return self._tan_cache[key]
        h = 10.0 ** (-(k - 1)) * self.fd_step_factor
        stencil = [x]
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = h
            stencil.extend([x + e, x - e])
        vals = self.f_seq(np.asarray(stencil), upto=k)[min(k, self.K + 1)]
        cols = []
        for i in range(self.d):
            cols.append((vals[1 + 2 * i] - vals[2 + 2 * i]) / (2 * h))
        jac = np.stack(cols, axis=1)
        q, r = np.linalg.qr(jac)
        if np.abs(np.diag(r)).min() < 1e-10:
            raise DegenerateError("rank-deficient tangent Jacobian")
        proj = q @ q.T
        self._tan_cache[key] = proj
        return proj

    def rotations(self, x, upto=None):
        """[R_0, R_1, ...] at a single base point, R_0 = identity."""
        if upto is None:
            upto = self.K + 1
        x = np.asarray(x, dtype=float)[: self.d]
        key = tuple(np.round(x, 12))
        rots = self._rot_cache.get(key, [np.eye(self.n)])
        if len(rots) >= upto + 1:
            return rots[: upto + 1]
        p0 = np.zeros((self.n, self.n))
        p0[: self.d, : self.d] = np.eye(self.d)
        p0_perp = np.eye(self.n) - p0
        for k in range(len(rots) - 1, upto):
            pk1 = self.tangent_projector(min(k + 1, self.K + 1), x)
            pk1_perp = np.eye(self.n) - pk1
            r_k = rots[-1]
            s_k = pk1 @ r_k @ p0 + pk1_perp @ r_k @ p0_perp
            rots.append(polar_factor(s_k))
        self._rot_cache[key] = rots
        return rots

    def tangent_projector_batch(self, k, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))[:, : self.d]
        n_pts = len(xs)
        if k == 0:
            p = np.zeros((self.n, self.n))
            p[: self.d, : self.d] = np.eye(self.d)
            return np.broadcast_to(p, (n_pts, self.n, self.n)).copy()
        h = 10.0 ** (-(k - 1)) * self.fd_step_factor
        offsets = []
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = h
            offsets.extend([e, -e])
        stencil = (xs[:, None, :] + np.asarray(offsets)[None, :, :]).reshape(-1, self.d)
        vals = self.f_seq(stencil, upto=k)[min(k, self.K + 1)]
        vals = vals.reshape(n_pts, 2 * self.d, self.n)
        jac = np.stack(
            [(vals[:, 2 * i] - vals[:, 2 * i + 1]) / (2 * h) for i in range(self.d)],
            axis=2,
        )
        q, r = np.linalg.qr(jac)
        return q @ np.swapaxes(q, 1, 2)

    def rotations_batch(self, xs, upto):
        """Stacked rotation chains [R_0..R_upto], each (N, n, n)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))[:, : self.d]
        n_pts = len(xs)
        eye = np.broadcast_to(np.eye(self.n), (n_pts, self.n, self.n)).copy()
        p0 = np.zeros((self.n, self.n))
        p0[: self.d, : self.d] = np.eye(self.d)
        p0_perp = np.eye(self.n) - p0
        chains = [eye]
        cap = self.K + 2
        for k in range(0, min(upto, cap)):
            pk1 = self.tangent_projector_batch(min(k + 1, self.K + 1), xs)
            pk1_perp = np.eye(self.n)[None] - pk1
            r_k = chains[-1]
            s_k = pk1 @ r_k @ p0 + pk1_perp @ r_k @ p0_perp
            u, _, vt = np.linalg.svd(s_k)
            chains.append(u @ vt)
        while len(chains) < upto + 1:
            chains.append(chains[-1])
        return chains

    def g_batch(self, xs, ts):
        """Global map at many (x, t) pairs at once."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))[:, : self.d]
        ts = np.atleast_2d(np.asarray(ts, dtype=float))
        n_pts = len(xs)
        parts = [radial_partition(t) for t in ts]
        upto = max(k for p in parts for k, _ in p)
        fs = self.f_seq(xs, upto=upto)
        rots = self.rotations_batch(xs, upto=upto)
        tfull = np.zeros((n_pts, self.n))
        tfull[:, self.d:] = ts
        out = np.zeros((n_pts, self.n))
        for i, p in enumerate(parts):
            for k, w in p:
                fk = fs[min(k, self.K + 1)][i]
                rk = rots[min(k, len(rots) - 1)][i]
                out[i] += w * (fk + rk @ tfull[i])
        return out

    # -- global map -------------------------------------------------------------

    def g(self, x, t):
        """Global change of variables at (x, t), x in R^d, t in R^(n-d)."""
        x = np.asarray(x, dtype=float)[: self.d]
        t = np.asarray(t, dtype=float)
        if np.allclose(t, 0.0):
            raise DomainError("the slab coordinate t must be nonzero")
        parts = radial_partition(t)
        upto = max(k for k, _ in parts)
        fs = self.f_seq(x[None, :], upto=upto)
        rots = self.rotations(x, upto=upto)
        tfull = np.zeros(self.n)
        tfull[self.d:] = t
        out = np.zeros(self.n)
        for k, w in parts:
            fk = fs[min(k, self.K + 1)][0]
            rk = rots[min(k, len(rots) - 1)]
            out += w * (fk + rk @ tfull)
        return out

    def jacobian_blocks(self, x, t, fd_step=None):
        """Jacobian of g in the moving frame, block-split d/(n-d).

        J = R~^T Dg where R~ is the rotation at the deepest active radial
        index; returns the blocks, the pushforward matrix, and |det J|.
        """
        x = np.asarray(x, dtype=float)[: self.d]
        t = np.asarray(t, dtype=float)
        tn = float(np.linalg.norm(t))
        if fd_step is None:
            fd_step = tn / 200
        if fd_step > tn / 100 + 1e-15:
            raise DomainError("finite-difference step must stay below |t|/100")
        cols = []
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = fd_step
            cols.append((self.g(x + e, t) - self.g(x - e, t)) / (2 * fd_step))
        for i in range(self.n - self.d):
            e = np.zeros(self.n - self.d)
            e[i] = fd_step
            cols.append((self.g(x, t + e) - self.g(x, t - e)) / (2 * fd_step))
        dg = np.stack(cols, axis=1)
        k_t = max(k for k, w in radial_partition(t))
        rk = self.rotations(x, upto=k_t)[min(k_t, self.K + 1)]
        jac = rk.T @ dg
        det = abs(np.linalg.det(jac))
        if det < 1e-12:
            raise DegenerateError("degenerate Jacobian")
        inv = np.linalg.inv(jac)
        push = det * inv.T @ inv
        d = self.d
        return JacobianBlocks(
            J=jac,
            A1=jac[:d, :d],
            C2=jac[:d, d:],
            C3=jac[d:, :d],
            C4=jac[d:, d:] - np.eye(self.n - d),
            det=det,
            pushforward=push,
        )

    def conjugated_coefficients(self, dist_field, x, t):
        """Coefficient matrix of the conjugated operator at (x, t):
        D(g(x,t))^-(n-d-1) * |det J| (J^-1)^T J^-1, with D evaluated on the
        world-coordinate image."""
        blocks = self.jacobian_blocks(x, t)
        z_world = self.ccbp.frame.to_world(self.g(x, t))
        dval = dist_field.evaluate(z_world) / self.ccbp.frame.scale
        n_minus = self.n - self.d - 1
        return dval ** (-n_minus) * blocks.pushforward

    # -- flatness diagnostics ---------------------------------------------------

    def _pair_distance(self, k, j, l, i):
        key = (k, j, l, i)
        if key not in self._pair_cache:
            gen_k = self.ccbp.generations[k]
            gen_l = self.ccbp.generations[l]
            self._pair_cache[key] = plane_local_hausdorff(
                gen_k.planes[j], gen_l.planes[i], gen_l.centers[i], 100 * gen_l.radius
            )
        return self._pair_cache[key]

    def epsilon2(self, k, y):
        """Plane-incompatibility level seen at y between generation k and
        generations k-1, k (zero outside the 11-fold ball union)."""
        if k < 0 or k > self.K:
            return 0.0
        gen_k = self.ccbp.generations[k]
        if not len(gen_k):
            return 0.0
        y = np.asarray(y, dtype=float)
        near_j = self._trees[k].query_ball_point(y, 11 * gen_k.radius)
        if not near_j:
            return 0.0
        worst = 0.0
        for l in (k - 1, k):
            if l < 0:
                continue
            gen_l = self.ccbp.generations[l]
            if not len(gen_l):
                continue
            near_i = self._trees[l].query_ball_point(y, 12 * gen_l.radius)
            for j in near_j:
                for i in near_i:
                    worst = max(worst, self._pair_distance(k, j, l, i))
        return worst

    def bilipschitz_criterion_sum(self, z):
        """sum over k of epsilon2_k(g-image of z)^2 with z on the base plane."""
        z = np.asarray(z, dtype=float)[: self.d]
        y = self.f(z[None, :])[0]
        return sum(self.epsilon2(k, y) ** 2 for k in range(self.K + 1))

    def trajectory(self, x):
        """Region labels of the iterates f_k(x) per generation."""
        seq = self.f_seq(np.asarray(x, dtype=float)[None, :])
        return [self.region_of(k, seq[k])[0] for k in range(self.K + 1)]


@dataclass
class JacobianBlocks:
    J: np.ndarray
    A1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    C4: np.ndarray
    det: float
    pushforward: np.ndarray


# ---------------------------------------------------------------------------
# Radial partition
# ---------------------------------------------------------------------------

def _u_profile(s):
    if s <= 1.0:
        return 0.0
    if s >= 2.0:
        return 1.0
    return float(_smoothstep(math.log10(s) / math.log10(2.0)))


def radial_partition(t):
    """Active (k, weight) pairs: weights sum to 1 for every t != 0,
    index-0 weight vanishes for |t| <= 1, index-k weight vanishes unless
    10^-k <= |t| <= 20 * 10^-k."""
    t = np.asarray(t, dtype=float)
    mag = float(np.linalg.norm(t))
    if mag == 0.0:
        raise DomainError("radial partition undefined at t = 0")
    out = []
    w0 = _u_profile(mag)
    if w0 > 0:
        out.append((0, w0))
    k_lo = max(1, math.floor(-math.log10(mag)))
    for k in range(max(1, k_lo - 1), k_lo + 3):
        r_k = 10.0 ** (-k)
        w = _u_profile(mag / r_k) - _u_profile(mag / (10 * r_k))
        if w > 0:
            out.append((k, w))
    return out


# ---------------------------------------------------------------------------
# Matrix-class closure checks
# ---------------------------------------------------------------------------

def matrix_class_check(samples, m_bound, tau, k_carl):
    """Pointwise closure checks for block matrices with bounded diagonal
    and small off-diagonal parts: the transpose stays in class, inverses
    land in (M^2, 6 M^2 tau), pairwise products in (M^2, 8 M^2 tau).

    ``samples`` is a list of (J, d) pairs. Carleson-part bookkeeping is the
    caller's (k_carl recorded in the report only).
    """
    if tau >= 1 / (6 * m_bound):
        raise DomainError("tau must be below (6M)^-1")
    report = {"count": 0, "transpose_ok": True, "inverse_ok": True,
              "product_ok": True, "tau": tau, "m_bound": m_bound, "k_carl": k_carl,
              "worst_inverse_off": 0.0, "worst_product_off": 0.0}

    def split(j, d):
        a1 = j[:d, :d]
        off = max(
            np.linalg.norm(j[:d, d:], 2) if j[:d, d:].size else 0.0,
            np.linalg.norm(j[d:, :d], 2) if j[d:, :d].size else 0.0,
            np.linalg.norm(j[d:, d:] - np.eye(j.shape[0] - d), 2),
        )
        return a1, off

    def in_class(j, d, m_val, tau_val):
        a1, off = split(j, d)
        try:
            inv_norm = np.linalg.norm(np.linalg.inv(a1), 2)
        except np.linalg.LinAlgError:
            return False, off
        ok = (np.linalg.norm(a1, 2) + inv_norm <= m_val + 1e-9) and (off <= tau_val + 1e-9)
        return ok, off

    for j, d in samples:
        report["count"] += 1
        ok, _ = in_class(j, d, m_bound, tau)
        if not ok:
            raise DomainError("sample outside the declared class")
        ok_t, _ = in_class(j.T, d, m_bound, tau)
        report["transpose_ok"] &= ok_t
        inv = np.linalg.inv(j)
        ok_i, off_i = in_class(inv, d, m_bound**2, 6 * m_bound**2 * tau)
        report["inverse_ok"] &= ok_i
        report["worst_inverse_off"] = max(report["worst_inverse_off"], off_i)
    for (j1, d), (j2, _) in zip(samples[:-1], samples[1:]):
        ok_p, off_p = in_class(j1 @ j2, d, m_bound**2, 8 * m_bound**2 * tau)
        report["product_ok"] &= ok_p
        report["worst_product_off"] = max(report["worst_product_off"], off_p)
    return report
