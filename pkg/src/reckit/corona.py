"""Stopping-time regions over the cube tree, the distance to their small
cubes, and the Whitney-style cube family on the carrier set.

A region is grown from a top cube and a cube is removed (with all its
descendants) as soon as its flatness number exceeds eps0 or the running
square-sum of flatness numbers along its ancestor chain reaches delta0.
The surviving family is hereditary by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateError, DomainError

DEFAULT_TAU = 1e-2


@dataclass
class StoppingRegion:
    tree: object
    top: int
    theta: set
    f_stop: list
    eps0: float
    delta0: float
    window: float
    alpha_val: dict
    j_alpha: dict
    top_stopped: bool = False
    _cube_trees: dict = field(default_factory=dict, repr=False)

    def theta_generation(self, k):
        return [c for c in self.theta if self.tree.cubes[c].generation == k]

    def generations(self):
        if not self.theta:
            return []
        gens = sorted({self.tree.cubes[c].generation for c in self.theta})
        return gens

    # -- distance to small cubes of the region --------------------------------

    def _cube_kdtree(self, cid):
        if cid not in self._cube_trees:
            self._cube_trees[cid] = cKDTree(self.tree.atom_positions(cid))
        return self._cube_trees[cid]

    def d_theta(self, z):
        """Exact inf over the region of dist(z, Q) + l(Q).

        Cubes are screened by the center-based lower bound
        max(|z - x_Q| - r_k, 0) + l(Q) before exact atom distances.
        """
        if not self.theta:
            raise DomainError("empty region has no cube distance")
        z = np.asarray(z, dtype=float)
        items = self._theta_arrays()
        centers, sides, ids = items
        lb = np.maximum(np.linalg.norm(centers - z, axis=1) - sides, 0.0) + sides
        order = np.argsort(lb)
        best = np.inf
        for i in order:
            if lb[i] >= best:
                break
            dist, _ = self._cube_kdtree(ids[i]).query(z)
            best = min(best, float(dist) + sides[i])
        return best

    def d_theta_batch(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([self.d_theta(p) for p in pts])

    def _theta_arrays(self):
        if not hasattr(self, "_arrays"):
            ids = sorted(self.theta)
            centers = np.array([self.tree.cubes[c].center for c in ids])
            sides = np.array([self.tree.cubes[c].sidelength for c in ids])
            self._arrays = (centers, sides, ids)
        return self._arrays

    def dump_jsonl(self, path, whitney=None):
        with open(path, "w", encoding="utf-8") as fh:
            for cid in sorted(self.theta):
                c = self.tree.cubes[cid]
                fh.write(json.dumps({
                    "kind": "theta", "id": cid, "k": c.generation,
                    "alpha": self.alpha_val.get(cid),
                    "j_alpha": self.j_alpha.get(cid),
                }) + "\n")
            for cid in sorted(self.f_stop):
                c = self.tree.cubes[cid]
                fh.write(json.dumps({
                    "kind": "stopped", "id": cid, "k": c.generation,
                    "alpha": self.alpha_val.get(cid),
                    "j_alpha": self.j_alpha.get(cid),
                }) + "\n")
            if whitney is not None:
                for rec in whitney.records:
                    fh.write(json.dumps({"kind": "whitney_e", **rec}) + "\n")


def build_corona(tree, top_id, eps0, delta0, cache):
    """Breadth-first stopping-time construction under the top cube.

    ``cache`` supplies per-cube flatness values (an AlphaCache or any
    object with .value(cube_id)). Removal rule: flatness > eps0 or the
    inclusive ancestor square-sum >= delta0.
    """
    if eps0 <= 0 or delta0 <= 0:
        raise DomainError("eps0 and delta0 must be positive")
    theta = set()
    f_stop = []
    alpha_val = {}
    j_alpha = {}

    a_top = cache.value(top_id)
    alpha_val[top_id] = a_top
    j_alpha[top_id] = a_top**2
    if a_top > eps0 or a_top**2 >= delta0:
        return StoppingRegion(
            tree, top_id, set(), [top_id], eps0, delta0,
            getattr(cache, "window", 16.0), alpha_val, j_alpha, top_stopped=True,
        )
    theta.add(top_id)
    frontier = [top_id]
    while frontier:
        nxt = []
        for cid in frontier:
            for kid in tree.cubes[cid].children:
                a = cache.value(kid)
                alpha_val[kid] = a
                j = j_alpha[cid] + a**2
                j_alpha[kid] = j
                if a > eps0 or j >= delta0:
                    f_stop.append(kid)
                else:
                    theta.add(kid)
                    nxt.append(kid)
        frontier = nxt
    return StoppingRegion(
        tree, top_id, theta, sorted(f_stop), eps0, delta0,
        getattr(cache, "window", 16.0), alpha_val, j_alpha,
    )


def d_theta(region, z):
    return region.d_theta(z)


# ---------------------------------------------------------------------------
# Whitney cubes on the carrier set
# ---------------------------------------------------------------------------

@dataclass
class WhitneyECubes:
    region: StoppingRegion
    tau: float
    cubes: list              # accepted maximal cube ids
    contact_ids: np.ndarray  # atoms covered by no accepted cube
    records: list            # per-cube stats
    deep_contact_ids: np.ndarray = None  # subset with d_theta <= 2 * finest l

    def __iter__(self):
        return iter(self.cubes)


def whitney_E_cubes(region, tau=DEFAULT_TAU):
    """Maximal tree cubes with l(R) <= tau * d_theta(x_R), top-down.

    Atoms covered by no accepted cube form the contact set (the atomic
    stand-in for the zero set of d_theta); the partition of the carrier
    set into contact atoms and accepted cubes is exact.
    """
    if not (0 < tau <= 1e-2):
        raise DomainError("tau must lie in (0, 1e-2]")
    tree = region.tree
    if not region.theta:
        raise DegenerateError("empty region: no Whitney family")
    accepted = []
    records = []
    leftover_atoms = []

    def visit(cid, parent_dtheta):
        cube = tree.cubes[cid]
        dt = region.d_theta(cube.center)
        if cube.sidelength <= tau * dt:
            accepted.append(cid)
            atom_d = region.d_theta_batch(tree.atom_positions(cid))
            records.append({
                "id": cid,
                "k": cube.generation,
                "l": cube.sidelength,
                "d_theta_center": dt,
                "d_theta_parent_center": parent_dtheta,
                "min_atom_d_theta": float(atom_d.min()),
                "lower_ok": bool(atom_d.min() >= cube.sidelength / (2 * tau) - 1e-12),
                "size_ok": parent_dtheta is None
                or bool(cube.sidelength >= 0.1 * tau * parent_dtheta - 1e-15),
            })
            return
        if not cube.children:
            leftover_atoms.append(cube.atom_ids)
            return
        for kid in cube.children:
            visit(kid, dt)

    for root in tree.generations[tree.k_min]:
        visit(root, None)

    contact = (
        np.sort(np.concatenate(leftover_atoms)) if leftover_atoms else np.empty(0, int)
    )
    l_min = 10.0 ** (-tree.k_max)
    if len(contact):
        dts = region.d_theta_batch(tree.measure.positions[contact])
        deep = contact[dts <= 2 * l_min]
    else:
        deep = np.empty(0, int)
    return WhitneyECubes(
        region=region,
        tau=tau,
        cubes=accepted,
        contact_ids=contact,
        records=records,
        deep_contact_ids=deep,
    )


def stopped_cover_check(region, whitney):
    """Every accepted Whitney cube inside the top cube lies inside some
    stopped cube; returns the offending ids (empty when the claim holds)."""
    tree = region.tree
    top_atoms = set(tree.cubes[region.top].atom_ids.tolist())
    stopped_atoms = [set(tree.cubes[q].atom_ids.tolist()) for q in region.f_stop]
    bad = []
    for cid in whitney.cubes:
        atoms = set(tree.cubes[cid].atom_ids.tolist())
        if not atoms <= top_atoms:
            continue
        if not any(atoms <= s for s in stopped_atoms):
            bad.append(cid)
    return bad
