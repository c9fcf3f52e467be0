"""Dyadic Carleson sequences, the stopping construction with its exact
mass bounds, projected measures, dyadic comparability testers, and the
rung-ladder verification driver.

Everything here is exact tree combinatorics: any failure of the two
stopping-lemma conclusions on a hypothesis-satisfying input is a defect,
not a tolerance issue.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError


# ---------------------------------------------------------------------------
# Synthetic trees for fuzzing (duck-compatible with geometry.DyadicTree)
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    id: int
    generation: int
    parent: int | None
    children: list = field(default_factory=list)
    mass: float = 0.0


class SyntheticTree:
    """Random finite tree with positive leaf masses, for combinatorial fuzz."""

    def __init__(self, seed, depth=4, max_children=4):
        rng = np.random.default_rng(seed)
        self.cubes = {}
        self.cubes[0] = _Node(0, 0, None)
        frontier = [0]
        next_id = 1
        for g in range(1, depth + 1):
            nxt = []
            for cid in frontier:
                n_kids = int(rng.integers(1, max_children + 1))
                if g == depth:
                    n_kids = max(n_kids, 1)
                for _ in range(n_kids):
                    node = _Node(next_id, g, cid)
                    self.cubes[next_id] = node
                    self.cubes[cid].children.append(next_id)
                    nxt.append(next_id)
                    next_id += 1
            frontier = nxt
        for cid in frontier:
            self.cubes[cid].mass = float(rng.uniform(0.1, 2.0))
        # masses accumulate upward
        for cid in sorted(self.cubes, reverse=True):
            node = self.cubes[cid]
            if node.children:
                node.mass = sum(self.cubes[k].mass for k in node.children)

    def mass(self, cid):
        return self.cubes[cid].mass

    def descendants(self, cid):
        out, stack = [], [cid]
        while stack:
            c = stack.pop()
            out.append(c)
            stack.extend(self.cubes[c].children)
        return out

    def leaves(self, cid=0):
        return [c for c in self.descendants(cid) if not self.cubes[c].children]


def random_sequence(tree, top, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return {cid: float(scale * rng.uniform(0.0, 1.0)) for cid in tree.descendants(top)}


# ---------------------------------------------------------------------------
# Carleson norms of sequences
# ---------------------------------------------------------------------------

def packing_mass(seq, tree, cube_ids):
    return sum(seq.get(c, 0.0) ** 2 * tree.mass(c) for c in cube_ids)


def cm_norm(seq, tree, top):
    """sup over Q below top of sum_{Q' <= Q} a(Q')^2 mu(Q') / mu(Q),
    by a single post-order accumulation."""
    members = tree.descendants(top)
    sub = {}
    best = 0.0
    for cid in sorted(members, key=lambda c: -tree.cubes[c].generation):
        s = seq.get(cid, 0.0) ** 2 * tree.mass(cid)
        s += sum(sub.get(k, 0.0) for k in tree.cubes[cid].children)
        sub[cid] = s
        best = max(best, s / tree.mass(cid))
    return best


def cm_norm_restricted(seq, tree, top, f_stop):
    """Same sup with the subtrees under the stopped family removed."""
    removed = set()
    for q in f_stop:
        removed.update(tree.descendants(q))
    members = [c for c in tree.descendants(top) if c not in removed]
    member_set = set(members)
    sub = {}
    best = 0.0
    for cid in sorted(tree.descendants(top), key=lambda c: -tree.cubes[c].generation):
        if cid in removed:
            continue
        s = seq.get(cid, 0.0) ** 2 * tree.mass(cid)
        s += sum(sub.get(k, 0.0) for k in tree.cubes[cid].children if k in member_set)
        sub[cid] = s
        best = max(best, s / tree.mass(cid))
    return best


# ---------------------------------------------------------------------------
# The stopping construction
# ---------------------------------------------------------------------------

def stop_family(seq, tree, top, a0, b0, K):
    """Maximal cubes below top violating the two-part stopping rule:
    a(Q)^2 > 2 b0, or the inclusive ancestor square-sum >= 2 K b0.

    ``a0`` is accepted for signature parity with the verification op; the
    rule itself does not involve it.
    """
    del a0
    if b0 <= 0 or K < 1:
        raise DomainError("need b0 > 0 and K >= 1")
    f_stop = []

    def visit(cid, j_acc):
        a = seq.get(cid, 0.0)
        j = j_acc + a * a
        if a * a > 2 * b0 or j >= 2 * K * b0:
            f_stop.append(cid)
            return
        for kid in tree.cubes[cid].children:
            visit(kid, j)

    visit(top, 0.0)
    return sorted(f_stop)


def verify_lemma_10_2(seq, tree, top, a0, b0, K):
    """Exact check of the stopping lemma's two conclusions.

    Hypothesis: total packing over the subtree <= (a0+b0) * mu(top).
    Conclusions: the restricted Carleson norm is <= 4*K*b0, and the union
    B of stopped cubes whose strict-subtree packing exceeds a0*mu(Q_j)
    has mu(B) <= (a0+b0)/(a0+2b0) * mu(top).
    """
    if b0 <= 0 or K < 1 or a0 < 0:
        raise DomainError("need a0 >= 0, b0 > 0, K >= 1")
    total = packing_mass(seq, tree, tree.descendants(top))
    hyp = total <= (a0 + b0) * tree.mass(top) + 1e-12 * tree.mass(top)
    if not hyp:
        raise DomainError(
            f"hypothesis fails: packing {total:g} > (a0+b0)*mass {(a0 + b0) * tree.mass(top):g}"
        )
    family = stop_family(seq, tree, top, a0, b0, K)
    norm = cm_norm_restricted(seq, tree, top, family)
    bad_mass = 0.0
    bad = []
    for qj in family:
        short = [c for c in tree.descendants(qj) if c != qj]
        if packing_mass(seq, tree, short) > a0 * tree.mass(qj):
            bad.append(qj)
            bad_mass += tree.mass(qj)
    bound_b = (a0 + b0) / (a0 + 2 * b0) * tree.mass(top)
    slack = 1e-12 * max(1.0, tree.mass(top))
    return {
        "family": family,
        "restricted_norm": norm,
        "norm_bound": 4 * K * b0,
        "norm_ok": norm <= 4 * K * b0 + 1e-12 * max(1.0, 4 * K * b0),
        "bad_union": bad,
        "bad_mass": bad_mass,
        "bad_mass_bound": bound_b,
        "bad_mass_ok": bad_mass <= bound_b + slack,
    }


# ---------------------------------------------------------------------------
# Projected measures
# ---------------------------------------------------------------------------

class ProjectedMeasure:
    """Projection of a cube-boundary measure across a stopped family.

    ``omega`` maps atom ids (or synthetic leaf ids) to nonnegative masses;
    ``targets`` maps each stopped cube to the mass its projection carries
    (omega(Q_j) itself by default, or the surface/face projected masses).
    Evaluation: omega(A minus the stopped union) plus, per stopped cube,
    the mu-proportional share of its target.
    """

    def __init__(self, tree, omega, f_stop, targets=None, mu=None):
        self.tree = tree
        self.omega = omega
        self.f_stop = list(f_stop)
        self.mu = mu
        self._atom_sets = {q: set(self._atoms_of(q)) for q in self.f_stop}
        self._stopped_union = set().union(*self._atom_sets.values()) if self.f_stop else set()
        if targets is None:
            targets = {q: self.omega_of_ids(self._atom_sets[q]) for q in self.f_stop}
        self.targets = targets

    def _atoms_of(self, cid):
        node = self.tree.cubes[cid]
        ids = getattr(node, "atom_ids", None)
        if ids is not None:
            return [int(i) for i in ids]
        return [c for c in self.tree.descendants(cid) if not self.tree.cubes[c].children]

    def omega_of_ids(self, ids):
        return float(sum(self.omega.get(i, 0.0) for i in ids))

    def mu_of_ids(self, ids):
        if self.mu is not None:
            return float(sum(self.mu.get(i, 0.0) for i in ids))
        measure = getattr(self.tree, "measure", None)
        if measure is not None:
            return float(sum(measure.masses[i] for i in ids))
        raise DomainError("no base measure available")

    def cube_ids(self, cid):
        return set(self._atoms_of(cid))

    def __call__(self, ids):
        """Projected mass of an atom-id set inside the top cube."""
        ids = set(int(i) for i in ids)
        value = self.omega_of_ids(ids - self._stopped_union)
        for q in self.f_stop:
            inter = ids & self._atom_sets[q]
            if inter:
                mu_q = self.mu_of_ids(self._atom_sets[q])
                value += self.mu_of_ids(inter) / mu_q * self.targets[q]
        return value

    def of_cube(self, cid):
        return self(self.cube_ids(cid))


def project_measure(tree, omega, f_stop, ids, targets=None, mu=None):
    return ProjectedMeasure(tree, omega, f_stop, targets=targets, mu=mu)(ids)


# ---------------------------------------------------------------------------
# Dyadic comparability diagnostics
# ---------------------------------------------------------------------------

@dataclass
class DyadicAInftyReport:
    pairs: list                 # (mu_ratio, omega_ratio) samples
    table: dict                 # (eps, delta) -> holds?
    theta: float                # strong-form exponent with C = 1
    c_strong: float
    passed: bool

    def implication_holds(self, eps, delta):
        return self.table.get((eps, delta), False)


def ainfty_dyadic_check(
    omega_eval, mu_eval, tree, top, samples_per_cube=16, depths=3, seed=0x5EED,
    eps_grid=(0.1, 0.3, 0.5), delta_grid=(0.01, 0.05, 0.2),
):
    """Empirical comparability table between two cube-set functions.

    omega_eval / mu_eval take a set of atom ids. For sampled Q' below top
    and random cube-unions F inside Q', records the ratio pairs and fits
    the strong form omega_ratio <= C * mu_ratio^theta with C = 1
    (theta = inf log-ratio over the sample).
    """
    rng = np.random.default_rng(seed)
    cubes = tree.descendants(top)
    gens = sorted({tree.cubes[c].generation for c in cubes})
    pairs = []
    for g in gens[:depths]:
        level = [c for c in cubes if tree.cubes[c].generation == g]
        for qp in level:
            kids = tree.descendants(qp)
            kids = [c for c in kids if c != qp]
            q_ids = _ids_of(tree, qp)
            w_q = omega_eval(q_ids)
            m_q = mu_eval(q_ids)
            if w_q <= 0 or m_q <= 0:
                continue
            for _ in range(samples_per_cube):
                if kids:
                    take = rng.integers(1, len(kids) + 1)
                    chosen = rng.choice(kids, size=take, replace=False)
                    ids = set()
                    for c in chosen:
                        ids |= _ids_of(tree, c)
                    ids &= q_ids
                else:
                    sub = list(q_ids)
                    take = rng.integers(1, len(sub) + 1)
                    ids = set(rng.choice(sub, size=take, replace=False).tolist())
                mu_ratio = mu_eval(ids) / m_q
                om_ratio = omega_eval(ids) / w_q
                pairs.append((float(mu_ratio), float(om_ratio)))
    table = {}
    for eps in eps_grid:
        for delta in delta_grid:
            ok = all(not (w < delta) or (m < eps) for m, w in pairs)
            table[(eps, delta)] = ok
    theta = math.inf
    for m, w in pairs:
        if 0 < m < 1 and w > 0:
            theta = min(theta, math.log(w) / math.log(m))
        elif m == 0 and w > 0:
            theta = 0.0
    if theta is math.inf:
        theta = 1.0
    theta = max(theta, 0.0)
    passed = theta > 0 and all(
        w <= 1.0000001 * (m**theta if m > 0 else (1.0 if w == 0 else 0.0)) or w <= m
        for m, w in pairs
    )
    return DyadicAInftyReport(pairs=pairs, table=table, theta=float(theta),
                              c_strong=1.0, passed=bool(passed))


def _ids_of(tree, cid):
    node = tree.cubes[cid]
    ids = getattr(node, "atom_ids", None)
    if ids is not None:
        return set(int(i) for i in ids)
    return set(c for c in tree.descendants(cid) if not tree.cubes[c].children)


# ---------------------------------------------------------------------------
# The rung-ladder driver
# ---------------------------------------------------------------------------

def extrapolate_driver(seq, tree, top, b0, K, oracle, l0=None, eta_grid=(0.5, 0.25, 0.1)):
    """Rung ladder a = 0, b0, 2b0, ... >= L0.

    At each rung, every cube whose subtree packing is within (a+b0) of its
    mass gets the stopping family built and the projection oracle queried;
    the run records empirical lower-bound evidence per rung rather than a
    proof. ``oracle(top_cube, family)`` returns (omega_eval, mu_eval) for
    the projected measure or raises to signal failure.
    """
    if b0 <= 0 or K < 1:
        raise ConfigError("need b0 > 0 and K >= 1")
    if l0 is None:
        l0 = cm_norm(seq, tree, top)
    rungs = max(1, math.ceil(l0 / b0)) if l0 > 0 else 1
    audit = []
    verdict = "pass"
    for step in range(rungs + 1):
        a = step * b0
        tested = [
            cid for cid in tree.descendants(top)
            if packing_mass(seq, tree, tree.descendants(cid))
            <= (a + b0) * tree.mass(cid)
        ]
        for cid in tested:
            family = stop_family(seq, tree, cid, a, b0, K)
            fam_hash = hashlib.sha256(
                json.dumps(family, sort_keys=True).encode()
            ).hexdigest()[:16]
            try:
                omega_eval, mu_eval = oracle(cid, family)
                evidence = _rung_evidence(tree, cid, omega_eval, mu_eval, eta_grid)
                ok = evidence["c_a"] < math.inf
            except Exception as exc:  # noqa: BLE001 - oracle failures are data
                ok, evidence = False, {"error": str(exc)}
            audit.append({
                "rung": step, "a": a, "cube": cid, "family_hash": fam_hash,
                "family_size": len(family), "ok": ok, **evidence,
            })
            if not ok and verdict == "pass":
                verdict = f"not established at rung {step} (cube {cid})"
    return {"verdict": verdict, "rungs": rungs + 1, "audit": audit, "l0": l0}


def _rung_evidence(tree, cid, omega_eval, mu_eval, eta_grid):
    ids = sorted(_ids_of(tree, cid))
    mu_all = mu_eval(set(ids))
    w_all = omega_eval(set(ids))
    if mu_all <= 0 or w_all <= 0:
        return {"eta_a": None, "c_a": math.inf}
    best = {"eta_a": None, "c_a": math.inf}
    rng = np.random.default_rng(1)
    for eta in eta_grid:
        worst = 1.0
        for _ in range(8):
            perm = rng.permutation(len(ids))
            kept, acc = [], 0.0
            for i in perm:
                kept.append(ids[i])
                acc += mu_eval({ids[i]})
                if acc >= (1 - eta) * mu_all:
                    break
            ratio = omega_eval(set(kept)) / w_all
            worst = min(worst, ratio)
        if worst > 0:
            best = {"eta_a": eta, "c_a": 1.0 / worst}
            break
    return best


def write_audit_jsonl(path, result):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in result["audit"]:
            fh.write(json.dumps(rec) + "\n")
