import time

import numpy as np
import pytest

from reckit.errors import ConfigError, DomainError
from reckit.extrapolation import (
    ProjectedMeasure,
    SyntheticTree,
    ainfty_dyadic_check,
    cm_norm,
    cm_norm_restricted,
    extrapolate_driver,
    packing_mass,
    random_sequence,
    stop_family,
    verify_lemma_10_2,
)


def brute_cm_norm(seq, tree, top):
    best = 0.0
    for q in tree.descendants(top):
        s = sum(seq.get(c, 0.0) ** 2 * tree.mass(c) for c in tree.descendants(q))
        best = max(best, s / tree.mass(q))
    return best


def brute_stop_family(seq, tree, top, b0, K):
    """Exhaustive traversal oracle for the stopping rule."""
    out = []

    def visit(cid, j):
        a = seq.get(cid, 0.0)
        j = j + a * a
        if a * a > 2 * b0 or j >= 2 * K * b0:
            out.append(cid)
            return
        for k in tree.cubes[cid].children:
            visit(k, j)

    visit(top, 0.0)
    return sorted(out)


# -- cm_norm -------------------------------------------------------------------

def test_cm_norm_zero_and_single():
    t = SyntheticTree(0, depth=3)
    assert cm_norm({}, t, 0) == 0.0
    seq = {0: 1.0}
    # single nonzero entry at the top: sup attained at the top cube
    assert cm_norm(seq, t, 0) == pytest.approx(1.0)


def test_cm_norm_matches_bruteforce():
    for seed in range(20):
        t = SyntheticTree(seed, depth=4)
        seq = random_sequence(t, 0, seed + 100)
        assert cm_norm(seq, t, 0) == pytest.approx(brute_cm_norm(seq, t, 0), rel=1e-12)


# -- stop_family ----------------------------------------------------------------

def test_stop_family_trivial_cases():
    t = SyntheticTree(1, depth=3)
    assert stop_family({}, t, 0, 0.0, 0.5, 2.0) == []
    seq = {0: 2.0}  # a(Q0)^2 = 4 > 2*b0
    assert stop_family(seq, t, 0, 0.0, 1.0, 1.0) == [0]
    with pytest.raises(DomainError):
        stop_family({}, t, 0, 0.0, 0.5, 0.5)  # K < 1 rejected


def test_stop_family_matches_bruteforce():
    for seed in range(25):
        t = SyntheticTree(seed, depth=4)
        seq = random_sequence(t, 0, seed + 7, scale=1.2)
        got = stop_family(seq, t, 0, 0.3, 0.2, 1.5)
        assert got == brute_stop_family(seq, t, 0, 0.2, 1.5)


# -- the stopping lemma -----------------------------------------------------------

def test_lemma_trivial_branch():
    t = SyntheticTree(2, depth=3)
    seq = {0: 10.0}  # a(Q0)^2 = 100 > 2*b0: stop at the top immediately
    rep = verify_lemma_10_2(seq, t, 0, a0=60.0, b0=45.0, K=1.0)
    assert rep["family"] == [0]
    assert rep["restricted_norm"] == 0.0
    assert rep["bad_union"] == []  # B empty in the trivial branch
    assert rep["norm_ok"] and rep["bad_mass_ok"]


def test_lemma_zero_sequence():
    t = SyntheticTree(3, depth=3)
    rep = verify_lemma_10_2({}, t, 0, a0=0.0, b0=0.5, K=2.0)
    assert rep["restricted_norm"] == 0.0
    assert rep["bad_mass"] == 0.0


def test_lemma_fuzz_1000_trees():
    """Acceptance-grade fuzz: both conclusions hold on every trial."""
    t0 = time.time()
    rng = np.random.default_rng(2024)
    for trial in range(1000):
        depth = int(rng.integers(2, 6))
        t = SyntheticTree(trial, depth=depth, max_children=3)
        a0 = float(rng.uniform(0.0, 1.0))
        b0 = float(rng.uniform(0.05, 1.0))
        K = float(rng.uniform(1.0, 4.0))
        seq = random_sequence(t, 0, trial + 5000)
        # enforce the hypothesis by rescaling to a random fraction of it
        total = packing_mass(seq, t, t.descendants(0))
        if total > 0:
            target = float(rng.uniform(0.3, 1.0)) * (a0 + b0) * t.mass(0)
            scale = (target / total) ** 0.5
            seq = {k: v * scale for k, v in seq.items()}
        rep = verify_lemma_10_2(seq, t, 0, a0, b0, K)
        assert rep["norm_ok"], f"norm bound failed on trial {trial}"
        assert rep["bad_mass_ok"], f"mass bound failed on trial {trial}"
    assert time.time() - t0 < 60.0


def test_lemma_hypothesis_guard():
    t = SyntheticTree(5, depth=3)
    seq = {cid: 10.0 for cid in t.descendants(0)}
    with pytest.raises(DomainError, match="hypothesis"):
        verify_lemma_10_2(seq, t, 0, a0=0.1, b0=0.1, K=1.0)


# -- projected measures -----------------------------------------------------------

def _leaf_omega(tree, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return {c: float(rng.uniform(0.1, 1.0)) * scale for c in tree.leaves()}


def _leaf_mu(tree):
    return {c: tree.mass(c) for c in tree.leaves()}


def test_projection_empty_family_identity():
    t = SyntheticTree(8, depth=3)
    om = _leaf_omega(t)
    pm = ProjectedMeasure(t, om, [], mu=_leaf_mu(t))
    some = set(t.leaves()[:5])
    assert pm(some) == pytest.approx(sum(om[c] for c in some))


def test_projection_whole_stopped_cube():
    t = SyntheticTree(9, depth=3)
    om = _leaf_omega(t, seed=2)
    qj = t.cubes[0].children[0]
    pm = ProjectedMeasure(t, om, [qj], mu=_leaf_mu(t))
    ids = pm.cube_ids(qj)
    assert pm(ids) == pytest.approx(pm.targets[qj])


def test_projection_additivity():
    t = SyntheticTree(10, depth=4)
    om = _leaf_omega(t, seed=3)
    f_stop = t.cubes[0].children[:2]
    pm = ProjectedMeasure(t, om, f_stop, mu=_leaf_mu(t))
    leaves = t.leaves()
    a = set(leaves[::2])
    b = set(leaves[1::2])
    assert pm(a | b) == pytest.approx(pm(a) + pm(b), rel=1e-12)


def test_projection_dyadically_doubling_with_doubling_input():
    # omega proportional to mu projects to itself; parent/child ratios
    # then equal the mass ratios, which are bounded on these trees
    t = SyntheticTree(11, depth=4)
    om = {c: 2.5 * t.mass(c) for c in t.leaves()}
    f_stop = [t.cubes[0].children[0]]
    pm = ProjectedMeasure(t, om, f_stop, mu=_leaf_mu(t))
    for cid in t.descendants(0):
        for kid in t.cubes[cid].children:
            num = pm.of_cube(cid)
            den = pm.of_cube(kid)
            assert den > 0
            assert num / den == pytest.approx(t.mass(cid) / t.mass(kid), rel=1e-9)


# -- dyadic comparability ------------------------------------------------------------

def test_ainfty_check_identity():
    t = SyntheticTree(12, depth=3)
    mu = _leaf_mu(t)
    ev = lambda ids: sum(mu[c] for c in ids)
    rep = ainfty_dyadic_check(ev, ev, t, 0)
    assert rep.passed
    assert rep.theta >= 1.0 - 1e-9


def test_ainfty_check_singular_part_fails():
    t = SyntheticTree(13, depth=3)
    mu = _leaf_mu(t)
    kids = t.cubes[0].children
    dead = set(t.leaves(kids[0]))
    om = {c: (0.0 if c in dead else mu[c]) for c in t.leaves()}
    rep = ainfty_dyadic_check(
        lambda ids: sum(om[c] for c in ids),
        lambda ids: sum(mu[c] for c in ids),
        t, 0,
    )
    # total omega-loss on a mu-positive cube: some (eps, delta) rows fail
    assert not all(rep.table.values())


# -- driver ---------------------------------------------------------------------

def test_driver_rung_count_and_trivial_pass():
    t = SyntheticTree(14, depth=3)
    mu = _leaf_mu(t)

    def oracle(cid, family):
        ev = lambda ids: sum(mu[c] for c in ids)
        return ev, ev

    seq = {}
    res = extrapolate_driver(seq, t, 0, b0=0.25, K=1.0, oracle=oracle, l0=0.0)
    assert res["verdict"] == "pass"
    res = extrapolate_driver(seq, t, 0, b0=0.25, K=1.0, oracle=oracle, l0=1.0)
    assert res["rungs"] == 5  # ceil(1/0.25) + the base rung
    with pytest.raises(ConfigError):
        extrapolate_driver(seq, t, 0, b0=0.25, K=0.5, oracle=oracle)


def test_driver_synthetic_omega_equals_mu():
    t = SyntheticTree(15, depth=3)
    mu = _leaf_mu(t)
    seq = random_sequence(t, 0, 77, scale=0.4)

    def oracle(cid, family):
        pm = ProjectedMeasure(t, {c: mu[c] for c in t.leaves()}, family, mu=mu)
        return pm, lambda ids: sum(mu.get(c, 0.0) for c in ids)

    res = extrapolate_driver(seq, t, 0, b0=0.3, K=1.2, oracle=oracle)
    assert res["verdict"] == "pass"
    assert all(rec["ok"] for rec in res["audit"])
