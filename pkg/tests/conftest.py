"""Shared session fixtures: the expensive clouds, trees, and flatness
caches are built once and reused across test modules."""

import numpy as np
import pytest

from reckit import generators
from reckit.alpha_beta import AlphaCache
from reckit.corona import build_corona
from reckit.geometry import build_dyadic_tree


def central_root(tree):
    return min(tree.roots(), key=lambda c: float(np.linalg.norm(c.center))).id


@pytest.fixture(scope="session")
def plane_rig():
    """Wide unit-density line in R^3: every window under the central root
    sees a full plane, so all flatness numbers are discretization-small."""
    mu = generators.plane(d=1, n=3, spacing=1 / 512, extent=18.0)
    tree = build_dyadic_tree(mu, 0, 2)
    top = central_root(tree)
    cache = AlphaCache(mu, tree, window=16.0, size_cap=160, plane_grid_target=80)
    region = build_corona(tree, top, eps0=0.1, delta0=0.5, cache=cache)
    return {"mu": mu, "tree": tree, "top": top, "cache": cache, "region": region}


@pytest.fixture(scope="session")
def graph_rig():
    """Slope-0.1 sine graph with the same margins."""
    mu = generators.lipschitz_graph(0.1, spacing=1 / 512, extent=18.0)
    tree = build_dyadic_tree(mu, 0, 2)
    top = central_root(tree)
    cache = AlphaCache(mu, tree, window=16.0, size_cap=160, plane_grid_target=80)
    region = build_corona(tree, top, eps0=0.2, delta0=0.6, cache=cache)
    return {"mu": mu, "tree": tree, "top": top, "cache": cache, "region": region}


@pytest.fixture(scope="session")
def cantor_rig():
    mu = generators.cantor4(level=5)
    tree = build_dyadic_tree(mu, 0, 2)
    top = central_root(tree)
    cache = AlphaCache(mu, tree, window=16.0, size_cap=160, plane_grid_target=80)
    return {"mu": mu, "tree": tree, "top": top, "cache": cache}
