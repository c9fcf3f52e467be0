"""Deterministic example clouds: planes, Lipschitz graphs, helices,
snowflake iterates, and the four-corner Cantor control."""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError
from .geometry import AtomicMeasure

KINDS = ("plane", "lipschitz_graph", "helix", "snowflake", "cantor4")


def _base_grid(d, spacing, extent):
    axis = np.arange(-extent, extent + spacing / 2, spacing)
    if d == 1:
        return axis[:, None]
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def plane(d=1, n=3, spacing=1 / 64, extent=1.0):
    """Unit-density cloud on the coordinate d-plane of R^n."""
    base = _base_grid(d, spacing, extent)
    pos = np.zeros((len(base), n))
    pos[:, :d] = base
    masses = np.full(len(base), spacing**d)
    return AtomicMeasure(pos, masses, boundary_dim=d, patch_radius=spacing)


def lipschitz_graph(slope, d=1, n=3, spacing=1 / 64, extent=1.0, profile="linear"):
    """Unit-density cloud on a slope-bounded graph over the base d-plane.

    profile 'linear' tilts the plane (area factor sqrt(1+slope^2) exact);
    'sine' bends it with the same Lipschitz constant (too curved for the
    small-constant parametrization gates, useful for flatness tests);
    'gentle' superposes two small waves whose per-scale flatness stays
    inside those gates.
    """
    base = _base_grid(d, spacing, extent)
    pos = np.zeros((len(base), n))
    pos[:, :d] = base
    if profile == "linear":
        height = slope * base[:, 0]
        grad = np.full(len(base), slope)
    elif profile == "sine":
        height = slope * np.sin(base[:, 0])
        grad = slope * np.cos(base[:, 0])
    elif profile == "gentle":
        a1, a2 = slope / 4, slope / 40
        height = a1 * np.sin(base[:, 0]) + a2 * np.sin(10 * base[:, 0])
        grad = a1 * np.cos(base[:, 0]) + 10 * a2 * np.cos(10 * base[:, 0])
    else:
        raise DomainError(f"unknown graph profile {profile!r}")
    pos[:, d] = height
    masses = spacing**d * np.sqrt(1.0 + grad**2)
    return AtomicMeasure(pos, masses, boundary_dim=d, patch_radius=spacing)


def helix(radius=1.0, pitch=0.25, n=3, spacing=1 / 64, turns=2.0):
    """Arc-length sampled helix in R^3 (d = 1)."""
    if n != 3:
        raise DomainError("helix lives in R^3")
    c = math.sqrt(radius**2 + (pitch / (2 * math.pi)) ** 2)
    total_len = 2 * math.pi * turns * c
    m = max(int(total_len / spacing), 8)
    s = np.linspace(0.0, 2 * math.pi * turns, m)
    pos = np.stack(
        [radius * np.cos(s), radius * np.sin(s), pitch * s / (2 * math.pi)], axis=1
    )
    step = total_len / (m - 1)
    masses = np.full(m, step)
    return AtomicMeasure(pos, masses, boundary_dim=1, patch_radius=step)


def snowflake(level=3, n=3, points_per_edge=4):
    """Finite Koch-type iterate in the z=0 plane of R^3 (d = 1).

    Each level replaces every segment by four of one-third length; finite
    iterates are rectifiable curves with growing Lipschitz constants.
    """
    if n != 3:
        raise DomainError("snowflake lives in R^3")
    pts = [np.array([-1.0, 0.0]), np.array([1.0, 0.0])]
    for _ in range(level):
        nxt = []
        for a, b in zip(pts[:-1], pts[1:]):
            v = b - a
            perp = np.array([-v[1], v[0]])
            nxt.extend(
                [a, a + v / 3, a + v / 2 + perp * (math.sqrt(3) / 6), a + 2 * v / 3]
            )
        nxt.append(pts[-1])
        pts = nxt
    pts = np.asarray(pts)
    # resample each edge uniformly for an even arclength density
    chunks = []
    masses = []
    for a, b in zip(pts[:-1], pts[1:]):
        seg = np.linspace(0, 1, points_per_edge, endpoint=False)[:, None]
        chunk = a + seg * (b - a)
        chunks.append(chunk)
        masses.append(np.full(points_per_edge, np.linalg.norm(b - a) / points_per_edge))
    flat = np.concatenate(chunks)
    pos = np.zeros((len(flat), 3))
    pos[:, :2] = flat
    return AtomicMeasure(pos, np.concatenate(masses), boundary_dim=1)


def cantor4(level=4, n=3):
    """Four-corner Cantor iterate (contraction 1/4) in the z=0 plane of R^3.

    AR of dimension 1 but purely unrectifiable in the limit; serves as the
    negative control for the flatness-packing diagnostics.
    """
    if n != 3:
        raise DomainError("cantor4 lives in R^3")
    unit_corners = np.array([[0.0, 0.0], [0.75, 0.0], [0.0, 0.75], [0.75, 0.75]])
    cells = np.array([[0.0, 0.0]])
    size = 1.0
    for _ in range(level):
        offs = unit_corners * size
        cells = (cells[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        size /= 4
    centers = cells + size / 2
    pos = np.zeros((len(centers), 3))
    pos[:, :2] = centers
    masses = np.full(len(centers), 4.0 ** (-level))
    return AtomicMeasure(pos, masses, boundary_dim=1, patch_radius=4.0 ** (-level))


def generate(kind, **params):
    """Dispatch by example kind; raises DomainError on unknown kinds."""
    table = {
        "plane": plane,
        "lipschitz_graph": lipschitz_graph,
        "helix": helix,
        "snowflake": snowflake,
        "cantor4": cantor4,
    }
    if kind not in table:
        raise DomainError(f"unknown example kind {kind!r} (have {sorted(table)})")
    return table[kind](**params)
