"""Regularized distances, smoothed densities, flat-measure constants, and
Carleson-norm estimators.

The regularized distance to a cloud mu is
    D(X) = ( sum_i m_i * max(|X - p_i|, floor)^(-d-alpha) )^(-1/alpha),
comparable to dist(X, support) on regular inputs. The kernel cap ``floor``
(default h/2) models the surface-patch integral each atom stands for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import DegenerateError, DomainError, NumericError, PreconditionError


# ---------------------------------------------------------------------------
# Flat-plane kernel constant
# ---------------------------------------------------------------------------

def flat_constant(d, alpha, rel_tol=1e-9):
    """Kernel integral over a d-plane: int_P |z-y|^(-d-alpha) dH^d(y)
    equals flat_constant(d, alpha) * dist(z, P)^(-alpha).

    Computed by adaptive radial quadrature (the closed Gamma-function form
    is kept in the tests as the independent oracle).
    """
    if d < 1 or alpha <= 0:
        raise DomainError("need d >= 1 and alpha > 0")
    sphere = 2 * math.pi ** (d / 2) / special.gamma(d / 2)

    def integrand(rho):
        return rho ** (d - 1) * (1.0 + rho * rho) ** (-(d + alpha) / 2)

    head, err1 = integrate.quad(integrand, 0.0, 1.0, epsrel=rel_tol, epsabs=0.0)
    # substitute rho = 1/u on the tail for a finite window
    def tail_integrand(u):
        return u ** (alpha - 1) * (1.0 + u * u) ** (-(d + alpha) / 2)

    tail, err2 = integrate.quad(tail_integrand, 0.0, 1.0, epsrel=rel_tol, epsabs=0.0)
    value = sphere * (head + tail)
    if not np.isfinite(value) or err1 + err2 > 1e-6 * value:
        raise NumericError("radial quadrature did not converge")
    return value


def comparison_constant(d, alpha):
    """C_alpha with D(z)/dist(z,P) ~ C_alpha * density^(-1/alpha) on flat
    input; defined as flat_constant^(-1/alpha)."""
    return flat_constant(d, alpha) ** (-1.0 / alpha)


# ---------------------------------------------------------------------------
# Regularized distance field
# ---------------------------------------------------------------------------

@dataclass
class DistanceField:
    """D_{mu,alpha} evaluator over an atomic measure."""

    measure: object
    alpha: float = 1.0
    singular_floor: float = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError("alpha must be positive")
        if self.singular_floor is None:
            self.singular_floor = self.measure.h / 2

    def __call__(self, points):
        return self.evaluate(points)

    def evaluate(self, points):
        """D at one point or a batch; vectorized over the batch."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        mu = self.measure
        d, a = mu.boundary_dim, self.alpha
        out = np.empty(len(pts))
        # chunk to keep the pairwise matrix modest
        chunk = max(1, int(2e6 / max(len(mu), 1)))
        for lo in range(0, len(pts), chunk):
            block = pts[lo : lo + chunk]
            dist = np.linalg.norm(
                block[:, None, :] - mu.positions[None, :, :], axis=2
            )
            if self.singular_floor > 0:
                np.maximum(dist, self.singular_floor, out=dist)
            elif np.any(dist == 0.0):
                raise DegenerateError("evaluation point sits on an atom with floor=0")
            s = (dist ** (-(d + a))) @ mu.masses
            out[lo : lo + chunk] = s ** (-1.0 / a)
        return float(out[0]) if single else out

    def comparability(self, points):
        """Sampled c1, c2 with c1*dist <= D <= c2*dist over the batch."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dd = self.evaluate(pts)
        geo = self.measure.dist_to_support(pts)
        ratios = dd / np.maximum(geo, 1e-300)
        return float(ratios.min()), float(ratios.max())


# ---------------------------------------------------------------------------
# Smoothed density
# ---------------------------------------------------------------------------

def _bump_norm(d):
    # integral of (1-|u|^2)^3 over the unit ball of R^d
    return 6.0 * math.pi ** (d / 2) / special.gamma(d / 2 + 4)


@dataclass
class SmoothedDensity:
    """Mollified density lambda and its recentered refinement.

    The mollifier is the C^2 bump (1-s^2)^3 on [0,1], radial in R^n,
    normalized so its integral over a d-plane through the center is 1;
    a unit-density plane then reports density 1 at every scale.
    """

    measure: object

    def __post_init__(self):
        self._norm = 1.0 / _bump_norm(self.measure.boundary_dim)

    def _eta_r(self, offsets, r):
        d = self.measure.boundary_dim
        s2 = np.sum(np.asarray(offsets, dtype=float) ** 2, axis=-1) / (r * r)
        vals = np.where(s2 < 1.0, (1.0 - np.minimum(s2, 1.0)) ** 3, 0.0)
        return self._norm * vals / r**d

    def lambda0(self, x, r):
        mu = self.measure
        x = np.asarray(x, dtype=float)
        ids = mu.ball_ids(x, r)
        if len(ids) == 0:
            raise DegenerateError("empty ball in smoothed density")
        w = self._eta_r(mu.positions[ids] - x, r)
        return float(np.dot(mu.masses[ids], w))

    def center_of_mass(self, x, r):
        mu = self.measure
        x = np.asarray(x, dtype=float)
        ids = mu.ball_ids(x, r)
        if len(ids) == 0:
            raise DegenerateError("empty ball in smoothed density")
        w = mu.masses[ids] * self._eta_r(mu.positions[ids] - x, r)
        l0 = float(w.sum())
        if l0 <= 0:
            raise DegenerateError("vanishing mollified mass")
        return x + (w @ (mu.positions[ids] - x)) / l0

    def density(self, x, r):
        phi = self.center_of_mass(x, r)
        mu = self.measure
        ids = mu.ball_ids(phi, r)
        if len(ids) == 0:
            raise DegenerateError("empty recentered ball")
        w = self._eta_r(mu.positions[ids] - phi, r)
        return float(np.dot(mu.masses[ids], w))

    def all_three(self, x, r):
        """(lambda0, recentered point, lambda) with the resolution guard r >= 8h."""
        if r < 8 * self.measure.h:
            raise DomainError(f"scale r={r:g} below 8h={8 * self.measure.h:g}")
        l0 = self.lambda0(x, r)
        phi = self.center_of_mass(x, r)
        lam = self.density(x, r)
        if l0 <= 0 or lam <= 0:
            raise DegenerateError("nonpositive smoothed density")
        return l0, phi, lam


def smoothed_density(sd, x, r):
    return sd.all_three(x, r)


def density_gradient_check(sd, alpha_fn, x, r, step=None):
    """Both sides of the density-gradient bound.

    Left: r * |grad_{x,r} lambda(x,r)| by central differences (the x-part
    only along the carrier plane directions would be tighter; full-space
    differences are used, which can only enlarge the left side).
    Right: alpha(x, 10 r) supplied by the caller's flatness oracle.
    """
    mu = sd.measure
    if step is None:
        step = max(2 * mu.h, r / 64)
    if step < 2 * mu.h:
        raise DomainError("finite-difference step below 2h")
    x = np.asarray(x, dtype=float)
    n = mu.ambient_dim
    grad = np.empty(n + 1)
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        grad[i] = (sd.density(x + e, r) - sd.density(x - e, r)) / (2 * step)
    grad[n] = (sd.density(x, r + step) - sd.density(x, r - step)) / (2 * step)
    left = r * float(np.linalg.norm(grad))
    right = float(alpha_fn(x, 10 * r))
    return left, right


# ---------------------------------------------------------------------------
# Carleson-norm estimators
# ---------------------------------------------------------------------------

@dataclass
class CarlesonEstimate:
    center: np.ndarray
    radius: float
    value: float
    sample_count: int
    shell_sums: list = field(default_factory=list)
    diverged: bool = False
    non_carleson_at_resolution: bool = False


def _sphere_dirs(m, count):
    """Deterministic unit directions in R^m."""
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        ang = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # Fibonacci-style points for m == 3
    i = np.arange(count) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / count
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def carleson_norm(
    field,
    center,
    radius,
    d,
    n,
    resolution,
    y_divisions=12,
    dirs_per_shell=16,
    radial_samples=3,
    divergence_cap=1e6,
):
    """Carleson-box integral R^-d * int_{B(X,R)} |F(y,t)|^2 dy dt / |t|^(n-d)
    on the slab coordinates (y, t) in R^d x R^(n-d).

    Quadrature: dyadic shells in |t| down to the resolution floor (midpoint
    rule per shell, deterministic direction set), a uniform y-grid in the
    ball. The estimate is declared resolution-limited rather than exact;
    shells that fail to decay flag "not Carleson at resolution".
    """
    if radius <= 0:
        raise DomainError("radius must be positive")
    center = np.asarray(center, dtype=float)
    m = n - d
    n_shells = max(1, int(math.floor(math.log2(radius / resolution))))
    dirs = _sphere_dirs(m, dirs_per_shell)
    # y-grid over the ball of the slab's first d coordinates
    ax = (np.arange(y_divisions) + 0.5) / y_divisions * 2 - 1.0
    if d == 1:
        ygrid = ax[:, None] * radius
    else:
        gg = np.meshgrid(*([ax] * d), indexing="ij")
        ygrid = np.stack([g.ravel() for g in gg], axis=1) * radius
    ygrid = ygrid[np.linalg.norm(ygrid, axis=1) <= radius]
    ycell = (2 * radius / y_divisions) ** d

    v_m = math.pi ** (m / 2) / special.gamma(m / 2 + 1)
    shell_sums = []
    total = 0.0
    count = 0
    for j in range(n_shells):
        r_hi = radius * 2.0 ** (-j)
        r_lo = r_hi / 2
        ssum = 0.0
        for frac in (np.arange(radial_samples) + 0.5) / radial_samples:
            t_mag = r_lo + frac * (r_hi - r_lo)
            sub_lo = r_lo + (frac - 0.5 / radial_samples) * (r_hi - r_lo)
            sub_hi = r_lo + (frac + 0.5 / radial_samples) * (r_hi - r_lo)
            vol = v_m * (sub_hi**m - sub_lo**m)
            tpts = t_mag * dirs
            for tv in tpts:
                vals = field(center[:d] + ygrid, np.broadcast_to(tv, (len(ygrid), m)))
                vals = np.asarray(vals, dtype=float)
                ssum += float(np.sum(vals**2)) * ycell * (vol / len(dirs)) / t_mag**m
                count += len(ygrid)
        shell_sums.append(ssum)
        total += ssum
        if total > divergence_cap * radius**d:
            return CarlesonEstimate(
                center, radius, total / radius**d, count, shell_sums, diverged=True,
                non_carleson_at_resolution=True,
            )
    flagged = False
    if total > 0 and len(shell_sums) >= 3:
        flagged = shell_sums[-1] > 0.25 * (total / len(shell_sums))
    return CarlesonEstimate(
        center,
        radius,
        total / radius**d,
        count,
        shell_sums,
        non_carleson_at_resolution=bool(flagged),
    )


def carleson_norm_on_measure(
    field, measure, center, radius, resolution=None, radial_samples=4, divergence_cap=1e6
):
    """Variant over the carrier set: R^-d * int_{E cap B} int_0^R
    |F(x,t)|^2 dmu(x) dt/t, with dyadic shells in scalar t."""
    mu = measure
    if resolution is None:
        resolution = mu.h
    center = np.asarray(center, dtype=float)
    ids = mu.ball_ids(center, radius)
    if len(ids) == 0:
        raise DegenerateError("no carrier atoms in the Carleson box")
    pts = mu.positions[ids]
    w = mu.masses[ids]
    n_shells = max(1, int(math.floor(math.log2(radius / resolution))))
    shell_sums = []
    total = 0.0
    count = 0
    for j in range(n_shells):
        t_hi = radius * 2.0 ** (-j)
        t_lo = t_hi / 2
        ssum = 0.0
        for frac in (np.arange(radial_samples) + 0.5) / radial_samples:
            t = t_lo + frac * (t_hi - t_lo)
            dt = (t_hi - t_lo) / radial_samples
            vals = np.asarray(field(pts, t), dtype=float)
            ssum += float(np.dot(w, vals**2)) * dt / t
            count += len(pts)
        shell_sums.append(ssum)
        total += ssum
        if total > divergence_cap * radius**mu.boundary_dim:
            return CarlesonEstimate(
                center, radius, total / radius**mu.boundary_dim, count, shell_sums,
                diverged=True, non_carleson_at_resolution=True,
            )
    flagged = False
    if total > 0 and len(shell_sums) >= 3:
        flagged = shell_sums[-1] > 0.25 * (total / len(shell_sums))
    return CarlesonEstimate(
        center, radius, total / radius**mu.boundary_dim, count, shell_sums,
        non_carleson_at_resolution=bool(flagged),
    )


# ---------------------------------------------------------------------------
# Distance-to-plane comparison
# ---------------------------------------------------------------------------

def flat_compare(dist_field, sd, z, x, r, plane):
    """Residual |D(z)/dist(z,P) - C_alpha * lambda(x,r)^(-1/alpha)|.

    Requires min(dist(z,P), dist(z,E)) >= 1e-2 r and z in B(x, 2r);
    the caller compares the residual to its flatness-sum budget.
    """
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    dz_p = float(plane.distance(z))
    dz_e = float(dist_field.measure.dist_to_support(z))
    if min(dz_p, dz_e) < 1e-2 * r:
        raise PreconditionError("z too close to the plane or the carrier set")
    if np.linalg.norm(z - x) > 2 * r:
        raise PreconditionError("z outside B(x, 2r)")
    d = dist_field.measure.boundary_dim
    c_alpha = comparison_constant(d, dist_field.alpha)
    lam = sd.density(x, r)
    return abs(dist_field.evaluate(z) / dz_p - c_alpha * lam ** (-1.0 / dist_field.alpha))
