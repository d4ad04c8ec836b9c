"""Compactly supported test functions with exact derivatives, the
distributional Laplacian pairing, very-weak harmonicity certificates, and
the end-to-end recovery demonstration.

The test family is the radial cubic-power bump

    phi(x) = (1 - |x - x0|^2 / rho^2)^3   inside B_rho(x0),  0 outside,

which is C^2 across the support boundary with closed-form gradient and
Laplacian; its E-norm is ||phi||_inf + ||grad phi||_inf + ||Lap phi||_inf.
A function u is certified very weakly harmonic on a region when the pairing
int u Lap(phi) stays below tol * ||u||_{L1(supp phi)} * ||phi||_E over a
quasi-random family of nonnegative bumps; subharmonic when the pairing is
bounded below by the same margin.  Certificates are relative, so they are
invariant under rescaling of u and phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import roots_legendre
from scipy.stats import qmc

from .fem import BoxGrid, DiscreteField, ResolutionError
from .heat import CertificationError, GridFunction, heat_apply, smoothing_pipeline

__all__ = [
    "TestFunction",
    "Certificate",
    "bump",
    "cone_vertex_bump",
    "cone_chart_bump",
    "distributional_laplacian",
    "certify_very_weak",
    "weyl_demo",
    "grid_evaluator",
]

GRAD_MAX = 96.0 / (25.0 * math.sqrt(5.0))  # max of 6 sqrt(q) (1-q)^2 at q = 1/5


def _profile(q: np.ndarray) -> np.ndarray:
    return np.where(q < 1.0, (1.0 - np.minimum(q, 1.0)) ** 3, 0.0)


def _profile_lap(q: np.ndarray, n: float, rho: float) -> np.ndarray:
    inside = q < 1.0
    qq = np.minimum(q, 1.0)
    return np.where(inside, 6.0 / rho**2 * (1.0 - qq) * (4.0 * qq - n * (1.0 - qq)), 0.0)


@dataclass(frozen=True)
class TestFunction:
    """Radial bump with evaluators for phi, grad phi, and Lap phi.

    ``geometry`` is "flat" (points are Cartesian (m, n) arrays) or
    "cone" (points are polar (r, xi) pairs on a two-dimensional cone, or
    plain radii for a vertex-centered bump of ambient dimension N).
    """

    center: np.ndarray
    radius: float
    dimension: float
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]
    geometry: str = "flat"
    meta: dict | None = None

    @property
    def sup_norm(self) -> float:
        return 1.0

    @property
    def grad_norm(self) -> float:
        return GRAD_MAX / self.radius

    @property
    def lap_norm(self) -> float:
        return 6.0 * self.dimension / self.radius**2

    @property
    def e_norm(self) -> float:
        return self.sup_norm + self.grad_norm + self.lap_norm


def bump(x0, rho: float, n: int | None = None) -> TestFunction:
    """Flat-space bump supported on the closed ball B_rho(x0)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if n is None:
        n = x0.size
    if rho <= 0:
        raise ValueError("support radius must be positive")

    def value(x):
        d2 = ((np.atleast_2d(x) - x0) ** 2).sum(axis=1)
        return _profile(d2 / rho**2)

    def gradient(x):
        x = np.atleast_2d(x)
        diff = x - x0
        q = (diff**2).sum(axis=1) / rho**2
        fac = np.where(q < 1.0, -6.0 / rho**2 * (1.0 - np.minimum(q, 1.0)) ** 2, 0.0)
        return fac[:, None] * diff

    def laplacian(x):
        d2 = ((np.atleast_2d(x) - x0) ** 2).sum(axis=1)
        return _profile_lap(d2 / rho**2, n, rho)

    return TestFunction(x0, rho, float(n), value, gradient, laplacian, "flat")


def cone_vertex_bump(rho: float, N: float, cross_measure: float = 2 * math.pi) -> TestFunction:
    """Radial bump about the cone vertex; the Laplacian is the radial form
    phi'' + (N-1)/r phi', which coincides with the flat formula in
    dimension N.  ``cross_measure`` is the total cross-section measure (the
    angle parameter xi then runs over [0, cross_measure) in pairings)."""

    def value(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return _profile(r**2 / rho**2)

    def gradient(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        q = r**2 / rho**2
        return np.where(q < 1.0, -6.0 * r / rho**2 * (1.0 - np.minimum(q, 1.0)) ** 2, 0.0)

    def laplacian(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return _profile_lap(r**2 / rho**2, N, rho)

    return TestFunction(
        np.zeros(1),
        rho,
        float(N),
        value,
        gradient,
        laplacian,
        "cone",
        meta={"total_measure": cross_measure},
    )


def cone_chart_bump(r0: float, xi0: float, rho: float, theta: float) -> TestFunction:
    """Bump on a two-dimensional cone of total angle theta, centered off the
    vertex at polar (r0, xi0).

    The cone minus the vertex is flat, so the bump is the Euclidean one in
    the unrolled chart psi(r, xi) = (r cos(xi - xi0), r sin(xi - xi0)); the
    support must stay inside the injectivity chart, which needs
    rho < r0 * min(1, sin(min(theta, pi)/2)).
    """
    inj = r0 * min(1.0, math.sin(min(theta, math.pi) / 2.0))
    if rho >= 0.95 * inj:
        raise ValueError(
            f"support radius {rho:g} exits the flat chart at (r0={r0:g}, theta={theta:g}); "
            f"need rho < {0.95 * inj:g}"
        )

    def chart(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        r, xi = p[:, 0], p[:, 1]
        ang = (xi - xi0 + theta / 2) % theta - theta / 2
        return np.column_stack([r * np.cos(ang), r * np.sin(ang)])

    flat = bump(np.array([r0, 0.0]), rho, n=2)

    def value(p):
        return flat.value(chart(p))

    def gradient(p):
        return flat.gradient(chart(p))

    def laplacian(p):
        return flat.laplacian(chart(p))

    return TestFunction(
        np.array([r0, xi0]),
        rho,
        2.0,
        value,
        gradient,
        laplacian,
        "cone",
        meta={"theta": theta},
    )


# ---------------------------------------------------------------------------
# quadrature for the pairing
# ---------------------------------------------------------------------------


def _support_quadrature(phi: TestFunction, radial: int, angular: int):
    """Nodes/weights covering supp(phi) in flat space (n = 1, 2, 3)."""
    n = int(phi.dimension)
    rho, x0 = phi.radius, phi.center
    xg, wg = roots_legendre(radial)
    r = rho * (xg + 1.0) / 2.0
    wr = rho / 2.0 * wg
    if n == 1:
        pts = np.concatenate([x0[0] - r, x0[0] + r])[:, None]
        w = np.concatenate([wr, wr])
        return pts, w
    if n == 2:
        ang = (np.arange(angular) + 0.5) * 2 * math.pi / angular
        R, T = np.meshgrid(r, ang, indexing="ij")
        pts = np.column_stack(
            [x0[0] + (R * np.cos(T)).ravel(), x0[1] + (R * np.sin(T)).ravel()]
        )
        w = (np.outer(wr * r, np.full(angular, 2 * math.pi / angular))).ravel()
        return pts, w
    if n == 3:
        nt = max(8, angular // 2)
        xp, wp = roots_legendre(nt)
        th = np.arccos(xp)
        ph = (np.arange(angular) + 0.5) * 2 * math.pi / angular
        R, TH, PH = np.meshgrid(r, th, ph, indexing="ij")
        pts = np.column_stack(
            [
                x0[0] + (R * np.sin(TH) * np.cos(PH)).ravel(),
                x0[1] + (R * np.sin(TH) * np.sin(PH)).ravel(),
                x0[2] + (R * np.cos(TH)).ravel(),
            ]
        )
        w = (
            wr[:, None, None] * r[:, None, None] ** 2 * wp[None, :, None] * (2 * math.pi / angular)
        ).ravel()
        return pts, w
    raise ValueError("flat pairings support n in {1, 2, 3}")


def _grid_window(u: GridFunction, center: np.ndarray, rho: float):
    idx = []
    for d, ax in enumerate(u.axes()):
        lo = np.searchsorted(ax, center[d] - rho) - 1
        hi = np.searchsorted(ax, center[d] + rho) + 1
        idx.append(slice(max(lo, 0), min(hi, len(ax))))
    return tuple(idx)


def distributional_laplacian(
    u,
    phi: TestFunction,
    radial: int = 48,
    angular: int = 96,
    return_norm: bool = False,
):
    """Pairing  int u Lap(phi) dm  by quadrature; linear in both arguments.

    ``u`` may be a callable on points, a :class:`GridFunction` (flat
    geometry; Riemann sum over the nodes in the support, which must span at
    least 16 grid points across), or, for cone bumps, a callable on polar
    (r, xi) pairs.  With ``return_norm`` the L^1 norm of u over the support
    is returned alongside (for relative certificates).
    """
    if phi.geometry == "cone":
        return _cone_pairing(u, phi, radial, angular, return_norm)
    if isinstance(u, GridFunction):
        h = u.spacing
        if 2 * phi.radius / h < 16:
            raise ResolutionError(
                f"bump of radius {phi.radius:g} spans under 16 grid points",
                minimum=8 * h,
            )
        win = _grid_window(u, phi.center, phi.radius)
        sub = u.values[win]
        grids = np.meshgrid(*[ax[s] for ax, s in zip(u.axes(), win)], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        lap = phi.laplacian(pts)
        pairing = float(np.sum(sub.ravel() * lap)) * h**u.dimension
        if return_norm:
            inside = phi.value(pts) > 0
            norm = float(np.sum(np.abs(sub.ravel()) * inside)) * h**u.dimension
            return pairing, norm
        return pairing
    if radial < 16:
        raise ResolutionError("need at least 16 radial quadrature points", minimum=16)
    pts, w = _support_quadrature(phi, radial, angular)
    uv = np.asarray(u(pts), dtype=float)
    pairing = float(np.sum(w * uv * phi.laplacian(pts)))
    if return_norm:
        return pairing, float(np.sum(w * np.abs(uv)))
    return pairing


def _cone_pairing(u, phi: TestFunction, radial: int, angular: int, return_norm: bool):
    """Pairing on the two-dimensional cone with measure r dr dxi.

    Vertex bumps use geometrically graded radial panels toward the vertex;
    chart bumps integrate in the isometric flat chart (the measure is
    preserved) and pull points back to polar coordinates.
    """
    if phi.meta and "theta" in phi.meta:
        theta = phi.meta["theta"]
        r0, xi0 = phi.center
        xg, wg = roots_legendre(radial)
        s = phi.radius * (xg + 1.0) / 2.0
        ws = phi.radius / 2.0 * wg
        ang = (np.arange(angular) + 0.5) * 2 * math.pi / angular
        S, B = np.meshgrid(s, ang, indexing="ij")
        cx = r0 + (S * np.cos(B))
        cy = S * np.sin(B)
        r = np.sqrt(cx**2 + cy**2).ravel()
        xi = (xi0 + np.arctan2(cy, cx).ravel()) % theta
        pts = np.column_stack([r, xi])
        w = np.outer(ws * s, np.full(angular, 2 * math.pi / angular)).ravel()
        uv = np.asarray(u(pts), dtype=float)
        lap = phi.laplacian(pts)
        pairing = float(np.sum(w * uv * lap))
        if return_norm:
            return pairing, float(np.sum(w * np.abs(uv)))
        return pairing
    # vertex bump: xi runs over [0, total_measure); the bump is radial, so
    # only the angular mean of u matters, but the full product is integrated
    N = phi.dimension
    theta_total = phi.meta["total_measure"] if phi.meta else 2 * math.pi
    xg, wg = roots_legendre(16)
    panels = 24
    edges = phi.radius * 2.0 ** -np.arange(panels + 1)
    ang = (np.arange(angular) + 0.5) * theta_total / angular
    pairing = 0.0
    norm = 0.0
    for j in range(panels):
        lo, hi = edges[j + 1], edges[j]
        r = (hi + lo) / 2 + (hi - lo) / 2 * xg
        wr = (hi - lo) / 2 * wg
        R, XI = np.meshgrid(r, ang, indexing="ij")
        pts = np.column_stack([R.ravel(), XI.ravel()])
        uv = np.asarray(u(pts), dtype=float).reshape(R.shape)
        lap = phi.laplacian(r)[:, None]
        w = (wr * r ** (N - 1))[:, None] * (theta_total / angular)
        pairing += float(np.sum(w * uv * lap))
        norm += float(np.sum(w * np.abs(uv)))
    if return_norm:
        return pairing, norm
    return pairing


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------


@dataclass
class Certificate:
    kind: str  # harmonic | sub | super
    holds: bool
    tol: float
    worst_ratio: float
    worst_center: np.ndarray
    worst_radius: float
    family_size: int
    ratios: np.ndarray

    def __bool__(self):
        return self.holds


def certify_very_weak(
    u,
    center,
    R: float,
    sign: str = "harmonic",
    family_size: int = 64,
    tol: float = 1e-6,
    seed: int = 0,
    min_radius: float | None = None,
    radial: int = 48,
    angular: int = 96,
) -> Certificate:
    """Certify u very weakly harmonic / sub / super on B_R(center).

    A quasi-random family of nonnegative bumps (log-uniform radii in
    [min_radius, R/4], centers keeping the support inside the region) is
    paired with u; each pairing is normalized by
    ||u||_{L1(supp phi)} * ||phi||_E.  ``harmonic`` holds when every
    normalized pairing is within tol in absolute value; ``sub`` when every
    pairing is >= -tol (so int u Lap(phi) >= 0 up to the margin); ``super``
    symmetrically.  The worst witness is always recorded.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = center.size
    if isinstance(u, GridFunction):
        # Riemann-sum pairings need at least 16 grid points across a support
        lo = max(8 * u.spacing, R / 64) if min_radius is None else min_radius
    else:
        lo = R / 64 if min_radius is None else min_radius
    hi = R / 4
    if lo >= hi:
        raise ValueError("region too small for the bump family")
    eng = qmc.Halton(d=n + 1, seed=seed)
    draws = eng.random(family_size)
    ratios = np.empty(family_size)
    worst = -1.0
    worst_idx = 0
    bumps = []
    for i in range(family_size):
        rho = lo * (hi / lo) ** draws[i, 0]
        # offset in the inscribed ball keeps the support inside B_R(center)
        offset = (draws[i, 1:] * 2.0 - 1.0) / math.sqrt(n)
        c = center + (R - rho) * offset
        phi = bump(c, rho, n)
        bumps.append(phi)
        pairing, norm = distributional_laplacian(u, phi, radial, angular, return_norm=True)
        scale = max(norm, 1e-300) * phi.e_norm
        ratios[i] = pairing / scale
        if abs(ratios[i]) > worst:
            worst = abs(ratios[i])
            worst_idx = i
    if sign == "harmonic":
        holds = bool(np.max(np.abs(ratios)) <= tol)
    elif sign == "sub":
        holds = bool(np.min(ratios) >= -tol)
        worst_idx = int(np.argmin(ratios))
    elif sign == "super":
        holds = bool(np.max(ratios) <= tol)
        worst_idx = int(np.argmax(ratios))
    else:
        raise ValueError("sign must be harmonic, sub, or super")
    wb = bumps[worst_idx]
    return Certificate(
        kind=sign,
        holds=holds,
        tol=tol,
        worst_ratio=float(ratios[worst_idx]),
        worst_center=wb.center,
        worst_radius=wb.radius,
        family_size=family_size,
        ratios=ratios,
    )


def grid_evaluator(obj) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth point evaluator for grid-backed fields (cubic spline in 2d).

    Accepts a :class:`GridFunction` or a :class:`~conelab.fem.DiscreteField`
    over a :class:`~conelab.fem.BoxGrid`; spline interpolation reproduces
    polynomials up to cubic degree per axis, so manufactured quadratic
    solutions evaluate exactly.
    """
    from scipy.interpolate import RectBivariateSpline

    if isinstance(obj, DiscreteField):
        mesh = obj.mesh
        if not isinstance(mesh, BoxGrid) or mesh.dimension != 2:
            raise ValueError("grid_evaluator needs a 2-d tensor-grid field")
        ax = [mesh.axis + mesh.center[d] for d in range(2)]
        vals = obj.values.reshape(mesh.shape)
    elif isinstance(obj, GridFunction) and obj.dimension == 2:
        ax = obj.axes()
        vals = obj.values
    else:
        raise ValueError("grid_evaluator needs a 2-d grid-backed field")
    spl = RectBivariateSpline(ax[0], ax[1], vals, kx=3, ky=3)

    def ev(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return spl(pts[:, 0], pts[:, 1], grid=False)

    return ev


# ---------------------------------------------------------------------------
# end-to-end demonstration
# ---------------------------------------------------------------------------


@dataclass
class WeylReport:
    certificate: Certificate
    smoothing: object
    lipschitz_constant: float
    recovery_error: float | None
    t_min: float

    def __bool__(self):
        return bool(self.certificate) and bool(self.smoothing)


def weyl_demo(
    u: GridFunction,
    R: float,
    x0,
    t_grid=None,
    truth: Callable | None = None,
    cert_tol: float = 1e-3,
    family_size: int = 48,
    seed: int = 0,
) -> WeylReport:
    """Recover a Lipschitz representative from L^1 data that is very weakly
    harmonic on B_{R/2}(x0).

    The data is certified first (refusing on failure), multiplied by the
    Lipschitz cutoff that is 1 on B_{R/2} and 0 off B_R, and flowed through
    the smoothing pipeline; the smallest-t field is the representative.  When
    ``truth`` is supplied the sup recovery error on B_{R/8} is reported.
    """
    x0 = np.asarray(x0, dtype=float)
    cert = certify_very_weak(
        u, x0, R / 2, sign="harmonic", family_size=family_size, tol=cert_tol, seed=seed
    )
    if not cert.holds:
        raise CertificationError(
            f"input failed harmonic certification: worst normalized pairing "
            f"{cert.worst_ratio:.3e} (tol {cert_tol:g})"
        )
    pts = u.points()
    d = np.linalg.norm(pts - x0, axis=1).reshape(u.values.shape)
    chi = np.clip((R - d) / (R / 2), 0.0, 1.0)
    v = u.like(u.values * chi)
    if t_grid is None:
        from .heat import default_t_grid

        t_grid = default_t_grid()
    rep = smoothing_pipeline(v, t_grid, x0, R, certificate=cert)
    t_min = float(np.min(np.asarray(t_grid)))
    recovered = heat_apply(v, t_min)
    err = None
    if truth is not None:
        inner = u.ball_mask(x0, R / 8)
        tv = np.asarray(truth(pts), dtype=float).reshape(u.values.shape)
        err = float(np.abs(recovered.values - tv)[inner].max())
    return WeylReport(
        certificate=cert,
        smoothing=rep,
        lipschitz_constant=rep.lipschitz_constant,
        recovery_error=err,
        t_min=t_min,
    )
