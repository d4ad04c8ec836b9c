"""Coefficient fields, the coefficient<->metric transforms, the explicit
conical examples, and Dini-modulus machinery.

A coefficient field is a symmetric uniformly elliptic matrix field A(x) on a
ball.  For dimension n >= 3 it is interchangeable with a Riemannian metric via

    g^{ij}(x) = a^{ij}(x) / det(a^{ij}(x))^{1/(n-2)},
    a^{ij}(x) = g^{ij}(x) * sqrt(det g_{ij}(x)),

and the two maps invert each other.  Closeness of two coefficient fields at
scale t is measured by the nondecreasing modulus

    omega(t) = sup_{B_t(0)} ||A(x) - Abar(x)||_2,

whose Dini integral  int_0^1 omega(t)/t dt  controls the dyadic iteration in
:mod:`conelab.campanato`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

__all__ = [
    "CoefficientField",
    "MetricField",
    "DiniModulus",
    "DiniIntegral",
    "DegenerateFieldError",
    "SingularPointError",
    "ball_samples",
    "metric_from_coefficient",
    "coefficient_from_metric",
    "convex_graph_coefficient",
    "sector_coefficient",
    "identity_coefficient",
    "scalar_coefficient",
    "perturbed_coefficient",
    "random_elliptic_field",
    "estimate_modulus",
    "dini_integral",
    "ellipticity_constants",
]

SYMMETRY_RTOL = 1e-12
INVERSE_RTOL = 1e-10


class DegenerateFieldError(ValueError):
    """A matrix field failed positive definiteness at a sample point."""

    def __init__(self, message: str, point: np.ndarray | None = None):
        super().__init__(message)
        self.point = point


class SingularPointError(ValueError):
    """The evaluator was asked for a value at its discontinuity point."""


def _as_points(x: np.ndarray, n: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[-1] != n:
        raise ValueError(f"points have dimension {pts.shape[-1]}, field has {n}")
    return pts


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric uniformly elliptic matrix field on a ball of radius ``radius``.

    ``matrix`` maps an (m, n) array of points to an (m, n, n) array.  The
    ellipticity pair satisfies  lam |xi|^2 <= xi^T A(x) xi  and
    ||A(x)||_2 <= Lam  at every sampled point.
    """

    dimension: int
    matrix: Callable[[np.ndarray], np.ndarray]
    lam: float
    Lam: float
    radius: float = 1.0
    name: str = "coefficient"

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if not (0 < self.lam <= self.Lam):
            raise DegenerateFieldError(
                f"ellipticity pair ({self.lam}, {self.Lam}) is not 0 < lam <= Lam"
            )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        pts = _as_points(x, self.dimension)
        out = np.asarray(self.matrix(pts), dtype=float)
        return out

    def check_symmetry(self, x: np.ndarray) -> float:
        """Max relative asymmetry ||A - A^T|| / ||A|| over the points."""
        a = self(x)
        asym = np.linalg.norm(a - np.swapaxes(a, -1, -2), axis=(-2, -1))
        scale = np.linalg.norm(a, axis=(-2, -1))
        return float(np.max(asym / np.maximum(scale, 1e-300)))


@dataclass(frozen=True)
class MetricField:
    """Riemannian metric g_{ij}(x) with derived inverse and determinant."""

    dimension: int
    metric: Callable[[np.ndarray], np.ndarray]
    radius: float = 1.0
    name: str = "metric"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.metric(_as_points(x, self.dimension)), dtype=float)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self(x))

    def det(self, x: np.ndarray) -> np.ndarray:
        g = self(x)
        d = np.linalg.det(g)
        if np.any(d <= 0):
            bad = _as_points(x, self.dimension)[np.argmin(d)]
            raise DegenerateFieldError("metric determinant <= 0", point=bad)
        return d

    def sqrt_det(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(self.det(x))

    def check_inverse(self, x: np.ndarray) -> float:
        """Residual ||g_{ij} g^{jk} - delta|| over the points."""
        g = self(x)
        gi = self.inverse(x)
        eye = np.eye(self.dimension)
        return float(np.max(np.linalg.norm(g @ gi - eye, axis=(-2, -1))))


def ball_samples(
    n: int, radius: float, count: int, seed: int = 0, center: np.ndarray | None = None
) -> np.ndarray:
    """Low-discrepancy points in the open ball, never hitting the center.

    Halton points are pushed to the ball by the inverse-Gaussian direction
    map with a volume-uniform radial law; the center itself has measure zero
    under the map, and a floor of 1e-9 * radius keeps evaluators with a
    discontinuity at the center safe.
    """
    eng = qmc.Halton(d=n + 1, seed=seed)
    u = eng.random(count)
    direc = ndtri(np.clip(u[:, :n], 1e-12, 1 - 1e-12))
    norms = np.linalg.norm(direc, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    direc /= norms
    r = radius * np.maximum(u[:, n:] ** (1.0 / n), 1e-9)
    pts = direc * r
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


# ---------------------------------------------------------------------------
# coefficient <-> metric transforms
# ---------------------------------------------------------------------------


def metric_from_coefficient(A: CoefficientField) -> MetricField:
    """Induced metric:  g^{ij} = a^{ij} / det(a^{ij})^{1/(n-2)},  n >= 3."""
    n = A.dimension
    if n < 3:
        raise ValueError("the coefficient->metric transform needs dimension >= 3")

    def metric(pts: np.ndarray) -> np.ndarray:
        a = A(pts)
        det = np.linalg.det(a)
        if np.any(det <= 0):
            raise DegenerateFieldError(
                "coefficient determinant <= 0", point=pts[np.argmin(det)]
            )
        g_upper = a / det[:, None, None] ** (1.0 / (n - 2))
        return np.linalg.inv(g_upper)

    return MetricField(dimension=n, metric=metric, radius=A.radius, name=f"metric[{A.name}]")


def coefficient_from_metric(g: MetricField, samples: int = 512, seed: int = 0) -> CoefficientField:
    """Divergence-form coefficient of the metric:  a^{ij} = g^{ij} sqrt(det g).

    The ellipticity pair is estimated on a low-discrepancy sample of the
    domain ball.
    """
    n = g.dimension

    def matrix(pts: np.ndarray) -> np.ndarray:
        gl = g(pts)
        det = np.linalg.det(gl)
        if np.any(det <= 0):
            raise DegenerateFieldError("metric determinant <= 0", point=pts[np.argmin(det)])
        return np.linalg.inv(gl) * np.sqrt(det)[:, None, None]

    pts = ball_samples(n, g.radius, samples, seed=seed)
    eigs = np.linalg.eigvalsh(matrix(pts))
    lam, Lam = float(eigs.min()), float(np.abs(eigs).max())
    if lam <= 0:
        raise DegenerateFieldError("degenerate ellipticity in coefficient_from_metric")
    return CoefficientField(
        dimension=n, matrix=matrix, lam=lam, Lam=Lam, radius=g.radius, name=f"coeff[{g.name}]"
    )


# ---------------------------------------------------------------------------
# concrete families
# ---------------------------------------------------------------------------


def identity_coefficient(n: int, radius: float = 1.0) -> CoefficientField:
    def matrix(pts):
        return np.broadcast_to(np.eye(n), (pts.shape[0], n, n)).copy()

    return CoefficientField(n, matrix, 1.0, 1.0, radius, name="identity")


def scalar_coefficient(c: float, n: int, radius: float = 1.0) -> CoefficientField:
    if c <= 0:
        raise DegenerateFieldError(f"scalar coefficient {c} <= 0")

    def matrix(pts):
        return np.broadcast_to(c * np.eye(n), (pts.shape[0], n, n)).copy()

    return CoefficientField(n, matrix, c, c, radius, name=f"scalar:{c}")


def convex_graph_coefficient(a: np.ndarray, radius: float = 1.0) -> CoefficientField:
    """Conical coefficient of the graph of f(x) = (sum_i a_i x_i^2)^(1/2).

    The graph metric is  g_ij = delta_ij + w_i w_j  with w_i = a_i x_i / f,
    so the coefficient is

        a^{ij}(x) = sqrt(1 + |w|^2) * (delta_ij + w_i w_j)^{-1},

    0-homogeneous and discontinuous at the origin.  Eigenvalues at x are
    sqrt(1+|w|^2) (multiplicity n-1) and 1/sqrt(1+|w|^2), and |w|^2 is a
    weighted mean of the a_i, so lam = (1+max a)^{-1/2}, Lam = (1+max a)^{1/2}.
    """
    a = np.asarray(a, dtype=float)
    n = a.size
    if n < 3:
        raise ValueError("the convex-graph family needs dimension >= 3")
    if np.any(a <= 0):
        raise ValueError("all slope parameters must be positive")
    amax = float(a.max())

    def w_of(pts: np.ndarray) -> np.ndarray:
        f = np.sqrt(np.einsum("i,mi->m", a, pts**2))
        if np.any(f == 0):
            raise SingularPointError(
                "convex-graph coefficient is not defined at x = 0 "
                "(discontinuity point; use vertex-avoiding quadrature)"
            )
        return a * pts / f[:, None]

    def metric(pts: np.ndarray) -> np.ndarray:
        w = w_of(pts)
        return np.eye(n) + w[:, :, None] * w[:, None, :]

    def matrix(pts: np.ndarray) -> np.ndarray:
        w = w_of(pts)
        wsq = np.einsum("mi,mi->m", w, w)
        # (I + w w^T)^{-1} = I - w w^T / (1 + |w|^2)
        inv = np.eye(n) - (w[:, :, None] * w[:, None, :]) / (1.0 + wsq)[:, None, None]
        return np.sqrt(1.0 + wsq)[:, None, None] * inv

    field_ = CoefficientField(
        dimension=n,
        matrix=matrix,
        lam=(1.0 + amax) ** -0.5,
        Lam=(1.0 + amax) ** 0.5,
        radius=radius,
        name="convex_graph:" + ",".join(f"{v:g}" for v in a),
    )
    object.__setattr__(field_, "graph_metric", metric)
    object.__setattr__(field_, "slopes", a)
    return field_


def sector_coefficient(theta: float, radius: float = 1.0) -> CoefficientField:
    """Planar coefficient whose solutions are harmonic on the cone of total
    angle theta, pulled back to the unit disc.

    With beta = theta/(2 pi) the field is  beta * P_rad + (1/beta) * P_ang,
    where P_rad projects on x/|x|; it is discontinuous at 0 for beta != 1.
    The disc with this coefficient carries the cone energy exactly: the cone
    ball of radius r is the Euclidean disc of radius r and the cone volume
    element is beta * dx.
    """
    if not 0 < theta <= 2 * math.pi:
        raise ValueError("total angle must lie in (0, 2*pi]")
    beta = theta / (2 * math.pi)

    def matrix(pts: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(pts, axis=1)
        if np.any(r == 0):
            raise SingularPointError("sector coefficient undefined at x = 0")
        xhat = pts / r[:, None]
        proj = xhat[:, :, None] * xhat[:, None, :]
        return beta * proj + (1.0 / beta) * (np.eye(2) - proj)

    return CoefficientField(
        dimension=2,
        matrix=matrix,
        lam=min(beta, 1.0 / beta),
        Lam=max(beta, 1.0 / beta),
        radius=radius,
        name=f"cone2d:{theta:g}",
    )


def perturbed_coefficient(
    base: CoefficientField,
    modulus: Callable[[np.ndarray], np.ndarray],
    name: str = "perturbed",
) -> CoefficientField:
    """A(x) = base(x) * (1 + delta(|x|)) for a scalar radial profile delta."""

    def matrix(pts: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(pts, axis=1)
        fac = 1.0 + np.asarray(modulus(r), dtype=float)
        return base(pts) * fac[:, None, None]

    dmax = float(np.max(np.abs(modulus(np.linspace(1e-6, base.radius, 257)))))
    dmin = float(np.min(modulus(np.linspace(1e-6, base.radius, 257))))
    return CoefficientField(
        dimension=base.dimension,
        matrix=matrix,
        lam=base.lam * min(1.0, 1.0 + dmin),
        Lam=base.Lam * (1.0 + dmax),
        radius=base.radius,
        name=f"{name}[{base.name}]",
    )


def random_elliptic_field(
    n: int, seed: int, radius: float = 1.0, spread: float = 0.8
) -> CoefficientField:
    """Smooth random uniformly elliptic field A(x) = exp(S(x)) with S a
    symmetric matrix of random low-order polynomials, |S| <= spread."""
    rng = np.random.default_rng(seed)
    const = rng.normal(size=(n, n))
    lin = rng.normal(size=(n, n, n)) / math.sqrt(n)
    const = (const + const.T) / 2
    lin = (lin + np.swapaxes(lin, 0, 1)) / 2

    def matrix(pts: np.ndarray) -> np.ndarray:
        s = const[None] + np.einsum("ijk,mk->mij", lin, pts)
        # clamp the symbol so eigenvalues stay in [exp(-spread), exp(spread)]
        norm = np.linalg.norm(s, axis=(1, 2), keepdims=True)
        s = s * (spread / np.maximum(norm, spread))
        w, v = np.linalg.eigh(s)
        return np.einsum("mik,mk,mjk->mij", v, np.exp(w), v)

    return CoefficientField(
        dimension=n,
        matrix=matrix,
        lam=math.exp(-spread),
        Lam=math.exp(spread),
        radius=radius,
        name=f"random:{seed}",
    )


# ---------------------------------------------------------------------------
# Dini moduli
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiniModulus:
    """Nondecreasing modulus omega(t) sampled on a logarithmic grid in (0, 1]."""

    t: np.ndarray
    omega: np.ndarray
    label: str = "omega"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        w = np.asarray(self.omega, dtype=float)
        if t.ndim != 1 or t.size < 2 or w.shape != t.shape:
            raise ValueError("modulus needs matching 1-d grids with >= 2 points")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("grid must be positive and strictly increasing")
        if np.any(w < 0):
            raise ValueError("modulus values must be nonnegative")
        if np.any(np.diff(w) < -1e-14 * max(1.0, w.max())):
            raise ValueError("modulus must be nondecreasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "omega", w)

    @classmethod
    def from_callable(
        cls, f: Callable[[np.ndarray], np.ndarray], grid: np.ndarray, label: str = "omega"
    ) -> "DiniModulus":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.maximum.accumulate(np.asarray(f(grid), dtype=float)), label)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        """Right-continuous step evaluation (conservative: next grid value)."""
        idx = np.clip(np.searchsorted(self.t, np.asarray(t, dtype=float)), 0, self.t.size - 1)
        return self.omega[idx]

    def scaled(self, c: float) -> "DiniModulus":
        return DiniModulus(self.t, c * self.omega, label=f"{c:g}*{self.label}")


def default_modulus_grid(decades: int = 2, per_decade: int = 40) -> np.ndarray:
    return np.geomspace(10.0 ** (-decades), 1.0, decades * per_decade + 1)


@dataclass(frozen=True)
class DiniIntegral:
    """Result of integrating omega(t)/t over (0, 1].

    ``value`` is the log-trapezoid estimate plus a geometric tail continuation
    below the grid; ``upper_sum`` is the one-sided Riemann sum over the grid
    intervals (an upper bound there since omega is nondecreasing).  When the
    per-decade contributions do not decay geometrically the modulus cannot be
    certified Dini and ``diverges`` is set; ``value`` is then +inf.
    """

    value: float
    upper_sum: float
    resolved: float
    tail: float
    tail_ratio: float
    diverges: bool

    def __float__(self) -> float:
        return self.value


def dini_integral(w: DiniModulus, tail_ratio_max: float = 0.9) -> DiniIntegral:
    """Integrate omega(t)/t over the grid with a geometric tail continuation.

    In s = log t the integrand is omega(e^s); the trapezoid rule gives the
    estimate and the right-endpoint sum gives the guaranteed upper sum.  The
    tail below the smallest grid point is continued geometrically from the
    lowest decades; a contraction ratio >= ``tail_ratio_max`` (constant or
    logarithmic-type moduli) flags divergence.
    """
    s = np.log(w.t)
    ds = np.diff(s)
    mids = (w.omega[1:] + w.omega[:-1]) / 2.0
    resolved = float(np.sum(mids * ds))
    upper = float(np.sum(w.omega[1:] * ds))

    # per-decade sums, top decade first
    decade_edges = np.arange(0.0, -s[0] + 1e-9, math.log(10.0))
    sums = []
    for k in range(len(decade_edges) - 1):
        lo, hi = -decade_edges[k + 1], -decade_edges[k]
        m = (s[:-1] >= lo - 1e-12) & (s[:-1] < hi - 1e-12)
        if m.any():
            sums.append(float(np.sum((mids * ds)[m])))
    sums = [v for v in sums if v > 0]

    if w.omega[-1] == 0:
        return DiniIntegral(0.0, 0.0, 0.0, 0.0, 0.0, False)
    if len(sums) >= 2:
        ratio = sums[-1] / sums[-2]
    else:
        ratio = 1.0 if w.omega[0] > 0 else 0.0
    if w.omega[0] == 0:
        tail = 0.0
        ratio = 0.0
    elif ratio >= tail_ratio_max:
        return DiniIntegral(math.inf, upper, resolved, math.inf, ratio, True)
    else:
        tail = sums[-1] * ratio / (1.0 - ratio)
    return DiniIntegral(resolved + tail, upper + tail, resolved, tail, ratio, False)


def estimate_modulus(
    A: CoefficientField,
    Abar: CoefficientField,
    radii: np.ndarray | None = None,
    samples_per_ball: int = 4096,
    seed: int = 0,
) -> DiniModulus:
    """Sampled sup of the spectral norm of A - Abar over centered balls.

    One low-discrepancy pattern in the unit ball is scaled to every radius, so
    the reported values are sup lower bounds and nondecreasing after the
    cumulative max.  The evaluators are never sampled at x = 0.
    """
    if A.dimension != Abar.dimension:
        raise ValueError("fields must share the dimension")
    if radii is None:
        radii = default_modulus_grid() * min(A.radius, Abar.radius)
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise ValueError("empty radius grid")
    pattern = ball_samples(A.dimension, 1.0, samples_per_ball, seed=seed)
    vals = np.empty_like(radii)
    for k, t in enumerate(radii):
        pts = pattern * t
        diff = A(pts) - Abar(pts)
        vals[k] = float(np.abs(np.linalg.eigvalsh(diff)).max())
    vals = np.maximum.accumulate(vals)
    return DiniModulus(radii, vals, label=f"omega[{A.name}|{Abar.name}]")


def ellipticity_constants(
    A: CoefficientField,
    radius: float | None = None,
    samples: int = 4096,
    seed: int = 0,
) -> tuple[float, float]:
    """(lam, Lam) measured over a ball sample: min eigenvalue and max
    operator norm.  Raises on degenerate ellipticity."""
    if samples < 1:
        raise ValueError("nonempty sample set required")
    pts = ball_samples(A.dimension, radius if radius is not None else A.radius, samples, seed=seed)
    eigs = np.linalg.eigvalsh(A(pts))
    lam = float(eigs.min())
    Lam = float(np.abs(eigs).max())
    if lam <= 0:
        raise DegenerateFieldError("degenerate ellipticity", point=pts[np.argmin(eigs.min(axis=1))])
    return lam, Lam
