"""Figure rendering for run reports (PNG files next to the CSV traces)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

DPI = 140

plt.rcParams.update(
    {
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "figure.figsize": (5.2, 3.6),
    }
)


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def spectrum_figure(path, eigenvalues, exponents):
    fig, ax = plt.subplots()
    idx = np.arange(len(eigenvalues))
    ax.plot(idx, eigenvalues, "o-", label="eigenvalue")
    ax.plot(idx, exponents, "s--", label="exponent")
    ax.set_xlabel("mode index")
    ax.legend()
    ax.set_title("cross-section spectrum")
    return _save(fig, path)


def cone_energy_figure(path, radii, averages, quad=None):
    fig, ax = plt.subplots()
    ax.loglog(radii, averages, "o-", label="closed form")
    if quad is not None:
        rq, vq = quad
        ax.loglog(rq, vq, "x", ms=8, label="polar quadrature")
    ax.set_xlabel("r")
    ax.set_ylabel("mean |grad u|^2 over B_r")
    ax.legend()
    return _save(fig, path)


def solve_figure(path, mesh, values):
    from .fem import SimplexMesh

    fig, ax = plt.subplots()
    if isinstance(mesh, SimplexMesh) and mesh.dimension == 2:
        t = ax.tripcolor(
            mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.cells, values, shading="gouraud"
        )
        fig.colorbar(t, ax=ax)
        ax.set_aspect("equal")
    elif mesh.dimension == 1:
        ax.plot(mesh.vertices[:, 0], values, "-")
    else:
        shape = getattr(mesh, "shape", None)
        v = values.reshape(shape)
        sl = v if mesh.dimension == 2 else v[:, :, shape[2] // 2]
        im = ax.imshow(
            sl.T,
            origin="lower",
            extent=[-mesh.halfwidth, mesh.halfwidth, -mesh.halfwidth, mesh.halfwidth],
        )
        fig.colorbar(im, ax=ax)
    ax.set_title("solution")
    return _save(fig, path)


def campanato_figure(path, report):
    levels = [rec["level"] for rec in report["levels"]]
    avgs = [rec["energy_average"] for rec in report["levels"]]
    c2 = [rec["measured_c2"] or 0.0 for rec in report["levels"]]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.4))
    ax1.semilogy(levels, avgs, "o-")
    ax1.set_xlabel("level")
    ax1.set_ylabel("weighted energy average")
    ax2.plot(levels, c2, "s-")
    ax2.set_xlabel("level")
    ax2.set_ylabel("measured defect constant")
    return _save(fig, path)


def heat_smooth_figure(path, t, sup_grad, l1):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.4))
    ax1.loglog(t, sup_grad, "o-")
    ax1.set_xlabel("t")
    ax1.set_ylabel("sup |grad P_t v| on B_{R/8}")
    ax2.loglog(t, l1, "s-")
    ax2.set_xlabel("t")
    ax2.set_ylabel("||P_t v - v||_1")
    return _save(fig, path)


def kernel_figure(path, n=2):
    import math

    from .heat import HeatKernel, kernel_bounds_check

    rep = kernel_bounds_check(n)
    kern = HeatKernel(n)
    s = np.geomspace(1e-2, 40, 200)
    ball = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
    p = kern(1.0, np.sqrt(s))
    fig, ax = plt.subplots()
    ax.semilogy(s, p, label="kernel")
    ax.semilogy(s, np.exp(-s / 3) / (rep.c1_value * ball), "--", label="lower envelope")
    ax.semilogy(s, rep.c1_value / ball * np.exp(-s / 5), "--", label="upper envelope")
    ax.set_xlabel("d^2 / t")
    ax.legend()
    return _save(fig, path)


def cutoff_figure(path, profiles):
    fig, ax = plt.subplots()
    for R, (r, eta) in profiles.items():
        ax.plot(r, eta, label=f"R = {R:g}")
    ax.set_xlabel("|x|")
    ax.set_ylabel("eta")
    ax.legend()
    return _save(fig, path)


def certificate_figure(path, ratios, tol):
    fig, ax = plt.subplots()
    ax.plot(np.arange(len(ratios)), ratios, "o", ms=4)
    ax.axhline(tol, color="r", ls="--", lw=1)
    ax.axhline(-tol, color="r", ls="--", lw=1)
    ax.set_xlabel("bump index")
    ax.set_ylabel("normalized pairing")
    return _save(fig, path)


def grid_figure(path, grid, title=""):
    fig, ax = plt.subplots()
    im = ax.imshow(
        grid.values.T,
        origin="lower",
        extent=[
            grid.center[0] - grid.halfwidth,
            grid.center[0] + grid.halfwidth,
            grid.center[1] - grid.halfwidth,
            grid.center[1] + grid.halfwidth,
        ],
    )
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    return _save(fig, path)
