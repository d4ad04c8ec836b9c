"""Acceptance suite: every criterion runs at its pinned tolerance and prints
one pass/fail line (run with ``pytest tests/test_acceptance.py -s``).

The dyadic-iteration block (criteria 5 and 6) shares one 96^3 workspace; its
wall-clock budget covers the workspace, the frozen control, the Dini run,
and the non-Dini negative control.
"""

import math
import time

import numpy as np
import pytest

from conelab import cones
from conelab.coefficients import (
    convex_graph_coefficient,
    identity_coefficient,
    perturbed_coefficient,
    random_elliptic_field,
    sector_coefficient,
    coefficient_from_metric,
    metric_from_coefficient,
)
from conelab.fem import BoxGrid, box_grid, disc_mesh, solve_dirichlet, solve_poisson_dirichlet
from conelab.heat import (
    GridFunction,
    build_cutoff,
    heat_apply,
    kernel_bounds_check,
    smoothing_pipeline,
    subharmonic_monotonicity_check,
)
from conelab.weak import bump, certify_very_weak, distributional_laplacian, grid_evaluator


def _line(num, ok, name, detail):
    print(f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"criterion {num} failed: {detail}"


# ---------------------------------------------------------------------------
# 1. coefficient <-> metric round trip
# ---------------------------------------------------------------------------


def test_criterion_01_round_trip():
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for n in (3, 4, 5):
        pts_seed = 100 + n
        from conelab.coefficients import ball_samples

        pts = ball_samples(n, 0.9, 32, seed=pts_seed)
        for seed in range(34 if n == 3 else 33):
            A = random_elliptic_field(n, seed=seed)
            back = coefficient_from_metric(metric_from_coefficient(A))
            a0, a1 = A(pts), back(pts)
            worst = max(worst, float(np.abs(a1 - a0).max() / np.abs(a0).max()))
            count += 1
    dt = time.perf_counter() - t0
    _line(
        1,
        worst <= 1e-12 and dt < 5.0,
        "coefficient<->metric round trip",
        f"{count} fields, max rel err {worst:.3e} (tol 1e-12), {dt:.2f}s (< 5s)",
    )


# ---------------------------------------------------------------------------
# 2. exponent relation
# ---------------------------------------------------------------------------


def test_criterion_02_exponent_relation():
    t0 = time.perf_counter()
    worst_res = 0.0
    alpha_ok = True
    for theta in np.linspace(0.2, 2 * math.pi, 12):
        sp = cones.circle_spectrum(theta, kmax=10)
        worst_res = max(worst_res, float(sp.exponent_residuals().max()))
        if sp.eigenvalues[1] >= sp.ambient_dimension - 1:
            alpha_ok &= bool(sp.exponents[1:].min() >= 1.0 - 1e-12)
    for s in np.linspace(0.15, 1.0, 8):
        sp = cones.sphere_spectrum(s, lmax=4)
        worst_res = max(worst_res, float(sp.exponent_residuals().max()))
        alpha_ok &= bool(sp.exponents[1:].min() >= 1.0 - 1e-12)
    dt = time.perf_counter() - t0
    _line(
        2,
        worst_res <= 1e-12 and alpha_ok and dt < 1.0,
        "exponent relation",
        f"max residual {worst_res:.3e} (tol 1e-12), all exponents >= 1: {alpha_ok}, {dt:.2f}s (< 1s)",
    )


# ---------------------------------------------------------------------------
# 3. energy monotonicity (closed form + FEM cross-check)
# ---------------------------------------------------------------------------


def test_criterion_03_energy_monotonicity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    radii = np.geomspace(0.02, 1.0, 18)
    all_ok = True
    specs = [cones.circle_spectrum(th, kmax=6) for th in (math.pi, 1.5 * math.pi, 2 * math.pi)]
    specs += [cones.sphere_spectrum(s, lmax=3) for s in (0.5, 1 / math.sqrt(2), 1.0)]
    for sp in specs:
        for _ in range(50):
            c = rng.normal(size=min(10, sp.size)) / (1 + np.arange(min(10, sp.size))) ** 2
            rep = cones.check_monotonicity(cones.ConeHarmonic(sp, c), radii, tol=1e-10)
            all_ok &= rep.ok

    # FEM cross-check on the circle cones at h = 1/64
    worst_rel = 0.0
    for theta in (math.pi, 1.5 * math.pi, 2 * math.pi):
        sp = cones.circle_spectrum(theta, kmax=3)
        c = np.zeros(7)
        c[1:] = rng.normal(size=6) / (1 + np.arange(6) // 2) ** 2
        h = cones.ConeHarmonic(sp, c)
        mesh = disc_mesh(1.0, 64, cache=False)
        A = sector_coefficient(theta)

        def bdata(p, h=h, theta=theta):
            zeta = np.arctan2(p[:, 1], p[:, 0]) % (2 * math.pi)
            return h.boundary_trace(zeta * theta / (2 * math.pi))

        u = solve_dirichlet(A, mesh, bdata)
        beta = theta / (2 * math.pi)
        gq = mesh.gradient_at_quadrature(u.values)
        aq = A(mesh.qpoints.reshape(-1, 2)).reshape(*mesh.qpoints.shape[:2], 2, 2)
        dens = np.einsum("cqn,cqnm,cqm->cq", gq, aq, gq)
        rr = np.linalg.norm(mesh.qpoints, axis=-1)
        for r in (0.4, 0.5, 0.6, 0.7):
            fem = float(np.sum(mesh.qweights * dens * (rr <= r))) / (beta * math.pi * r * r)
            worst_rel = max(worst_rel, abs(fem / cones.energy_average(h, r) - 1))
    dt = time.perf_counter() - t0
    _line(
        3,
        all_ok and worst_rel <= 0.02 and dt < 120,
        "energy monotonicity",
        f"300 closed-form harmonics monotone (tol 1e-10): {all_ok}; "
        f"FEM cross-check worst rel {worst_rel:.4f} (tol 0.02), {dt:.1f}s (< 2min)",
    )


# ---------------------------------------------------------------------------
# 4. singular-point gradient-density decay
# ---------------------------------------------------------------------------


def test_criterion_04_gradient_density_decay():
    t0 = time.perf_counter()
    theta = math.pi
    sp = cones.circle_spectrum(theta, kmax=2)
    h = cones.ConeHarmonic(sp, np.array([0.0, 1.0]))  # u = r^2 phi_1, alpha_1 = 2
    mesh = disc_mesh(1.0, 128, cache=False)
    A = sector_coefficient(theta)

    def bdata(p):
        zeta = np.arctan2(p[:, 1], p[:, 0]) % (2 * math.pi)
        return h.boundary_trace(zeta * theta / (2 * math.pi))

    u = solve_dirichlet(A, mesh, bdata)
    beta = theta / (2 * math.pi)
    gq = mesh.gradient_at_quadrature(u.values)
    aq = A(mesh.qpoints.reshape(-1, 2)).reshape(*mesh.qpoints.shape[:2], 2, 2)
    dens = np.einsum("cqn,cqnm,cqm->cq", gq, aq, gq)
    rr = np.linalg.norm(mesh.qpoints, axis=-1)
    radii = np.geomspace(0.15, 0.6, 7)
    vals = [
        float(np.sum(mesh.qweights * dens * (rr <= r))) / (beta * math.pi * r * r) for r in radii
    ]
    slope = float(np.polyfit(np.log(radii), np.log(vals), 1)[0])
    dt = time.perf_counter() - t0
    _line(
        4,
        abs(slope - 2.0) <= 0.1 and dt < 60,
        "singular-point gradient-density decay",
        f"measured log-log slope {slope:.4f} (target 2 +- 5%), {dt:.1f}s (< 1min)",
    )


# ---------------------------------------------------------------------------
# 5 & 6. frozen-coefficient iteration at 96^3
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def campanato_runs():
    from conelab.campanato import prepare_workspace, run_iteration

    t0 = time.perf_counter()
    grid = BoxGrid(0.75, 96, 3)
    model = convex_graph_coefficient([1.0, 1.0, 1.0], radius=0.75)
    ws = prepare_workspace(model, grid)

    def bc(p):
        return p[:, 0] + 0.4 * p[:, 1] - 0.3 * p[:, 2] + 0.25 * p[:, 0] * p[:, 1]

    frozen = run_iteration(model, bc, ws, num_levels=6)
    dini = run_iteration(
        perturbed_coefficient(model, lambda t: 0.2 * np.sqrt(t), name="dini"),
        bc,
        ws,
        num_levels=6,
    )
    nondini = run_iteration(
        perturbed_coefficient(
            model, lambda t: 0.5 / np.log(math.e / np.maximum(t, 1e-300)), name="nondini"
        ),
        bc,
        ws,
        num_levels=6,
    )
    return {
        "ws": ws,
        "frozen": frozen,
        "dini": dini,
        "nondini": nondini,
        "wall": time.perf_counter() - t0,
    }


def test_criterion_05_per_level_bound(campanato_runs):
    from conelab.campanato import verify_level_bound

    dini = campanato_runs["dini"]
    frozen = campanato_runs["frozen"]
    levels_ok = len(dini.levels) == 6 and not dini.resolution_truncated
    bound_ok = True
    worst_c2 = 0.0
    for rec in dini.levels:
        ok, c2 = verify_level_bound(dini, rec.level)
        bound_ok &= ok
        worst_c2 = max(worst_c2, c2)
    frozen_worst = max(
        rec.comparison_energy / max(rec.solution_energy, 1e-300) for rec in frozen.levels
    )
    frozen_ok = frozen_worst <= 10 * 1e-10
    wall = campanato_runs["wall"]
    _line(
        5,
        levels_ok and bound_ok and frozen_ok and wall < 600,
        "per-level frozen-coefficient bound (96^3)",
        f"6 levels, worst measured C2 {worst_c2:.4f} within budget: {bound_ok}; "
        f"frozen defect/energy {frozen_worst:.2e} (tol 1e-9); block wall {wall:.0f}s (< 10min)",
    )


def test_criterion_06_decay_bound(campanato_runs):
    from conelab.campanato import decay_bound

    db = decay_bound(campanato_runs["dini"])
    dbn = decay_bound(campanato_runs["nondini"])
    ok = (
        db.holds
        and not db.unbounded_accumulation
        and dbn.unbounded_accumulation
        and dbn.dini_diverges
    )
    _line(
        6,
        ok,
        "final decay bound + non-Dini control",
        f"limsup ratio {db.limsup_ratio:.4f} <= bound {db.bound:.4f}; Dini saturation "
        f"{db.saturation:.4f}; non-Dini diverges={dbn.dini_diverges}, "
        f"saturation {dbn.saturation:.3f} (runtime included in #5)",
    )


# ---------------------------------------------------------------------------
# 7. heat-kernel envelope and mass
# ---------------------------------------------------------------------------


def test_criterion_07_kernel_envelope():
    t0 = time.perf_counter()
    rep = kernel_bounds_check(2, t_grid=(1e-3, 1e-2, 1e-1), num_pairs=1000)
    mass_err = max(rep.mass_errors.values())
    dt = time.perf_counter() - t0
    _line(
        7,
        rep.envelope_ok and mass_err <= 1e-8 and dt < 10,
        "heat-kernel envelope and mass",
        f"envelope ordered at {rep.samples} pairs, C1={rep.c1_value:.3f}; "
        f"max mass error {mass_err:.2e} (tol 1e-8), {dt:.2f}s (< 10s)",
    )


# ---------------------------------------------------------------------------
# 8. cutoff scale invariance
# ---------------------------------------------------------------------------


def test_criterion_08_cutoff_scale_invariance():
    t0 = time.perf_counter()
    consts = []
    ok = True
    for R in (1.0, 2.0, 4.0):
        eta, cr = build_cutoff(np.zeros(2), R, halfwidth=9.0, points=512)
        consts.append(cr.scale_invariant_constant)
        ok &= cr.plateau_ok and cr.support_ok and cr.drift <= 0.25
    variation = (max(consts) - min(consts)) / min(consts)
    dt = time.perf_counter() - t0
    _line(
        8,
        ok and variation <= 0.15 and dt < 30,
        "cutoff scale invariance",
        f"R sup|grad| + R^2 sup|lap| = {consts[0]:.3f}/{consts[1]:.3f}/{consts[2]:.3f}, "
        f"variation {variation:.4f} (tol 0.15), {dt:.1f}s (< 30s)",
    )


# ---------------------------------------------------------------------------
# 9. smoothing pipeline
# ---------------------------------------------------------------------------


def test_criterion_09_smoothing_pipeline():
    t0 = time.perf_counter()
    R = 4.0

    def harmonic(p):
        chi = np.clip((R - np.linalg.norm(p, axis=1)) / (R / 2), 0, 1)
        return (p[:, 0] ** 2 - p[:, 1] ** 2) * chi

    v = GridFunction.from_callable(harmonic, 5.5, 768, n=2)
    cert = certify_very_weak(v, np.zeros(2), R / 2, tol=1e-3, family_size=32)
    t_grid = np.geomspace(1e-1, 1e-3, 8)
    rep = smoothing_pipeline(v, t_grid, np.zeros(2), R, certificate=cert)

    def jumpf(p):
        return (p[:, 0] > 0).astype(float) * (np.linalg.norm(p, axis=1) <= R)

    vj = GridFunction.from_callable(jumpf, 5.5, 768, n=2)
    repj = smoothing_pipeline(vj, t_grid, np.zeros(2), R, allow_uncertified=True)
    dt = time.perf_counter() - t0
    ok = (
        cert.holds
        and rep.gradient_variation <= 0.10
        and rep.l1_rate >= 0.5
        and (not repj.lipschitz)
        and abs(repj.gradient_slope + 0.5) <= 0.15
    )
    _line(
        9,
        ok and dt < 120,
        "smoothing pipeline",
        f"certified input: sup-grad variation {rep.gradient_variation:.4f} (tol 0.10), "
        f"L1 rate {rep.l1_rate:.2f} (>= 0.5); jump control slope {repj.gradient_slope:.3f} "
        f"(~ -1/2 blow-up), {dt:.1f}s (< 2min)",
    )


# ---------------------------------------------------------------------------
# 10. heat-flow monotonicity mechanism
# ---------------------------------------------------------------------------


def test_criterion_10_heat_flow_monotonicity():
    t0 = time.perf_counter()
    ts = [1e-3, 3e-3, 1e-2]
    quad = GridFunction.from_callable(lambda p: (p**2).sum(1), 2.0, 257, n=2)
    win = quad.window_mask(1.0)
    drift_err = max(
        float(np.abs(heat_apply(quad, t).values - (quad.values + 4 * t))[win].max()) for t in ts
    )
    mono = subharmonic_monotonicity_check(quad, ts, window_margin=1.0)
    lin = GridFunction.from_callable(lambda p: p[:, 0], 2.0, 257, n=2)
    flat_err = max(
        float(np.abs(heat_apply(lin, t).values - lin.values)[win].max()) for t in ts
    )
    blob = GridFunction.from_callable(
        lambda p: np.maximum(1.0 - (p**2).sum(1), 0.0) ** 3, 2.0, 257, n=2
    )
    mass = subharmonic_monotonicity_check(blob, ts, window_margin=0.5)
    dt = time.perf_counter() - t0
    ok = (
        drift_err <= 1e-6
        and mono.monotone
        and flat_err <= 1e-8
        and mass.mass_checked
        and mass.mass_drift <= 1e-6
    )
    _line(
        10,
        ok and dt < 30,
        "heat-flow monotonicity mechanism",
        f"P_t|x|^2 drift err {drift_err:.2e} (tol 1e-6), harmonic flat {flat_err:.2e} "
        f"(tol 1e-8), mass drift {mass.mass_drift:.2e} (tol 1e-6), {dt:.1f}s (< 30s)",
    )


# ---------------------------------------------------------------------------
# 11. very-weak certification
# ---------------------------------------------------------------------------


def test_criterion_11_certification():
    t0 = time.perf_counter()
    lin = certify_very_weak(lambda p: p[:, 0], [0, 0], 1.0, tol=1e-6, family_size=64)
    cub = certify_very_weak(
        lambda p: p[:, 0] ** 3 - 3 * p[:, 0] * p[:, 1] ** 2, [0, 0], 1.0, tol=1e-6, family_size=64
    )
    usq = lambda p: (p**2).sum(1)
    sub = certify_very_weak(usq, [0, 0], 1.0, sign="sub", tol=1e-8, family_size=64)
    harm = certify_very_weak(usq, [0, 0], 1.0, sign="harmonic", tol=1e-6, family_size=64)

    phi = bump([0.05, -0.1], 0.5, 2)
    u1 = lambda p: p[:, 0]
    p1 = distributional_laplacian(u1, phi)
    p2 = distributional_laplacian(usq, phi)
    combo = distributional_laplacian(lambda p: 1.5 * u1(p) - 2.5 * usq(p), phi)
    bilin_err = abs(combo - (1.5 * p1 - 2.5 * p2))
    outside = lambda p: ((p - phi.center) ** 2).sum(1) > phi.radius**2 + 1e-12
    mod = lambda p: usq(p) + 7.0 * outside(p)
    locality_err = abs(distributional_laplacian(mod, phi) - p2)
    dt = time.perf_counter() - t0
    ok = (
        lin.holds
        and cub.holds
        and sub.holds
        and (not harm.holds)
        and bilin_err <= 1e-12
        and locality_err <= 1e-12
    )
    _line(
        11,
        ok and dt < 60,
        "very-weak certification",
        f"harmonic certified at 1e-6; |x|^2 sub but not harmonic (witness ratio "
        f"{harm.worst_ratio:.3e} at rho={harm.worst_radius:.3f}); bilinearity "
        f"{bilin_err:.1e}, locality {locality_err:.1e} (tol 1e-12), {dt:.1f}s (< 1min)",
    )


# ---------------------------------------------------------------------------
# 12. Poisson decomposition
# ---------------------------------------------------------------------------


def test_criterion_12_poisson_decomposition():
    t0 = time.perf_counter()
    grid = box_grid(1.0, 128, 2)  # h = 1/64
    f = lambda p: 2 * (p[:, 0] ** 2 - 1) + 2 * (p[:, 1] ** 2 - 1)
    w = solve_poisson_dirichlet(identity_coefficient(2), f, grid, scheme="fd")
    w_ev = grid_evaluator(w)
    u = lambda p: (p[:, 0] ** 3 - 3 * p[:, 0] * p[:, 1] ** 2) + (p[:, 0] ** 2 - 1) * (
        p[:, 1] ** 2 - 1
    )
    cert = certify_very_weak(
        lambda p: u(p) - w_ev(p), [0.0, 0.0], 0.9, tol=1e-5, family_size=48
    )
    dt = time.perf_counter() - t0
    _line(
        12,
        cert.holds and dt < 60,
        "Poisson decomposition",
        f"u - w harmonic certificate at tol 1e-5 (worst {cert.worst_ratio:.2e}), h = 1/64, "
        f"{dt:.1f}s (< 1min)",
    )
