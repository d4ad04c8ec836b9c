"""Configuration-driven experiment pipelines with reproducible reports.

``run`` dispatches a validated config to its module pipeline, writes a JSON
report plus CSV traces and a rendered figure into the output directory, and
returns the report with an exit status: 0 all verdicts pass, 1 an assertion
or refusal failed, 2 configuration error.  ``suite`` executes a manifest of
configs (optionally with a worker pool) and aggregates the verdicts; member
failures are recorded, not fatal to siblings.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, cones, plots
from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_boundary,
    parse_coefficient,
    parse_cone,
    parse_geometry,
    parse_range,
    validate,
)
from .fem import (
    BoxGrid,
    ResolutionError,
    SimplexMesh,
    SolverError,
    box_grid,
    gradient_energy_average,
    solve_dirichlet,
    solve_poisson_dirichlet,
)
from .heat import (
    CertificationError,
    GridFunction,
    build_cutoff,
    default_t_grid,
    kernel_bounds_check,
    smoothing_pipeline,
)
from .reporting import (
    SCHEMA_VERSION,
    read_grid_csv,
    strip_volatile,
    timestamp_now,
    write_csv,
    write_grid_csv,
    write_json_report,
)

__all__ = ["run", "suite", "RunOutcome"]


class RunOutcome:
    def __init__(self, report: dict, exit_code: int):
        self.report = report
        self.exit_code = exit_code


def _verdict(value: float, tolerance: float, passed: bool | None = None) -> dict:
    ok = bool(value <= tolerance) if passed is None else bool(passed)
    return {
        "pass": ok,
        "value": float(value),
        "tolerance": float(tolerance),
        "margin": float(tolerance - value),
    }


def _skeleton(cfg: ExperimentConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "conelab", "version": __version__},
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "results": {},
        "verdicts": {},
        "outputs": {"csv": [], "figures": []},
        "volatile": {"timestamp": timestamp_now(), "timings": {}},
    }


def _run_spectrum(cfg, out):
    spec = parse_cone(cfg.params["cone"], modes=cfg.params["modes"])
    rep = _skeleton(cfg)
    res = spec.exponent_residuals()
    alpha = spec.exponents
    rows = [
        (i, float(spec.eigenvalues[i]), float(alpha[i]), float(res[i]))
        for i in range(spec.size)
    ]
    csv = os.path.join(out, "spectrum.csv")
    write_csv(csv, ["mode [1]", "eigenvalue [1]", "exponent [1]", "residual [1]"], rows)
    rep["outputs"]["csv"].append(csv)
    rep["results"] = {
        "label": spec.label,
        "ambient_dimension": spec.ambient_dimension,
        "total_measure": spec.total_measure,
        "lambda_1": float(spec.eigenvalues[1]) if spec.size > 1 else None,
    }
    rep["verdicts"]["exponent_residual"] = _verdict(float(res.max()), 1e-12)
    rep["verdicts"]["gram_residual"] = _verdict(spec.gram_residual(), 1e-8)
    if spec.size > 1 and spec.eigenvalues[1] >= spec.ambient_dimension - 1:
        rep["verdicts"]["exponents_at_least_one"] = _verdict(
            float(1.0 - alpha[1:].min()), 0.0, passed=bool(alpha[1:].min() >= 1.0 - 1e-12)
        )
    rep["outputs"]["figures"].append(
        plots.spectrum_figure(os.path.join(out, "spectrum.png"), spec.eigenvalues, alpha)
    )
    return rep


def _run_cone_energy(cfg, out):
    spec = parse_cone(cfg.params["cone"], modes=16)
    raw = cfg.params["coefficients"]
    if raw.startswith("csv:"):
        c = np.loadtxt(raw[4:], delimiter=",", skiprows=1, ndmin=1)
    else:
        c = np.array([float(v) for v in raw.split(",") if v.strip()])
    h = cones.ConeHarmonic(spec, c)
    radii = parse_range(cfg.params["radii"])
    rep = _skeleton(cfg)
    mono = cones.check_monotonicity(h, radii)
    rows = []
    quad_pts = []
    for i, r in enumerate(radii):
        row = [float(r), float(mono.averages[i])]
        if cfg.params["quadrature-check"] and i in (0, len(radii) // 2, len(radii) - 1):
            q = cones.energy_average_quadrature(h, float(r))
            row.append(q)
            quad_pts.append((float(r), q))
        else:
            row.append(float("nan"))
        rows.append(tuple(row))
    csv = os.path.join(out, "energy_sweep.csv")
    write_csv(csv, ["r [length]", "average [1/length^2]", "quadrature [1/length^2]"], rows)
    rep["outputs"]["csv"].append(csv)
    rep["results"] = {
        "monotone": mono.ok,
        "violations": mono.violations,
        "bad_modes": mono.bad_modes,
        "tail_l2": h.tail_l2,
    }
    rep["verdicts"]["monotone"] = _verdict(0.0 if mono.ok else 1.0, 0.5, passed=mono.ok)
    if quad_pts:
        rel = max(
            abs(q / cones.energy_average(h, r) - 1.0) if cones.energy_average(h, r) else 0.0
            for r, q in quad_pts
        )
        rep["verdicts"]["quadrature_agreement"] = _verdict(rel, 1e-4)
    rep["outputs"]["figures"].append(
        plots.cone_energy_figure(
            os.path.join(out, "energy_sweep.png"),
            radii,
            mono.averages,
            quad=(np.array([p[0] for p in quad_pts]), np.array([p[1] for p in quad_pts]))
            if quad_pts
            else None,
        )
    )
    return rep


def _run_solve(cfg, out):
    mesh = parse_geometry(cfg.params["geometry"])
    A = parse_coefficient(cfg.params["coeff"])
    if A.dimension != mesh.dimension:
        raise ConfigError(
            f"solve: coefficient dimension {A.dimension} != geometry dimension {mesh.dimension}"
        )
    tol = cfg.params["tol"]
    rep = _skeleton(cfg)
    if cfg.params["source"]:
        kind, _, val = cfg.params["source"].partition(":")
        if kind != "const":
            raise ConfigError(f"solve: unknown source '{kind}'")
        cval = float(val)
        u = solve_poisson_dirichlet(A, lambda p: np.full(len(p), cval), mesh, tol=tol)
    else:
        g = parse_boundary(cfg.params["boundary"], mesh.dimension)
        u = solve_dirichlet(A, mesh, g, tol=tol)
    coords = mesh.vertices if isinstance(mesh, SimplexMesh) else mesh.node_coords()
    csv = os.path.join(out, "solution.csv")
    write_csv(
        csv,
        [f"x{d} [length]" for d in range(mesh.dimension)] + ["value [1]"],
        (tuple(map(float, c)) + (float(v),) for c, v in zip(coords, u.values)),
    )
    rep["outputs"]["csv"].append(csv)
    rep["results"] = {"solver": u.solve_info, "nodes": int(len(u.values))}
    rep["verdicts"]["solver_residual"] = _verdict(u.solve_info["residual"], tol)
    radii = parse_range(cfg.params["radii"])
    if len(radii):
        sweep = [(float(r), gradient_energy_average(u, float(r))) for r in radii]
        c2 = os.path.join(out, "energy_sweep.csv")
        write_csv(c2, ["r [length]", "average [1/length^2]"], sweep)
        rep["outputs"]["csv"].append(c2)
    rep["outputs"]["figures"].append(
        plots.solve_figure(os.path.join(out, "solution.png"), mesh, u.values)
    )
    return rep


def _run_campanato(cfg, out):
    from .campanato import (
        C2_BUDGET_BASE,
        decay_bound,
        prepare_workspace,
        run_iteration,
        verify_level_bound,
    )

    p = cfg.params
    halfwidth = p["halfwidth"]
    cells = int(round(2 * halfwidth / p["h"]))
    cells += cells % 2  # center must be a node
    grid = box_grid(halfwidth, cells, 3)
    Abar = parse_coefficient(p["frozen"], radius=halfwidth)
    frozen_run = p["coeff"] == p["frozen"]
    A = Abar if frozen_run else parse_coefficient(p["coeff"], radius=halfwidth)
    rep = _skeleton(cfg)
    t0 = time.perf_counter()
    ws = prepare_workspace(Abar, grid, seed=cfg.seed)
    rep["volatile"]["timings"]["workspace_s"] = time.perf_counter() - t0
    bc = parse_boundary(p["boundary"], 3)
    t0 = time.perf_counter()
    it = run_iteration(
        A,
        bc,
        ws,
        rho=p["rho"] or None,
        num_levels=p["levels"],
        tol=p["tol"],
        seed=cfg.seed,
    )
    rep["volatile"]["timings"]["iteration_s"] = time.perf_counter() - t0
    rep["results"] = it.to_dict()
    base_avg = it.levels[0].energy_average if it.levels else 1.0
    rows = [
        (
            rec.level,
            rec.radius,
            rec.omega_level,
            rec.comparison_energy,
            rec.solution_energy,
            rec.energy_average,
            rec.energy_average / base_avg,
            rec.volume,
            -1.0 if rec.measured_c2 is None else rec.measured_c2,
        )
        for rec in it.levels
    ]
    csv = os.path.join(out, "levels.csv")
    write_csv(
        csv,
        [
            "level [1]",
            "radius [length]",
            "omega [1]",
            "defect_energy [1]",
            "solution_energy [1]",
            "energy_average [1/length^2]",
            "ratio_to_first [1]",
            "volume [length^n]",
            "measured_c2 [1]",
        ],
        rows,
    )
    rep["outputs"]["csv"].append(csv)
    mod_csv = os.path.join(out, "modulus.csv")
    write_csv(
        mod_csv,
        ["t [length]", "omega [1]"],
        zip(map(float, it.modulus_t), map(float, it.modulus_w)),
    )
    rep["outputs"]["csv"].append(mod_csv)
    if frozen_run:
        worst = max(
            (rec.comparison_energy / max(rec.solution_energy, 1e-300) for rec in it.levels),
            default=0.0,
        )
        rep["verdicts"]["frozen_defect"] = _verdict(worst, 10 * p["tol"])
    else:
        oks, c2s = [], []
        for rec in it.levels:
            ok, c2 = verify_level_bound(it, rec.level)
            oks.append(ok)
            c2s.append(c2)
        rep["verdicts"]["level_bounds"] = _verdict(
            max(c2s, default=0.0), C2_BUDGET_BASE / it.lam_bar, passed=all(oks)
        )
        if len(it.levels) >= 4:
            db = decay_bound(it)
            rep["results"]["decay"] = {
                "limsup_ratio": db.limsup_ratio,
                "bound": db.bound,
                "c3_measured": db.c3_measured,
                "dini_value": db.dini_value,
                "dini_diverges": db.dini_diverges,
                "saturation": db.saturation,
                "unbounded_accumulation": db.unbounded_accumulation,
            }
            rep["verdicts"]["decay_bound"] = _verdict(
                db.limsup_ratio, db.bound, passed=db.holds
            )
    rep["verdicts"]["levels_completed"] = _verdict(
        float(p["levels"] - len(it.levels)), 0.0, passed=not it.resolution_truncated
    )
    rep["outputs"]["figures"].append(
        plots.campanato_figure(os.path.join(out, "levels.png"), rep["results"])
    )
    return rep


def _heat_data(name: str, R: float, halfwidth: float, points: int):
    if name.startswith("csv:"):
        return read_grid_csv(name[4:]), None
    if name == "harmonic":
        def f(p):
            chi = np.clip((R - np.linalg.norm(p, axis=1)) / (R / 2), 0, 1)
            return (p[:, 0] ** 2 - p[:, 1] ** 2) * chi

        truth = None
        return GridFunction.from_callable(f, halfwidth, points, n=2), truth
    if name == "jump":
        def f(p):
            return (p[:, 0] > 0).astype(float) * (np.linalg.norm(p, axis=1) <= R)

        return GridFunction.from_callable(f, halfwidth, points, n=2), None
    if name == "constant":
        def f(p):
            return (np.linalg.norm(p, axis=1) <= R).astype(float)

        return GridFunction.from_callable(f, halfwidth, points, n=2), None
    raise ConfigError(f"unknown heat data family '{name}'")


def _run_heat_smooth(cfg, out):
    from .weak import certify_very_weak

    p = cfg.params
    R = p["radius"]
    v, _ = _heat_data(p["data"], R, p["halfwidth"], p["points"])
    t_grid = parse_range(p["t"])
    rep = _skeleton(cfg)
    cert = None
    if not p["allow-uncertified"]:
        cert = certify_very_weak(
            v, np.zeros(2), R / 2, tol=p["cert-tol"], family_size=32, seed=cfg.seed
        )
        rep["results"]["certificate"] = {
            "holds": cert.holds,
            "worst_ratio": cert.worst_ratio,
        }
        if not cert.holds:
            raise CertificationError(
                f"data '{p['data']}' failed harmonic certification "
                f"(worst {cert.worst_ratio:.3e})"
            )
    sm = smoothing_pipeline(
        v, t_grid, np.zeros(2), R, certificate=cert, allow_uncertified=p["allow-uncertified"]
    )
    rep["results"].update(
        {
            "t": sm.t_values,
            "sup_gradients": sm.sup_gradients,
            "l1_distances": sm.l1_distances,
            "gradient_variation": sm.gradient_variation,
            "l1_rate": sm.l1_rate,
            "gradient_slope": sm.gradient_slope,
            "lipschitz": sm.lipschitz,
            "lipschitz_constant": sm.lipschitz_constant,
        }
    )
    expect_lip = p["data"] != "jump"
    rep["verdicts"]["conclusion"] = _verdict(
        0.0 if sm.lipschitz == expect_lip else 1.0, 0.5, passed=sm.lipschitz == expect_lip
    )
    csv = os.path.join(out, "smoothing.csv")
    write_csv(
        csv,
        ["t [length^2]", "sup_grad [1/length]", "l1_distance [1]"],
        zip(sm.t_values, sm.sup_gradients, sm.l1_distances),
    )
    rep["outputs"]["csv"].append(csv)
    rep["outputs"]["figures"].append(
        plots.heat_smooth_figure(
            os.path.join(out, "smoothing.png"), sm.t_values, sm.sup_gradients, sm.l1_distances
        )
    )
    return rep


def _run_kernel_check(cfg, out):
    p = cfg.params
    t_grid = parse_range(p["t"])
    kb = kernel_bounds_check(p["dimension"], t_grid=t_grid, num_pairs=p["pairs"], seed=cfg.seed)
    rep = _skeleton(cfg)
    rep["results"] = {
        "c1": kb.c1_value,
        "c1_gradient": kb.c1_gradient,
        "c1_time": kb.c1_time,
        "mass_errors": kb.mass_errors,
        "samples": kb.samples,
    }
    rep["verdicts"]["envelope"] = _verdict(0.0 if kb.envelope_ok else 1.0, 0.5, passed=kb.envelope_ok)
    rep["verdicts"]["mass"] = _verdict(max(kb.mass_errors.values()), 1e-8)
    csv = os.path.join(out, "mass.csv")
    write_csv(csv, ["t [length^2]", "mass_error [1]"], sorted(kb.mass_errors.items()))
    rep["outputs"]["csv"].append(csv)
    rep["outputs"]["figures"].append(
        plots.kernel_figure(os.path.join(out, "kernel.png"), p["dimension"])
    )
    return rep


def _run_cutoff(cfg, out):
    p = cfg.params
    rep = _skeleton(cfg)
    rows, consts, profiles = [], [], {}
    for R in p["radii"]:
        eta, cr = build_cutoff(
            np.zeros(2), float(R), halfwidth=p["halfwidth"], points=p["points"]
        )
        consts.append(cr.scale_invariant_constant)
        rows.append(
            (
                float(R),
                cr.t_used,
                cr.drift,
                cr.sup_grad,
                cr.sup_lap,
                cr.scale_invariant_constant,
                cr.literal_constant,
            )
        )
        mid = eta.values.shape[1] // 2
        ax = eta.axes()[0]
        keep = ax >= 0
        profiles[float(R)] = (ax[keep], eta.values[keep, mid])
        if not (cr.plateau_ok and cr.support_ok):
            rep["verdicts"][f"plateau_support_R{R:g}"] = _verdict(1.0, 0.5, passed=False)
    variation = (max(consts) - min(consts)) / min(consts)
    rep["results"] = {"constants": consts, "variation": variation}
    rep["verdicts"]["scale_invariance"] = _verdict(variation, 0.15)
    csv = os.path.join(out, "cutoff.csv")
    write_csv(
        csv,
        [
            "R [length]",
            "t [length^2]",
            "drift [1]",
            "sup_grad [1/length]",
            "sup_lap [1/length^2]",
            "invariant_constant [1]",
            "literal_constant [1]",
        ],
        rows,
    )
    rep["outputs"]["csv"].append(csv)
    rep["outputs"]["figures"].append(
        plots.cutoff_figure(os.path.join(out, "cutoff.png"), profiles)
    )
    return rep


def _weak_field(name: str):
    if name == "x1":
        return lambda x: x[:, 0], "harmonic"
    if name == "absx2":
        return lambda x: (x**2).sum(axis=1), "sub"
    if name == "harmonic-cubic":
        return lambda x: x[:, 0] ** 3 - 3 * x[:, 0] * x[:, 1] ** 2, "harmonic"
    if name.startswith("csv:"):
        return read_grid_csv(name[4:]), "harmonic"
    raise ConfigError(f"unknown field '{name}'")


def _run_check_very_weak(cfg, out):
    from .weak import certify_very_weak

    p = cfg.params
    field, _ = _weak_field(p["field"])
    cert = certify_very_weak(
        field,
        np.zeros(2),
        p["region"],
        sign=p["sign"],
        family_size=p["family"],
        tol=p["tol"],
        seed=cfg.seed,
    )
    rep = _skeleton(cfg)
    rep["results"] = {
        "kind": cert.kind,
        "holds": cert.holds,
        "worst_ratio": cert.worst_ratio,
        "worst_center": cert.worst_center.tolist(),
        "worst_radius": cert.worst_radius,
    }
    if p["sign"] == "sub":
        violation = max(0.0, -cert.worst_ratio)
    elif p["sign"] == "super":
        violation = max(0.0, cert.worst_ratio)
    else:
        violation = abs(cert.worst_ratio)
    rep["verdicts"]["certificate"] = _verdict(violation, cert.tol, passed=cert.holds)
    csv = os.path.join(out, "ratios.csv")
    write_csv(csv, ["bump [1]", "normalized_pairing [1]"], enumerate(map(float, cert.ratios)))
    rep["outputs"]["csv"].append(csv)
    rep["outputs"]["figures"].append(
        plots.certificate_figure(os.path.join(out, "ratios.png"), cert.ratios, cert.tol)
    )
    return rep


def _run_weyl_demo(cfg, out):
    from .weak import weyl_demo

    p = cfg.params
    R = p["radius"]
    rep = _skeleton(cfg)
    rng = np.random.default_rng(cfg.seed)
    if p["data"] == "spiky-linear":
        u = GridFunction.from_callable(lambda q: q[:, 0], p["halfwidth"], p["points"], n=2)
        # corrupt a vanishing fraction of nodes (measure-zero style defects)
        flat = u.values.ravel()
        spikes = rng.choice(len(flat), size=12, replace=False)
        flat[spikes] += rng.normal(scale=3.0, size=12)
        truth = lambda q: q[:, 0]
    elif p["data"].startswith("csv:"):
        u = read_grid_csv(p["data"][4:])
        truth = None
    elif p["data"] == "harmonic-quadratic":
        u = GridFunction.from_callable(
            lambda q: q[:, 0] ** 2 - q[:, 1] ** 2, p["halfwidth"], p["points"], n=2
        )
        truth = lambda q: q[:, 0] ** 2 - q[:, 1] ** 2
    else:
        raise ConfigError(f"unknown weyl data family '{p['data']}'")
    wr = weyl_demo(
        u,
        R,
        np.zeros(2),
        t_grid=parse_range(p["t"]),
        truth=truth,
        cert_tol=p["cert-tol"],
        seed=cfg.seed,
    )
    rep["results"] = {
        "certificate_worst": wr.certificate.worst_ratio,
        "lipschitz_constant": wr.lipschitz_constant,
        "recovery_error": wr.recovery_error,
        "t_min": wr.t_min,
        "gradient_variation": wr.smoothing.gradient_variation,
    }
    rep["verdicts"]["certified"] = _verdict(
        abs(wr.certificate.worst_ratio), wr.certificate.tol, passed=wr.certificate.holds
    )
    rep["verdicts"]["lipschitz"] = _verdict(
        0.0 if wr.smoothing.lipschitz else 1.0, 0.5, passed=wr.smoothing.lipschitz
    )
    csv = os.path.join(out, "smoothing.csv")
    write_csv(
        csv,
        ["t [length^2]", "sup_grad [1/length]", "l1_distance [1]"],
        zip(wr.smoothing.t_values, wr.smoothing.sup_gradients, wr.smoothing.l1_distances),
    )
    rep["outputs"]["csv"].append(csv)
    rep["outputs"]["figures"].append(
        plots.heat_smooth_figure(
            os.path.join(out, "smoothing.png"),
            wr.smoothing.t_values,
            wr.smoothing.sup_gradients,
            wr.smoothing.l1_distances,
        )
    )
    return rep


_PIPELINES = {
    "spectrum": _run_spectrum,
    "cone-energy": _run_cone_energy,
    "solve": _run_solve,
    "campanato": _run_campanato,
    "heat-smooth": _run_heat_smooth,
    "kernel-check": _run_kernel_check,
    "cutoff": _run_cutoff,
    "check-very-weak": _run_check_very_weak,
    "weyl-demo": _run_weyl_demo,
}


def run(flat_config: dict, out_dir: str | None = None, seed: int | None = None) -> RunOutcome:
    """Validate and execute one experiment; returns the report and exit code."""
    try:
        cfg = validate(flat_config)
    except ConfigError as exc:
        return RunOutcome({"error": str(exc), "config": dict(flat_config)}, 2)
    if seed is not None:
        cfg.seed = seed
        cfg.raw["seed"] = str(seed)
    out = out_dir or cfg.out or "lab-out"
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    try:
        report = _PIPELINES[cfg.kind](cfg, out)
    except ConfigError as exc:
        return RunOutcome({"error": str(exc), "config": cfg.echo()}, 2)
    except (ResolutionError, SolverError, CertificationError) as exc:
        report = _skeleton(cfg)
        report["error"] = f"{type(exc).__name__}: {exc}"
        report["verdicts"]["completed"] = _verdict(1.0, 0.5, passed=False)
        write_json_report(os.path.join(out, "report.json"), report)
        return RunOutcome(report, 1)
    except ValueError as exc:
        # domain rejections from module preconditions (e.g. an inadmissible
        # cone angle) are configuration errors at the CLI boundary
        return RunOutcome({"error": str(exc), "config": cfg.echo()}, 2)
    report["volatile"]["timings"]["total_s"] = time.perf_counter() - t0
    # reports carry basenames so identical configs give identical bytes
    # regardless of the output directory
    report["outputs"] = {
        k: [os.path.basename(p) for p in v] for k, v in report["outputs"].items()
    }
    write_json_report(os.path.join(out, "report.json"), report)
    ok = all(v["pass"] for v in report["verdicts"].values())
    return RunOutcome(report, 0 if ok else 1)


def suite(manifest_paths: list, out_dir: str = "lab-out", workers: int = 1, seed: int | None = None) -> RunOutcome:
    """Run a list of config files and aggregate the verdicts.

    Members run in manifest order (optionally on a thread pool); the
    aggregate is assembled by a deterministic ordered merge and any member
    failure is recorded without stopping the others.
    """
    def one(i_path):
        i, path = i_path
        member_out = os.path.join(out_dir, f"member{i:03d}")
        try:
            flat = load_config(path)
        except (OSError, ConfigError) as exc:
            return {"path": path, "exit": 2, "error": str(exc), "verdicts": {}}
        outcome = run(flat, out_dir=member_out, seed=seed)
        entry = {
            "path": path,
            "exit": outcome.exit_code,
            "verdicts": outcome.report.get("verdicts", {}),
        }
        if "error" in outcome.report:
            entry["error"] = outcome.report["error"]
        return entry

    items = list(enumerate(manifest_paths))
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(one, items))
    else:
        members = [one(it) for it in items]
    failing = [m["path"] for m in members if m["exit"] != 0]
    aggregate = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "conelab", "version": __version__},
        "kind": "suite",
        "members": members,
        "all_pass": not failing,
        "failing": failing,
        "volatile": {"timestamp": timestamp_now()},
    }
    os.makedirs(out_dir, exist_ok=True)
    write_json_report(os.path.join(out_dir, "suite.json"), aggregate)
    return RunOutcome(aggregate, 0 if not failing else 1)
