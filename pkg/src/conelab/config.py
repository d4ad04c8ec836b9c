"""Flat key-value experiment configurations with dotted sections.

A config file is plain text, one ``key = value`` per line, ``#`` comments;
values are scalars, identifiers, or comma lists.  Every experiment kind
declares its key schema: unknown keys are rejected by name, defaults fill
the gaps, and a seed makes the run reproducible.

Shared little languages:

* coefficient families:  ``identity:n`` | ``scalar:c:n`` |
  ``convex_graph:a1,a2,...`` | ``cone2d:theta`` |
  ``perturbed:(base),(modulus)`` with modulus ``power:eps:p`` (scale
  1 + eps |x|^p), ``log:eps`` (1 + eps/log(e/|x|)) or ``const:eps``;
* cones:  ``cone:circle:theta=<v>`` | ``cone:sphere:s=<v>``;
* geometries:  ``disc:radius,rings`` | ``grid:halfwidth,cells,n`` |
  ``interval:a,b,cells``;
* ranges:  ``lo:hi:count`` (geometric) or ``lin:lo:hi:count``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cones
from .coefficients import (
    CoefficientField,
    convex_graph_coefficient,
    identity_coefficient,
    perturbed_coefficient,
    scalar_coefficient,
    sector_coefficient,
)
from .fem import box_grid, disc_mesh, interval_mesh

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "validate",
    "parse_coefficient",
    "parse_cone",
    "parse_geometry",
    "parse_range",
    "parse_boundary",
    "KINDS",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def parse_config_text(text: str) -> dict:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        out[key] = value.strip()
    return out


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# schema: key -> (type tag, default or REQUIRED)
_REQ = object()

KINDS: dict[str, dict] = {
    "spectrum": {
        "cone": ("str", _REQ),
        "modes": ("int", 8),
    },
    "cone-energy": {
        "cone": ("str", _REQ),
        # inline comma list or csv:PATH (single-column coefficient vector)
        "coefficients": ("str", _REQ),
        "radii": ("range", "0.05:1.0:25"),
        "quadrature-check": ("bool", True),
    },
    "solve": {
        "geometry": ("str", _REQ),
        "coeff": ("str", _REQ),
        "boundary": ("str", "linear:1"),
        "source": ("str", ""),
        "radii": ("range", ""),
        "tol": ("float", 1e-10),
    },
    "campanato": {
        "coeff": ("str", _REQ),
        "frozen": ("str", _REQ),
        "rho": ("float", 0.0),  # 0 = derive from the bi-Lipschitz constant
        "levels": ("int", 6),
        "h": ("float", 1.0 / 64.0),
        "halfwidth": ("float", 0.75),
        "boundary": ("str", "linear:1,0.4,-0.3"),
        "tol": ("float", 1e-10),
    },
    "heat-smooth": {
        "data": ("str", "harmonic"),
        "radius": ("float", 4.0),
        "halfwidth": ("float", 5.5),
        "points": ("int", 768),
        "t": ("range", "1e-3:1e-1:12"),
        "allow-uncertified": ("bool", False),
        "cert-tol": ("float", 1e-3),
    },
    "kernel-check": {
        "dimension": ("int", 2),
        "t": ("range", "1e-3:1e-1:3"),
        "pairs": ("int", 1000),
    },
    "cutoff": {
        "radii": ("floats", (1.0, 2.0, 4.0)),
        "halfwidth": ("float", 9.0),
        "points": ("int", 512),
    },
    "check-very-weak": {
        "field": ("str", _REQ),
        "sign": ("str", "harmonic"),
        "region": ("float", 1.0),
        "tol": ("float", 1e-6),
        "family": ("int", 64),
    },
    "weyl-demo": {
        "data": ("str", "spiky-linear"),
        "radius": ("float", 4.0),
        "halfwidth": ("float", 5.5),
        "points": ("int", 768),
        "t": ("range", "1e-3:1e-1:12"),
        "cert-tol": ("float", 1e-3),
    },
}

_COMMON = {"kind": ("str", _REQ), "seed": ("int", 0), "out": ("str", "")}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    out: str
    params: dict
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        return dict(self.raw)


def _coerce(kind: str, key: str, tag: str, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if tag == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{kind}: key '{key}' has invalid {tag} value {raw!r}") from exc


def validate(flat: dict) -> ExperimentConfig:
    """Type-check a flat mapping against its kind's schema.

    Rejects unknown keys by name; every field is validated before any
    computation starts.
    """
    if "kind" not in flat:
        raise ConfigError("missing key 'kind'")
    kind = flat["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind '{kind}' (have {sorted(KINDS)})")
    schema = {**_COMMON, **KINDS[kind]}
    unknown = sorted(set(flat) - set(schema))
    if unknown:
        raise ConfigError(f"{kind}: unknown key '{unknown[0]}'")
    params = {}
    for key, (tag, default) in schema.items():
        if key in flat:
            params[key] = _coerce(kind, key, tag, flat[key])
        elif default is _REQ:
            raise ConfigError(f"{kind}: missing required key '{key}'")
        else:
            params[key] = default
    return ExperimentConfig(
        kind=kind,
        seed=int(params.pop("seed")),
        out=str(params.pop("out")),
        params={k: v for k, v in params.items() if k != "kind"},
        raw=dict(flat),
    )


# ---------------------------------------------------------------------------
# shared little languages
# ---------------------------------------------------------------------------


def _split_top(text: str, sep: str = ",") -> list[str]:
    """Split on sep outside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse_coefficient(spec: str, radius: float = 1.0) -> CoefficientField:
    spec = spec.strip()
    name, _, rest = spec.partition(":")
    if name == "identity":
        return identity_coefficient(int(rest or 2), radius)
    if name == "scalar":
        c, _, n = rest.partition(":")
        return scalar_coefficient(float(c), int(n or 2), radius)
    if name == "convex_graph":
        return convex_graph_coefficient([float(v) for v in rest.split(",")], radius)
    if name == "cone2d":
        return sector_coefficient(float(rest), radius)
    if name == "perturbed":
        parts = _split_top(rest)
        if len(parts) != 2:
            raise ConfigError(f"perturbed coefficient needs '(base),(modulus)', got {spec!r}")
        base = parse_coefficient(parts[0].strip().strip("()"), radius)
        mspec = parts[1].strip().strip("()")
        mkind, _, margs = mspec.partition(":")
        if mkind == "power":
            eps, p = (float(v) for v in margs.split(","))
            return perturbed_coefficient(base, lambda t: eps * t**p, name=f"power:{eps},{p}")
        if mkind == "log":
            eps = float(margs)
            return perturbed_coefficient(
                base,
                lambda t: eps / np.log(math.e / np.maximum(t, 1e-300)),
                name=f"log:{eps}",
            )
        if mkind == "const":
            eps = float(margs)
            return perturbed_coefficient(base, lambda t: eps * np.ones_like(t), name=f"const:{eps}")
        raise ConfigError(f"unknown perturbation modulus '{mkind}'")
    raise ConfigError(f"unknown coefficient family '{name}'")


def parse_cone(spec: str, modes: int = 8) -> cones.CrossSectionSpectrum:
    parts = spec.strip().split(":")
    if len(parts) != 3 or parts[0] != "cone":
        raise ConfigError(f"cone spec must be 'cone:circle:theta=<v>' or 'cone:sphere:s=<v>', got {spec!r}")
    fam, arg = parts[1], parts[2]
    key, _, val = arg.partition("=")
    if fam == "circle" and key == "theta":
        return cones.circle_spectrum(float(val), kmax=modes)
    if fam == "sphere" and key == "s":
        return cones.sphere_spectrum(float(val), lmax=max(2, int(math.isqrt(modes))))
    raise ConfigError(f"unknown cone spec {spec!r}")


def parse_geometry(spec: str):
    name, _, rest = spec.strip().partition(":")
    args = [v for v in rest.split(",") if v]
    if name == "disc":
        radius = float(args[0]) if args else 1.0
        rings = int(args[1]) if len(args) > 1 else 64
        return disc_mesh(radius, rings)
    if name == "grid":
        halfwidth = float(args[0]) if args else 1.0
        cells = int(args[1]) if len(args) > 1 else 64
        n = int(args[2]) if len(args) > 2 else 2
        return box_grid(halfwidth, cells, n)
    if name == "interval":
        a = float(args[0]) if args else 0.0
        b = float(args[1]) if len(args) > 1 else 1.0
        cells = int(args[2]) if len(args) > 2 else 64
        return interval_mesh(a, b, cells)
    raise ConfigError(f"unknown geometry '{name}'")


def parse_range(spec: str) -> np.ndarray:
    if not spec:
        return np.array([])
    parts = spec.strip().split(":")
    linear = False
    if parts[0] == "lin":
        linear = True
        parts = parts[1:]
    if len(parts) != 3:
        raise ConfigError(f"range must be 'lo:hi:count', got {spec!r}")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    return np.linspace(lo, hi, count) if linear else np.geomspace(lo, hi, count)


def parse_boundary(spec: str, dimension: int):
    """Boundary data by name: ``linear:c1,c2,...`` (sum c_d x_d),
    ``trace-cos:k`` (cos of k times the disc angle), or
    ``poly-mixed`` (the default mixed polynomial)."""
    name, _, rest = spec.strip().partition(":")
    if name == "linear":
        coef = np.array([float(v) for v in rest.split(",")] or [1.0])
        coef = np.pad(coef, (0, max(0, dimension - coef.size)))[:dimension]
        return lambda p: p @ coef
    if name == "trace-cos":
        k = int(rest or 1)
        return lambda p: np.cos(k * np.arctan2(p[:, 1], p[:, 0]))
    if name == "poly-mixed":
        def data(p):
            out = p[:, 0] + 0.4 * p[:, 1] + 0.25 * p[:, 0] * p[:, 1]
            if dimension > 2:
                out = out - 0.3 * p[:, 2]
            return out

        return data
    raise ConfigError(f"unknown boundary data '{name}'")
